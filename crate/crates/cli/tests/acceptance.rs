//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use pianist_core::alignment::{align_pitches, AlignmentCosts};
use pianist_core::density::{
    fit_gmm, fit_gmm_traced, fit_histogram, fit_kde, DensityModel, GmmOptions, Histogram, ModelFamily, RangePolicy,
};
use pianist_core::divergence::{kl_gmm, kl_histogram, kl_kde};
use pianist_core::evaluation::{harmonic_mean, logo_split, metrics, run_cv, ExperimentConfig};
use pianist_core::features::{
    compute_norm, derive_quantity, deviations, performer_stream, FeatureKind, Metric,
};
use pianist_core::density::Gmm;
use pianist_core::synth::{synthesize, well_separated_profiles, SyntheticSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const PAPER_NOTES: usize = 16980;
const SCORE_SEED: u64 = 42;
const PROFILE_SEED: u64 = 7;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Outcome {
        Outcome { pass, detail: detail.into() }
    }
}

/// All checks must hold; the detail lists the failing ones.
fn all(checks: Vec<(bool, String)>) -> Outcome {
    let failed: Vec<&String> = checks.iter().filter(|c| !c.0).map(|c| &c.1).collect();
    if failed.is_empty() {
        Outcome::new(true, checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "))
    } else {
        Outcome::new(false, failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; "))
    }
}

fn paper_scale_set() -> SyntheticSet {
    let profiles = well_separated_profiles(9, 1.0, PROFILE_SEED);
    synthesize(PAPER_NOTES, &profiles, SCORE_SEED).expect("synthetic set")
}

fn end_to_end_recovery() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let start = Instant::now();
    let (report, identity) = pool.install(|| {
        let set = paper_scale_set();
        let config = ExperimentConfig::new(
            ModelFamily::Histogram,
            &[FeatureKind::Ioi, FeatureKind::Dl, FeatureKind::Nd],
        );
        (run_cv(&set.dataset, &config).expect("evaluation"), set.identity_alignment)
    });
    let elapsed = start.elapsed();
    let precision = report.metrics.macro_precision;
    all(vec![
        (precision >= 0.90, format!("macro precision {precision:.3} (>= 0.90)")),
        (report.n_trials() == 72, format!("{} trials", report.n_trials())),
        (identity, format!("renderings align to the score one-to-one: {identity}")),
        (
            elapsed < Duration::from_secs(300),
            format!("{:.1} s single-threaded (< 300 s)", elapsed.as_secs_f64()),
        ),
    ])
}

fn fold_geometry() -> Outcome {
    let sizes = logo_split(PAPER_NOTES, 8).map(|f| f.sizes()).unwrap_or_default();
    let expected = vec![2122, 2122, 2122, 2122, 2122, 2122, 2122, 2126];
    Outcome::new(sizes == expected, format!("sizes {sizes:?}"))
}

fn metric_consistency() -> Outcome {
    let f = harmonic_mean(0.903, 0.875);
    // Nine performers, eight trials each, one miss per performer.
    let confusion: Vec<Vec<u64>> = (0..9)
        .map(|t| (0..9).map(|p| if p == t { 7 } else if p == (t + 1) % 9 { 1 } else { 0 }).collect())
        .collect();
    let m = metrics(&confusion).expect("metrics");
    let trials: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..9).map(|i| confusion[i][i]).sum();
    all(vec![
        ((f - 0.889).abs() <= 5e-4, format!("F(0.903, 0.875) = {f:.4}")),
        (trials == 72 && correct == 63, format!("{correct}/{trials} trials correct")),
        (m.macro_recall == 0.875, format!("macro recall {}", m.macro_recall)),
        (correct as f64 / trials as f64 == 0.875, "63/72 = 0.875".into()),
    ])
}

fn brute_force_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

fn kl_oracles() -> Outcome {
    let single = |m: f64, v: f64| Gmm { weights: vec![1.0], means: vec![m], variances: vec![v] };
    let shift = kl_gmm(&single(0.0, 1.0), &single(1.0, 1.0)).expect("kl").value;
    let scale = kl_gmm(&single(0.0, 1.0), &single(0.0, 4.0)).expect("kl").value;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let wp: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let wq: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let edges: Vec<f64> = (0..=n).map(|i| i as f64).collect();
        let hp = Histogram::from_weights(edges.clone(), &wp, 0.0).expect("histogram");
        let hq = Histogram::from_weights(edges, &wq, 0.0).expect("histogram");
        let (sp, sq): (f64, f64) = (wp.iter().sum(), wq.iter().sum());
        let p: Vec<f64> = wp.iter().map(|w| w / sp).collect();
        let q: Vec<f64> = wq.iter().map(|w| w / sq).collect();
        worst = worst.max((kl_histogram(&hp, &hq).expect("kl").value - brute_force_kl(&p, &q)).abs());
    }

    let normal = Normal::new(0.0, 1.0).expect("normal");
    let a: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng) + 1.0).collect();
    let h = 1.06 * 10_000f64.powf(-0.2);
    let kde = kl_kde(&fit_kde(&a, h).expect("kde"), &fit_kde(&b, h).expect("kde")).expect("kl").value;

    all(vec![
        ((shift - 0.5).abs() <= 1e-9, format!("GMM N(0,1)||N(1,1) = {shift:.12}")),
        ((scale - 0.31815).abs() <= 1e-4, format!("GMM N(0,1)||N(0,4) = {scale:.6}")),
        (worst <= 1e-12, format!("histogram vs brute force max error {worst:.1e} over 100 pairs")),
        ((kde - 0.5).abs() <= 0.05, format!("KDE on 10^4 samples = {kde:.4}")),
    ])
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let step = (hi - lo) / (n - 1) as f64;
    let inner: f64 = (1..n - 1).map(|i| f(lo + i as f64 * step)).sum();
    step * (inner + 0.5 * (f(lo) + f(hi)))
}

fn density_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut negative = 0usize;
    let mut worst_mass: f64 = 0.0;
    let mut em_drops = 0usize;
    let mut nondeterministic = 0usize;
    for fixture in 0..50 {
        let k = 1 + fixture % 3;
        let n = rng.random_range(50..400);
        let spread = rng.random_range(0.5..20.0);
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let centre = spread * rng.random_range(0..k) as f64;
                centre + Normal::new(0.0, rng.random_range(0.2..2.0)).expect("normal").sample(&mut rng)
            })
            .collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();

        let options = GmmOptions { k, seed: fixture as u64, ..GmmOptions::default() };
        let traced = fit_gmm_traced(&values, &options).expect("gmm");
        em_drops += traced.log_likelihoods.windows(2).filter(|w| w[1] < w[0] - 1e-10).count();
        let gmm = traced.model;
        nondeterministic += usize::from(fit_gmm(&values, &options).expect("gmm") != gmm);

        let kde = fit_kde(&values, 0.3 * sd).expect("kde");
        nondeterministic += usize::from(fit_kde(&values, 0.3 * sd).expect("kde") != kde);
        let hist = fit_histogram(&values, 30, RangePolicy::Data).expect("histogram");
        nondeterministic += usize::from(fit_histogram(&values, 30, RangePolicy::Data).expect("histogram") != hist);

        let gmm_sd = gmm.variances.iter().copied().fold(0.0, f64::max).sqrt();
        let models = [
            (DensityModel::Kde(kde), mean - 10.0 * sd, mean + 10.0 * sd),
            (
                DensityModel::Gmm(gmm.clone()),
                gmm.means[0] - 10.0 * gmm_sd,
                gmm.means[k - 1] + 10.0 * gmm_sd,
            ),
        ];
        for (model, lo, hi) in &models {
            let mass = trapezoid(|x| model.pdf(x), *lo, *hi, 20_001);
            worst_mass = worst_mass.max((mass - 1.0).abs());
        }
        let hist = DensityModel::Histogram(hist);
        for (model, lo, hi) in models.iter().map(|(m, l, h)| (m, *l, *h)).chain([(&hist, mean - 10.0 * sd, mean + 10.0 * sd)]) {
            negative += (0..2001)
                .map(|i| model.pdf(lo + (hi - lo) * i as f64 / 2000.0))
                .filter(|p| p.is_nan() || *p < 0.0)
                .count();
        }
    }
    all(vec![
        (negative == 0, format!("{negative} negative pdf values")),
        (worst_mass <= 1e-3, format!("KDE/GMM mass error at most {worst_mass:.1e}")),
        (em_drops == 0, format!("{em_drops} EM log-likelihood decreases over 50 fixtures")),
        (nondeterministic == 0, format!("{nondeterministic} non-deterministic refits")),
    ])
}

/// Full-coverage table: the norm quantity equals the mean of the
/// performers' quantities.
fn linearity_error(set: &SyntheticSet, table: &pianist_core::alignment::AlignedNoteTable) -> f64 {
    let norm = compute_norm(table).expect("norm");
    let norm_stream = norm.stream();
    let mut worst: f64 = 0.0;
    for kind in [FeatureKind::Ioi, FeatureKind::Otd, FeatureKind::Nd] {
        let of_norm = derive_quantity(&norm_stream, kind);
        let per_performer: Vec<_> = (0..set.performances.len())
            .map(|p| derive_quantity(&performer_stream(table, p), kind))
            .collect();
        for (i, q) in of_norm.entries.iter().enumerate() {
            let mean = per_performer.iter().map(|s| s.entries[i].value).sum::<f64>() / per_performer.len() as f64;
            worst = worst.max((q.value - mean).abs());
        }
    }
    worst
}

fn score_table(set: &SyntheticSet) -> pianist_core::alignment::AlignedNoteTable {
    use pianist_core::alignment::{build_table, ReferencePolicy, TableOptions};
    let options = TableOptions {
        reference: ReferencePolicy::Explicit(set.score.clone()),
        ..TableOptions::default()
    };
    build_table(&set.performances, &options).expect("table").table
}

fn feature_correctness() -> Outcome {
    let set = paper_scale_set();
    let table = score_table(&set);
    let norm_stream = compute_norm(&table).expect("norm").stream();
    let mut nonzero = 0usize;
    for kind in FeatureKind::ALL {
        let q = derive_quantity(&norm_stream, kind);
        nonzero += deviations(&q, &q).expect("deviations").values.iter().filter(|v| **v != 0.0).count();
    }
    let otd = Metric::SimpleAbsolute.apply(-0.05, 0.03);
    let ot = Metric::Simple.apply(-0.05, 0.03);
    let assignment = FeatureKind::ALL.map(|k| k.metric());
    let expected = [Metric::Simple, Metric::SimpleAbsolute, Metric::SimpleAbsolute, Metric::Simple, Metric::Simple];
    // Exact in real arithmetic; in f64 the two orders differ by a few ulps
    // of the absolute note times, so the 1e-12 bound is checked on a piece
    // whose times stay small. At paper scale the error is reported in ulps
    // of the latest onset.
    let short = synthesize(300, &well_separated_profiles(9, 1.0, PROFILE_SEED), SCORE_SEED).expect("short set");
    let linearity = linearity_error(&short, &score_table(&short));
    let last_onset = set.score.notes().last().map_or(1.0, |n| n.onset);
    let ulps = linearity_error(&set, &table) / (last_onset * f64::EPSILON);
    let r = set.dataset.feature_correlation(FeatureKind::Otd, FeatureKind::Nd).expect("correlation");
    all(vec![
        (nonzero == 0, format!("norm-vs-norm deviations: {nonzero} nonzero")),
        ((otd - 0.02).abs() < 1e-15 && (ot - -0.08).abs() < 1e-15, format!("OTD fixture {otd:.4}, OT fixture {ot:.4}")),
        (assignment == expected, format!("metric per kind {assignment:?}")),
        (linearity <= 1e-12, format!("IOI/OTD/ND linearity error {linearity:.1e} on a 300-note piece")),
        (ulps <= 16.0, format!("paper-scale linearity error {ulps:.1} ulps of the latest onset")),
        (r > 0.9, format!("pearson r(OTD, ND) = {r:.4}")),
    ])
}

/// Minimum cost over every monotone alignment, by exhaustive recursion.
fn brute_force_alignment(a: &[u8], b: &[u8], c: &AlignmentCosts) -> f64 {
    match (a.split_first(), b.split_first()) {
        (None, None) => 0.0,
        (Some(_), None) => c.deletion * a.len() as f64,
        (None, Some(_)) => c.insertion * b.len() as f64,
        (Some((x, ra)), Some((y, rb))) => {
            let pair = if x == y { 0.0 } else { c.substitution } + brute_force_alignment(ra, rb, c);
            let del = c.deletion + brute_force_alignment(ra, b, c);
            let ins = c.insertion + brute_force_alignment(a, rb, c);
            pair.min(del).min(ins)
        }
    }
}

fn alignment_correctness() -> Outcome {
    let costs = AlignmentCosts::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatched = 0usize;
    let mut inconsistent = 0usize;
    for _ in 0..500 {
        let alphabet = rng.random_range(1..=4u8);
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let n = rng.random_range(0..=8);
            (0..n).map(|_| 60 + rng.random_range(0..alphabet)).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let result = align_pitches(&a, &b, &costs);
        let optimum = brute_force_alignment(&a, &b, &costs);
        mismatched += usize::from((result.cost - optimum).abs() > 1e-9);
        // The returned pairs must realise the reported cost.
        let realised = result.substitutions(&a, &b) as f64 * costs.substitution
            + result.insertions.len() as f64 * costs.insertion
            + result.deletions.len() as f64 * costs.deletion;
        let covers = result.pairs.len() + result.deletions.len() == a.len()
            && result.pairs.len() + result.insertions.len() == b.len()
            && result.pairs.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
        inconsistent += usize::from((realised - result.cost).abs() > 1e-9 || !covers);
    }
    let seq: Vec<u8> = (0..200).map(|_| rng.random_range(36..=96)).collect();
    let identity = align_pitches(&seq, &seq, &costs);
    let is_identity = identity.pairs == (0..seq.len()).map(|i| (i, i)).collect::<Vec<_>>() && identity.cost == 0.0;
    all(vec![
        (mismatched == 0, format!("{mismatched}/500 pairs differ from the exhaustive optimum")),
        (inconsistent == 0, format!("{inconsistent}/500 alignments inconsistent with their cost")),
        (is_identity, format!("identity input gives identity mapping with zero cost: {is_identity}")),
    ])
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pianist")).args(args).output().expect("run pianist")
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let data = root.join("data");
    let synth = run_cli(&["synth", "--performers", "4", "--notes", "3000", "--seed", "3", "--out", data.to_str().unwrap()]);
    if !synth.status.success() {
        return Outcome::new(false, format!("synth failed: {}", String::from_utf8_lossy(&synth.stderr)));
    }
    let input = data.join("midi");
    let score = data.join("score.mid");
    let mut checks = Vec::new();
    for model in ["histogram", "kde", "gmm"] {
        let mut reports = Vec::new();
        for (run, jobs) in ["1", "1", "3"].iter().enumerate() {
            let out = root.join(format!("{model}-{run}"));
            let output = run_cli(&[
                "evaluate", "--input", input.to_str().unwrap(), "--reference", score.to_str().unwrap(),
                "--model", model, "--features", "IOI,OTD,DL", "--seed", "11", "--groups", "4",
                "--jobs", jobs, "--out", out.to_str().unwrap(),
            ]);
            if !output.status.success() {
                return Outcome::new(false, format!("evaluate failed: {}", String::from_utf8_lossy(&output.stderr)));
            }
            reports.push(std::fs::read(out.join("report.json")).expect("report"));
        }
        let same = reports.windows(2).all(|w| w[0] == w[1]);
        checks.push((same, format!("{model}: reports byte-identical across runs and --jobs 1/3: {same}")));
    }
    all(checks)
}

fn weight_scaling() -> Outcome {
    let profiles = well_separated_profiles(9, 0.25, PROFILE_SEED);
    let set = synthesize(PAPER_NOTES, &profiles, SCORE_SEED).expect("synthetic set");
    let cases: [(&[FeatureKind], &[f64]); 3] = [
        (&[FeatureKind::Ioi, FeatureKind::Dl, FeatureKind::Nd], &[1.0, 1.0, 1.0]),
        (&[FeatureKind::Ot, FeatureKind::Ioi], &[1.0, 1.0]),
        (&[FeatureKind::Ot, FeatureKind::Otd, FeatureKind::Dl], &[0.5, 2.0, 1.0]),
    ];
    let mut checks = Vec::new();
    for family in [ModelFamily::Histogram] {
        for (features, weights) in cases {
            let mut config = ExperimentConfig::new(family, features);
            config.weights = weights.to_vec();
            let base = run_cv(&set.dataset, &config).expect("evaluation");
            let diagonal: u64 = (0..9).map(|i| base.confusion[i][i]).sum();
            let unchanged = [0.001, 0.37, 3.0, 1000.0].iter().all(|c| {
                config.weights = weights.iter().map(|w| w * c).collect();
                run_cv(&set.dataset, &config).expect("evaluation").confusion == base.confusion
            });
            checks.push((
                unchanged,
                format!("{family} {}: confusion unchanged ({diagonal}/72 on diagonal)", FeatureKind::join(features)),
            ));
        }
    }
    all(checks)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("synthetic end-to-end recovery", end_to_end_recovery),
        ("fold geometry", fold_geometry),
        ("metric consistency", metric_consistency),
        ("KL oracles", kl_oracles),
        ("density properties", density_properties),
        ("feature correctness", feature_correctness),
        ("alignment correctness", alignment_correctness),
        ("pipeline determinism", pipeline_determinism),
        ("weight-scaling invariance", weight_scaling),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        failures += usize::from(!outcome.pass);
        println!(
            "{} criterion {} ({name}): {} [{:.1} s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
