//! Leave-one-group-out evaluation of minimum-KL performer classification.
//!
//! Every performer's deviation series is cut into contiguous chronological
//! groups over the aligned positions. A trial holds out one group of one
//! performer as the unknown; each candidate (the true performer included)
//! is modelled from its own remaining groups, and the candidate with the
//! smallest fused divergence wins.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    default_bandwidth, fit_gmm, fit_histogram, fit_kde, kernel_sums, DensityModel, GmmOptions, Grid,
    ModelFamily, RangePolicy, TabulatedDensity, DEFAULT_BINS, DEFAULT_GMM_K, MAX_GMM_K,
};
use crate::divergence::{fuse, kl_divergence, KDE_GRID_MARGIN, KDE_GRID_POINTS};
use crate::error::{Error, Result};
use crate::features::{DeviationSeries, FeatureDataset, FeatureKind};

pub const DEFAULT_GROUPS: usize = 8;

/// Contiguous position blocks shared by all performers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub n_positions: usize,
    pub ranges: Vec<Range<usize>>,
}

impl FoldSpec {
    pub fn n_groups(&self) -> usize {
        self.ranges.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    pub fn group_of(&self, position: usize) -> Option<usize> {
        let g = self.ranges.partition_point(|r| r.end <= position);
        (g < self.ranges.len() && self.ranges[g].contains(&position)).then_some(g)
    }

    /// Value indices of `series` falling in each group.
    pub fn split(&self, series: &DeviationSeries) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups()];
        for (i, &pos) in series.positions.iter().enumerate() {
            if let Some(g) = self.group_of(pos) {
                out[g].push(i);
            }
        }
        out
    }
}

/// Splits `n_positions` into `n_groups` chronological blocks of
/// `⌊N / n_groups⌋` positions; the last block also takes the remainder.
pub fn logo_split(n_positions: usize, n_groups: usize) -> Result<FoldSpec> {
    if n_groups == 0 {
        return Err(Error::invalid("need at least one group"));
    }
    if n_positions < n_groups {
        return Err(Error::invalid(format!(
            "{n_positions} positions cannot fill {n_groups} groups"
        )));
    }
    let base = n_positions / n_groups;
    let ranges = (0..n_groups)
        .map(|g| {
            let start = g * base;
            let end = if g + 1 == n_groups { n_positions } else { start + base };
            start..end
        })
        .collect();
    Ok(FoldSpec { n_positions, ranges })
}

/// Hyperparameters for every model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_bins: usize,
    pub bandwidths: BTreeMap<FeatureKind, f64>,
    pub gmm_k: usize,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
    pub kde_grid_points: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            n_bins: DEFAULT_BINS,
            bandwidths: FeatureKind::ALL.iter().map(|&k| (k, default_bandwidth(k))).collect(),
            gmm_k: DEFAULT_GMM_K,
            gmm_tol: 1e-8,
            gmm_max_iter: 500,
            kde_grid_points: KDE_GRID_POINTS,
        }
    }
}

impl ModelParams {
    pub fn bandwidth(&self, kind: FeatureKind) -> f64 {
        self.bandwidths.get(&kind).copied().unwrap_or_else(|| default_bandwidth(kind))
    }

    fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if let Some((k, h)) = self.bandwidths.iter().find(|(_, h)| !(h.is_finite() && **h > 0.0)) {
            return Err(Error::invalid(format!("bandwidth for {k} must be positive, got {h}")));
        }
        if !(1..=MAX_GMM_K).contains(&self.gmm_k) {
            return Err(Error::invalid(format!("GMM k must be in 1..={MAX_GMM_K}, got {}", self.gmm_k)));
        }
        if self.kde_grid_points < 2 {
            return Err(Error::invalid("KDE grid needs at least two points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: ModelFamily,
    pub features: Vec<FeatureKind>,
    pub weights: Vec<f64>,
    pub params: ModelParams,
    pub n_groups: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Equal-weight fusion of `features` with default hyperparameters.
    pub fn new(family: ModelFamily, features: &[FeatureKind]) -> ExperimentConfig {
        ExperimentConfig {
            family,
            features: features.to_vec(),
            weights: vec![1.0; features.len()],
            params: ModelParams::default(),
            n_groups: DEFAULT_GROUPS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::invalid("feature set is empty"));
        }
        let mut seen = self.features.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.features.len() {
            return Err(Error::invalid("feature set contains duplicates"));
        }
        if self.weights.len() != self.features.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} features",
                self.weights.len(),
                self.features.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        if self.n_groups < 2 {
            return Err(Error::invalid("need at least 2 groups"));
        }
        self.params.validate()
    }
}

/// Fits models of one family with fixed per-feature settings, so that the
/// test and training models of a feature are always comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFitter {
    family: ModelFamily,
    params: ModelParams,
    seed: u64,
    /// Histogram range or KDE grid extent per feature kind.
    supports: BTreeMap<FeatureKind, (f64, f64)>,
}

impl ModelFitter {
    /// Derives histogram ranges and KDE grids from every value of each
    /// selected feature in the dataset.
    pub fn for_dataset(dataset: &FeatureDataset, config: &ExperimentConfig) -> Result<ModelFitter> {
        let mut supports = BTreeMap::new();
        for &kind in &config.features {
            let values = (0..dataset.n_performers()).flat_map(|p| dataset.series(p, kind).values.iter().copied());
            let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !(min.is_finite() && max.is_finite()) {
                return Err(Error::invalid(format!("no {kind} deviations in the dataset")));
            }
            let support = match config.family {
                ModelFamily::Kde => {
                    let margin = KDE_GRID_MARGIN * config.params.bandwidth(kind);
                    (min - margin, max + margin)
                }
                _ => {
                    let pad = if max > min { 1e-3 * (max - min) } else { (1e-3 * min.abs()).max(1e-9) };
                    (min - pad, max + pad)
                }
            };
            supports.insert(kind, support);
        }
        Ok(ModelFitter {
            family: config.family,
            params: config.params.clone(),
            seed: config.seed,
            supports,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    fn support(&self, kind: FeatureKind) -> Result<(f64, f64)> {
        self.supports
            .get(&kind)
            .copied()
            .ok_or_else(|| Error::invalid(format!("fitter has no support for {kind}")))
    }

    fn grid(&self, kind: FeatureKind) -> Result<Grid> {
        let (lo, hi) = self.support(kind)?;
        Grid::new(lo, hi, self.params.kde_grid_points)
    }

    pub fn fit(&self, kind: FeatureKind, values: &[f64]) -> Result<DensityModel> {
        match self.family {
            ModelFamily::Histogram => {
                let (lo, hi) = self.support(kind)?;
                fit_histogram(values, self.params.n_bins, RangePolicy::Fixed { lo, hi }).map(DensityModel::Histogram)
            }
            ModelFamily::Kde => {
                let kde = fit_kde(values, self.params.bandwidth(kind))?;
                Ok(DensityModel::KdeGrid(kde.tabulate(&self.grid(kind)?)))
            }
            ModelFamily::Gmm => {
                let options = GmmOptions {
                    k: self.params.gmm_k,
                    seed: self.seed,
                    tol: self.params.gmm_tol,
                    max_iter: self.params.gmm_max_iter,
                };
                fit_gmm(values, &options).map(DensityModel::Gmm)
            }
        }
    }
}

/// Fitted models of one known performer, one per selected feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub performer_id: String,
    pub models: Vec<DensityModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Index into the candidate list.
    pub predicted: usize,
    /// Fused divergence per candidate.
    pub fused: Vec<f64>,
    /// `kl[candidate][feature]`.
    pub kl: Vec<Vec<f64>>,
}

/// Index of the smallest fused value; ties go to the lexicographically
/// smallest id.
fn argmin(fused: &[f64], ids: &[&str]) -> usize {
    let mut best = 0;
    for c in 1..fused.len() {
        if fused[c] < fused[best] || (fused[c] == fused[best] && ids[c] < ids[best]) {
            best = c;
        }
    }
    best
}

/// Minimum fused-KL decision given already fitted test models.
pub fn decide(test_models: &[DensityModel], candidates: &[Candidate], weights: &[f64]) -> Result<Decision> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates"));
    }
    let kl = candidates
        .iter()
        .map(|c| {
            if c.models.len() != test_models.len() {
                return Err(Error::invalid(format!("candidate {} has the wrong number of models", c.performer_id)));
            }
            test_models
                .iter()
                .zip(&c.models)
                .map(|(t, m)| kl_divergence(t, m).map(|r| r.value))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = kl.iter().map(|k| fuse(k, weights)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<&str> = candidates.iter().map(|c| c.performer_id.as_str()).collect();
    Ok(Decision {
        predicted: argmin(&fused, &ids),
        fused,
        kl,
    })
}

/// Fits the test series and picks the candidate with minimum fused KL.
/// Returns `None` when a selected feature has no test values.
pub fn classify(
    test_series: &[DeviationSeries],
    candidates: &[Candidate],
    fitter: &ModelFitter,
    weights: &[f64],
) -> Result<Option<Decision>> {
    if test_series.iter().any(DeviationSeries::is_empty) {
        return Ok(None);
    }
    let test_models = test_series
        .iter()
        .map(|s| fitter.fit(s.kind, &s.values))
        .collect::<Result<Vec<_>>>()?;
    decide(&test_models, candidates, weights).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Harmonic mean of macro precision and macro recall.
    pub f_score: f64,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Precision, recall and F-score from a confusion matrix whose rows are true
/// classes and columns predicted classes.
pub fn metrics(confusion: &[Vec<u64>]) -> Result<Metrics> {
    let n = confusion.len();
    if n == 0 || confusion.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("confusion matrix must be square and non-empty"));
    }
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            ClassMetrics {
                precision,
                recall,
                f_score: harmonic_mean(precision, recall),
            }
        })
        .collect();
    let macro_precision = per_class.iter().map(|m| m.precision).sum::<f64>() / n as f64;
    let macro_recall = per_class.iter().map(|m| m.recall).sum::<f64>() / n as f64;
    Ok(Metrics {
        per_class,
        macro_precision,
        macro_recall,
        f_score: harmonic_mean(macro_precision, macro_recall),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub performer: String,
    pub group: usize,
    pub predicted: String,
    pub fused: Vec<f64>,
    /// `kl[candidate][feature]`, features in config order.
    pub kl: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ExperimentConfig,
    pub performer_ids: Vec<String>,
    pub fold_sizes: Vec<usize>,
    /// Rows are true performers, columns predicted performers.
    pub confusion: Vec<Vec<u64>>,
    pub normalized_confusion: Vec<Vec<f64>>,
    pub metrics: Metrics,
    pub trials: Vec<TrialLog>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for id in &self.performer_ids {
            write!(out, ",{id}").expect("string write");
        }
        out.push('\n');
        for (id, row) in self.performer_ids.iter().zip(&self.confusion) {
            out.push_str(id);
            for c in row {
                write!(out, ",{c}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Long-format normalised confusion matrix: `true,predicted,value`.
    pub fn normalized_confusion_csv(&self) -> String {
        let mut out = String::from("true,predicted,value\n");
        for (t, row) in self.performer_ids.iter().zip(&self.normalized_confusion) {
            for (p, v) in self.performer_ids.iter().zip(row) {
                writeln!(out, "{t},{p},{v}").expect("string write");
            }
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("performer,precision,recall,f_score\n");
        for (id, m) in self.performer_ids.iter().zip(&self.metrics.per_class) {
            writeln!(out, "{id},{},{},{}", m.precision, m.recall, m.f_score).expect("string write");
        }
        let m = &self.metrics;
        writeln!(out, "macro,{},{},{}", m.macro_precision, m.macro_recall, m.f_score).expect("string write");
        out
    }
}

/// Per-trial divergences for one model family and a list of features.
#[derive(Debug, Clone, PartialEq)]
struct TrialDivergences {
    performer: usize,
    group: usize,
    /// `kl[candidate][feature]`, or the reason the trial was skipped.
    kl: std::result::Result<Vec<Vec<f64>>, String>,
}

/// Fits every test and training model once and evaluates all trial
/// divergences for `kinds`.
fn compute_divergences(
    dataset: &FeatureDataset,
    fold: &FoldSpec,
    fitter: &ModelFitter,
    kinds: &[FeatureKind],
) -> Result<Vec<TrialDivergences>> {
    let n_perf = dataset.n_performers();
    let n_groups = fold.n_groups();

    // grouped[p][f][g] = values of performer p, feature f, group g
    let grouped: Vec<Vec<Vec<Vec<f64>>>> = (0..n_perf)
        .map(|p| {
            kinds
                .iter()
                .map(|&kind| {
                    let series = dataset.series(p, kind);
                    fold.split(series)
                        .into_iter()
                        .map(|idx| idx.into_iter().map(|i| series.values[i]).collect())
                        .collect()
                })
                .collect()
        })
        .collect();

    let cells: Vec<(usize, usize)> = (0..n_perf).flat_map(|p| (0..n_groups).map(move |g| (p, g))).collect();

    // (test model, training model) per (performer, group, feature)
    type Fitted = Option<DensityModel>;
    let models: Vec<Vec<(Fitted, Fitted)>> = if fitter.family() == ModelFamily::Kde {
        // Kernel sums per group let both pools be assembled without refitting.
        let sums: Vec<Vec<Vec<Vec<f64>>>> = (0..n_perf)
            .into_par_iter()
            .map(|p| {
                kinds
                    .iter()
                    .enumerate()
                    .map(|(f, &kind)| {
                        let grid = fitter.grid(kind)?;
                        let points = grid.points();
                        let h = fitter.params.bandwidth(kind);
                        Ok(grouped[p][f]
                            .iter()
                            .map(|vals| {
                                let mut sorted = vals.clone();
                                sorted.sort_by(f64::total_cmp);
                                kernel_sums(&sorted, h, &points)
                            })
                            .collect())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        cells
            .par_iter()
            .map(|&(p, g)| {
                kinds
                    .iter()
                    .enumerate()
                    .map(|(f, &kind)| {
                        let grid = fitter.grid(kind)?;
                        let h = fitter.params.bandwidth(kind);
                        let tabulate = |sum: Vec<f64>, n: usize| {
                            let scale = 1.0 / (n as f64 * h);
                            DensityModel::KdeGrid(TabulatedDensity {
                                grid,
                                values: sum.into_iter().map(|s| s * scale).collect(),
                            })
                        };
                        let n_test = grouped[p][f][g].len();
                        let test = (n_test > 0).then(|| tabulate(sums[p][f][g].clone(), n_test));
                        let n_train: usize = (0..n_groups).filter(|&o| o != g).map(|o| grouped[p][f][o].len()).sum();
                        let train = (n_train > 0).then(|| {
                            let mut acc = vec![0.0; grid.n_points];
                            for o in (0..n_groups).filter(|&o| o != g) {
                                for (a, s) in acc.iter_mut().zip(&sums[p][f][o]) {
                                    *a += s;
                                }
                            }
                            tabulate(acc, n_train)
                        });
                        Ok((test, train))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        cells
            .par_iter()
            .map(|&(p, g)| {
                kinds
                    .iter()
                    .enumerate()
                    .map(|(f, &kind)| {
                        let test_vals = &grouped[p][f][g];
                        let train_vals: Vec<f64> = (0..n_groups)
                            .filter(|&o| o != g)
                            .flat_map(|o| grouped[p][f][o].iter().copied())
                            .collect();
                        let test = if test_vals.is_empty() { None } else { Some(fitter.fit(kind, test_vals)?) };
                        let train = if train_vals.is_empty() { None } else { Some(fitter.fit(kind, &train_vals)?) };
                        Ok((test, train))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
    };
    let model_at = |p: usize, g: usize| &models[p * n_groups + g];

    cells
        .par_iter()
        .map(|&(p, g)| {
            let test: Option<Vec<&DensityModel>> = model_at(p, g).iter().map(|(t, _)| t.as_ref()).collect();
            let Some(test) = test else {
                return Ok(TrialDivergences {
                    performer: p,
                    group: g,
                    kl: Err(format!(
                        "skipped {} group {g}: no test values for a selected feature",
                        dataset.performer_ids[p]
                    )),
                });
            };
            let mut kl = Vec::with_capacity(n_perf);
            for c in 0..n_perf {
                let mut row = Vec::with_capacity(kinds.len());
                for (f, t) in test.iter().enumerate() {
                    let Some(train) = model_at(c, g)[f].1.as_ref() else {
                        return Ok(TrialDivergences {
                            performer: p,
                            group: g,
                            kl: Err(format!(
                                "skipped {} group {g}: candidate {} has no training values for {}",
                                dataset.performer_ids[p], dataset.performer_ids[c], kinds[f]
                            )),
                        });
                    };
                    row.push(kl_divergence(t, train)?.value);
                }
                kl.push(row);
            }
            Ok(TrialDivergences {
                performer: p,
                group: g,
                kl: Ok(kl),
            })
        })
        .collect()
}

/// Fuses the selected feature columns of precomputed divergences into a
/// report. `columns[i]` is the column of `config.features[i]`.
fn assemble(
    dataset: &FeatureDataset,
    fold: &FoldSpec,
    config: &ExperimentConfig,
    divergences: &[TrialDivergences],
    columns: &[usize],
) -> Result<EvaluationReport> {
    let n = dataset.n_performers();
    let ids: Vec<&str> = dataset.performer_ids.iter().map(String::as_str).collect();
    let mut confusion = vec![vec![0u64; n]; n];
    let mut trials = Vec::new();
    let mut warnings = Vec::new();
    for d in divergences {
        match &d.kl {
            Err(reason) => warnings.push(reason.clone()),
            Ok(kl) => {
                let selected: Vec<Vec<f64>> = kl.iter().map(|row| columns.iter().map(|&c| row[c]).collect()).collect();
                let fused = selected.iter().map(|k| fuse(k, &config.weights)).collect::<Result<Vec<_>>>()?;
                let predicted = argmin(&fused, &ids);
                confusion[d.performer][predicted] += 1;
                trials.push(TrialLog {
                    performer: dataset.performer_ids[d.performer].clone(),
                    group: d.group,
                    predicted: dataset.performer_ids[predicted].clone(),
                    fused,
                    kl: selected,
                });
            }
        }
    }
    let normalized_confusion = confusion
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(EvaluationReport {
        config: config.clone(),
        performer_ids: dataset.performer_ids.clone(),
        fold_sizes: fold.sizes(),
        metrics: metrics(&confusion)?,
        confusion,
        normalized_confusion,
        trials,
        warnings,
    })
}

fn check_dataset(dataset: &FeatureDataset) -> Result<()> {
    if dataset.n_performers() < 2 {
        return Err(Error::invalid("need at least 2 performers"));
    }
    if dataset.series.iter().any(|s| s.len() != FeatureKind::ALL.len()) {
        return Err(Error::invalid("every performer needs all five deviation series"));
    }
    Ok(())
}

/// Leave-one-group-out cross-validation over every performer × group.
pub fn run_cv(dataset: &FeatureDataset, config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    check_dataset(dataset)?;
    let fold = logo_split(dataset.n_positions, config.n_groups)?;
    let fitter = ModelFitter::for_dataset(dataset, config)?;
    let divergences = compute_divergences(dataset, &fold, &fitter, &config.features)?;
    let columns: Vec<usize> = (0..config.features.len()).collect();
    assemble(dataset, &fold, config, &divergences, &columns)
}

/// Every subset of the five features with at least `min_size` members,
/// ordered by size and then by feature order.
pub fn feature_subsets(min_size: usize) -> Vec<Vec<FeatureKind>> {
    let all = FeatureKind::ALL;
    let mut subsets: Vec<Vec<FeatureKind>> = (1u32..(1 << all.len()))
        .map(|mask| all.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &k)| k).collect())
        .filter(|s: &Vec<FeatureKind>| s.len() >= min_size.max(1))
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: ModelFamily,
    pub features: Vec<FeatureKind>,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Sorted by family, then by precision (descending).
    pub rows: Vec<SweepRow>,
    /// Full report of the highest-precision subset of each family.
    pub best: Vec<EvaluationReport>,
}

impl SweepReport {
    /// Table with columns `Feature,Precision,Recall,F-score` for one family.
    pub fn table_csv(&self, family: ModelFamily) -> String {
        let mut out = String::from("Feature,Precision,Recall,F-score\n");
        for row in self.rows.iter().filter(|r| r.family == family) {
            writeln!(
                out,
                "{},{:.3},{:.3},{:.3}",
                FeatureKind::join(&row.features),
                row.precision,
                row.recall,
                row.f_score
            )
            .expect("string write");
        }
        out
    }
}

/// Equal-weight cross-validation of every subset under every family.
///
/// Divergences are computed once per family for the union of the subsets'
/// features and fused per subset.
pub fn sweep(
    dataset: &FeatureDataset,
    subsets: &[Vec<FeatureKind>],
    families: &[ModelFamily],
    base: &ExperimentConfig,
) -> Result<SweepReport> {
    check_dataset(dataset)?;
    if subsets.is_empty() || families.is_empty() {
        return Err(Error::invalid("nothing to sweep"));
    }
    let mut union: Vec<FeatureKind> = subsets.iter().flatten().copied().collect();
    union.sort();
    union.dedup();
    let fold = logo_split(dataset.n_positions, base.n_groups)?;

    let mut rows = Vec::new();
    let mut best = Vec::new();
    for &family in families {
        let mut family_config = base.clone();
        family_config.family = family;
        family_config.features = union.clone();
        family_config.weights = vec![1.0; union.len()];
        family_config.validate()?;
        let fitter = ModelFitter::for_dataset(dataset, &family_config)?;
        let divergences = compute_divergences(dataset, &fold, &fitter, &union)?;

        let mut reports = Vec::with_capacity(subsets.len());
        for subset in subsets {
            let mut config = base.clone();
            config.family = family;
            config.features = subset.clone();
            config.weights = vec![1.0; subset.len()];
            config.validate()?;
            let columns: Vec<usize> = subset
                .iter()
                .map(|k| union.iter().position(|u| u == k).expect("subset member in union"))
                .collect();
            reports.push(assemble(dataset, &fold, &config, &divergences, &columns)?);
        }
        let mut order: Vec<usize> = (0..reports.len()).collect();
        order.sort_by(|&a, &b| {
            reports[b]
                .metrics
                .macro_precision
                .total_cmp(&reports[a].metrics.macro_precision)
                .then(a.cmp(&b))
        });
        for &i in &order {
            let m = &reports[i].metrics;
            rows.push(SweepRow {
                family,
                features: reports[i].config.features.clone(),
                precision: m.macro_precision,
                recall: m.macro_recall,
                f_score: m.f_score,
            });
        }
        best.push(reports.swap_remove(order[0]));
    }
    Ok(SweepReport { rows, best })
}
