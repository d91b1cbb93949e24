//! One-dimensional density models fitted to deviation series.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureKind;

pub const DEFAULT_BINS: usize = 50;
/// Mass added to every histogram bin before renormalising.
pub const SMOOTHING_EPS: f64 = 1e-9;
pub const DEFAULT_GMM_K: usize = 3;
pub const MAX_GMM_K: usize = 3;

/// Gaussian kernel contributions beyond this many bandwidths underflow to
/// zero in `f64`, so skipping them leaves the sum unchanged.
const KERNEL_REACH: f64 = 39.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Default KDE bandwidth per feature kind, in the feature's units.
pub fn default_bandwidth(kind: FeatureKind) -> f64 {
    match kind {
        FeatureKind::Ot => 1.2,
        FeatureKind::Ioi => 0.01,
        FeatureKind::Otd => 0.02,
        FeatureKind::Dl => 1.5,
        FeatureKind::Nd => 0.01,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Histogram,
    Kde,
    Gmm,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::Histogram, ModelFamily::Kde, ModelFamily::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Histogram => "histogram",
            ModelFamily::Kde => "kde",
            ModelFamily::Gmm => "gmm",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}` (expected histogram, kde or gmm)")))
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("cannot fit a density to an empty series"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    Ok(())
}

fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z2 = (x - mean) * (x - mean) / variance;
    (-0.5 * z2).exp() * INV_SQRT_2PI / variance.sqrt()
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// How histogram bin edges are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RangePolicy {
    /// `[min, max]` of the series widened by 0.1% of the span on each side.
    Data,
    /// Fixed range; values outside it fall into the end bins.
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub smoothing_eps: f64,
}

impl Histogram {
    /// Builds a histogram from raw (unnormalised, non-negative) bin weights,
    /// adding `eps` to every normalised mass and renormalising.
    pub fn from_weights(edges: Vec<f64>, weights: &[f64], eps: f64) -> Result<Histogram> {
        if edges.len() != weights.len() + 1 || weights.is_empty() {
            return Err(Error::invalid("need one more edge than bins"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("histogram edges must be finite and increasing"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::invalid("histogram weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        let n = weights.len() as f64;
        let masses: Vec<f64> = if total > 0.0 {
            weights.iter().map(|w| (w / total + eps) / (1.0 + n * eps)).collect()
        } else {
            vec![1.0 / n; weights.len()]
        };
        Ok(Histogram {
            edges,
            masses,
            smoothing_eps: eps,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.masses.len()
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// Density (mass / bin width); zero outside the edges.
    pub fn pdf(&self, x: f64) -> f64 {
        if !(x >= self.lo() && x <= self.hi()) {
            return 0.0;
        }
        let i = (self.edges.partition_point(|&e| e <= x)).clamp(1, self.n_bins()) - 1;
        self.masses[i] / (self.edges[i + 1] - self.edges[i])
    }

    /// Re-expresses the masses on `edges`, splitting each source bin in
    /// proportion to its overlap with the target bins, then re-smooths.
    pub fn rebin(&self, edges: &[f64]) -> Result<Histogram> {
        if edges.len() < 2 {
            return Err(Error::invalid("need at least two edges"));
        }
        let mut weights = vec![0.0; edges.len() - 1];
        for (t, w) in weights.iter_mut().enumerate() {
            let (a, b) = (edges[t], edges[t + 1]);
            for (s, &mass) in self.masses.iter().enumerate() {
                let (c, d) = (self.edges[s], self.edges[s + 1]);
                let overlap = b.min(d) - a.max(c);
                if overlap > 0.0 {
                    *w += mass * overlap / (d - c);
                }
            }
        }
        Histogram::from_weights(edges.to_vec(), &weights, self.smoothing_eps)
    }
}

/// Equal-width histogram with additive smoothing.
pub fn fit_histogram(values: &[f64], n_bins: usize, range: RangePolicy) -> Result<Histogram> {
    check_finite(values)?;
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let (lo, hi) = match range {
        RangePolicy::Data => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = if max > min {
                1e-3 * (max - min)
            } else {
                (1e-3 * min.abs()).max(1e-9)
            };
            (min - pad, max + pad)
        }
        RangePolicy::Fixed { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("invalid histogram range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
    };
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    edges[n_bins] = hi;
    let mut counts = vec![0.0; n_bins];
    for &v in values {
        let idx = ((v - lo) / width).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(n_bins - 1) };
        counts[idx] += 1.0;
    }
    Histogram::from_weights(edges, &counts, SMOOTHING_EPS)
}

/// Uniform evaluation grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Grid> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || n_points < 2 {
            return Err(Error::invalid(format!("invalid grid [{lo}, {hi}] with {n_points} points")));
        }
        Ok(Grid { lo, hi, n_points })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    /// Fitted series, sorted ascending.
    pub samples: Vec<f64>,
    pub bandwidth: f64,
}

pub fn fit_kde(values: &[f64], bandwidth: f64) -> Result<Kde> {
    check_finite(values)?;
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut samples = values.to_vec();
    samples.sort_by(f64::total_cmp);
    Ok(Kde { samples, bandwidth })
}

pub fn kde_pdf(model: &Kde, x: f64) -> f64 {
    model.pdf(x)
}

/// `Σ φ((x - s) / h)` over `sorted` for every ascending `xs`.
pub fn kernel_sums(sorted: &[f64], bandwidth: f64, xs: &[f64]) -> Vec<f64> {
    let reach = KERNEL_REACH * bandwidth;
    let inv_h = 1.0 / bandwidth;
    let mut start = 0;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        while start < sorted.len() && sorted[start] < x - reach {
            start += 1;
        }
        let mut sum = 0.0;
        for &s in &sorted[start..] {
            if s > x + reach {
                break;
            }
            let z = (x - s) * inv_h;
            sum += (-0.5 * z * z).exp();
        }
        out.push(sum * INV_SQRT_2PI);
    }
    out
}

impl Kde {
    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    /// `(1 / (n h)) Σ φ((x - s_i) / h)`.
    pub fn pdf(&self, x: f64) -> f64 {
        let lo = self.samples.partition_point(|&s| s < x - KERNEL_REACH * self.bandwidth);
        let inv_h = 1.0 / self.bandwidth;
        let mut sum = 0.0;
        for &s in &self.samples[lo..] {
            if s > x + KERNEL_REACH * self.bandwidth {
                break;
            }
            let z = (x - s) * inv_h;
            sum += (-0.5 * z * z).exp();
        }
        sum * INV_SQRT_2PI / (self.samples.len() as f64 * self.bandwidth)
    }

    /// Density at every grid point.
    pub fn tabulate(&self, grid: &Grid) -> TabulatedDensity {
        let scale = 1.0 / (self.samples.len() as f64 * self.bandwidth);
        let values = kernel_sums(&self.samples, self.bandwidth, &grid.points())
            .into_iter()
            .map(|s| s * scale)
            .collect();
        TabulatedDensity { grid: *grid, values }
    }
}

/// A density known only through its values on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k: usize,
    pub seed: u64,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            k: DEFAULT_GMM_K,
            seed: 0,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// One-dimensional Gaussian mixture, components ordered by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * normal_pdf(x, *m, *v))
            .sum()
    }

    pub fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, &m), &v)| (w, m, v))
    }
}

pub fn gmm_pdf(model: &Gmm, x: f64) -> f64 {
    model.pdf(x)
}

/// A fitted mixture with its EM history.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: Gmm,
    /// Mean per-sample log-likelihood before each M-step, plus the final one.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

pub fn fit_gmm(values: &[f64], options: &GmmOptions) -> Result<Gmm> {
    fit_gmm_traced(values, options).map(|f| f.model)
}

/// EM for a 1-D Gaussian mixture with k-means++ seeding.
pub fn fit_gmm_traced(values: &[f64], options: &GmmOptions) -> Result<GmmFit> {
    check_finite(values)?;
    let k = options.k;
    if k == 0 {
        return Err(Error::invalid("GMM needs at least one component"));
    }
    if values.len() < k {
        return Err(Error::invalid(format!(
            "GMM with {k} components needs at least {k} values, got {}",
            values.len()
        )));
    }
    let n = values.len();
    let (_, sample_var) = mean_and_variance(values);
    let floor = if sample_var > 0.0 { 1e-10 * sample_var } else { 1e-12 };

    let mut model = initialize(values, k, options.seed, sample_var.max(floor), floor);
    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..=options.max_iter {
        let ll = e_step(&model, values, &mut resp);
        if let Some(&prev) = trace.last() {
            if ll - prev < options.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter == options.max_iter {
            break;
        }
        m_step(&mut model, values, &resp, floor);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| model.means[a].total_cmp(&model.means[b]).then(a.cmp(&b)));
    let model = Gmm {
        weights: order.iter().map(|&i| model.weights[i]).collect(),
        means: order.iter().map(|&i| model.means[i]).collect(),
        variances: order.iter().map(|&i| model.variances[i]).collect(),
    };
    Ok(GmmFit {
        model,
        log_likelihoods: trace,
        converged,
    })
}

fn initialize(values: &[f64], k: usize, seed: u64, fallback_var: f64, floor: f64) -> Gmm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut centers = vec![values[rng.random_range(0..n)]];
    let mut dist2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in dist2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            values[chosen]
        } else {
            values[rng.random_range(0..n)]
        };
        centers.push(next);
        for (d, v) in dist2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }

    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); k];
    for &v in values {
        let mut best = 0;
        for c in 1..k {
            if (v - centers[c]).abs() < (v - centers[best]).abs() {
                best = c;
            }
        }
        sums[best].0 += 1.0;
        sums[best].1 += v;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&centers)
        .map(|(s, &c)| if s.0 > 0.0 { s.1 / s.0 } else { c })
        .collect();
    for &v in values {
        let mut best = 0;
        for c in 1..k {
            if (v - centers[c]).abs() < (v - centers[best]).abs() {
                best = c;
            }
        }
        sums[best].2 += (v - means[best]).powi(2);
    }
    let mut weights = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for s in &sums {
        let count = s.0.max(1.0);
        weights.push(count);
        variances.push(if s.0 > 1.0 { (s.2 / s.0).max(floor) } else { fallback_var });
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Gmm {
        weights,
        means,
        variances,
    }
}

/// Fills responsibilities and returns the mean per-sample log-likelihood.
fn e_step(model: &Gmm, values: &[f64], resp: &mut [f64]) -> f64 {
    let k = model.k();
    let log_norm: Vec<f64> = model
        .weights
        .iter()
        .zip(&model.variances)
        .map(|(w, v)| if *w > 0.0 { w.ln() - 0.5 * (2.0 * PI * v).ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut total = 0.0;
    let mut logp = vec![0.0; k];
    for (i, &x) in values.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for c in 0..k {
            let d = x - model.means[c];
            logp[c] = log_norm[c] - 0.5 * d * d / model.variances[c];
            max = max.max(logp[c]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            let e = (logp[c] - max).exp();
            resp[i * k + c] = e;
            sum += e;
        }
        for c in 0..k {
            resp[i * k + c] /= sum;
        }
        total += max + sum.ln();
    }
    total / values.len() as f64
}

fn m_step(model: &mut Gmm, values: &[f64], resp: &[f64], floor: f64) {
    let k = model.k();
    let n = values.len() as f64;
    for c in 0..k {
        let mut nk = 0.0;
        let mut sx = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let r = resp[i * k + c];
            nk += r;
            sx += r * x;
        }
        if nk <= 0.0 {
            model.weights[c] = 0.0;
            continue;
        }
        let mean = sx / nk;
        let mut sv = 0.0;
        for (i, &x) in values.iter().enumerate() {
            sv += resp[i * k + c] * (x - mean) * (x - mean);
        }
        model.weights[c] = nk / n;
        model.means[c] = mean;
        model.variances[c] = (sv / nk).max(floor);
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

/// Any fitted model. Divergences are only defined between equal variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensityModel {
    Histogram(Histogram),
    Kde(Kde),
    Gmm(Gmm),
    /// A KDE evaluated on a fixed grid.
    KdeGrid(TabulatedDensity),
}

impl DensityModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            DensityModel::Histogram(_) => "histogram",
            DensityModel::Kde(_) => "kde",
            DensityModel::Gmm(_) => "gmm",
            DensityModel::KdeGrid(_) => "tabulated kde",
        }
    }

    /// Density at `x`. Tabulated models interpolate linearly and are zero
    /// off-grid.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            DensityModel::Histogram(h) => h.pdf(x),
            DensityModel::Kde(k) => k.pdf(x),
            DensityModel::Gmm(g) => g.pdf(x),
            DensityModel::KdeGrid(t) => {
                let g = &t.grid;
                if !(x >= g.lo && x <= g.hi) {
                    return 0.0;
                }
                let pos = (x - g.lo) / g.step();
                let i = (pos.floor() as usize).min(g.n_points - 2);
                let frac = pos - i as f64;
                t.values[i] * (1.0 - frac) + t.values[i + 1] * frac
            }
        }
    }
}
