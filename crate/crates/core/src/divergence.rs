//! KL divergence between fitted models of the same family, and the weighted
//! fusion of per-feature divergences. All values are in nats.

use serde::{Deserialize, Serialize};

use crate::density::{DensityModel, Gmm, Grid, Histogram, Kde, TabulatedDensity};
use crate::error::{Error, Result};

/// Floor applied to `q(x)` inside the integrand.
pub const Q_FLOOR: f64 = 1e-300;
pub const KDE_GRID_POINTS: usize = 4096;
/// Grid margin beyond the pooled sample range, in bandwidths.
pub const KDE_GRID_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMethod {
    Discrete,
    Grid,
    Variational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlResult {
    pub value: f64,
    pub method: KlMethod,
    pub grid: Option<Grid>,
}

impl KlResult {
    fn new(value: f64, method: KlMethod, grid: Option<Grid>) -> Result<KlResult> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("KL divergence is not finite ({value})")));
        }
        Ok(KlResult {
            value: value.max(0.0),
            method,
            grid,
        })
    }
}

/// `Σ p_i ln(p_i / q_i)` over bins, after moving `q` onto `p`'s edges when
/// they differ.
pub fn kl_histogram(p: &Histogram, q: &Histogram) -> Result<KlResult> {
    let rebinned;
    let q = if p.edges == q.edges {
        q
    } else {
        rebinned = q.rebin(&p.edges)?;
        &rebinned
    };
    let value = p
        .masses
        .iter()
        .zip(&q.masses)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(Q_FLOOR).ln()))
        .sum();
    KlResult::new(value, KlMethod::Discrete, None)
}

/// Trapezoid estimate of `∫ p ln(p / max(q, floor))` from values on `grid`.
pub fn kl_tabulated(p: &TabulatedDensity, q: &TabulatedDensity) -> Result<KlResult> {
    if p.grid != q.grid || p.values.len() != q.values.len() {
        return Err(Error::invalid("tabulated densities live on different grids"));
    }
    let integrand: Vec<f64> = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(&pv, &qv)| if pv > 0.0 { pv * (pv.ln() - qv.max(Q_FLOOR).ln()) } else { 0.0 })
        .collect();
    let n = integrand.len();
    let inner: f64 = integrand[1..n - 1].iter().sum();
    let value = p.grid.step() * (inner + 0.5 * (integrand[0] + integrand[n - 1]));
    KlResult::new(value, KlMethod::Grid, Some(p.grid))
}

/// Grid spanning both sample ranges widened by five of the larger bandwidth.
pub fn kde_grid(p: &Kde, q: &Kde, n_points: usize) -> Result<Grid> {
    let margin = KDE_GRID_MARGIN * p.bandwidth.max(q.bandwidth);
    Grid::new(p.min().min(q.min()) - margin, p.max().max(q.max()) + margin, n_points)
}

pub fn kl_kde(p: &Kde, q: &Kde) -> Result<KlResult> {
    kl_kde_with_points(p, q, KDE_GRID_POINTS)
}

pub fn kl_kde_with_points(p: &Kde, q: &Kde, n_points: usize) -> Result<KlResult> {
    let grid = kde_grid(p, q, n_points)?;
    kl_tabulated(&p.tabulate(&grid), &q.tabulate(&grid))
}

/// Closed-form `KL(N(m1, v1) ‖ N(m2, v2))`.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0)
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Variational approximation for mixtures:
///
/// `Σ_a w_a ln( Σ_a' w_a' e^{-KL(f_a‖f_a')} / Σ_b v_b e^{-KL(f_a‖g_b)} )`
pub fn kl_gmm(p: &Gmm, q: &Gmm) -> Result<KlResult> {
    let mut value = 0.0;
    for (wa, ma, va) in p.components().filter(|c| c.0 > 0.0) {
        let own = log_sum_exp(
            p.components()
                .filter(|c| c.0 > 0.0)
                .map(|(w, m, v)| w.ln() - gaussian_kl(ma, va, m, v)),
        );
        let other = log_sum_exp(
            q.components()
                .filter(|c| c.0 > 0.0)
                .map(|(w, m, v)| w.ln() - gaussian_kl(ma, va, m, v)),
        );
        value += wa * (own - other);
    }
    KlResult::new(value, KlMethod::Variational, None)
}

/// Dispatches on the model family; mixing families is an error.
pub fn kl_divergence(p: &DensityModel, q: &DensityModel) -> Result<KlResult> {
    match (p, q) {
        (DensityModel::Histogram(a), DensityModel::Histogram(b)) => kl_histogram(a, b),
        (DensityModel::Kde(a), DensityModel::Kde(b)) => kl_kde(a, b),
        (DensityModel::Gmm(a), DensityModel::Gmm(b)) => kl_gmm(a, b),
        (DensityModel::KdeGrid(a), DensityModel::KdeGrid(b)) => kl_tabulated(a, b),
        _ => Err(Error::ModelMismatch {
            left: p.family_name(),
            right: q.family_name(),
        }),
    }
}

/// `Σ w_i KL_i`.
pub fn fuse(kls: &[f64], weights: &[f64]) -> Result<f64> {
    if kls.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} divergences but {} weights",
            kls.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("fusion weights must be finite and non-negative"));
    }
    Ok(kls.iter().zip(weights).map(|(k, w)| k * w).sum())
}
