//! Count-data families: the plugin contract and the built-in catalogue.
//!
//! A family only has to supply log-probabilities (as jets of the linear
//! predictors) and per-unit population-size contributions. Likelihood,
//! score, information, moments, simulation and variance are derived from
//! those, and families override the derived pieces when closed forms exist.

mod base;
mod chao;
mod registry;
mod standard;

use std::fmt;
use std::sync::Arc;

use arrayvec::ArrayVec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{DesignBlocks, VlmMatrix};
use crate::error::{Error, Result};
use crate::jet::{Jet, MAX_PARAMS};
use crate::linalg::solve_checked;
use crate::links::Link;

pub use base::Base;
pub use chao::{Chao, Zelterman};
pub use registry::{family, family_names, register_family, FamilyRegistry};
pub use standard::{StandardFamily, Variant};

pub type InfoBlock = [[f64; MAX_PARAMS]; MAX_PARAMS];

/// Mass left unaccounted for when summing over an unbounded support.
const TAIL_TOL: f64 = 1e-12;
const MAX_SUPPORT: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PmfType {
    /// Conditional on being observed.
    Truncated,
    Untruncated,
}

/// The family contract.
pub trait CountFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Parameter names, one per linear predictor.
    fn eta_names(&self) -> &[&'static str];

    fn links(&self) -> &[Link];

    /// ln P[Y = y] as a jet of the row's linear predictors. Counts outside
    /// the support give -inf.
    fn ln_pmf_jet(&self, y: u64, eta: &[Jet], kind: PmfType) -> Jet;

    /// ln of the unit's population-size contribution (1/P[Y>0] for
    /// Horvitz-Thompson type families).
    fn ln_contribution_jet(&self, y: u64, eta: &[Jet]) -> Jet;

    /// Smallest count that can be observed.
    fn min_count(&self) -> u64 {
        1
    }

    /// Whether an observed count enters the likelihood.
    fn uses_observation(&self, _y: u64) -> bool {
        true
    }

    /// Expected information -E[∂²ℓ/∂η∂η'] for one row with unit weight.
    fn expected_information_row(&self, eta: &[f64]) -> InfoBlock {
        information_by_summation(self, eta)
    }

    /// (E[Y], Var[Y]) of the truncated or untruncated distribution.
    fn mean_variance(&self, eta: &[f64], kind: PmfType) -> (f64, f64) {
        moments_by_summation(self, eta, kind)
    }

    /// One draw from the row's distribution.
    fn simulate_one(&self, eta: &[f64], kind: PmfType, rng: &mut dyn RngCore) -> u64 {
        inverse_cdf_draw(self, eta, kind, rng)
    }

    /// Starting coefficients.
    fn start_values(&self, design: &DesignBlocks) -> Result<DVector<f64>> {
        default_start(self, design)
    }

    /// Returns a copy with a different link for `param`.
    fn with_link(&self, param: &str, _link: Link) -> Result<Arc<dyn CountFamily>> {
        Err(Error::Family(format!(
            "family '{}' does not support changing the link of '{param}'",
            self.name()
        )))
    }
}

/// Iterates (y, ln pmf jet) over the support until the remaining mass is
/// negligible.
fn for_support<F: CountFamily + ?Sized>(fam: &F, eta: &[Jet], kind: PmfType, mut f: impl FnMut(u64, Jet, f64)) {
    let start = match kind {
        PmfType::Truncated => fam.min_count(),
        PmfType::Untruncated => 0,
    };
    let mut mass = 0.0;
    let mut y = start;
    while y < start + MAX_SUPPORT {
        let lp = fam.ln_pmf_jet(y, eta, kind);
        let p = lp.v.exp();
        if p > 0.0 {
            f(y, lp, p);
        }
        mass += p;
        if 1.0 - mass < TAIL_TOL || (mass > 0.5 && lp.v < -745.0) {
            break;
        }
        y += 1;
    }
}

fn information_by_summation<F: CountFamily + ?Sized>(fam: &F, eta: &[f64]) -> InfoBlock {
    let jets = Jet::seed(eta);
    let p = eta.len();
    let mut out = [[0.0; MAX_PARAMS]; MAX_PARAMS];
    for_support(fam, &jets, PmfType::Truncated, |_, lp, prob| {
        for a in 0..p {
            for b in 0..p {
                out[a][b] -= prob * lp.h[a][b];
            }
        }
    });
    out
}

fn moments_by_summation<F: CountFamily + ?Sized>(fam: &F, eta: &[f64], kind: PmfType) -> (f64, f64) {
    let jets: ArrayVec<Jet, MAX_PARAMS> = eta.iter().map(|&v| Jet::constant(v)).collect();
    let (mut m1, mut m2) = (0.0, 0.0);
    for_support(fam, &jets, kind, |y, _, prob| {
        let yf = y as f64;
        m1 += prob * yf;
        m2 += prob * yf * yf;
    });
    (m1, (m2 - m1 * m1).max(0.0))
}

fn inverse_cdf_draw<F: CountFamily + ?Sized>(fam: &F, eta: &[f64], kind: PmfType, rng: &mut dyn RngCore) -> u64 {
    let jets: ArrayVec<Jet, MAX_PARAMS> = eta.iter().map(|&v| Jet::constant(v)).collect();
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = None;
    let mut hit = None;
    for_support(fam, &jets, kind, |y, _, prob| {
        if hit.is_none() {
            cum += prob;
            last = Some(y);
            if u < cum {
                hit = Some(y);
            }
        }
    });
    hit.or(last).unwrap_or(0)
}

/// λ-block from a Poisson GLM on the observed counts when λ has a log
/// link; every other coefficient starts at zero.
fn default_start<F: CountFamily + ?Sized>(fam: &F, design: &DesignBlocks) -> Result<DVector<f64>> {
    let q = design.x.n_coefficients();
    let mut start = DVector::zeros(q);
    if fam.links().first() == Some(&Link::Log) {
        let x0 = &design.x.blocks()[0];
        let b = poisson_glm(&design.y, x0, &design.offsets.column(0).into_owned(), &design.weights, &design.names[0])?;
        start.rows_mut(0, b.len()).copy_from(&b);
    }
    Ok(start)
}

/// Maximum likelihood for an untruncated Poisson log-linear model.
pub fn poisson_glm(
    y: &[u64],
    x: &DMatrix<f64>,
    offset: &DVector<f64>,
    weights: &[f64],
    names: &[String],
) -> Result<DVector<f64>> {
    let n = y.len();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut mu: Vec<f64> = yf.iter().map(|&v| v + 0.1).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta = DVector::zeros(x.ncols());
    let mut dev_old = f64::INFINITY;
    for _ in 0..50 {
        let z = DVector::from_fn(n, |k, _| eta[k] - offset[k] + (yf[k] - mu[k]) / mu[k]);
        let w: Vec<f64> = (0..n).map(|k| weights[k] * mu[k]).collect();
        let mut xw = x.clone();
        for (k, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[k];
        }
        let xtwx = x.transpose() * &xw;
        let xtwz = xw.transpose() * &z;
        beta = solve_checked(&xtwx, &xtwz, names, "Poisson start")?;
        let lin = x * &beta;
        for k in 0..n {
            eta[k] = lin[k] + offset[k];
            mu[k] = eta[k].exp();
        }
        let dev: f64 = (0..n)
            .map(|k| {
                let t = if yf[k] > 0.0 { yf[k] * (yf[k] / mu[k]).ln() } else { 0.0 };
                2.0 * weights[k] * (t - (yf[k] - mu[k]))
            })
            .sum();
        if (dev - dev_old).abs() < 1e-10 * (dev.abs() + 0.1) {
            break;
        }
        dev_old = dev;
    }
    Ok(beta)
}

fn row(eta: &DMatrix<f64>, k: usize) -> ArrayVec<f64, MAX_PARAMS> {
    eta.row(k).iter().copied().collect()
}

/// Operations over whole data sets, derived from the per-row contract.
impl dyn CountFamily + '_ {
    pub fn n_params(&self) -> usize {
        self.links().len()
    }

    /// Parameter values θ = g⁻¹(η) for one row.
    pub fn parameters(&self, eta: &[f64]) -> Vec<f64> {
        self.links().iter().zip(eta).map(|(l, &e)| l.inverse(e)).collect()
    }

    pub fn ln_pmf(&self, y: u64, eta: &[f64], kind: PmfType) -> f64 {
        let jets: ArrayVec<Jet, MAX_PARAMS> = eta.iter().map(|&v| Jet::constant(v)).collect();
        self.ln_pmf_jet(y, &jets, kind).v
    }

    pub fn pmf(&self, y: u64, eta: &[f64], kind: PmfType) -> f64 {
        if kind == PmfType::Truncated && y < self.min_count() {
            return 0.0;
        }
        self.ln_pmf(y, eta, kind).exp()
    }

    /// Σ w_k ln P[Y = y_k | Y > 0]; -inf when a row leaves the parameter space.
    pub fn log_likelihood(&self, y: &[u64], eta: &DMatrix<f64>, weights: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, (&yk, &w)) in y.iter().zip(weights).enumerate() {
            if w == 0.0 || !self.uses_observation(yk) {
                continue;
            }
            let v = self.ln_pmf(yk, &row(eta, k), PmfType::Truncated);
            if v.is_nan() {
                return f64::NEG_INFINITY;
            }
            total += w * v;
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    /// Value, gradient and Hessian of one row's log-likelihood in η.
    pub fn row_derivatives(&self, y: u64, eta: &[f64]) -> Jet {
        self.ln_pmf_jet(y, &Jet::seed(eta), PmfType::Truncated)
    }

    /// ∂ℓ/∂η as an n × p matrix, prior weights applied.
    pub fn gradient(&self, y: &[u64], eta: &DMatrix<f64>, weights: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.n_params();
        let mut g = DMatrix::zeros(y.len(), p);
        for (k, (&yk, &w)) in y.iter().zip(weights).enumerate() {
            if w == 0.0 || !self.uses_observation(yk) {
                continue;
            }
            let j = self.row_derivatives(yk, &row(eta, k));
            for a in 0..p {
                if !j.g[a].is_finite() {
                    return Err(Error::NonFinite {
                        row: k + 1,
                        what: format!("score for '{}'", self.eta_names()[a]),
                    });
                }
                g[(k, a)] = w * j.g[a];
            }
        }
        Ok(g)
    }

    /// Per-row expected information blocks, prior weights applied.
    pub fn information(&self, y: &[u64], eta: &DMatrix<f64>, weights: &[f64]) -> Result<Vec<InfoBlock>> {
        let p = self.n_params();
        let mut out = vec![[[0.0; MAX_PARAMS]; MAX_PARAMS]; y.len()];
        for (k, (&yk, &w)) in y.iter().zip(weights).enumerate() {
            if w == 0.0 || !self.uses_observation(yk) {
                continue;
            }
            let info = self.expected_information_row(&row(eta, k));
            for a in 0..p {
                for b in 0..p {
                    if !info[a][b].is_finite() {
                        return Err(Error::NonFinite {
                            row: k + 1,
                            what: "expected information".into(),
                        });
                    }
                    out[k][a][b] = w * info[a][b];
                }
            }
        }
        Ok(out)
    }

    /// Per-row observed information blocks (negative Hessian of ℓ).
    pub fn observed_information(&self, y: &[u64], eta: &DMatrix<f64>, weights: &[f64]) -> Result<Vec<InfoBlock>> {
        let p = self.n_params();
        let mut out = vec![[[0.0; MAX_PARAMS]; MAX_PARAMS]; y.len()];
        for (k, (&yk, &w)) in y.iter().zip(weights).enumerate() {
            if w == 0.0 || !self.uses_observation(yk) {
                continue;
            }
            let j = self.row_derivatives(yk, &row(eta, k));
            for a in 0..p {
                for b in 0..p {
                    out[k][a][b] = -w * j.h[a][b];
                }
            }
        }
        Ok(out)
    }

    /// Unweighted per-unit contributions to N̂.
    pub fn contributions(&self, y: &[u64], eta: &DMatrix<f64>) -> Result<Vec<f64>> {
        y.iter()
            .enumerate()
            .map(|(k, &yk)| {
                let jets: ArrayVec<Jet, MAX_PARAMS> = row(eta, k).iter().map(|&v| Jet::constant(v)).collect();
                let c = self.ln_contribution_jet(yk, &jets).v.exp();
                if c.is_finite() {
                    Ok(c)
                } else {
                    Err(Error::ZeroInclusion { unit: k + 1 })
                }
            })
            .collect()
    }

    /// N̂ = Σ w_k c_k.
    pub fn point_estimate(&self, y: &[u64], eta: &DMatrix<f64>, weights: &[f64]) -> Result<f64> {
        Ok(self
            .contributions(y, eta)?
            .iter()
            .zip(weights)
            .map(|(c, w)| c * w)
            .sum())
    }

    /// ∂N̂/∂β restricted to `rows` (all rows when `None`).
    pub fn point_estimate_gradient(
        &self,
        y: &[u64],
        eta: &DMatrix<f64>,
        weights: &[f64],
        x: &VlmMatrix,
        rows: Option<&[usize]>,
    ) -> Result<DVector<f64>> {
        let p = self.n_params();
        let mut dc = DMatrix::zeros(y.len(), p);
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..y.len()).collect();
                &all
            }
        };
        for &k in rows {
            let j = self.ln_contribution_jet(y[k], &Jet::seed(&row(eta, k)));
            let c = j.v.exp();
            if !c.is_finite() {
                return Err(Error::ZeroInclusion { unit: k + 1 });
            }
            for a in 0..p {
                dc[(k, a)] += weights[k] * c * j.g[a];
            }
        }
        Ok(x.transpose_mul(&dc))
    }

    /// Analytic variance of N̂: delta-method term plus Σ w (c² - c).
    pub fn popsize_variance_analytic(
        &self,
        y: &[u64],
        eta: &DMatrix<f64>,
        weights: &[f64],
        beta_cov: &DMatrix<f64>,
        x: &VlmMatrix,
    ) -> Result<f64> {
        self.popsize_variance_rows(y, eta, weights, beta_cov, x, None)
    }

    pub(crate) fn popsize_variance_rows(
        &self,
        y: &[u64],
        eta: &DMatrix<f64>,
        weights: &[f64],
        beta_cov: &DMatrix<f64>,
        x: &VlmMatrix,
        rows: Option<&[usize]>,
    ) -> Result<f64> {
        if beta_cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("coefficient covariance has non-finite entries".into()));
        }
        let g = self.point_estimate_gradient(y, eta, weights, x, rows)?;
        let delta = (g.transpose() * beta_cov * &g)[(0, 0)];
        let c = self.contributions(y, eta)?;
        let second: f64 = match rows {
            Some(r) => r.iter().map(|&k| weights[k] * (c[k] * c[k] - c[k])).sum(),
            None => c.iter().zip(weights).map(|(c, w)| w * (c * c - c)).sum(),
        };
        Ok(delta + second)
    }

    /// Draws one count per row of `eta` from a seeded stream.
    pub fn simulate(&self, eta: &DMatrix<f64>, seed: u64, kind: PmfType) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.simulate_with(eta, kind, &mut rng)
    }

    pub fn simulate_with(&self, eta: &DMatrix<f64>, kind: PmfType, rng: &mut dyn RngCore) -> Vec<u64> {
        (0..eta.nrows())
            .map(|k| self.simulate_one(&row(eta, k), kind, rng))
            .collect()
    }

    /// Checks that every observed count lies in the truncated support.
    pub fn check_support(&self, y: &[u64]) -> Result<()> {
        for (k, &v) in y.iter().enumerate() {
            if v < self.min_count() {
                return Err(Error::Support {
                    row: k + 1,
                    value: v,
                    family: self.name().to_string(),
                });
            }
        }
        Ok(())
    }
}
