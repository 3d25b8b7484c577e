//! Goodness of fit, residuals, information criteria and leave-one-out
//! influence.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::design::DesignBlocks;
use crate::error::{Error, Result};
use crate::families::{CountFamily, PmfType};
use crate::fitting::{fit, FitControl, FitResult};
use crate::jet::Jet;
use crate::parallel::{map_indices, Progress};

#[derive(Debug, Clone, Serialize)]
pub struct FreqRow {
    pub k: u64,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalFreqTable {
    pub rows: Vec<FreqRow>,
    /// Expected count above the largest observed value.
    pub tail_expected: f64,
}

fn eta_row(eta: &DMatrix<f64>, k: usize) -> Vec<f64> {
    eta.row(k).iter().copied().collect()
}

/// Observed and fitted marginal frequencies for k up to max(y).
pub fn marginal_freq(design: &DesignBlocks, family: &dyn CountFamily, fitted: &FitResult) -> MarginalFreqTable {
    let kmin = family.min_count();
    let kmax = design.y.iter().copied().max().unwrap_or(kmin).max(kmin);
    let m = (kmax - kmin + 1) as usize;
    let mut observed = vec![0.0; m];
    let mut expected = vec![0.0; m];
    for (j, (&y, &w)) in design.y.iter().zip(&design.weights).enumerate() {
        observed[(y - kmin) as usize] += w;
        let eta = eta_row(&fitted.eta, j);
        for (i, e) in expected.iter_mut().enumerate() {
            *e += w * family.pmf(kmin + i as u64, &eta, PmfType::Truncated);
        }
    }
    let total: f64 = design.observed();
    let tail_expected = (total - expected.iter().sum::<f64>()).max(0.0);
    MarginalFreqTable {
        rows: (0..m)
            .map(|i| FreqRow {
                k: kmin + i as u64,
                observed: observed[i],
                expected: expected[i],
            })
            .collect(),
        tail_expected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Drop5 {
    /// Pool the upper tail, from the largest count downward, until the
    /// pooled expected count reaches 5. A pool of several cells is labelled
    /// by its smallest count followed by `+`.
    Group,
    /// Drop cells with expected count below 5.
    Drop,
    /// Keep all cells.
    None,
}

impl std::str::FromStr for Drop5 {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(Drop5::Group),
            "drop" => Ok(Drop5::Drop),
            "none" | "no" => Ok(Drop5::None),
            _ => Err(Error::InvalidInput(format!("unknown drop5 policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GofResult {
    pub chi_sq: f64,
    pub chi_sq_p: f64,
    pub g: f64,
    pub g_p: f64,
    pub df: usize,
    /// Labels of the cells used.
    pub cells: Vec<String>,
}

/// χ² and G tests on the marginal frequency table.
pub fn gof_tests(table: &MarginalFreqTable, df: usize, drop5: Drop5) -> Result<GofResult> {
    if df == 0 {
        return Err(Error::InvalidInput("degrees of freedom must be at least 1".into()));
    }
    let rows: Vec<(u64, f64, f64)> = table.rows.iter().map(|r| (r.k, r.observed, r.expected)).collect();
    let cells: Vec<(String, f64, f64)> = match drop5 {
        Drop5::None => rows.iter().map(|&(k, o, e)| (k.to_string(), o, e)).collect(),
        Drop5::Drop => rows
            .iter()
            .filter(|r| r.2 >= 5.0)
            .map(|&(k, o, e)| (k.to_string(), o, e))
            .collect(),
        Drop5::Group => {
            // accumulate from the largest count downward until the pooled
            // expected frequency reaches 5
            let mut cut = rows.len();
            let (mut po, mut pe) = (0.0, 0.0);
            if rows.last().is_some_and(|r| r.2 < 5.0) {
                while cut > 0 && pe < 5.0 {
                    cut -= 1;
                    po += rows[cut].1;
                    pe += rows[cut].2;
                }
            }
            let mut c: Vec<(String, f64, f64)> =
                rows[..cut].iter().map(|&(k, o, e)| (k.to_string(), o, e)).collect();
            if cut < rows.len() {
                let label = if cut + 1 == rows.len() {
                    rows[cut].0.to_string()
                } else {
                    format!("{}+", rows[cut].0)
                };
                c.push((label, po, pe));
            }
            c
        }
    };
    if cells.is_empty() {
        return Err(Error::InvalidInput("no cells left for the goodness-of-fit test".into()));
    }
    if let Some((l, _, _)) = cells.iter().find(|c| c.2 <= 0.0) {
        return Err(Error::InvalidInput(format!("cell '{l}' has zero expected count")));
    }
    let chi_sq: f64 = cells.iter().map(|(_, o, e)| (o - e).powi(2) / e).sum();
    let g: f64 = 2.0
        * cells
            .iter()
            .map(|(_, o, e)| if *o > 0.0 { o * (o / e).ln() } else { 0.0 })
            .sum::<f64>();
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(GofResult {
        chi_sq,
        chi_sq_p: dist.sf(chi_sq),
        g,
        g_p: dist.sf(g),
        df,
        cells: cells.into_iter().map(|c| c.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub deviance: f64,
}

/// AIC = 2q − 2ℓ, BIC = q ln N_obs − 2ℓ and the residual deviance.
pub fn information_criteria(design: &DesignBlocks, family: &dyn CountFamily, fitted: &FitResult) -> InformationCriteria {
    let q = fitted.beta.len() as f64;
    let deviance = deviance_residuals(design, family, fitted)
        .iter()
        .map(|r| r * r)
        .sum();
    InformationCriteria {
        aic: 2.0 * q - 2.0 * fitted.log_lik,
        bic: q * design.observed().ln() - 2.0 * fitted.log_lik,
        deviance,
    }
}

/// (y − E[Y|Y>0]) / √Var[Y|Y>0]
pub fn pearson_residuals(design: &DesignBlocks, family: &dyn CountFamily, fitted: &FitResult) -> Vec<f64> {
    design
        .y
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let (m, v) = family.mean_variance(&eta_row(&fitted.eta, k), PmfType::Truncated);
            (y as f64 - m) / v.sqrt()
        })
        .collect()
}

/// sup over η of ln P[Y = y | Y > 0], by damped Newton inside a box.
fn saturated_ln_pmf(family: &dyn CountFamily, y: u64) -> f64 {
    const BOX: f64 = 30.0;
    let p = family.n_params();
    let mut eta = vec![0.0; p];
    if family.links()[0] == crate::links::Link::Log {
        eta[0] = (y as f64).ln();
    }
    let val = |e: &[f64]| family.ln_pmf_jet(y, &Jet::seed(e), PmfType::Truncated);
    let mut cur = val(&eta);
    for _ in 0..500 {
        let h = DMatrix::from_fn(p, p, |a, b| -cur.h[a][b]);
        let g = DVector::from_fn(p, |a, _| cur.g[a]);
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = (0..p).map(|a| (eta[a] + t * step[a]).clamp(-BOX, BOX)).collect();
            let v = val(&cand);
            if v.v.is_finite() && v.v > cur.v {
                eta = cand;
                cur = v;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved || g.amax() < 1e-10 {
            break;
        }
    }
    cur.v
}

/// sign(y − E[Y|Y>0]) √(2w(ℓ_sat − ℓ)), with the saturated value maximising
/// each observation's truncated likelihood.
pub fn deviance_residuals(design: &DesignBlocks, family: &dyn CountFamily, fitted: &FitResult) -> Vec<f64> {
    let mut sat: std::collections::HashMap<u64, f64> = std::collections::HashMap::new();
    design
        .y
        .iter()
        .zip(&design.weights)
        .enumerate()
        .map(|(k, (&y, &w))| {
            if !family.uses_observation(y) {
                return 0.0;
            }
            let eta = eta_row(&fitted.eta, k);
            let ls = *sat.entry(y).or_insert_with(|| saturated_ln_pmf(family, y));
            let l = family.ln_pmf(y, &eta, PmfType::Truncated);
            let (m, _) = family.mean_variance(&eta, PmfType::Truncated);
            let d = (2.0 * w * (ls - l)).max(0.0).sqrt();
            if (y as f64) < m {
                -d
            } else {
                d
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DfbetaMode {
    /// Full refit without each row.
    Exact,
    /// One Fisher-scoring step from β̂.
    OneStep,
}

/// Rows k = β̂ − β̂₍₋ₖ₎. Failed refits give rows of NaN.
pub fn dfbeta(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    mode: DfbetaMode,
    cores: usize,
    progress: Option<Progress<'_>>,
) -> Result<DMatrix<f64>> {
    let n = design.n();
    let q = fitted.beta.len();
    let rows: Vec<Option<DVector<f64>>> = match mode {
        DfbetaMode::Exact => {
            let control = FitControl {
                tolerance: 1e-14,
                max_iter: 100,
                ..FitControl::irls()
            };
            map_indices(n, cores.max(1), progress, |k| {
                let mut d = design.clone();
                d.weights[k] = 0.0;
                match fit(&d, family, Some(&fitted.beta), &control) {
                    Ok(f) if f.converged && f.beta.iter().all(|v| v.is_finite()) => Some(&fitted.beta - &f.beta),
                    _ => None,
                }
            })
        }
        DfbetaMode::OneStep => {
            let g = family.gradient(&design.y, &fitted.eta, &design.weights)?;
            let info = family.information(&design.y, &fitted.eta, &design.weights)?;
            let full = design.x.weighted_cross_product(&info);
            map_indices(n, cores.max(1), progress, |k| {
                // information and score of the data without row k, at β̂
                let one = design.x.select_rows(&[k]);
                let reduced = &full - one.weighted_cross_product(&info[k..k + 1]);
                let gk = DMatrix::from_fn(1, g.ncols(), |_, a| g[(k, a)]);
                let u = one.transpose_mul(&gk);
                reduced.clone().cholesky().map(|c| c.solve(&u))
            })
        }
    };
    let mut out = DMatrix::from_element(n, q, f64::NAN);
    let mut failed = Vec::new();
    for (k, r) in rows.into_iter().enumerate() {
        match r {
            Some(v) => out.row_mut(k).copy_from(&v.transpose()),
            None => failed.push(k + 1),
        }
    }
    if !failed.is_empty() {
        log::warn!("leave-one-out refits failed for rows {failed:?}");
    }
    Ok(out)
}

/// Entry k = N̂ − N̂₍₋ₖ₎, where N̂₍₋ₖ₎ uses β̂ − dfbeta_k and omits unit k.
pub fn dfpopsize(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    dfbeta: &DMatrix<f64>,
    cores: usize,
) -> Result<Vec<f64>> {
    let n = design.n();
    if dfbeta.nrows() != n || dfbeta.ncols() != fitted.beta.len() {
        return Err(Error::InvalidInput("dfbeta has the wrong shape".into()));
    }
    let full = family.point_estimate(&design.y, &fitted.eta, &design.weights)?;
    let out = map_indices(n, cores.max(1), None, |k| {
        let delta = dfbeta.row(k).transpose();
        if delta.iter().any(|v| !v.is_finite()) {
            return Ok(f64::NAN);
        }
        let beta = &fitted.beta - delta;
        let eta = design.x.linear_predictors(&beta, &design.offsets);
        let mut w = design.weights.clone();
        w[k] = 0.0;
        Ok(full - family.point_estimate(&design.y, &eta, &w)?)
    });
    out.into_iter().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RootogramBar {
    pub k: u64,
    pub sqrt_observed: f64,
    pub sqrt_expected: f64,
    /// Hanging bar spans [sqrt_expected − sqrt_observed, sqrt_expected].
    pub bottom: f64,
}

pub fn rootogram_data(table: &MarginalFreqTable) -> Vec<RootogramBar> {
    table
        .rows
        .iter()
        .map(|r| {
            let so = r.observed.sqrt();
            let se = r.expected.sqrt();
            RootogramBar {
                k: r.k,
                sqrt_observed: so,
                sqrt_expected: se,
                bottom: se - so,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table(rows: &[(u64, f64, f64)]) -> MarginalFreqTable {
        MarginalFreqTable {
            rows: rows
                .iter()
                .map(|&(k, o, e)| FreqRow {
                    k,
                    observed: o,
                    expected: e,
                })
                .collect(),
            tail_expected: 0.0,
        }
    }

    #[test]
    fn perfect_fit_gives_zero_statistics() {
        let t = table(&[(1, 50.0, 50.0), (2, 20.0, 20.0), (3, 6.0, 6.0)]);
        let r = gof_tests(&t, 1, Drop5::Group).unwrap();
        assert_eq!((r.chi_sq, r.g), (0.0, 0.0));
        assert_relative_eq!(r.chi_sq_p, 1.0);
        assert!(rootogram_data(&t).iter().all(|b| b.bottom == 0.0));
    }

    #[test]
    fn grouping_pools_small_cells() {
        let t = table(&[(1, 50.0, 48.0), (2, 20.0, 19.0), (3, 3.0, 4.0), (4, 2.0, 1.5)]);
        let r = gof_tests(&t, 1, Drop5::Group).unwrap();
        assert_eq!(r.cells, vec!["1", "2", "3+"]);
        let expected = 4.0 / 48.0 + 1.0 / 19.0 + 0.25 / 5.5;
        // the pool keeps absorbing cells until it reaches 5
        let t = table(&[(1, 50.0, 48.0), (2, 8.0, 7.0), (3, 3.0, 2.0), (4, 2.0, 1.0), (5, 1.0, 0.5)]);
        let p = gof_tests(&t, 1, Drop5::Group).unwrap();
        assert_eq!(p.cells, vec!["1", "2+"]);
        let all = table(&[(1, 3.0, 2.0), (2, 1.0, 1.0)]);
        assert_eq!(gof_tests(&all, 1, Drop5::Group).unwrap().cells, vec!["1+"]);
        assert_relative_eq!(r.chi_sq, expected, max_relative = 1e-12);
        let d = gof_tests(&t, 1, Drop5::Drop).unwrap();
        assert_eq!(d.cells, vec!["1", "2"]);
    }

    #[test]
    fn zero_expected_cell_is_an_error() {
        let t = table(&[(1, 5.0, 0.0)]);
        assert!(gof_tests(&t, 1, Drop5::None).is_err());
    }
}
