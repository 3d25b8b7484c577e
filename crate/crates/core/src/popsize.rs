//! Population size: point estimate, variance, confidence intervals and
//! estimates by strata.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bootstrap::{bootstrap, BootControl, BootResult};
use crate::dataset::Column;
use crate::design::DesignBlocks;
use crate::error::{Error, Result};
use crate::families::CountFamily;
use crate::fitting::{coefficient_covariance, fit, CovType, FitControl, FitResult};
use crate::formula::{Formula, Term};
use crate::model_frame::ModelFrame;
use crate::parallel::Progress;

#[derive(Debug, Clone)]
pub enum VarMethod {
    Analytic(CovType),
    Bootstrap(BootControl),
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct PopSizeEstimate {
    pub point: f64,
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub ci_normal: Option<(f64, f64)>,
    pub ci_lognormal: Option<(f64, f64)>,
    /// Percentile interval, bootstrap only.
    pub ci_percentile: Option<(f64, f64)>,
    pub alpha: f64,
    /// Weighted number of observed units.
    pub observed: f64,
    /// 100 N_obs / N̂.
    pub observed_percent: f64,
    pub observed_percent_ci_normal: Option<(f64, f64)>,
    pub observed_percent_ci_lognormal: Option<(f64, f64)>,
    pub boot: Option<BootResult>,
}

fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0, 1], got {alpha}")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

pub fn normal_ci(point: f64, variance: f64, alpha: f64) -> Result<(f64, f64)> {
    let h = z_quantile(alpha)? * variance.max(0.0).sqrt();
    Ok((point - h, point + h))
}

/// N_obs + (N̂ − N_obs)/ξ and N_obs + (N̂ − N_obs)ξ with
/// ξ = exp(z √ln(1 + Var/(N̂ − N_obs)²)).
pub fn lognormal_ci(point: f64, variance: f64, observed: f64, alpha: f64) -> Result<(f64, f64)> {
    let z = z_quantile(alpha)?;
    let excess = point - observed;
    if excess <= 0.0 {
        return Ok((observed, observed));
    }
    let xi = (z * (variance.max(0.0) / (excess * excess)).ln_1p().sqrt()).exp();
    Ok((observed + excess / xi, observed + excess * xi))
}

fn percent_ci(observed: f64, ci: Option<(f64, f64)>) -> Option<(f64, f64)> {
    ci.map(|(lo, hi)| (100.0 * observed / hi, 100.0 * observed / lo))
}

/// Assembles an estimate from a point and a variance.
pub fn summarize(point: f64, variance: Option<f64>, observed: f64, alpha: f64) -> Result<PopSizeEstimate> {
    let ci_normal = variance.map(|v| normal_ci(point, v, alpha)).transpose()?;
    let ci_lognormal = variance.map(|v| lognormal_ci(point, v, observed, alpha)).transpose()?;
    Ok(PopSizeEstimate {
        point,
        variance,
        se: variance.map(f64::sqrt),
        ci_normal,
        ci_lognormal,
        ci_percentile: None,
        alpha,
        observed,
        observed_percent: 100.0 * observed / point,
        observed_percent_ci_normal: percent_ci(observed, ci_normal),
        observed_percent_ci_lognormal: percent_ci(observed, ci_lognormal),
        boot: None,
    })
}

/// Analytic estimate from a fit; `cov` replaces the coefficient covariance.
pub fn popsize_from_fit(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    cov: &DMatrix<f64>,
    alpha: f64,
) -> Result<PopSizeEstimate> {
    let point = family.point_estimate(&design.y, &fitted.eta, &design.weights)?;
    let var = family.popsize_variance_analytic(&design.y, &fitted.eta, &design.weights, cov, &design.x)?;
    summarize(point, Some(var), design.observed(), alpha)
}

/// Fits the model and estimates the population size.
pub fn estimate_popsize(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    control: &FitControl,
    var_method: &VarMethod,
    alpha: f64,
    progress: Option<Progress<'_>>,
) -> Result<(FitResult, PopSizeEstimate)> {
    let fitted = fit(design, family, None, control)?;
    let point = family.point_estimate(&design.y, &fitted.eta, &design.weights)?;
    let observed = design.observed();
    let est = match var_method {
        VarMethod::Skip => summarize(point, None, observed, alpha)?,
        VarMethod::Analytic(kind) => {
            let cov = coefficient_covariance(&fitted, design, family, *kind)?;
            popsize_from_fit(design, family, &fitted, &cov, alpha)?
        }
        VarMethod::Bootstrap(bc) => {
            let bc = BootControl {
                alpha,
                fit_control: FitControl {
                    method: control.method,
                    ..bc.fit_control.clone()
                },
                ..bc.clone()
            };
            let boot = bootstrap(design, family, &fitted, point, &bc, progress)?;
            let mut e = summarize(point, Some(boot.variance), observed, alpha)?;
            e.ci_percentile = boot.ci_percentile;
            e.boot = Some(boot);
            e
        }
    };
    Ok((fitted, est))
}

/// How to split observed units into strata.
#[derive(Debug, Clone)]
pub enum StrataSpec {
    /// Each level of each factor used in the model.
    Default,
    /// Each level of each listed factor.
    Variables(Vec<String>),
    /// Each term of a right-hand-side formula; interactions give every
    /// combination of levels.
    Formula(Formula),
    /// Named row masks over the model frame.
    Selectors(Vec<(String, Vec<bool>)>),
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumEstimate {
    pub name: String,
    pub observed: f64,
    pub estimated: f64,
    pub variance: f64,
    pub ci_normal: (f64, f64),
    pub ci_lognormal: (f64, f64),
    pub conf_level: f64,
}

/// Level masks for a product of factors, named `a==x & b==y`.
fn factor_strata(frame: &ModelFrame, vars: &[String]) -> Result<Vec<(String, Vec<bool>)>> {
    let n = frame.data.n_rows();
    let mut acc: Vec<(String, Vec<bool>)> = vec![(String::new(), vec![true; n])];
    for v in vars {
        let col = match frame.data.require(v)? {
            Column::Categorical(c) => c,
            Column::Numeric(_) => {
                return Err(Error::Strata(format!("strata variable '{v}' is not categorical")));
            }
        };
        let mut next = Vec::new();
        for (name, mask) in &acc {
            for lvl in col.observed_levels(0..n) {
                let m: Vec<bool> = (0..n).map(|r| mask[r] && col.value(r) == Some(lvl)).collect();
                let nm = if name.is_empty() {
                    format!("{v}=={lvl}")
                } else {
                    format!("{name} & {v}=={lvl}")
                };
                next.push((nm, m));
            }
        }
        acc = next;
    }
    Ok(acc)
}

fn resolve_strata(frame: &ModelFrame, spec: &StrataSpec) -> Result<Vec<(String, Vec<bool>)>> {
    let n = frame.data.n_rows();
    let out = match spec {
        StrataSpec::Default => {
            let mut out = Vec::new();
            for v in frame.factor_variables() {
                out.extend(factor_strata(frame, &[v])?);
            }
            if out.is_empty() {
                return Err(Error::Strata("the model uses no categorical variables".into()));
            }
            out
        }
        StrataSpec::Variables(vars) => {
            let mut out = Vec::new();
            for v in vars {
                out.extend(factor_strata(frame, std::slice::from_ref(v))?);
            }
            out
        }
        StrataSpec::Formula(f) => {
            let mut out = Vec::new();
            for t in &f.terms {
                match t {
                    Term::Vars(vars) => out.extend(factor_strata(frame, vars)?),
                    Term::Dot => {
                        for v in frame.data.names() {
                            if v != &frame.response
                                && matches!(frame.data.column(v), Some(Column::Categorical(_)))
                            {
                                out.extend(factor_strata(frame, std::slice::from_ref(v))?);
                            }
                        }
                    }
                }
            }
            out
        }
        StrataSpec::Selectors(s) => {
            for (name, m) in s {
                if m.len() != n {
                    return Err(Error::Strata(format!(
                        "selector '{name}' has {} entries, expected {n}",
                        m.len()
                    )));
                }
            }
            s.clone()
        }
    };
    if out.is_empty() {
        return Err(Error::Strata("no strata specified".into()));
    }
    Ok(out)
}

/// Per-stratum estimates sharing the fitted coefficients. `alpha` holds
/// one level or one per stratum; `cov` defaults to the observed-information
/// covariance of the fit.
pub fn stratify_popsize(
    frame: &ModelFrame,
    family: &dyn CountFamily,
    fitted: &FitResult,
    strata: &StrataSpec,
    alpha: &[f64],
    cov: Option<&DMatrix<f64>>,
) -> Result<Vec<StratumEstimate>> {
    let design = &frame.design;
    let strata = resolve_strata(frame, strata)?;
    let alphas: Vec<f64> = match alpha.len() {
        1 => vec![alpha[0]; strata.len()],
        k if k == strata.len() => alpha.to_vec(),
        k => {
            return Err(Error::Strata(format!(
                "{k} significance levels given for {} strata",
                strata.len()
            )))
        }
    };
    let owned;
    let cov = match cov {
        Some(c) => {
            let q = design.x.n_coefficients();
            if c.shape() != (q, q) {
                return Err(Error::InvalidInput(format!("covariance must be {q}x{q}")));
            }
            c
        }
        None => {
            owned = coefficient_covariance(fitted, design, family, CovType::Observed)?;
            &owned
        }
    };
    let contrib = family.contributions(&design.y, &fitted.eta)?;
    strata
        .iter()
        .zip(alphas)
        .map(|((name, mask), a)| {
            let rows: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
            let observed: f64 = rows.iter().map(|&r| design.weights[r]).sum();
            if rows.is_empty() || observed == 0.0 {
                return Err(Error::EmptyStratum(name.clone()));
            }
            let estimated: f64 = rows.iter().map(|&r| design.weights[r] * contrib[r]).sum();
            let variance = family.popsize_variance_rows(
                &design.y,
                &fitted.eta,
                &design.weights,
                cov,
                &design.x,
                Some(&rows),
            )?;
            Ok(StratumEstimate {
                name: name.clone(),
                observed,
                estimated,
                variance,
                ci_normal: normal_ci(estimated, variance, a)?,
                ci_lognormal: lognormal_ci(estimated, variance, observed, a)?,
                conf_level: 1.0 - a,
            })
        })
        .collect()
}
