//! Maximum likelihood fitting: IRLS with per-row information blocks, and
//! a BFGS fallback driven by the same analytic score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignBlocks;
use crate::error::{Error, Result};
use crate::families::{CountFamily, InfoBlock};
use crate::jet::MAX_PARAMS;
use crate::linalg::{invert_checked, solve_checked};

/// |β| beyond which a fit is treated as diverging.
const DIVERGENCE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Irls,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovType {
    Expected,
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitControl {
    pub method: Method,
    pub max_iter: usize,
    pub tolerance: f64,
    pub step_halving_max: usize,
    pub silent: bool,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl::irls()
    }
}

impl FitControl {
    pub fn irls() -> Self {
        FitControl {
            method: Method::Irls,
            max_iter: 100,
            tolerance: 1e-8,
            step_halving_max: 30,
            silent: true,
        }
    }

    pub fn fallback() -> Self {
        FitControl {
            method: Method::Fallback,
            max_iter: 1000,
            ..FitControl::irls()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(
                "max_iter must be at least 1 and tolerance positive".into(),
            ));
        }
        Ok(())
    }

    fn converged(&self, ll_old: f64, ll: f64, step: f64) -> bool {
        (ll - ll_old).abs() < self.tolerance * (ll.abs() + 0.1) && step < self.tolerance.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// n × p linear predictors.
    pub eta: DMatrix<f64>,
    pub log_lik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Expected information blocks at the optimum, prior weights applied.
    pub weights_final: Vec<InfoBlock>,
    /// (X'WX)⁻¹ at the optimum.
    pub beta_cov: DMatrix<f64>,
    pub method: Method,
    pub log_lik_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Residual degrees of freedom: n·p minus the number of coefficients.
    pub fn df_residual(&self) -> usize {
        (self.eta.nrows() * self.eta.ncols()).saturating_sub(self.beta.len())
    }
}

/// Fits with the method chosen in `control`, starting from the family's
/// start values unless `start` is given.
pub fn fit(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    start: Option<&DVector<f64>>,
    control: &FitControl,
) -> Result<FitResult> {
    let start = match start {
        Some(s) => s.clone(),
        None => family.start_values(design)?,
    };
    match control.method {
        Method::Irls => {
            let first = fit_irls(design, family, &start, control)?;
            if first.converged {
                return Ok(first);
            }
            Ok(restart_from_fallback(design, family, &start, control, first))
        }
        Method::Fallback => fit_fallback(design, family, &start, control),
    }
}

/// Scoring can follow a ridge towards the boundary of the parameter space
/// (NB2 approaching its log-series limit, say) and stop short of an
/// interior maximum. Retry with the quasi-Newton search from the same start
/// and polish its optimum with IRLS when it finds a higher likelihood.
fn restart_from_fallback(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    start: &DVector<f64>,
    control: &FitControl,
    first: FitResult,
) -> FitResult {
    let fb_control = FitControl {
        method: Method::Fallback,
        max_iter: control.max_iter.max(FitControl::fallback().max_iter),
        ..control.clone()
    };
    let Ok(fb) = fit_fallback(design, family, start, &fb_control) else {
        return first;
    };
    if !(fb.log_lik > first.log_lik + control.tolerance * (first.log_lik.abs() + 0.1)) {
        return first;
    }
    match fit_irls(design, family, &fb.beta, control) {
        Ok(mut polished) if polished.converged => {
            polished.iterations += first.iterations;
            polished.warnings.insert(
                0,
                "IRLS did not converge from the starting values; restarted from the quasi-Newton optimum".into(),
            );
            polished
        }
        _ => first,
    }
}

fn check_inputs(design: &DesignBlocks, family: &dyn CountFamily, start: &DVector<f64>, control: &FitControl) -> Result<()> {
    control.validate()?;
    if design.x.n_predictors() != family.n_params() {
        return Err(Error::Design(format!(
            "family '{}' has {} linear predictors but the design has {} blocks",
            family.name(),
            family.n_params(),
            design.x.n_predictors()
        )));
    }
    if start.len() != design.x.n_coefficients() {
        return Err(Error::InvalidInput(format!(
            "start has {} entries, expected {}",
            start.len(),
            design.x.n_coefficients()
        )));
    }
    family.check_support(&design.y)
}

struct Evaluation {
    eta: DMatrix<f64>,
    ll: f64,
}

fn evaluate(design: &DesignBlocks, family: &dyn CountFamily, beta: &DVector<f64>) -> Evaluation {
    let eta = design.x.linear_predictors(beta, &design.offsets);
    let ll = family.log_likelihood(&design.y, &eta, &design.weights);
    Evaluation { eta, ll }
}

/// Score X'(∂ℓ/∂η) in coefficient space.
fn score(design: &DesignBlocks, family: &dyn CountFamily, eta: &DMatrix<f64>) -> Result<DVector<f64>> {
    let g = family.gradient(&design.y, eta, &design.weights)?;
    Ok(design.x.transpose_mul(&g))
}

fn finish(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    beta: DVector<f64>,
    ev: Evaluation,
    iterations: usize,
    converged: bool,
    method: Method,
    log_lik_trace: Vec<f64>,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let mut converged = converged;
    if beta.amax() > DIVERGENCE {
        // the score can vanish numerically while the estimates run off to
        // the boundary of the parameter space
        warnings.push(format!(
            "coefficients exceed {DIVERGENCE} in absolute value; estimates are at the boundary of the parameter space"
        ));
        converged = false;
    }
    let info = match family.information(&design.y, &ev.eta, &design.weights) {
        Ok(i) => i,
        Err(e) if !converged => {
            warnings.push(format!("information unavailable: {e}"));
            vec![[[f64::NAN; MAX_PARAMS]; MAX_PARAMS]; design.n()]
        }
        Err(e) => return Err(e),
    };
    let xtwx = design.x.weighted_cross_product(&info);
    let beta_cov = match invert_checked(&xtwx, &design.coefficient_names(), "X'WX") {
        Ok(c) => c,
        Err(e) if !converged => {
            warnings.push(format!("covariance unavailable: {e}"));
            DMatrix::from_element(beta.len(), beta.len(), f64::NAN)
        }
        Err(e) => return Err(e),
    };
    if !converged {
        log::warn!("{} fit did not converge after {iterations} iterations", family.name());
    }
    Ok(FitResult {
        beta,
        eta: ev.eta,
        log_lik: ev.ll,
        iterations,
        converged,
        weights_final: info,
        beta_cov,
        method,
        log_lik_trace,
        warnings,
    })
}

/// Iteratively reweighted least squares with expected-information
/// weights and step-halving towards the previous iterate.
///
/// The update β + (X'WX)⁻¹X'g is the weighted least-squares solution for
/// the working response η + W⁻¹g − o.
pub fn fit_irls(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    start: &DVector<f64>,
    control: &FitControl,
) -> Result<FitResult> {
    check_inputs(design, family, start, control)?;
    let names = design.coefficient_names();
    let mut beta = start.clone();
    let mut ev = evaluate(design, family, &beta);
    if !ev.ll.is_finite() {
        return Err(Error::Fit("log-likelihood is not finite at the starting values".into()));
    }
    let mut trace = vec![ev.ll];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < control.max_iter {
        let info = match family.information(&design.y, &ev.eta, &design.weights) {
            Ok(i) => i,
            Err(e) if iterations > 0 => {
                warnings.push(format!("stopped at iteration {}: {e}", iterations + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        let xtwx = design.x.weighted_cross_product(&info);
        let u = score(design, family, &ev.eta)?;
        let step = match solve_checked(&xtwx, &u, &names, "X'WX") {
            Ok(s) => s,
            Err(e) if iterations > 0 => {
                warnings.push(format!(
                    "information became singular at iteration {}; a parameter is approaching the boundary ({e})",
                    iterations + 1
                ));
                break;
            }
            Err(e) => return Err(e),
        };

        let mut h = 0;
        let mut cand = &beta + &step;
        let mut cev = evaluate(design, family, &cand);
        while !(cev.ll.is_finite() && cev.ll >= ev.ll) && h < control.step_halving_max {
            h += 1;
            cand = &beta + &step * 0.5f64.powi(h as i32);
            cev = evaluate(design, family, &cand);
        }
        if !(cev.ll.is_finite() && cev.ll >= ev.ll) {
            // no ascent along the Fisher direction: at the optimum up to
            // rounding, or stuck
            converged = step.amax() < control.tolerance.sqrt();
            if !converged {
                warnings.push(format!(
                    "step-halving exhausted after {} halvings at iteration {}",
                    control.step_halving_max,
                    iterations + 1
                ));
            }
            break;
        }
        iterations += 1;
        if h > 0 && !control.silent {
            log::info!("iteration {iterations}: {h} step halvings");
        }
        let delta = (&cand - &beta).amax();
        let ll_old = ev.ll;
        beta = cand;
        ev = cev;
        trace.push(ev.ll);
        if !control.silent {
            log::info!("iteration {iterations}: log-likelihood {:.10}", ev.ll);
        }
        if control.converged(ll_old, ev.ll, delta) {
            converged = true;
            break;
        }
    }
    if !converged && iterations >= control.max_iter {
        warnings.push(format!("maximum number of iterations ({}) reached", control.max_iter));
    }
    finish(design, family, beta, ev, iterations, converged, Method::Irls, trace, warnings)
}

/// BFGS on −ℓ(β) with a backtracking Armijo line search.
pub fn fit_fallback(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    start: &DVector<f64>,
    control: &FitControl,
) -> Result<FitResult> {
    check_inputs(design, family, start, control)?;
    let q = start.len();
    let mut beta = start.clone();
    let mut ev = evaluate(design, family, &beta);
    if !ev.ll.is_finite() {
        return Err(Error::Fit("log-likelihood is not finite at the starting values".into()));
    }
    // gradient of the objective −ℓ
    let mut grad = -score(design, family, &ev.eta)?;
    let mut hinv = DMatrix::<f64>::identity(q, q);
    let mut first = true;
    let mut trace = vec![ev.ll];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < control.max_iter {
        let mut dir = -(&hinv * &grad);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(q, q);
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }
        if first {
            // keep the very first trial step modest
            let scale = (1.0 / dir.amax()).min(1.0);
            dir *= scale;
            slope *= scale;
        }
        let mut t = 1.0;
        let mut cand = &beta + &dir;
        let mut cev = evaluate(design, family, &cand);
        let mut tries = 0;
        while !(cev.ll.is_finite() && -cev.ll <= -ev.ll + 1e-4 * t * slope) && tries < 60 {
            t *= 0.5;
            tries += 1;
            cand = &beta + &dir * t;
            cev = evaluate(design, family, &cand);
        }
        if !(cev.ll.is_finite() && cev.ll >= ev.ll) {
            converged = grad.amax() < 1e-6 * (ev.ll.abs() + 1.0);
            if !converged {
                warnings.push(format!("line search failed at iteration {}", iterations + 1));
            }
            break;
        }
        iterations += 1;
        let new_grad = -score(design, family, &cev.eta)?;
        let s = &cand - &beta;
        let yv = &new_grad - &grad;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first {
                hinv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        first = false;
        let delta = s.amax();
        let ll_old = ev.ll;
        beta = cand;
        ev = cev;
        grad = new_grad;
        trace.push(ev.ll);
        if control.converged(ll_old, ev.ll, delta) {
            converged = true;
            break;
        }
    }
    if !converged && iterations >= control.max_iter {
        warnings.push(format!("maximum number of iterations ({}) reached", control.max_iter));
    }
    finish(design, family, beta, ev, iterations, converged, Method::Fallback, trace, warnings)
}

/// Coefficient covariance from expected or observed information.
pub fn coefficient_covariance(
    fit: &FitResult,
    design: &DesignBlocks,
    family: &dyn CountFamily,
    kind: CovType,
) -> Result<DMatrix<f64>> {
    let info = match kind {
        CovType::Expected => family.information(&design.y, &fit.eta, &design.weights)?,
        CovType::Observed => family.observed_information(&design.y, &fit.eta, &design.weights)?,
    };
    let m = design.x.weighted_cross_product(&info);
    invert_checked(&m, &design.coefficient_names(), "information matrix")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignBlock;
    use crate::families::family;

    fn intercept_design(y: Vec<u64>, p: usize) -> DesignBlocks {
        let n = y.len();
        let blocks = (0..p)
            .map(|_| DesignBlock {
                matrix: DMatrix::from_element(n, 1, 1.0),
                names: vec!["(Intercept)".into()],
            })
            .collect();
        DesignBlocks::new(y, blocks).unwrap()
    }

    #[test]
    fn intercept_only_ztpoisson_solves_score_equation() {
        // MLE satisfies λ/(1 - e^{-λ}) = ȳ
        let y = vec![1, 1, 2, 1, 3, 1, 2, 1, 1, 4];
        let d = intercept_design(y.clone(), 1);
        let f = family("ztpoisson").unwrap();
        let fit = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
        assert!(fit.converged);
        let lam = fit.beta[0].exp();
        let ybar = y.iter().sum::<u64>() as f64 / y.len() as f64;
        assert!((lam / (1.0 - (-lam).exp()) - ybar).abs() < 1e-9);
        assert!(fit.log_lik_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn all_singletons_terminate_without_convergence() {
        let d = intercept_design(vec![1; 30], 1);
        let f = family("ztpoisson").unwrap();
        let fit = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
        assert!(!fit.converged);
        assert!(!fit.warnings.is_empty());
        assert!(fit.beta[0] < -5.0);
    }

    #[test]
    fn fallback_with_one_iteration_is_not_converged() {
        let d = intercept_design(vec![1, 2, 2, 3, 1, 1, 5], 1);
        let f = family("ztgeom").unwrap();
        let ctl = FitControl {
            max_iter: 1,
            ..FitControl::fallback()
        };
        let fit = fit(&d, f.as_ref(), None, &ctl).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn zot_rejects_singletons() {
        let d = intercept_design(vec![2, 1, 3], 1);
        let f = family("zotpoisson").unwrap();
        match fit(&d, f.as_ref(), None, &FitControl::default()) {
            Err(Error::Support { row, value, .. }) => assert_eq!((row, value), (2, 1)),
            other => panic!("{other:?}"),
        }
    }
}
