mod common;

use common::{intercept_and, intercept_design, simulated_ztpois};
use nalgebra::DMatrix;
use sscr::design::DesignBlocks;
use sscr::diagnostics::{
    deviance_residuals, dfbeta, dfpopsize, gof_tests, information_criteria, marginal_freq, pearson_residuals,
    rootogram_data, DfbetaMode, Drop5,
};
use sscr::families::{family, PmfType};
use sscr::fitting::{fit, FitControl};

/// Root of λ/(1 − e^{−λ}) = m by bisection.
fn ztpois_mle(m: f64) -> f64 {
    let (mut lo, mut hi) = (1e-12f64, 100.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid / (1.0 - (-mid).exp()) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn dfbeta_matches_closed_form_refits() {
    let f = family("ztpoisson").unwrap();
    let d = intercept_design(f.as_ref(), vec![1, 2]);
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    assert!((r.beta[0] - ztpois_mle(1.5).ln()).abs() < 1e-6);
    let db = dfbeta(&d, f.as_ref(), &r, DfbetaMode::Exact, 1, None).unwrap();
    assert!((db[(0, 0)] - (r.beta[0] - ztpois_mle(2.0).ln())).abs() < 1e-6);
    // without the doubleton the likelihood has no maximum
    assert!(db[(1, 0)].is_nan());
}

#[test]
fn one_step_dfbeta_tracks_exact_refits() {
    let (y, x) = simulated_ztpois(300, -0.2, 0.5, 41);
    let d = DesignBlocks::new(y, vec![intercept_and(&x, "x")]).unwrap();
    let f = family("ztpoisson").unwrap();
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    let exact = dfbeta(&d, f.as_ref(), &r, DfbetaMode::Exact, 4, None).unwrap();
    let serial = dfbeta(&d, f.as_ref(), &r, DfbetaMode::Exact, 1, None).unwrap();
    assert_eq!(exact, serial);
    let approx = dfbeta(&d, f.as_ref(), &r, DfbetaMode::OneStep, 1, None).unwrap();
    let scale = exact.amax();
    assert!((&exact - &approx).amax() < 0.05 * scale, "{} vs {scale}", (&exact - &approx).amax());
}

#[test]
fn dfpopsize_without_coefficient_change_is_the_contribution() {
    let (y, x) = simulated_ztpois(200, 0.1, 0.5, 42);
    let d = DesignBlocks::new(y, vec![intercept_and(&x, "x")]).unwrap();
    let f = family("ztpoisson").unwrap();
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    let zero = DMatrix::zeros(d.n(), 2);
    let dp = dfpopsize(&d, f.as_ref(), &r, &zero, 1).unwrap();
    let c = f.contributions(&d.y, &r.eta).unwrap();
    for (a, b) in dp.iter().zip(&c) {
        assert!((a - b).abs() < 1e-9 * b);
    }
    // a unit observed with certainty contributes exactly one
    let mut big = d.clone();
    big.offsets[(0, 0)] = 8.0;
    let rb = fit(&big, f.as_ref(), None, &FitControl::default()).unwrap();
    let dp = dfpopsize(&big, f.as_ref(), &rb, &zero, 1).unwrap();
    assert!((dp[0] - 1.0).abs() < 1e-3);
}

#[test]
fn marginal_table_and_gof_on_a_correct_model() {
    let (y, x) = simulated_ztpois(2000, 0.2, 0.4, 43);
    let d = DesignBlocks::new(y, vec![intercept_and(&x, "x")]).unwrap();
    let f = family("ztpoisson").unwrap();
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    let t = marginal_freq(&d, f.as_ref(), &r);
    let obs: f64 = t.rows.iter().map(|r| r.observed).sum();
    let exp: f64 = t.rows.iter().map(|r| r.expected).sum::<f64>() + t.tail_expected;
    assert_eq!(obs, 2000.0);
    assert!((exp - 2000.0).abs() < 1e-6);
    let g = gof_tests(&t, 3, Drop5::Group).unwrap();
    assert!(g.chi_sq_p > 0.001 && g.g_p > 0.001, "{g:?}");
    let bars = rootogram_data(&t);
    assert_eq!(bars.len(), t.rows.len());
    let ic = information_criteria(&d, f.as_ref(), &r);
    assert!((ic.aic - (4.0 - 2.0 * r.log_lik)).abs() < 1e-9);
    assert!((ic.bic - (2.0 * 2000f64.ln() - 2.0 * r.log_lik)).abs() < 1e-9);
    assert!(ic.deviance > 0.0);
}

#[test]
fn residuals_match_direct_evaluation() {
    let f = family("ztpoisson").unwrap();
    let d = intercept_design(f.as_ref(), vec![1, 1, 1, 2, 2, 3]);
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    let lam = r.beta[0].exp();
    let q = 1.0 - (-lam).exp();
    let mean = lam / q;
    let var = (lam + lam * lam) / q - mean * mean;
    let pr = pearson_residuals(&d, f.as_ref(), &r);
    for (k, &y) in d.y.iter().enumerate() {
        assert!((pr[k] - (y as f64 - mean) / var.sqrt()).abs() < 1e-9);
    }
    // a single unit's truncated likelihood is maximised as λ → 0 when y = 1
    let dr = deviance_residuals(&d, f.as_ref(), &r);
    let lp1 = f.ln_pmf(1, &[r.beta[0]], PmfType::Truncated);
    assert!((dr[0] + (-2.0 * lp1).sqrt()).abs() < 1e-6);
    // y = 3: grid search of the saturated value
    let sat = (1..200_000)
        .map(|i| f.ln_pmf(3, &[(i as f64 * 1e-4).ln()], PmfType::Truncated))
        .fold(f64::NEG_INFINITY, f64::max);
    let l3 = f.ln_pmf(3, &[r.beta[0]], PmfType::Truncated);
    assert!((dr[5] - (2.0 * (sat - l3)).sqrt()).abs() < 1e-5);
}
