mod common;

use std::sync::Arc;

use nalgebra::DMatrix;
use sscr::design::{DesignBlock, DesignBlocks};
use common::TwoPoint;
use sscr::families::{family, register_family, CountFamily, FamilyRegistry, PmfType};
use sscr::fitting::{coefficient_covariance, fit, CovType, FitControl};
use sscr::links::Link;
use sscr::Error;

#[test]
fn truncated_pmf_lives_on_one_and_two() {
    let f: &dyn CountFamily = &TwoPoint;
    for eta in [[0.0, 0.0], [-1.0, 2.0], [1.5, -0.5]] {
        let s = f.pmf(1, &eta, PmfType::Truncated) + f.pmf(2, &eta, PmfType::Truncated);
        assert!((s - 1.0).abs() < 1e-14);
        assert_eq!(f.pmf(3, &eta, PmfType::Truncated), 0.0);
    }
}

#[test]
fn registration_rejects_duplicates() {
    let mut reg = FamilyRegistry::with_builtins();
    reg.register(Arc::new(TwoPoint)).unwrap();
    assert!(reg.get("twopoint").is_ok());
    assert!(matches!(reg.register(Arc::new(TwoPoint)), Err(Error::FamilyCollision(_))));
}

#[test]
fn registered_family_recovers_generating_proportions() {
    register_family(Arc::new(TwoPoint)).unwrap();
    let f = family("twopoint").unwrap();
    // λ = 0.5 fixed through its offset; π = 0.6 to be estimated. The
    // truncated likelihood only identifies π/(λ + π).
    let (lam, pi) = (0.5, 0.6);
    let n_pop = 20_000;
    let eta = DMatrix::from_fn(n_pop, 2, |_, c| Link::Logit.forward(if c == 0 { lam } else { pi }));
    let all = f.simulate(&eta, 314, PmfType::Untruncated);
    let y: Vec<u64> = all.into_iter().filter(|&v| v > 0).collect();
    let n = y.len();
    let blocks = vec![
        DesignBlock { matrix: DMatrix::zeros(n, 0), names: vec![] },
        DesignBlock { matrix: DMatrix::from_element(n, 1, 1.0), names: vec!["(Intercept)".into()] },
    ];
    let mut offsets = DMatrix::zeros(n, 2);
    offsets.column_mut(0).fill(Link::Logit.forward(lam));
    let d = DesignBlocks::new(y, blocks).unwrap().with_offsets(offsets).unwrap();
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    assert!(r.converged);
    let cov = coefficient_covariance(&r, &d, f.as_ref(), CovType::Expected).unwrap();
    let pi_hat = Link::Logit.inverse(r.beta[0]);
    let p1 = |p: f64| p / (lam + p);
    let se = lam / (lam + pi_hat).powi(2) * pi_hat * (1.0 - pi_hat) * cov[(0, 0)].sqrt();
    assert!((p1(pi_hat) - p1(pi)).abs() < 3.0 * se, "{} vs {} (se {se})", p1(pi_hat), p1(pi));
    let n_hat = f.point_estimate(&d.y, &r.eta, &d.weights).unwrap();
    assert!((n_hat / n_pop as f64 - 1.0).abs() < 0.05, "{n_hat}");
}
