mod common;

use common::{central_diff, close, from_freqs, intercept_design};
use nalgebra::DMatrix;
use proptest::prelude::*;
use sscr::families::{family, family_names, CountFamily, PmfType};
use sscr::fitting::{fit, FitControl};
use sscr::links::Link;

/// A point in η-space suited to each parameter's role.
fn eta_point(f: &dyn CountFamily, lam: f64, alpha: f64, extra: f64) -> Vec<f64> {
    f.eta_names()
        .iter()
        .zip(f.links())
        .map(|(n, l)| match (*n, l) {
            ("lambda", Link::Log) => lam,
            ("lambda", _) => lam - 0.8,
            ("alpha", _) => alpha,
            _ => extra,
        })
        .collect()
}

fn observable(f: &dyn CountFamily) -> Vec<u64> {
    (f.min_count()..=9).filter(|&y| f.uses_observation(y)).collect()
}

fn trunc_sum(f: &dyn CountFamily, eta: &[f64], upto: u64) -> f64 {
    (f.min_count()..=upto).map(|y| f.pmf(y, eta, PmfType::Truncated)).sum()
}

#[test]
fn registry_lists_all_builtins() {
    let names = family_names();
    assert_eq!(names.len(), 20);
    for pre in ["zt", "zot", "ztoi", "oizt", "ztHurdle", "Hurdlezt"] {
        for base in ["poisson", "geom", "negbin"] {
            assert!(names.contains(&format!("{pre}{base}")), "{pre}{base}");
        }
    }
    assert!(names.contains(&"chao".to_string()) && names.contains(&"zelterman".to_string()));
}

#[test]
fn ztpoisson_closed_forms() {
    let f = family("ztpoisson").unwrap();
    let e = std::f64::consts::E;
    let lp = f.ln_pmf(1, &[0.0], PmfType::Truncated);
    assert!((lp - ((1.0 / e) / (1.0 - 1.0 / e)).ln()).abs() < 1e-12);
    assert!((lp + 0.54132).abs() < 1e-5);
    let (m, _) = f.mean_variance(&[0.0], PmfType::Truncated);
    assert!((m - 1.0 / (1.0 - 1.0 / e)).abs() < 1e-12);
}

#[test]
fn moments_match_summation_for_every_family() {
    for name in family_names() {
        let f = family(&name).unwrap();
        let eta = eta_point(f.as_ref(), 0.3, -0.5, -0.7);
        for kind in [PmfType::Truncated, PmfType::Untruncated] {
            let lo = if kind == PmfType::Truncated { f.min_count() } else { 0 };
            let (mut m1, mut m2) = (0.0, 0.0);
            for y in lo..=500 {
                let p = f.pmf(y, &eta, kind);
                m1 += p * y as f64;
                m2 += p * (y * y) as f64;
            }
            let (m, v) = f.mean_variance(&eta, kind);
            assert!((m - m1).abs() < 1e-6, "{name} {kind:?} mean {m} vs {m1}");
            assert!((v - (m2 - m1 * m1)).abs() < 1e-6, "{name} {kind:?} var");
        }
    }
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    for name in family_names() {
        let f = family(&name).unwrap();
        let eta = eta_point(f.as_ref(), 0.4, -0.6, -0.8);
        let p = eta.len();
        for y in observable(f.as_ref()) {
            let jet = f.row_derivatives(y, &eta);
            for a in 0..p {
                let fd = central_diff(|e| f.ln_pmf(y, e, PmfType::Truncated), &eta, a, 1e-5);
                assert!(close(jet.g[a], fd, 1e-5), "{name} y={y} g[{a}] {} vs {fd}", jet.g[a]);
                for b in 0..p {
                    let fd = central_diff(|e| f.row_derivatives(y, e).g[b], &eta, a, 1e-5);
                    assert!(close(jet.h[a][b], fd, 1e-5), "{name} y={y} h[{a}][{b}] {} vs {fd}", jet.h[a][b]);
                }
            }
        }
    }
}

#[test]
fn expected_information_is_the_score_outer_product() {
    for name in family_names() {
        let f = family(&name).unwrap();
        let eta = eta_point(f.as_ref(), 0.2, -0.4, -1.1);
        let p = eta.len();
        let mut oracle = vec![vec![0.0; p]; p];
        for y in f.min_count()..=400 {
            if !f.uses_observation(y) {
                continue;
            }
            let prob = f.pmf(y, &eta, PmfType::Truncated);
            if prob < 1e-300 {
                continue;
            }
            let s: Vec<f64> = (0..p)
                .map(|a| central_diff(|e| f.ln_pmf(y, e, PmfType::Truncated), &eta, a, 1e-5))
                .collect();
            for a in 0..p {
                for b in 0..p {
                    oracle[a][b] += prob * s[a] * s[b];
                }
            }
        }
        let info = f.expected_information_row(&eta);
        let scale = oracle.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for a in 0..p {
            for b in 0..p {
                assert!(
                    (info[a][b] - oracle[a][b]).abs() <= 1e-5 * scale,
                    "{name} I[{a}][{b}] {} vs {}",
                    info[a][b],
                    oracle[a][b]
                );
            }
        }
    }
}

#[test]
fn geometric_is_negbin_with_unit_dispersion() {
    for pre in ["zt", "zot", "ztoi", "oizt", "ztHurdle", "Hurdlezt"] {
        let g = family(&format!("{pre}geom")).unwrap();
        let nb = family(&format!("{pre}negbin")).unwrap();
        for lam in [-1.5, 0.2, 1.7] {
            let mut eg = vec![lam];
            let mut en = vec![lam, 0.0];
            if g.n_params() == 2 {
                eg.push(-0.4);
                en.push(-0.4);
            }
            for y in g.min_count()..60 {
                for kind in [PmfType::Truncated, PmfType::Untruncated] {
                    let a = g.ln_pmf(y, &eg, kind);
                    let b = nb.ln_pmf(y, &en, kind);
                    assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{pre} y={y} {a} {b}");
                }
            }
            let ya = vec![g.min_count(); 1];
            let ca = g.contributions(&ya, &DMatrix::from_row_slice(1, eg.len(), &eg)).unwrap()[0];
            let cb = nb.contributions(&ya, &DMatrix::from_row_slice(1, en.len(), &en)).unwrap()[0];
            assert!((ca - cb).abs() < 1e-10 * ca);
        }
    }
}

#[test]
fn chao_intercept_only_collapses_to_closed_form() {
    let y = from_freqs(&[1645, 183, 37, 13, 1, 1]);
    let f = family("chao").unwrap();
    let d = intercept_design(f.as_ref(), y);
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    let n = f.point_estimate(&d.y, &r.eta, &d.weights).unwrap();
    let oracle = 1880.0 + 1645.0f64.powi(2) / (2.0 * 183.0);
    assert!((n - oracle).abs() < 1e-6 * oracle, "{n} vs {oracle}");
    assert!((n - 9273.5).abs() < 0.1);
}

#[test]
fn zelterman_intercept_only_collapses_to_closed_form() {
    let y = from_freqs(&[1645, 183, 37, 13, 1, 1]);
    let f = family("zelterman").unwrap();
    let d = intercept_design(f.as_ref(), y);
    let r = fit(&d, f.as_ref(), None, &FitControl::default()).unwrap();
    let n = f.point_estimate(&d.y, &r.eta, &d.weights).unwrap();
    let oracle = 1880.0 / (1.0 - (-2.0 * 183.0 / 1645.0f64).exp());
    assert!((n - oracle).abs() < 1e-6 * oracle, "{n} vs {oracle}");
    assert!((n - 9424.6).abs() < 0.2);
}

#[test]
fn oizt_with_certain_inflation_only_draws_ones() {
    let f = family("oiztpoisson").unwrap();
    let eta = DMatrix::from_fn(200, 2, |_, c| if c == 0 { 0.5 } else { 40.0 });
    assert!(f.simulate(&eta, 9, PmfType::Truncated).iter().all(|&y| y == 1));
}

#[test]
fn simulated_ztgeom_matches_pmf() {
    let f = family("ztgeom").unwrap();
    let n = 1_000_000;
    let eta = DMatrix::from_element(n, 1, 0.7);
    let draws = f.simulate(&eta, 42, PmfType::Truncated);
    let mut counts = [0usize; 12];
    for y in draws {
        if (y as usize) < counts.len() {
            counts[y as usize] += 1;
        }
    }
    for (y, &c) in counts.iter().enumerate().skip(1) {
        let p = f.pmf(y as u64, &[0.7], PmfType::Truncated);
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd + 1.0, "y={y}");
    }
}

#[test]
fn untruncated_simulation_mean() {
    // η = −1 + 0.5x with x ~ Bernoulli(0.2); population mean 0.8e⁻¹ + 0.2e^{−0.5} ≈ 0.4156
    let f = family("ztpoisson").unwrap();
    let n = 10_000;
    let eta = DMatrix::from_fn(n, 1, |r, _| if r % 5 == 0 { -0.5 } else { -1.0 });
    let y = f.simulate(&eta, 2024, PmfType::Untruncated);
    let mean = y.iter().sum::<u64>() as f64 / n as f64;
    let oracle = 0.8 * (-1.0f64).exp() + 0.2 * (-0.5f64).exp();
    assert!((mean - oracle).abs() < 0.02, "{mean}");
}

#[test]
fn support_violations_are_reported() {
    let zot = family("zotpoisson").unwrap();
    assert!(zot.check_support(&[2, 3, 1]).is_err());
    let zt = family("ztgeom").unwrap();
    assert!(zt.check_support(&[0]).is_err());
    assert!(zt.check_support(&[1, 5]).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truncated_pmf_sums_to_one(lam in -2.0f64..1.5, alpha in -2.0f64..0.5, extra in -3.0f64..2.0) {
        for name in family_names() {
            let f = family(&name).unwrap();
            let eta = eta_point(f.as_ref(), lam, alpha, extra);
            let s = trunc_sum(f.as_ref(), &eta, 200);
            prop_assert!((s - 1.0).abs() < 1e-8, "{} at {:?}: {}", name, eta, s);
            let u: f64 = (0..=200).map(|y| f.pmf(y, &eta, PmfType::Untruncated)).sum();
            prop_assert!((u - 1.0).abs() < 1e-8, "{} untruncated at {:?}: {}", name, eta, u);
        }
    }

    #[test]
    fn contributions_are_at_least_one(lam in -3.0f64..2.0, extra in -3.0f64..3.0) {
        for name in family_names() {
            let f = family(&name).unwrap();
            let eta = eta_point(f.as_ref(), lam, -0.5, extra);
            let y = vec![f.min_count()];
            let c = f.contributions(&y, &DMatrix::from_row_slice(1, eta.len(), &eta)).unwrap()[0];
            prop_assert!(c >= 1.0 - 1e-12 && c.is_finite(), "{} {}", name, c);
        }
    }
}
