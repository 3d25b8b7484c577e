#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sscr::design::{DesignBlock, DesignBlocks};
use sscr::families::{CountFamily, PmfType};
use sscr::jet::Jet;
use sscr::links::Link;

pub fn intercept(n: usize) -> DesignBlock {
    DesignBlock {
        matrix: DMatrix::from_element(n, 1, 1.0),
        names: vec!["(Intercept)".into()],
    }
}

pub fn intercept_and(x: &[f64], name: &str) -> DesignBlock {
    let n = x.len();
    DesignBlock {
        matrix: DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { x[r] }),
        names: vec!["(Intercept)".into(), name.into()],
    }
}

/// Intercept-only design for every parameter of `family`.
pub fn intercept_design(family: &dyn CountFamily, y: Vec<u64>) -> DesignBlocks {
    let n = y.len();
    let blocks = (0..family.n_params()).map(|_| intercept(n)).collect();
    DesignBlocks::new(y, blocks).unwrap()
}

/// Counts y = 1, 2, ... with the given frequencies.
pub fn from_freqs(freqs: &[usize]) -> Vec<u64> {
    freqs
        .iter()
        .enumerate()
        .flat_map(|(i, &f)| std::iter::repeat_n(i as u64 + 1, f))
        .collect()
}

/// Truncated draws with η = b0 + b1·x, x ~ Bernoulli(0.4).
pub fn simulated_ztpois(n: usize, b0: f64, b1: f64, seed: u64) -> (Vec<u64>, Vec<f64>) {
    let fam = sscr::families::family("ztpoisson").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
    let eta = DMatrix::from_fn(n, 1, |r, _| b0 + b1 * x[r]);
    (fam.simulate(&eta, seed + 1, PmfType::Truncated), x)
}

/// Central difference of f at x along coordinate i.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-8)
}

/// User-defined family: untruncated P[0] = 1 − λ/2 − π/2, P[1] = π/2,
/// P[2] = λ/2.
#[derive(Debug)]
pub struct TwoPoint;

const LINKS: [Link; 2] = [Link::Logit, Link::Logit];

fn halves(eta: &[Jet]) -> (Jet, Jet) {
    let h = Jet::constant(std::f64::consts::LN_2);
    (LINKS[0].ln_inv_jet(eta[0]) - h, LINKS[1].ln_inv_jet(eta[1]) - h)
}

impl CountFamily for TwoPoint {
    fn name(&self) -> &str {
        "twopoint"
    }

    fn eta_names(&self) -> &[&'static str] {
        &["lambda", "pi"]
    }

    fn links(&self) -> &[Link] {
        &LINKS
    }

    fn ln_pmf_jet(&self, y: u64, eta: &[Jet], kind: PmfType) -> Jet {
        let (l, p) = halves(eta);
        let not0 = Jet::log_add_exp(l, p);
        match (kind, y) {
            (PmfType::Untruncated, 0) => not0.ln_1m_exp(),
            (PmfType::Untruncated, 1) => p,
            (PmfType::Untruncated, 2) => l,
            (PmfType::Truncated, 1) => p - not0,
            (PmfType::Truncated, 2) => l - not0,
            _ => Jet::neg_infinity(),
        }
    }

    fn ln_contribution_jet(&self, _y: u64, eta: &[Jet]) -> Jet {
        let (l, p) = halves(eta);
        -Jet::log_add_exp(l, p)
    }
}

