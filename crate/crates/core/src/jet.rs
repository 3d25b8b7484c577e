//! Second-order forward-mode dual numbers.
//!
//! A [`Jet`] carries a value together with its gradient and Hessian with
//! respect to up to [`MAX_PARAMS`] independent variables. Family
//! log-likelihoods are written once in terms of jets, which yields exact
//! per-row scores and observed information in linear-predictor space.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use arrayvec::ArrayVec;

/// Maximum number of distribution parameters a family may have.
pub const MAX_PARAMS: usize = 3;

type Grad = [f64; MAX_PARAMS];
type Hess = [[f64; MAX_PARAMS]; MAX_PARAMS];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: Grad,
    pub h: Hess,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet {
            v,
            g: [0.0; MAX_PARAMS],
            h: [[0.0; MAX_PARAMS]; MAX_PARAMS],
        }
    }

    /// Independent variable number `idx` with value `v`.
    pub fn variable(v: f64, idx: usize) -> Self {
        let mut j = Jet::constant(v);
        j.g[idx] = 1.0;
        j
    }

    /// Seeds one jet per entry of `values`.
    pub fn seed(values: &[f64]) -> ArrayVec<Jet, MAX_PARAMS> {
        assert!(values.len() <= MAX_PARAMS, "at most {MAX_PARAMS} parameters");
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(v, i))
            .collect()
    }

    pub fn neg_infinity() -> Self {
        Jet::constant(f64::NEG_INFINITY)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.g.iter().all(|x| x.is_finite())
            && self.h.iter().flatten().all(|x| x.is_finite())
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.v`.
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Jet::constant(f0);
        for i in 0..MAX_PARAMS {
            out.g[i] = f1 * self.g[i];
            for j in 0..MAX_PARAMS {
                out.h[i][j] = f1 * self.h[i][j] + f2 * self.g[i] * self.g[j];
            }
        }
        out
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let x = self.v;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    /// `ln(1 + x)`.
    pub fn ln_1p(self) -> Self {
        let x = self.v;
        let d = 1.0 / (1.0 + x);
        self.chain(x.ln_1p(), d, -d * d)
    }

    /// `exp(x) - 1`.
    pub fn exp_m1(self) -> Self {
        let x = self.v;
        let e = x.exp();
        self.chain(x.exp_m1(), e, e)
    }

    /// `ln(1 - exp(x))` for `x < 0`, accurate for `x` near zero and for
    /// large negative `x`.
    pub fn ln_1m_exp(self) -> Self {
        let x = self.v;
        if x >= 0.0 {
            return Jet::neg_infinity();
        }
        let f0 = ln_1m_exp(x);
        // q = 1 / (exp(-x) - 1)
        let q = 1.0 / (-x).exp_m1();
        self.chain(f0, -q, -(q + q * q))
    }

    pub fn recip(self) -> Self {
        let x = self.v;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn sqr(self) -> Self {
        self * self
    }

    /// `ln(exp(a) + exp(b))`.
    pub fn log_add_exp(a: Jet, b: Jet) -> Jet {
        if a.v == f64::NEG_INFINITY {
            return b;
        }
        if b.v == f64::NEG_INFINITY {
            return a;
        }
        // ln(e^a + e^b) = a + ln(1 + e^(b - a)); symmetrised on the larger.
        let (hi, lo) = if a.v >= b.v { (a, b) } else { (b, a) };
        hi + (lo - hi).exp().ln_1p()
    }

    /// `ln Γ(x)`.
    pub fn ln_gamma(self) -> Self {
        let x = self.v;
        self.chain(
            statrs::function::gamma::ln_gamma(x),
            statrs::function::gamma::digamma(x),
            trigamma(x),
        )
    }
}

/// `ln(1 - exp(x))` for `x <= 0`.
pub fn ln_1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Trigamma function ψ'(x) for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // asymptotic expansion in 1/x
    acc + 1.0 / x
        + z / 2.0
        + (z / x)
            * (1.0 / 6.0 - z * (1.0 / 30.0 - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * 5.0 / 66.0))))
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self.v += rhs.v;
        for i in 0..MAX_PARAMS {
            self.g[i] += rhs.g[i];
            for j in 0..MAX_PARAMS {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        *self = *self + rhs;
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.v = -self.v;
        for i in 0..MAX_PARAMS {
            self.g[i] = -self.g[i];
            for j in 0..MAX_PARAMS {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut out = Jet::constant(self.v * rhs.v);
        for i in 0..MAX_PARAMS {
            out.g[i] = self.g[i] * rhs.v + rhs.g[i] * self.v;
            for j in 0..MAX_PARAMS {
                out.h[i][j] = self.h[i][j] * rhs.v
                    + rhs.h[i][j] * self.v
                    + self.g[i] * rhs.g[j]
                    + rhs.g[i] * self.g[j];
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Jet) -> Jet {
        self * rhs.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        self.v *= rhs;
        for i in 0..MAX_PARAMS {
            self.g[i] *= rhs;
            for j in 0..MAX_PARAMS {
                self.h[i][j] *= rhs;
            }
        }
        self
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        rhs + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        -rhs + self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        rhs * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd2<F: Fn(f64, f64) -> f64>(f: F, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let h = 1e-4;
        let gx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let gy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        let hxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
        let hyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
        let hxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h))
            / (4.0 * h * h);
        ([gx, gy], [[hxx, hxy], [hxy, hyy]])
    }

    #[test]
    fn composite_matches_finite_differences() {
        let f = |x: f64, y: f64| ((x * y).exp() + y).ln() - (x / (1.0 + y * y)).ln_1p();
        let (x0, y0) = (0.3, 0.7);
        let v = Jet::seed(&[x0, y0]);
        let j = ((v[0] * v[1]).exp() + v[1]).ln() - (v[0] / (1.0 + v[1] * v[1])).ln_1p();
        let (g, h) = fd2(f, x0, y0);
        assert_relative_eq!(j.v, f(x0, y0), epsilon = 1e-14);
        for a in 0..2 {
            assert_relative_eq!(j.g[a], g[a], epsilon = 1e-7);
            for b in 0..2 {
                assert_relative_eq!(j.h[a][b], h[a][b], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn ln_1m_exp_is_stable_at_both_ends() {
        assert_relative_eq!(ln_1m_exp(-1e-20), (1e-20f64).ln(), max_relative = 1e-12);
        assert_relative_eq!(ln_1m_exp(-50.0), -(-50.0f64).exp(), max_relative = 1e-12);
        let j = Jet::variable(-0.5, 0).ln_1m_exp();
        let f = |x: f64| (1.0 - x.exp()).ln();
        let h = 1e-5;
        assert_relative_eq!(j.g[0], (f(-0.5 + h) - f(-0.5 - h)) / (2.0 * h), max_relative = 1e-8);
        assert_relative_eq!(
            j.h[0][0],
            (f(-0.5 + h) - 2.0 * f(-0.5) + f(-0.5 - h)) / (h * h),
            max_relative = 1e-4
        );
    }

    #[test]
    fn trigamma_known_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert_relative_eq!(trigamma(1.0), pi2 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(trigamma(0.5), pi2 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(trigamma(100.0), 0.010050166663333571, max_relative = 1e-12);
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        let a = Jet::variable(0.2, 0);
        assert_eq!(Jet::log_add_exp(a, Jet::neg_infinity()), a);
        let s = Jet::log_add_exp(a, a);
        assert_relative_eq!(s.v, 0.2 + std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(s.g[0], 1.0, epsilon = 1e-15);
    }
}
