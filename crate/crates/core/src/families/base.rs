//! Untruncated base count distributions in log domain.

use std::sync::LazyLock;

use crate::jet::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Base {
    Poisson,
    Geometric,
    NegBin,
}

impl Base {
    pub fn suffix(self) -> &'static str {
        match self {
            Base::Poisson => "poisson",
            Base::Geometric => "geom",
            Base::NegBin => "negbin",
        }
    }

    pub fn has_dispersion(self) -> bool {
        self == Base::NegBin
    }
}

/// Log-probabilities of one base distribution at fixed parameters,
/// carried as jets of the linear predictors.
#[derive(Debug, Clone, Copy)]
pub struct BaseLogPmf {
    base: Base,
    ln_lambda: Jet,
    lambda: Jet,
    /// NB2 dispersion; unused otherwise.
    alpha: Jet,
    /// ln(1 + αλ) for NB2, ln(1 + λ) for the geometric.
    ln_1p_al: Jet,
    pub ln_p0: Jet,
    pub ln_p1: Jet,
    /// ln(1 - P0)
    pub ln_not0: Jet,
    /// ln(1 - P0 - P1)
    pub ln_not01: Jet,
}

/// Σ_{k≥2} λ^{k-2} 2/k!, so that 1 - e^{-λ}(1 + λ) = e^{-λ} λ²/2 · s.
fn poisson_tail2_series(lambda: Jet) -> Jet {
    let mut term = Jet::constant(1.0);
    let mut sum = Jet::constant(1.0);
    for k in 3..30 {
        term = term * lambda * (1.0 / k as f64);
        sum += term;
        if term.v.abs() < 1e-18 * sum.v {
            break;
        }
    }
    sum
}

impl BaseLogPmf {
    /// `ln_not01` is only computed when `with_not01` is set; otherwise it is NaN.
    pub fn new(base: Base, ln_lambda: Jet, alpha: Option<Jet>, with_not01: bool) -> Self {
        let lambda = ln_lambda.exp();
        let alpha = match base {
            Base::Poisson => Jet::constant(0.0),
            Base::Geometric => Jet::constant(1.0),
            Base::NegBin => alpha.expect("NB2 requires a dispersion parameter"),
        };
        let (ln_1p_al, ln_p0) = match base {
            Base::Poisson => (Jet::constant(0.0), -lambda),
            Base::Geometric => {
                let l = lambda.ln_1p();
                (l, -l)
            }
            Base::NegBin => {
                let l = (alpha * lambda).ln_1p();
                (l, -(l / alpha))
            }
        };
        let ln_p1 = match base {
            Base::Poisson => ln_lambda - lambda,
            _ => ln_p0 + ln_lambda - ln_1p_al,
        };
        let ln_not0 = ln_p0.ln_1m_exp();
        let ln_not01 = match base {
            _ if !with_not01 => Jet::constant(f64::NAN),
            Base::Poisson if lambda.v < 1.0 => {
                -lambda + 2.0 * ln_lambda - std::f64::consts::LN_2 + poisson_tail2_series(lambda).ln()
            }
            // 1 - P0 - P1 = (λ/(1+λ))²
            Base::Geometric => 2.0 * (ln_lambda - ln_1p_al),
            _ => Jet::log_add_exp(ln_p0, ln_p1).ln_1m_exp(),
        };
        BaseLogPmf {
            base,
            ln_lambda,
            lambda,
            alpha,
            ln_1p_al,
            ln_p0,
            ln_p1,
            ln_not0,
            ln_not01,
        }
    }

    /// ln P[Y = y].
    pub fn ln_p(&self, y: u64) -> Jet {
        match y {
            0 => return self.ln_p0,
            1 => return self.ln_p1,
            _ => {}
        }
        let yf = y as f64;
        let ln_fact = ln_factorial(y);
        match self.base {
            Base::Poisson => yf * self.ln_lambda - self.lambda - ln_fact,
            Base::Geometric => yf * self.ln_lambda - (yf + 1.0) * self.ln_1p_al,
            Base::NegBin => {
                // ln Γ(y + 1/α) - ln Γ(1/α) + y ln α, exact as α → 0
                let ratio = if y <= 64 {
                    let mut s = Jet::constant(0.0);
                    for j in 1..y {
                        s += (self.alpha * j as f64).ln_1p();
                    }
                    s
                } else {
                    let r = self.alpha.recip();
                    (r + yf).ln_gamma() - r.ln_gamma() - yf * r.ln()
                };
                ratio - ln_fact + self.ln_p0 + yf * (self.ln_lambda - self.ln_1p_al)
            }
        }
    }

    /// Untruncated first and second raw moments.
    pub fn raw_moments(&self) -> (f64, f64) {
        let l = self.lambda.v;
        (l, l + l * l * (1.0 + self.alpha.v))
    }
}

/// ln(y!), tabulated for small y.
pub fn ln_factorial(y: u64) -> f64 {
    const TABLE_LEN: usize = 256;
    static TABLE: LazyLock<[f64; TABLE_LEN]> = LazyLock::new(|| {
        let mut t = [0.0; TABLE_LEN];
        for i in 2..TABLE_LEN {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        t
    });
    match usize::try_from(y) {
        Ok(i) if i < TABLE_LEN => TABLE[i],
        _ => statrs::function::gamma::ln_gamma(y as f64 + 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ln_p_f64(base: Base, lambda: f64, alpha: f64, y: u64) -> f64 {
        BaseLogPmf::new(base, Jet::constant(lambda.ln()), Some(Jet::constant(alpha)), true).ln_p(y).v
    }

    #[test]
    fn poisson_matches_closed_form() {
        for y in 0..20u64 {
            let lam: f64 = 2.3;
            let direct = lam.powi(y as i32) * (-lam).exp() / statrs::function::factorial::factorial(y);
            assert_relative_eq!(ln_p_f64(Base::Poisson, lam, 0.0, y).exp(), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn negbin_sums_to_one_and_matches_moments() {
        for &(lam, a) in &[(0.3, 0.5), (4.0, 2.0), (7.0, 1e-6), (1.5, 30.0)] {
            let (mut s, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for y in 0..20000u64 {
                let p = ln_p_f64(Base::NegBin, lam, a, y).exp();
                s += p;
                m1 += y as f64 * p;
                m2 += (y * y) as f64 * p;
            }
            let b = BaseLogPmf::new(Base::NegBin, Jet::constant(f64::ln(lam)), Some(Jet::constant(a)), true);
            let (e1, e2) = b.raw_moments();
            assert_relative_eq!(s, 1.0, epsilon = 1e-9);
            assert_relative_eq!(m1, e1, max_relative = 1e-7);
            assert_relative_eq!(m2, e2, max_relative = 1e-6);
        }
    }

    #[test]
    fn small_lambda_tail_is_accurate() {
        let lam: f64 = 1e-5;
        let b = BaseLogPmf::new(Base::Poisson, Jet::constant(lam.ln()), None, true);
        let expected = (lam * lam / 2.0 * (-lam).exp() * (1.0 + lam / 3.0)).ln();
        assert_relative_eq!(b.ln_not01.v, expected, max_relative = 1e-9);
        let big = BaseLogPmf::new(Base::Poisson, Jet::constant(3.0f64.ln()), None, true);
        let direct = (1.0 - (-3.0f64).exp() * 4.0).ln();
        assert_relative_eq!(big.ln_not01.v, direct, max_relative = 1e-12);
    }

    #[test]
    fn negbin_large_count_branch_is_continuous() {
        let a: f64 = 0.7;
        let lo = ln_p_f64(Base::NegBin, 50.0, a, 64);
        let hi = ln_p_f64(Base::NegBin, 50.0, a, 65);
        // ratio P(65)/P(64) = (64 + 1/α)/65 · αλ/(1+αλ)
        let ratio = (64.0 + 1.0 / a) / 65.0 * (a * 50.0) / (1.0 + a * 50.0);
        assert_relative_eq!(hi - lo, ratio.ln(), max_relative = 1e-9);
    }
}
