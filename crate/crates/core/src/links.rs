//! Link functions mapping distribution parameters to linear predictors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::Error;
use crate::jet::Jet;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// η = ln θ, θ > 0
    Log,
    /// η = ln(θ / (1 - θ)), θ ∈ (0, 1)
    Logit,
    /// η = ln(-ln(1 - θ)), θ ∈ (0, 1)
    Cloglog,
    /// η = Φ⁻¹(θ), θ ∈ (0, 1)
    Probit,
    /// η = -ln θ, θ > 0
    Neglog,
}

impl Link {
    pub const ALL: [Link; 5] = [Link::Log, Link::Logit, Link::Cloglog, Link::Probit, Link::Neglog];

    pub fn name(self) -> &'static str {
        match self {
            Link::Log => "log",
            Link::Logit => "logit",
            Link::Cloglog => "cloglog",
            Link::Probit => "probit",
            Link::Neglog => "neglog",
        }
    }

    /// Whether the parameter lives in (0, 1).
    pub fn is_probability(self) -> bool {
        matches!(self, Link::Logit | Link::Cloglog | Link::Probit)
    }

    /// θ ↦ η.
    pub fn forward(self, theta: f64) -> f64 {
        match self {
            Link::Log => theta.ln(),
            Link::Neglog => -theta.ln(),
            Link::Logit => (theta / (1.0 - theta)).ln(),
            Link::Cloglog => (-(-theta).ln_1p()).ln(),
            Link::Probit => probit(theta),
        }
    }

    /// η ↦ θ.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Neglog => (-eta).exp(),
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Cloglog => -(-eta.exp()).exp_m1(),
            Link::Probit => norm_cdf(eta),
        }
    }

    /// dθ/dη.
    pub fn inverse_deriv(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Neglog => -(-eta).exp(),
            Link::Logit => {
                let p = self.inverse(eta);
                p * (1.0 - p)
            }
            Link::Cloglog => (eta - eta.exp()).exp(),
            Link::Probit => norm_pdf(eta),
        }
    }

    /// d²θ/dη².
    pub fn inverse_deriv2(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Neglog => (-eta).exp(),
            Link::Logit => {
                let p = self.inverse(eta);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            Link::Cloglog => (eta - eta.exp()).exp() * (1.0 - eta.exp()),
            Link::Probit => -eta * norm_pdf(eta),
        }
    }

    /// θ as a jet of η.
    pub fn inv_jet(self, eta: Jet) -> Jet {
        let x = eta.v;
        eta.chain(
            self.inverse(x),
            self.inverse_deriv(x),
            self.inverse_deriv2(x),
        )
    }

    /// ln θ as a jet of η, computed without forming θ where that loses
    /// precision.
    pub fn ln_inv_jet(self, eta: Jet) -> Jet {
        match self {
            Link::Log => eta,
            Link::Neglog => -eta,
            // ln σ(η) = -ln(1 + e^{-η})
            Link::Logit => -log1p_exp(-eta),
            // ln(1 - exp(-e^η))
            Link::Cloglog => (-eta.exp()).ln_1m_exp(),
            Link::Probit => ln_norm_cdf_jet(eta),
        }
    }

    /// ln(1 - θ) as a jet of η; only meaningful for probability links.
    pub fn ln_1m_inv_jet(self, eta: Jet) -> Jet {
        match self {
            Link::Logit => -log1p_exp(eta),
            Link::Cloglog => -eta.exp(),
            Link::Probit => ln_norm_cdf_jet(-eta),
            Link::Log | Link::Neglog => (1.0 - self.inv_jet(eta)).ln(),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Link::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown link function '{s}'")))
    }
}

/// ln(1 + e^x) as a jet.
fn log1p_exp(x: Jet) -> Jet {
    let v = x.v;
    let f0 = if v > 35.0 {
        v
    } else if v < -35.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    };
    let s = 1.0 / (1.0 + (-v).exp());
    x.chain(f0, s, s * (1.0 - s))
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// ln Φ(x), accurate deep in the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        if x > 5.0 {
            // Φ close to one
            (-0.5 * erfc(x / SQRT_2)).ln_1p()
        } else {
            norm_cdf(x).ln()
        }
    } else {
        let z = 1.0 / (x * x);
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI
            + (-z + 3.0 * z * z - 15.0 * z * z * z).ln_1p()
    }
}

/// Mills-type ratio φ(x)/Φ(x), stable for large negative x.
fn pdf_over_cdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI - ln_norm_cdf(x)).exp()
}

fn ln_norm_cdf_jet(eta: Jet) -> Jet {
    let x = eta.v;
    let r = pdf_over_cdf(x);
    eta.chain(ln_norm_cdf(x), r, -r * (x + r))
}

/// Standard normal quantile function.
pub fn probit(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn domain_points(link: Link) -> Vec<f64> {
        if link.is_probability() {
            vec![1e-6, 0.01, 0.2, 0.5, 0.77, 0.99, 1.0 - 1e-6]
        } else {
            vec![1e-6, 0.03, 0.5, 1.0, 4.5, 120.0]
        }
    }

    #[test]
    fn round_trip_on_domain() {
        for link in Link::ALL {
            for theta in domain_points(link) {
                let back = link.inverse(link.forward(theta));
                assert!(
                    (back - theta).abs() <= 1e-10 * theta.abs().max(1e-2),
                    "{link}: {theta} -> {back}"
                );
            }
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        for link in Link::ALL {
            for eta in [-3.0, -0.7, 0.0, 0.4, 2.2] {
                let h = 1e-5;
                let d1 = (link.inverse(eta + h) - link.inverse(eta - h)) / (2.0 * h);
                let d2 = (link.inverse_deriv(eta + h) - link.inverse_deriv(eta - h)) / (2.0 * h);
                assert_relative_eq!(link.inverse_deriv(eta), d1, max_relative = 1e-6);
                assert_relative_eq!(link.inverse_deriv2(eta), d2, max_relative = 1e-6, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn log_forms_agree_with_direct_evaluation() {
        for link in [Link::Logit, Link::Cloglog, Link::Probit] {
            for eta in [-4.0, -1.0, 0.3, 2.5] {
                let j = Jet::variable(eta, 0);
                let th = link.inverse(eta);
                assert_relative_eq!(link.ln_inv_jet(j).v, th.ln(), max_relative = 1e-12);
                assert_relative_eq!(link.ln_1m_inv_jet(j).v, (1.0 - th).ln(), max_relative = 1e-10);
                let lj = link.ln_inv_jet(j);
                assert_relative_eq!(lj.g[0], link.inverse_deriv(eta) / th, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn probit_tail_is_finite() {
        let v = ln_norm_cdf(-40.0);
        assert!(v.is_finite() && v < -800.0);
        // continuity across the branch switch
        assert_relative_eq!(ln_norm_cdf(-30.0 + 1e-9), ln_norm_cdf(-30.0 - 1e-9), max_relative = 1e-9);
        assert_relative_eq!(norm_cdf(1.959963984540054), 0.975, max_relative = 1e-10);
    }

    #[test]
    fn parses_names() {
        assert_eq!("cloglog".parse::<Link>().unwrap(), Link::Cloglog);
        assert!("identity".parse::<Link>().is_err());
    }
}
