//! Chao's and Zelterman's estimators as logistic regressions on the
//! indicator Z = 1{Y = 2} among units with Y ∈ {1, 2}.
//!
//! The linear predictor is logit p = ln(λ/2), so λ = 2p/(1-p); the
//! untruncated model for simulation is Poisson(λ).

use std::sync::Arc;

use nalgebra::DVector;

use super::{CountFamily, PmfType};
use crate::design::DesignBlocks;
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::links::Link;

const LN_2: f64 = std::f64::consts::LN_2;

/// ln λ = ln 2 + ln p - ln(1 - p)
fn ln_lambda(link: Link, eta: Jet) -> Jet {
    LN_2 + link.ln_inv_jet(eta) - link.ln_1m_inv_jet(eta)
}

fn ln_pmf(link: Link, y: u64, eta: Jet, kind: PmfType) -> Jet {
    match kind {
        PmfType::Truncated => match y {
            1 => link.ln_1m_inv_jet(eta),
            2 => link.ln_inv_jet(eta),
            _ => Jet::neg_infinity(),
        },
        PmfType::Untruncated => {
            let ll = ln_lambda(link, eta);
            let yf = y as f64;
            yf * ll - ll.exp() - statrs::function::gamma::ln_gamma(yf + 1.0)
        }
    }
}

fn relink(param: &str, link: Link, name: &str) -> Result<Link> {
    if param != "lambda" {
        return Err(Error::Family(format!("family '{name}' has no parameter '{param}'")));
    }
    if !link.is_probability() {
        return Err(Error::Family(format!(
            "link '{link}' does not map into (0, 1) as required by '{name}'"
        )));
    }
    Ok(link)
}

#[derive(Debug, Clone)]
pub struct Chao {
    links: [Link; 1],
}

impl Default for Chao {
    fn default() -> Self {
        Chao { links: [Link::Logit] }
    }
}

impl CountFamily for Chao {
    fn name(&self) -> &str {
        "chao"
    }

    fn eta_names(&self) -> &[&'static str] {
        &["lambda"]
    }

    fn links(&self) -> &[Link] {
        &self.links
    }

    fn uses_observation(&self, y: u64) -> bool {
        y <= 2
    }

    fn ln_pmf_jet(&self, y: u64, eta: &[Jet], kind: PmfType) -> Jet {
        ln_pmf(self.links[0], y, eta[0], kind)
    }

    /// 1 + (λ + λ²/2)⁻¹ for singletons and doubletons, 1 otherwise.
    fn ln_contribution_jet(&self, y: u64, eta: &[Jet]) -> Jet {
        if y > 2 {
            return Jet::constant(0.0);
        }
        let lam = ln_lambda(self.links[0], eta[0]).exp();
        (lam + 0.5 * lam.sqr()).recip().ln_1p()
    }

    fn start_values(&self, design: &DesignBlocks) -> Result<DVector<f64>> {
        Ok(DVector::zeros(design.x.n_coefficients()))
    }

    fn with_link(&self, param: &str, link: Link) -> Result<Arc<dyn CountFamily>> {
        Ok(Arc::new(Chao {
            links: [relink(param, link, self.name())?],
        }))
    }
}

#[derive(Debug, Clone)]
pub struct Zelterman {
    links: [Link; 1],
}

impl Default for Zelterman {
    fn default() -> Self {
        Zelterman { links: [Link::Logit] }
    }
}

impl CountFamily for Zelterman {
    fn name(&self) -> &str {
        "zelterman"
    }

    fn eta_names(&self) -> &[&'static str] {
        &["lambda"]
    }

    fn links(&self) -> &[Link] {
        &self.links
    }

    fn uses_observation(&self, y: u64) -> bool {
        y <= 2
    }

    fn ln_pmf_jet(&self, y: u64, eta: &[Jet], kind: PmfType) -> Jet {
        ln_pmf(self.links[0], y, eta[0], kind)
    }

    /// 1/(1 - e^{-λ}) for every observed unit.
    fn ln_contribution_jet(&self, _y: u64, eta: &[Jet]) -> Jet {
        let lam = ln_lambda(self.links[0], eta[0]).exp();
        -(-lam).ln_1m_exp()
    }

    fn start_values(&self, design: &DesignBlocks) -> Result<DVector<f64>> {
        Ok(DVector::zeros(design.x.n_coefficients()))
    }

    fn with_link(&self, param: &str, link: Link) -> Result<Arc<dyn CountFamily>> {
        Ok(Arc::new(Zelterman {
            links: [relink(param, link, self.name())?],
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn chao_contribution_matches_display() {
        let f: &dyn CountFamily = &Chao::default();
        for eta in [-2.0f64, -0.3, 0.9] {
            let c = f.contributions(&[1], &DMatrix::from_element(1, 1, eta)).unwrap()[0];
            let display = 1.0 + 1.0 / (2.0 * eta.exp() + 2.0 * (2.0 * eta).exp());
            assert_relative_eq!(c, display, max_relative = 1e-12);
            assert_eq!(f.contributions(&[5], &DMatrix::from_element(1, 1, eta)).unwrap()[0], 1.0);
        }
    }

    #[test]
    fn zelterman_contribution_matches_display() {
        let f: &dyn CountFamily = &Zelterman::default();
        let eta: f64 = -1.7;
        let c = f.contributions(&[3], &DMatrix::from_element(1, 1, eta)).unwrap()[0];
        assert_relative_eq!(c, 1.0 / (1.0 - (-2.0 * eta.exp()).exp()), max_relative = 1e-12);
    }

    #[test]
    fn truncated_support_is_one_and_two() {
        let f: &dyn CountFamily = &Chao::default();
        let s: f64 = (1..10).map(|y| f.pmf(y, &[0.4], PmfType::Truncated)).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
        assert_eq!(f.pmf(3, &[0.4], PmfType::Truncated), 0.0);
    }
}
