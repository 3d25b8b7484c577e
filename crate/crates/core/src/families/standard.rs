//! Truncated, one-inflated and hurdle variants of the Poisson, geometric
//! and NB2 distributions.

use std::sync::Arc;

use arrayvec::ArrayVec;

use super::base::{Base, BaseLogPmf};
use super::{CountFamily, InfoBlock, PmfType};
use crate::error::{Error, Result};
use crate::jet::{Jet, MAX_PARAMS};
use crate::links::Link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Zero-truncated.
    Zt,
    /// Zero-one-truncated: only counts ≥ 2 are observed.
    Zot,
    /// Zero-truncated one-inflated.
    Ztoi,
    /// One-inflated zero-truncated.
    Oizt,
    /// Zero-truncated hurdle; π is the conditional singleton probability.
    ZtHurdle,
    /// Hurdle zero-truncated; π is the unconditional singleton probability.
    HurdleZt,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Zt,
        Variant::Zot,
        Variant::Ztoi,
        Variant::Oizt,
        Variant::ZtHurdle,
        Variant::HurdleZt,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Variant::Zt => "zt",
            Variant::Zot => "zot",
            Variant::Ztoi => "ztoi",
            Variant::Oizt => "oizt",
            Variant::ZtHurdle => "ztHurdle",
            Variant::HurdleZt => "Hurdlezt",
        }
    }

    /// Whether the likelihood or moments use ln(1 - P0 - P1).
    fn needs_not01(self) -> bool {
        matches!(self, Variant::Zot | Variant::ZtHurdle | Variant::HurdleZt)
    }

    fn extra(self) -> Option<&'static str> {
        match self {
            Variant::Zt | Variant::Zot => None,
            Variant::Ztoi | Variant::Oizt => Some("omega"),
            Variant::ZtHurdle | Variant::HurdleZt => Some("pi"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StandardFamily {
    name: String,
    variant: Variant,
    base: Base,
    eta_names: Vec<&'static str>,
    links: Vec<Link>,
}

/// Distribution parameters of one row as jets.
struct Params {
    b: BaseLogPmf,
    /// ln ω or ln π
    ln_m: Jet,
    /// ln(1 - ω) or ln(1 - π)
    ln_1m_m: Jet,
}

impl StandardFamily {
    pub fn new(variant: Variant, base: Base) -> Self {
        let mut eta_names = vec!["lambda"];
        let mut links = vec![Link::Log];
        if base.has_dispersion() {
            eta_names.push("alpha");
            links.push(Link::Log);
        }
        if let Some(e) = variant.extra() {
            eta_names.push(e);
            links.push(Link::Logit);
        }
        StandardFamily {
            name: format!("{}{}", variant.prefix(), base.suffix()),
            variant,
            base,
            eta_names,
            links,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Variant::ALL.into_iter().find_map(|v| {
            let rest = name.strip_prefix(v.prefix())?;
            [Base::Poisson, Base::Geometric, Base::NegBin]
                .into_iter()
                .find(|b| b.suffix() == rest)
                .map(|b| StandardFamily::new(v, b))
        })
    }

    pub fn all() -> Vec<StandardFamily> {
        Variant::ALL
            .into_iter()
            .flat_map(|v| [Base::Poisson, Base::Geometric, Base::NegBin].map(|b| StandardFamily::new(v, b)))
            .collect()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn base(&self) -> Base {
        self.base
    }

    fn params(&self, eta: &[Jet]) -> Params {
        let ln_lambda = self.links[0].ln_inv_jet(eta[0]);
        let alpha = self
            .base
            .has_dispersion()
            .then(|| self.links[1].inv_jet(eta[1]));
        let (ln_m, ln_1m_m) = match self.variant.extra() {
            Some(_) => {
                let i = self.links.len() - 1;
                (self.links[i].ln_inv_jet(eta[i]), self.links[i].ln_1m_inv_jet(eta[i]))
            }
            None => (Jet::neg_infinity(), Jet::constant(0.0)),
        };
        Params {
            b: BaseLogPmf::new(self.base, ln_lambda, alpha, self.variant.needs_not01()),
            ln_m,
            ln_1m_m,
        }
    }

    /// ln of the normalising constant P[Y* > 0] for the one-inflated and
    /// hurdle variants that need one beyond the base truncation.
    fn ln_oizt_denominator(p: &Params) -> Jet {
        (p.ln_1m_m + p.b.ln_p0).ln_1m_exp()
    }

    /// ln(1 - P1 - (1-π)P0) = ln((1 - P0 - P1) + πP0)
    fn ln_hurdlezt_denominator(p: &Params) -> Jet {
        Jet::log_add_exp(p.b.ln_not01, p.ln_m + p.b.ln_p0)
    }

    fn untruncated(&self, y: u64, p: &Params) -> Jet {
        let b = &p.b;
        match self.variant {
            Variant::Zt | Variant::Zot => b.ln_p(y),
            Variant::Ztoi => match y {
                0 => b.ln_p0,
                1 => Jet::log_add_exp(p.ln_m + b.ln_not0, p.ln_1m_m + b.ln_p1),
                _ => p.ln_1m_m + b.ln_p(y),
            },
            Variant::Oizt => match y {
                1 => Jet::log_add_exp(p.ln_m, p.ln_1m_m + b.ln_p1),
                _ => p.ln_1m_m + b.ln_p(y),
            },
            Variant::ZtHurdle => match y {
                0 => b.ln_p0,
                1 => p.ln_m + b.ln_not0,
                _ => p.ln_1m_m + b.ln_not0 + b.ln_p(y) - b.ln_not01,
            },
            Variant::HurdleZt => match y {
                1 => p.ln_m,
                _ => p.ln_1m_m + b.ln_p(y) - b.ln_p1.ln_1m_exp(),
            },
        }
    }

    fn truncated(&self, y: u64, p: &Params) -> Jet {
        let b = &p.b;
        match (self.variant, y) {
            (_, 0) => Jet::neg_infinity(),
            (Variant::Zt, _) => b.ln_p(y) - b.ln_not0,
            (Variant::Zot, 1) => Jet::neg_infinity(),
            (Variant::Zot, _) => b.ln_p(y) - b.ln_not01,
            (Variant::Ztoi, 1) => Jet::log_add_exp(p.ln_m, p.ln_1m_m + b.ln_p1 - b.ln_not0),
            (Variant::Ztoi, _) => p.ln_1m_m + b.ln_p(y) - b.ln_not0,
            (Variant::Oizt, _) => self.untruncated(y, p) - Self::ln_oizt_denominator(p),
            (Variant::ZtHurdle, 1) => p.ln_m,
            (Variant::ZtHurdle, _) => p.ln_1m_m + b.ln_p(y) - b.ln_not01,
            (Variant::HurdleZt, 1) => p.ln_m + b.ln_p1.ln_1m_exp() - Self::ln_hurdlezt_denominator(p),
            (Variant::HurdleZt, _) => p.ln_1m_m + b.ln_p(y) - Self::ln_hurdlezt_denominator(p),
        }
    }

    /// Closed-form (E[Y], E[Y²]).
    fn raw_moments(&self, p: &Params, kind: PmfType) -> (f64, f64) {
        let b = &p.b;
        let (m1, m2) = b.raw_moments();
        let p1 = b.ln_p1.v.exp();
        let not0 = b.ln_not0.v.exp();
        let not01 = b.ln_not01.v.exp();
        let not1 = -b.ln_p1.v.exp_m1();
        let m = p.ln_m.v.exp();
        let one_m = p.ln_1m_m.v.exp();
        let both = |f: &dyn Fn(f64) -> f64| (f(m1), f(m2));
        match (self.variant, kind) {
            (Variant::Zt, PmfType::Untruncated) | (Variant::Zot, PmfType::Untruncated) => (m1, m2),
            (Variant::Zt, PmfType::Truncated) => both(&|x| x / not0),
            (Variant::Zot, PmfType::Truncated) => both(&|x| (x - p1) / not01),
            (Variant::Ztoi, PmfType::Untruncated) => both(&|x| m * not0 + one_m * x),
            (Variant::Ztoi, PmfType::Truncated) => both(&|x| m + one_m * x / not0),
            (Variant::Oizt, PmfType::Untruncated) => both(&|x| m + one_m * x),
            (Variant::Oizt, PmfType::Truncated) => {
                let d = Self::ln_oizt_denominator(p).v.exp();
                both(&|x| (m + one_m * x) / d)
            }
            (Variant::ZtHurdle, PmfType::Untruncated) => both(&|x| not0 * (m + one_m * (x - p1) / not01)),
            (Variant::ZtHurdle, PmfType::Truncated) => both(&|x| m + one_m * (x - p1) / not01),
            (Variant::HurdleZt, PmfType::Untruncated) => both(&|x| m + one_m * (x - p1) / not1),
            (Variant::HurdleZt, PmfType::Truncated) => {
                let d = Self::ln_hurdlezt_denominator(p).v.exp();
                both(&|x| (m * not1 + one_m * (x - p1)) / d)
            }
        }
    }
}

impl CountFamily for StandardFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn eta_names(&self) -> &[&'static str] {
        &self.eta_names
    }

    fn links(&self) -> &[Link] {
        &self.links
    }

    fn min_count(&self) -> u64 {
        match self.variant {
            Variant::Zot => 2,
            _ => 1,
        }
    }

    fn ln_pmf_jet(&self, y: u64, eta: &[Jet], kind: PmfType) -> Jet {
        let p = self.params(eta);
        match kind {
            PmfType::Truncated => self.truncated(y, &p),
            PmfType::Untruncated => self.untruncated(y, &p),
        }
    }

    fn ln_contribution_jet(&self, _y: u64, eta: &[Jet]) -> Jet {
        let p = self.params(eta);
        let b = &p.b;
        match self.variant {
            Variant::Zt | Variant::Ztoi | Variant::ZtHurdle => -b.ln_not0,
            Variant::Zot => b.ln_p1.ln_1m_exp() - b.ln_not01,
            Variant::Oizt => -Self::ln_oizt_denominator(&p),
            Variant::HurdleZt => b.ln_p1.ln_1m_exp() - Self::ln_hurdlezt_denominator(&p),
        }
    }

    fn mean_variance(&self, eta: &[f64], kind: PmfType) -> (f64, f64) {
        let jets: ArrayVec<Jet, MAX_PARAMS> = eta.iter().map(|&v| Jet::constant(v)).collect();
        let (e1, e2) = self.raw_moments(&self.params(&jets), kind);
        (e1, (e2 - e1 * e1).max(0.0))
    }

    /// For Poisson and geometric bases the row Hessian is affine in y and
    /// 1{y = 1}, so its expectation needs only E[Y] and P[Y = 1].
    fn expected_information_row(&self, eta: &[f64]) -> InfoBlock {
        if self.base == Base::NegBin {
            return super::information_by_summation(self, eta);
        }
        let jets = Jet::seed(eta);
        let params = self.params(&jets);
        let hess = |y| self.truncated(y, &params).h;
        let n = eta.len();
        let (mean, _) = self.raw_moments(&params, PmfType::Truncated);
        let mut out = [[0.0; MAX_PARAMS]; MAX_PARAMS];
        if self.variant == Variant::Zot {
            let (h2, h3) = (hess(2), hess(3));
            for a in 0..n {
                for c in 0..n {
                    let slope = h3[a][c] - h2[a][c];
                    let icpt = h2[a][c] - 2.0 * slope;
                    out[a][c] = -(icpt + slope * mean);
                }
            }
        } else {
            let p1 = self.truncated(1, &params).v.exp();
            let (h1, h2, h3) = (hess(1), hess(2), hess(3));
            for a in 0..n {
                for c in 0..n {
                    let slope = h3[a][c] - h2[a][c];
                    let icpt = h2[a][c] - 2.0 * slope;
                    let jump = h1[a][c] - icpt - slope;
                    out[a][c] = -(icpt + slope * mean + jump * p1);
                }
            }
        }
        out
    }

    fn with_link(&self, param: &str, link: Link) -> Result<Arc<dyn CountFamily>> {
        let idx = self
            .eta_names
            .iter()
            .position(|n| *n == param)
            .ok_or_else(|| Error::Family(format!("family '{}' has no parameter '{param}'", self.name)))?;
        if matches!(param, "omega" | "pi") && !link.is_probability() {
            return Err(Error::Family(format!(
                "link '{link}' does not map into (0, 1) as required for '{param}'"
            )));
        }
        let mut f = self.clone();
        f.links[idx] = link;
        Ok(Arc::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts(eta: &[f64]) -> Vec<Jet> {
        eta.iter().map(|&v| Jet::constant(v)).collect()
    }

    #[test]
    fn catalogue_names() {
        let names: Vec<String> = StandardFamily::all().iter().map(|f| f.name().to_string()).collect();
        assert_eq!(names.len(), 18);
        for n in ["ztpoisson", "zotgeom", "ztoinegbin", "oiztgeom", "ztHurdlepoisson", "Hurdleztnegbin"] {
            assert!(names.iter().any(|m| m == n), "{n}");
            assert_eq!(StandardFamily::from_name(n).unwrap().name(), n);
        }
        assert!(StandardFamily::from_name("ztbinomial").is_none());
    }

    #[test]
    fn ztpoisson_closed_form_at_lambda_one() {
        let f = StandardFamily::new(Variant::Zt, Base::Poisson);
        let e1 = std::f64::consts::E.recip();
        let v = f.ln_pmf_jet(1, &consts(&[0.0]), PmfType::Truncated).v;
        assert_relative_eq!(v, (e1 / (1.0 - e1)).ln(), max_relative = 1e-12);
        assert_relative_eq!(v, -0.541324854612918, max_relative = 1e-10);
        let (m, _) = f.mean_variance(&[0.0], PmfType::Truncated);
        assert_relative_eq!(m, 1.0 / (1.0 - e1), max_relative = 1e-12);
    }

    #[test]
    fn oizt_with_zero_inflation_is_zt() {
        let zt = StandardFamily::new(Variant::Zt, Base::Geometric);
        let oizt = StandardFamily::new(Variant::Oizt, Base::Geometric);
        for y in 1..10 {
            let a = zt.ln_pmf_jet(y, &consts(&[0.4]), PmfType::Truncated).v;
            let b = oizt.ln_pmf_jet(y, &consts(&[0.4, -60.0]), PmfType::Truncated).v;
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn hurdlezt_singleton_probability_matches_display() {
        // normalised by 1 - P1 - (1-π)P0, which reduces to the displayed
        // 1 - P0 - P1 form only when π = 1
        let f = StandardFamily::new(Variant::HurdleZt, Base::Poisson);
        let (lam, pi): (f64, f64) = (1.7, 0.3);
        let eta = [lam.ln(), (pi / (1.0 - pi)).ln()];
        let p0 = (-lam).exp();
        let p1 = lam * p0;
        let direct = pi * (1.0 - p1) / (1.0 - p1 - (1.0 - pi) * p0);
        assert_relative_eq!(
            f.ln_pmf_jet(1, &consts(&eta), PmfType::Truncated).v.exp(),
            direct,
            max_relative = 1e-12
        );
    }

    #[test]
    fn closed_form_moments_match_summation() {
        for f in StandardFamily::all() {
            let eta: Vec<f64> = match f.links.len() {
                1 => vec![0.6],
                2 => vec![0.6, -0.4],
                _ => vec![0.6, -0.4, 0.3],
            };
            for kind in [PmfType::Truncated, PmfType::Untruncated] {
                let closed = f.mean_variance(&eta, kind);
                let summed = super::super::moments_by_summation(&f, &eta, kind);
                assert_relative_eq!(closed.0, summed.0, max_relative = 1e-8);
                assert_relative_eq!(closed.1, summed.1, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn affine_information_matches_summation() {
        for f in StandardFamily::all() {
            let eta: Vec<f64> = match f.links.len() {
                1 => vec![-0.3],
                2 => vec![-0.3, 0.8],
                _ => vec![-0.3, 0.8, -1.1],
            };
            let a = f.expected_information_row(&eta);
            let b = super::super::information_by_summation(&f, &eta);
            for i in 0..eta.len() {
                for j in 0..eta.len() {
                    assert_relative_eq!(a[i][j], b[i][j], max_relative = 1e-8, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn relink_validates_parameter() {
        let f = StandardFamily::from_name("oiztgeom").unwrap();
        let g = f.with_link("omega", Link::Cloglog).unwrap();
        assert_eq!(g.links(), &[Link::Log, Link::Cloglog]);
        assert!(f.with_link("omega", Link::Log).is_err());
        assert!(f.with_link("alpha", Link::Log).is_err());
    }
}
