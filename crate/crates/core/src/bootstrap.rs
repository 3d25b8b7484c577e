//! Bootstrap variance and percentile intervals for N̂.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Binomial};
use serde::{Deserialize, Serialize};

use crate::design::DesignBlocks;
use crate::error::{Error, Result};
use crate::families::{CountFamily, PmfType};
use crate::fitting::{fit, FitControl, FitResult};
use crate::parallel::{map_indices, Progress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootType {
    Parametric,
    Semiparametric,
    Nonparametric,
}

impl std::str::FromStr for BootType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(BootType::Parametric),
            "semiparametric" => Ok(BootType::Semiparametric),
            "nonparametric" => Ok(BootType::Nonparametric),
            _ => Err(Error::InvalidInput(format!("unknown bootstrap type '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootControl {
    pub boot_type: BootType,
    pub replicates: usize,
    pub alpha: f64,
    pub cores: usize,
    pub seed: u64,
    pub keep_replicates: bool,
    /// Control for replicate refits, which warm-start at β̂.
    pub fit_control: FitControl,
}

impl Default for BootControl {
    fn default() -> Self {
        BootControl {
            boot_type: BootType::Parametric,
            replicates: 500,
            alpha: 0.05,
            cores: 1,
            seed: 1,
            keep_replicates: true,
            fit_control: FitControl {
                max_iter: 50,
                ..FitControl::irls()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootResult {
    pub boot_type: BootType,
    pub replicates: Vec<f64>,
    /// Observed sample size of each successful replicate.
    pub sample_sizes: Vec<usize>,
    pub failures: usize,
    pub variance: f64,
    pub se: f64,
    pub ci_percentile: Option<(f64, f64)>,
    pub skewness: f64,
}

/// Empirical quantiles at α/2 and 1 − α/2, interpolating linearly between
/// order statistics at position (B − 1)q + 1.
pub fn percentile_ci(replicates: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if replicates.len() < 10 {
        return Err(Error::Bootstrap(format!(
            "at least 10 replicates are needed for a percentile interval, got {}",
            replicates.len()
        )));
    }
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = (s.len() - 1) as f64 * p;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    Ok((q(alpha / 2.0), q(1.0 - alpha / 2.0)))
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let var = if x.len() > 1 { m2 * n / (n - 1.0) } else { 0.0 };
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (var, skew)
}

/// ⌊N̂⌋ + Bernoulli(N̂ − ⌊N̂⌋)
fn draw_population_size(point: f64, rng: &mut ChaCha8Rng) -> u64 {
    let fl = point.floor();
    let frac = point - fl;
    let extra = frac > 0.0 && Bernoulli::new(frac).map(|b| b.sample(rng)).unwrap_or(false);
    fl as u64 + extra as u64
}

/// Refits on a replicate design, warm-started, and re-estimates N.
pub fn refit_estimate(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    start: &DVector<f64>,
    control: &FitControl,
) -> Result<f64> {
    let f = fit(design, family, Some(start), control)?;
    if !f.converged {
        return Err(Error::Fit("replicate fit did not converge".into()));
    }
    family.point_estimate(&design.y, &f.eta, &design.weights)
}

/// Builds one replicate sample.
fn replicate_design(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    contributions: &[f64],
    point: f64,
    boot_type: BootType,
    rng: &mut ChaCha8Rng,
) -> Result<DesignBlocks> {
    let n = design.n();
    match boot_type {
        BootType::Nonparametric => {
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            Ok(design.subset(&rows))
        }
        BootType::Semiparametric => {
            let n_pop = draw_population_size(point, rng);
            let n_obs = design.observed();
            let p = (n_obs / n_pop as f64).min(1.0);
            let n_new = Binomial::new(n_pop, p)
                .map_err(|e| Error::Bootstrap(e.to_string()))?
                .sample(rng) as usize;
            if n_new == 0 {
                return Err(Error::Bootstrap("replicate drew no observed units".into()));
            }
            let rows: Vec<usize> = if n_new <= n {
                rand::seq::index::sample(rng, n, n_new).into_vec()
            } else {
                (0..n_new).map(|_| rng.random_range(0..n)).collect()
            };
            Ok(design.subset(&rows))
        }
        BootType::Parametric => {
            let n_pop = draw_population_size(point, rng) as usize;
            let probs: Vec<f64> = contributions
                .iter()
                .zip(&design.weights)
                .map(|(c, w)| c * w)
                .collect();
            let dist = WeightedIndex::new(&probs).map_err(|e| Error::Bootstrap(e.to_string()))?;
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for _ in 0..n_pop {
                let k = dist.sample(rng);
                let eta: Vec<f64> = fitted.eta.row(k).iter().copied().collect();
                let y = family.simulate_one(&eta, PmfType::Untruncated, rng);
                if y >= family.min_count() {
                    rows.push(k);
                    ys.push(y);
                }
            }
            if rows.is_empty() {
                return Err(Error::Bootstrap("every simulated count was unobserved".into()));
            }
            let mut d = design.subset(&rows);
            d.y = ys;
            Ok(d)
        }
    }
}

/// Runs the bootstrap around a fitted model with point estimate `point`.
pub fn bootstrap(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    point: f64,
    control: &BootControl,
    progress: Option<Progress<'_>>,
) -> Result<BootResult> {
    if control.replicates == 0 || control.cores == 0 {
        return Err(Error::InvalidInput("replicates and cores must be at least 1".into()));
    }
    let contributions = family.contributions(&design.y, &fitted.eta)?;
    let results = map_indices(control.replicates, control.cores, progress, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(control.seed);
        rng.set_stream(i as u64);
        let d = replicate_design(design, family, fitted, &contributions, point, control.boot_type, &mut rng)?;
        let est = refit_estimate(&d, family, &fitted.beta, &control.fit_control)?;
        Ok::<_, Error>((est, d.n()))
    });
    let mut replicates = Vec::with_capacity(results.len());
    let mut sample_sizes = Vec::with_capacity(results.len());
    let mut failures = 0;
    for r in results {
        match r {
            Ok((est, n)) => {
                replicates.push(est);
                sample_sizes.push(n);
            }
            Err(e) => {
                log::debug!("bootstrap replicate dropped: {e}");
                failures += 1;
            }
        }
    }
    if failures * 2 > control.replicates {
        return Err(Error::Bootstrap(format!(
            "{failures} of {} replicates failed",
            control.replicates
        )));
    }
    if failures > 0 {
        log::warn!("{failures} of {} bootstrap replicates failed and were dropped", control.replicates);
    }
    let (variance, skewness) = moments(&replicates);
    let ci_percentile = percentile_ci(&replicates, control.alpha).ok();
    Ok(BootResult {
        boot_type: control.boot_type,
        replicates: if control.keep_replicates { replicates } else { Vec::new() },
        sample_sizes,
        failures,
        variance,
        se: variance.sqrt(),
        ci_percentile,
        skewness,
    })
}

pub fn bootstrap_parametric(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    point: f64,
    control: &BootControl,
) -> Result<BootResult> {
    let c = BootControl {
        boot_type: BootType::Parametric,
        ..control.clone()
    };
    bootstrap(design, family, fitted, point, &c, None)
}

pub fn bootstrap_semiparametric(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    point: f64,
    control: &BootControl,
) -> Result<BootResult> {
    let c = BootControl {
        boot_type: BootType::Semiparametric,
        ..control.clone()
    };
    bootstrap(design, family, fitted, point, &c, None)
}

pub fn bootstrap_nonparametric(
    design: &DesignBlocks,
    family: &dyn CountFamily,
    fitted: &FitResult,
    point: f64,
    control: &BootControl,
) -> Result<BootResult> {
    let c = BootControl {
        boot_type: BootType::Nonparametric,
        ..control.clone()
    };
    bootstrap(design, family, fitted, point, &c, None)
}
