//! Run configuration: command-line flags layered over an optional flat
//! TOML file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::Deserialize;

use crate::CliError;

/// A list of numbers, given on the command line as `0.1,0.05` and in a
/// config file as a number, an array or the same comma-separated string.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "NumListRepr")]
pub struct NumList(pub Vec<f64>);

#[derive(Deserialize)]
#[serde(untagged)]
enum NumListRepr {
    One(f64),
    Many(Vec<f64>),
    Text(String),
}

impl TryFrom<NumListRepr> for NumList {
    type Error = String;
    fn try_from(r: NumListRepr) -> Result<Self, String> {
        match r {
            NumListRepr::One(x) => Ok(NumList(vec![x])),
            NumListRepr::Many(v) => Ok(NumList(v)),
            NumListRepr::Text(s) => s.parse(),
        }
    }
}

impl FromStr for NumList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
            .collect::<Result<Vec<_>, _>>()
            .map(NumList)
    }
}

macro_rules! overlay {
    ($ty:ident { $($f:ident),* $(,)? }) => {
        impl $ty {
            /// Fields set here win over those in `base`.
            pub fn over(self, base: $ty) -> $ty {
                $ty { $($f: self.$f.or(base.$f)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct ModelOpts {
    /// CSV file with one row per observed unit
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Family name, e.g. ztpoisson, oiztgeom, ztoinegbin
    #[arg(long)]
    pub family: Option<String>,
    /// Formula for lambda with the count response, e.g. "capture ~ gender + age"
    #[arg(long)]
    pub lambda: Option<String>,
    /// Right-hand-side formula for omega
    #[arg(long)]
    pub omega: Option<String>,
    /// Right-hand-side formula for pi
    #[arg(long)]
    pub pi: Option<String>,
    /// Right-hand-side formula for the dispersion alpha
    #[arg(long)]
    pub alpha_formula: Option<String>,
    /// Link for lambda: log or neglog
    #[arg(long)]
    pub lambda_link: Option<String>,
    /// Link for omega: logit, cloglog or probit
    #[arg(long)]
    pub omega_link: Option<String>,
    /// Link for pi: logit, cloglog or probit
    #[arg(long)]
    pub pi_link: Option<String>,
    /// Link for the dispersion alpha
    #[arg(long)]
    pub alpha_link: Option<String>,
    /// Column with prior weights (frequency counts)
    #[arg(long)]
    pub weights: Option<String>,
    /// irls or fallback
    #[arg(long)]
    pub method: Option<String>,
    /// Iteration limit for the fit
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative convergence tolerance for the log-likelihood
    #[arg(long)]
    pub tolerance: Option<f64>,
}

overlay!(ModelOpts {
    data, family, lambda, omega, pi, alpha_formula, lambda_link, omega_link, pi_link,
    alpha_link, weights, method, max_iter, tolerance,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct EstimateOpts {
    /// Significance level; strata accept one level per stratum
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<NumList>,
    /// Variance of the population size: analytic, bootstrap or skip
    #[arg(long = "var")]
    pub var: Option<String>,
    /// Coefficient covariance for the analytic variance: observed or expected
    #[arg(long)]
    pub cov: Option<String>,
    /// parametric, semiparametric or nonparametric
    #[arg(long)]
    pub boot_type: Option<String>,
    /// Number of bootstrap replicates
    #[arg(short = 'B', long)]
    pub replicates: Option<usize>,
    /// Seed for the bootstrap [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for bootstrap and leave-one-out refits [default: $SSCR_CORES or 1]
    #[arg(long)]
    pub cores: Option<usize>,
}

overlay!(EstimateOpts { alpha, var, cov, boot_type, replicates, seed, cores });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct OutputOpts {
    /// text or json
    #[arg(long)]
    pub format: Option<String>,
    /// Write the report here instead of standard output
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

overlay!(OutputOpts { format, output });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct StrataOpts {
    /// Formula such as "~ gender * age", selectors such as "gender==male & age==old; gender==female",
    /// or a comma-separated list of factors
    #[arg(long)]
    pub strata: Option<String>,
    /// CSV file holding a coefficient covariance matrix to use instead of the fitted one
    #[arg(long)]
    pub cov_file: Option<PathBuf>,
}

overlay!(StrataOpts { strata, cov_file });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct DiagnosticOpts {
    /// Degrees of freedom for the goodness-of-fit tests
    #[arg(long)]
    pub df: Option<usize>,
    /// Handling of cells with expected count below 5: group, drop or none
    #[arg(long)]
    pub drop5: Option<String>,
    /// exact or one-step
    #[arg(long)]
    pub dfbeta: Option<String>,
    /// Skip dfbeta and dfpopsize
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub skip_influence: Option<bool>,
}

overlay!(DiagnosticOpts { df, drop5, dfbeta, skip_influence });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SimulateOpts {
    /// Number of draws
    #[arg(long)]
    pub n: Option<usize>,
    /// Linear predictor values, one per family parameter
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<NumList>,
    /// CSV with one row per draw and one column per family parameter
    #[arg(long)]
    pub eta_file: Option<PathBuf>,
    /// Draw from the zero-truncated distribution
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub truncated: Option<bool>,
}

overlay!(SimulateOpts { n, eta, eta_file, truncated });

/// Everything a run can be configured with.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelOpts,
    #[serde(flatten)]
    pub estimate: EstimateOpts,
    #[serde(flatten)]
    pub output: OutputOpts,
    #[serde(flatten)]
    pub strata: StrataOpts,
    #[serde(flatten)]
    pub diagnostics: DiagnosticOpts,
    #[serde(flatten)]
    pub simulate: SimulateOpts,
}

const KNOWN_KEYS: &[&str] = &[
    "data", "family", "lambda", "omega", "pi", "alpha_formula", "lambda_link", "omega_link",
    "pi_link", "alpha_link", "weights", "method", "max_iter", "tolerance", "alpha", "var", "cov",
    "boot_type", "replicates", "seed", "cores", "format", "output", "strata", "cov_file", "df",
    "drop5", "dfbeta", "skip_influence", "n", "eta", "eta_file", "truncated",
];

impl RunConfig {
    pub fn over(self, base: RunConfig) -> RunConfig {
        RunConfig {
            model: self.model.over(base.model),
            estimate: self.estimate.over(base.estimate),
            output: self.output.over(base.output),
            strata: self.strata.over(base.strata),
            diagnostics: self.diagnostics.over(base.diagnostics),
            simulate: self.simulate.over(base.simulate),
        }
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        if let Some(bad) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(format!("unknown key '{bad}'"));
        }
        RunConfig::deserialize(table).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        // Relative paths in a config file are relative to the file.
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.model.data,
            &mut cfg.strata.cov_file,
            &mut cfg.simulate.eta_file,
            &mut cfg.output.output,
        ] {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = dir.join(&*q);
                }
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn num_list_forms() {
        let c = RunConfig::from_toml("alpha = 0.1").unwrap();
        assert_eq!(c.estimate.alpha, Some(NumList(vec![0.1])));
        let c = RunConfig::from_toml("alpha = [0.1, 0.05]").unwrap();
        assert_eq!(c.estimate.alpha, Some(NumList(vec![0.1, 0.05])));
        let c = RunConfig::from_toml("alpha = \"0.1, 0.05\"").unwrap();
        assert_eq!(c.estimate.alpha, Some(NumList(vec![0.1, 0.05])));
        assert!("0.1,x".parse::<NumList>().is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let file = RunConfig::from_toml("family = \"ztgeom\"\nseed = 5\nreplicates = 10").unwrap();
        let mut flags = RunConfig::default();
        flags.model.family = Some("ztpoisson".into());
        let m = flags.over(file);
        assert_eq!(m.model.family.as_deref(), Some("ztpoisson"));
        assert_eq!(m.estimate.seed, Some(5));
        assert_eq!(m.estimate.replicates, Some(10));
    }

    #[test]
    fn unknown_key_rejected() {
        let e = RunConfig::from_toml("famly = \"ztpoisson\"").unwrap_err();
        assert!(e.contains("famly"));
    }
}
