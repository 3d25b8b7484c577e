//! Report structures shared by the JSON and text renderers.

use std::fmt::Write;

use serde::Serialize;
use sscr::bootstrap::BootType;
use sscr::diagnostics::{FreqRow, GofResult, RootogramBar};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl From<(f64, f64)> for Interval {
    fn from((lower, upper): (f64, f64)) -> Self {
        Interval { lower, upper }
    }
}

/// Five-number summary plus the mean.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics (R's default type).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    /// Ignores non-finite values.
    pub fn of(values: &[f64]) -> Summary {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        Summary {
            min: quantile(&v, 0.0),
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            mean,
            q3: quantile(&v, 0.75),
            max: quantile(&v, 1.0),
        }
    }

    fn values(&self) -> [f64; 6] {
        [self.min, self.q1, self.median, self.mean, self.q3, self.max]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSpec {
    pub parameter: String,
    pub formula: String,
    pub link: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefGroup {
    pub parameter: String,
    pub rows: Vec<CoefRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub family: String,
    pub parameters: Vec<ParamSpec>,
    pub n_obs: usize,
    pub method: String,
    pub pearson_residuals: Summary,
    pub coefficients: Vec<CoefGroup>,
    pub aic: f64,
    pub bic: f64,
    pub deviance: f64,
    pub log_likelihood: f64,
    pub df_residual: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootSummary {
    pub boot_type: BootType,
    pub replicates: usize,
    pub failures: usize,
    pub variance: f64,
    pub se: f64,
    pub skewness: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PopReport {
    pub point: f64,
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub alpha: f64,
    pub observed: f64,
    pub observed_percent: f64,
    pub ci_normal: Option<Interval>,
    pub ci_lognormal: Option<Interval>,
    pub ci_percentile: Option<Interval>,
    pub observed_percent_ci_normal: Option<Interval>,
    pub observed_percent_ci_lognormal: Option<Interval>,
    pub bootstrap: Option<BootSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumRow {
    pub name: String,
    pub observed: f64,
    pub estimated: f64,
    pub variance: f64,
    pub se: f64,
    pub ci_normal: Interval,
    pub ci_lognormal: Interval,
    pub conf_level: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DfbetaQuantiles {
    pub name: String,
    /// 0, 25, 50, 75 and 100 percent quantiles, times 100.
    pub quantiles_x100: [f64; 5],
}

#[derive(Debug, Clone, Serialize)]
pub struct Influence {
    pub mode: String,
    pub dfbeta: Vec<DfbetaQuantiles>,
    pub dfpopsize: Summary,
    pub failed_refits: usize,
    /// Per observation, in data order.
    pub dfpopsize_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagReport {
    pub marginal: Vec<FreqRow>,
    pub tail_expected: f64,
    pub gof: GofResult,
    pub drop5: String,
    pub deviance_residuals: Summary,
    pub rootogram: Vec<RootogramBar>,
    pub influence: Option<Influence>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub call: String,
    pub model: ModelSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub popsize: Option<PopReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<StratumRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagReport>,
    pub warnings: Vec<String>,
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        format!("{x:.4}")
    }
}

pub fn stars(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => "",
    }
}

/// First column left-aligned, the rest right-aligned.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (j, c) in r.iter().enumerate().take(ncol) {
            width[j] = width[j].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j == 0 {
                write!(s, "{c:<w$}", w = width[0]).unwrap();
            } else {
                write!(s, "  {c:>w$}", w = width[j]).unwrap();
            }
        }
        // Trailing columns beyond the header (stars) go unpadded.
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for r in rows {
        let mut cells: Vec<&str> = r.iter().take(ncol).map(String::as_str).collect();
        cells.resize(ncol, "");
        let mut l = line(cells);
        if r.len() > ncol {
            l.pop();
            l.push(' ');
            l.push_str(&r[ncol..].join(" "));
            l.push('\n');
        }
        out.push_str(&l);
    }
    out
}

fn summary_table(s: &Summary) -> String {
    let row: Vec<String> = std::iter::once(String::new()).chain(s.values().iter().map(|&x| num(x))).collect();
    table(&["", "Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max."], &[row])
}

fn level(alpha: f64) -> String {
    let pct = 100.0 * (1.0 - alpha);
    let s = format!("{pct:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string() + "%"
}

fn interval_rows(rows: &[(&str, Option<Interval>)]) -> Vec<Vec<String>> {
    rows.iter()
        .filter_map(|(name, iv)| iv.map(|i| vec![name.to_string(), num(i.lower), num(i.upper)]))
        .collect()
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "Call:\n{}\n", self.call).unwrap();
        self.model_text(&mut out);
        if let Some(p) = &self.popsize {
            popsize_text(&mut out, p);
        }
        if let Some(s) = &self.strata {
            strata_text(&mut out, s);
        }
        if let Some(d) = &self.diagnostics {
            diagnostics_text(&mut out, d);
        }
        if !self.warnings.is_empty() {
            out.push_str("\nWarnings:\n");
            for w in &self.warnings {
                writeln!(out, "  {w}").unwrap();
            }
        }
        out
    }

    fn model_text(&self, out: &mut String) {
        let m = &self.model;
        writeln!(out, "Family: {}", m.family).unwrap();
        for p in &m.parameters {
            writeln!(out, "  {}: {} (link: {})", p.parameter, p.formula, p.link).unwrap();
        }
        writeln!(out, "\nPearson Residuals:").unwrap();
        out.push_str(&summary_table(&m.pearson_residuals));
        writeln!(out, "\nCoefficients:\n-----------------------").unwrap();
        for g in &m.coefficients {
            writeln!(out, "For linear predictors associated with: {}", g.parameter).unwrap();
            let rows: Vec<Vec<String>> = g
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        num(r.estimate),
                        num(r.std_error),
                        num(r.z_value),
                        num(r.p_value),
                        stars(r.p_value).to_string(),
                    ]
                })
                .collect();
            out.push_str(&table(&["", "Estimate", "Std. Error", "z value", "P(>|z|)"], &rows));
        }
        writeln!(out, "---\nSignif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n").unwrap();
        writeln!(out, "AIC: {}", num(m.aic)).unwrap();
        writeln!(out, "BIC: {}", num(m.bic)).unwrap();
        writeln!(out, "Residual deviance: {}\n", num(m.deviance)).unwrap();
        writeln!(out, "Log-likelihood: {} on {} Degrees of freedom", num(m.log_likelihood), m.df_residual).unwrap();
        let conv = if m.converged { "" } else { " (not converged)" };
        writeln!(out, "Number of iterations: {}{conv}", m.iterations).unwrap();
        writeln!(out, "-----------------------").unwrap();
    }
}

fn popsize_text(out: &mut String, p: &PopReport) {
    writeln!(out, "Population size estimation results:").unwrap();
    writeln!(out, "Point estimate: {}", num(p.point)).unwrap();
    writeln!(out, "Observed proportion: {}% (N obs = {})", num(p.observed_percent), num(p.observed)).unwrap();
    match (p.se, &p.bootstrap) {
        (Some(se), Some(b)) => {
            writeln!(out, "Bootstrap sample size: {} ({} failed)", b.replicates, b.failures).unwrap();
            writeln!(out, "Bootstrap type: {}", serde_json::to_value(b.boot_type).unwrap().as_str().unwrap_or("")).unwrap();
            writeln!(out, "Std. Error: {}", num(se)).unwrap();
            writeln!(out, "Bootstrap skewness: {}", num(b.skewness)).unwrap();
        }
        (Some(se), None) => writeln!(out, "Std. Error: {}", num(se)).unwrap(),
        (None, _) => writeln!(out, "Std. Error: not computed").unwrap(),
    }
    let lv = level(p.alpha);
    let rows = interval_rows(&[
        ("normal", p.ci_normal),
        ("logNormal", p.ci_lognormal),
        ("percentile", p.ci_percentile),
    ]);
    if !rows.is_empty() {
        writeln!(out, "{lv} CI for the population size:").unwrap();
        out.push_str(&table(&["", "lowerBound", "upperBound"], &rows));
    }
    let rows = interval_rows(&[
        ("normal", p.observed_percent_ci_normal),
        ("logNormal", p.observed_percent_ci_lognormal),
    ]);
    if !rows.is_empty() {
        writeln!(out, "{lv} CI for the share of the population observed:").unwrap();
        out.push_str(&table(&["", "lowerBound", "upperBound"], &rows));
    }
}

fn strata_text(out: &mut String, s: &[StratumRow]) {
    writeln!(out, "\nPopulation size by strata (log-normal intervals):").unwrap();
    let rows: Vec<Vec<String>> = s
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                num(r.observed),
                num(r.estimated),
                num(r.ci_lognormal.lower),
                num(r.ci_lognormal.upper),
                num(r.conf_level),
            ]
        })
        .collect();
    out.push_str(&table(&["Name", "Obs", "Estimated", "LowerBound", "UpperBound", "confLevel"], &rows));
}

fn diagnostics_text(out: &mut String, d: &DiagReport) {
    writeln!(out, "\nMarginal frequencies:").unwrap();
    let rows: Vec<Vec<String>> = d
        .marginal
        .iter()
        .map(|r| vec![r.k.to_string(), num(r.observed), num(r.expected)])
        .collect();
    out.push_str(&table(&["k", "Observed", "Expected"], &rows));
    writeln!(out, "Expected beyond the largest observed count: {}", num(d.tail_expected)).unwrap();

    writeln!(out, "\nTest for Goodness of fit of a regression model:").unwrap();
    let g = &d.gof;
    let rows = vec![
        vec!["Chi-squared test".to_string(), num(g.chi_sq), g.df.to_string(), num(g.chi_sq_p)],
        vec!["G-test".to_string(), num(g.g), g.df.to_string(), num(g.g_p)],
    ];
    out.push_str(&table(&["", "Test statistics", "df", "P(>X^2)"], &rows));
    let how = match d.drop5.as_str() {
        "group" => "Cells with fitted frequencies of < 5 have been grouped",
        "drop" => "Cells with fitted frequencies of < 5 have been dropped",
        _ => "All cells used",
    };
    writeln!(out, "{how}").unwrap();
    writeln!(out, "Names of cells used in calculating test(s) statistic: {}", g.cells.join(" ")).unwrap();

    writeln!(out, "\nDeviance residuals:").unwrap();
    out.push_str(&summary_table(&d.deviance_residuals));

    writeln!(out, "\nRootogram:").unwrap();
    let rows: Vec<Vec<String>> = d
        .rootogram
        .iter()
        .map(|b| vec![b.k.to_string(), num(b.sqrt_observed), num(b.sqrt_expected), num(b.bottom)])
        .collect();
    out.push_str(&table(&["k", "sqrt(Observed)", "sqrt(Expected)", "Bottom"], &rows));

    if let Some(inf) = &d.influence {
        writeln!(out, "\ndfbeta quantiles x 100 ({}):", inf.mode).unwrap();
        let rows: Vec<Vec<String>> = inf
            .dfbeta
            .iter()
            .map(|q| std::iter::once(q.name.clone()).chain(q.quantiles_x100.iter().map(|&x| num(x))).collect())
            .collect();
        out.push_str(&table(&["", "0%", "25%", "50%", "75%", "100%"], &rows));
        if inf.failed_refits > 0 {
            writeln!(out, "Refits that failed and were left out: {}", inf.failed_refits).unwrap();
        }
        writeln!(out, "\ndfpopsize:").unwrap();
        out.push_str(&summary_table(&inf.dfpopsize));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, f64::NAN]);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.q3, 3.25);
        assert_eq!(s.max, 4.0);
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.001), "**");
        assert_eq!(stars(0.049), "*");
        assert_eq!(stars(0.05), ".");
        assert_eq!(stars(0.1), "");
    }

    #[test]
    fn levels_and_numbers() {
        assert_eq!(level(0.05), "95%");
        assert_eq!(level(0.1), "90%");
        assert_eq!(level(0.025), "97.5%");
        assert_eq!(num(1.0 / 3.0), "0.3333");
        assert_eq!(num(f64::NAN), "NaN");
    }

    #[test]
    fn table_aligns() {
        let t = table(&["", "a", "bb"], &[vec!["x".into(), "1.0".into(), "2".into(), "**".into()]]);
        assert_eq!(t, "     a  bb\nx  1.0   2 **\n");
    }
}
