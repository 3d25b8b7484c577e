//! The subcommands: build the model from a resolved configuration, run
//! the estimation and write the report.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use sscr::bootstrap::{bootstrap as run_bootstrap, BootControl, BootType};
use sscr::dataset::{read_csv, Column, Dataset};
use sscr::diagnostics::{
    deviance_residuals, dfbeta, dfpopsize, gof_tests, information_criteria, marginal_freq, pearson_residuals,
    rootogram_data, DfbetaMode, Drop5,
};
use sscr::families::{family as lookup_family, CountFamily, PmfType};
use sscr::fitting::{coefficient_covariance, fit as fit_model, CovType, FitControl, FitResult, Method};
use sscr::formula::parse_formula;
use sscr::links::{norm_cdf, Link};
use sscr::model_frame::{ModelFrame, ModelSpec};
use sscr::popsize::{popsize_from_fit, stratify_popsize, summarize, PopSizeEstimate, StrataSpec};

use crate::config::RunConfig;
use crate::report::{
    quantile, BootSummary, CoefGroup, CoefRow, DfbetaQuantiles, DiagReport, Influence, ModelSummary, ParamSpec,
    PopReport, Report, StratumRow, Summary, SCHEMA_VERSION,
};
use crate::CliError;

type CliResult<T> = Result<T, CliError>;

/// Parameter names paired with their link override, if any.
fn link_overrides(cfg: &RunConfig) -> [(&'static str, Option<&str>); 4] {
    let m = &cfg.model;
    [
        ("lambda", m.lambda_link.as_deref()),
        ("omega", m.omega_link.as_deref()),
        ("pi", m.pi_link.as_deref()),
        ("alpha", m.alpha_link.as_deref()),
    ]
}

fn build_family(cfg: &RunConfig) -> CliResult<Arc<dyn CountFamily>> {
    let name = cfg
        .model
        .family
        .as_deref()
        .ok_or_else(|| CliError::usage("no family given (use --family)"))?;
    let mut fam = lookup_family(name).map_err(|e| {
        CliError::usage(format!("{e}; available: {}", sscr::families::family_names().join(", ")))
    })?;
    for (param, link) in link_overrides(cfg) {
        if let Some(link) = link {
            if !fam.eta_names().contains(&param) {
                return Err(CliError::usage(format!("family '{name}' has no parameter '{param}'")));
            }
            fam = fam.with_link(param, link.parse::<Link>()?)?;
        }
    }
    Ok(fam)
}

fn fit_control(cfg: &RunConfig) -> CliResult<FitControl> {
    let mut c = match cfg.model.method.as_deref().unwrap_or("irls") {
        "irls" => FitControl::irls(),
        "fallback" | "bfgs" => FitControl::fallback(),
        m => return Err(CliError::usage(format!("unknown fitting method '{m}' (irls or fallback)"))),
    };
    if let Some(n) = cfg.model.max_iter {
        c.max_iter = n;
    }
    if let Some(t) = cfg.model.tolerance {
        c.tolerance = t;
    }
    Ok(c)
}

fn cores(cfg: &RunConfig) -> CliResult<usize> {
    let n = match cfg.estimate.cores {
        Some(n) => n,
        None => match std::env::var("SSCR_CORES") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("SSCR_CORES must be a positive integer, got '{v}'")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(CliError::usage("cores must be at least 1"));
    }
    Ok(n)
}

fn alphas(cfg: &RunConfig) -> Vec<f64> {
    cfg.estimate.alpha.as_ref().map(|a| a.0.clone()).unwrap_or_else(|| vec![0.05])
}

/// The single significance level used outside strata.
fn alpha(cfg: &RunConfig) -> CliResult<f64> {
    match alphas(cfg).as_slice() {
        [a] => Ok(*a),
        _ => Err(CliError::usage("a list of significance levels is only accepted by strata")),
    }
}

fn numeric_column<'a>(data: &'a Dataset, name: &str) -> CliResult<&'a [Option<f64>]> {
    match data.require(name)? {
        Column::Numeric(v) => Ok(v),
        Column::Categorical(_) => Err(CliError::usage(format!("column '{name}' must be numeric"))),
    }
}

struct Fitted {
    frame: ModelFrame,
    family: Arc<dyn CountFamily>,
    fit: FitResult,
    params: Vec<ParamSpec>,
}

fn fit_from_config(cfg: &RunConfig) -> CliResult<Fitted> {
    let family = build_family(cfg)?;
    let path = cfg
        .model
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("no data file given (use --data)"))?;
    let data = read_csv(path, None)?;
    let lambda = cfg
        .model
        .lambda
        .as_deref()
        .ok_or_else(|| CliError::usage("no formula for lambda given (use --lambda)"))?;
    let mut spec = ModelSpec::new(parse_formula(lambda)?);
    for (param, text) in [
        ("omega", &cfg.model.omega),
        ("pi", &cfg.model.pi),
        ("alpha", &cfg.model.alpha_formula),
    ] {
        if let Some(t) = text {
            spec = spec.with(param, parse_formula(t)?);
        }
    }
    let mut frame = ModelFrame::build(&data, family.as_ref(), &spec)?;
    if let Some(wname) = &cfg.model.weights {
        let col = numeric_column(&frame.data, wname)?;
        let w = col
            .iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| CliError::usage(format!("missing weight in row {}", frame.kept_rows[i] + 1))))
            .collect::<CliResult<Vec<f64>>>()?;
        frame.design = frame.design.clone().with_weights(w)?;
    }
    let control = fit_control(cfg)?;
    let fit = fit_model(&frame.design, family.as_ref(), None, &control)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    let params = frame
        .formulas
        .iter()
        .zip(family.links())
        .map(|((p, f), l)| ParamSpec {
            parameter: p.clone(),
            formula: f.to_string(),
            link: l.to_string(),
        })
        .collect();
    Ok(Fitted { frame, family, fit, params })
}

fn model_summary(f: &Fitted) -> ModelSummary {
    let design = &f.frame.design;
    let fam = f.family.as_ref();
    let mut k = 0;
    let coefficients = f
        .frame
        .formulas
        .iter()
        .zip(&design.names)
        .map(|((param, _), names)| CoefGroup {
            parameter: param.clone(),
            rows: names
                .iter()
                .map(|name| {
                    let estimate = f.fit.beta[k];
                    let std_error = f.fit.beta_cov[(k, k)].sqrt();
                    let z_value = estimate / std_error;
                    k += 1;
                    CoefRow {
                        name: name.clone(),
                        estimate,
                        std_error,
                        z_value,
                        p_value: 2.0 * norm_cdf(-z_value.abs()),
                    }
                })
                .collect(),
        })
        .collect();
    let ic = information_criteria(design, fam, &f.fit);
    ModelSummary {
        family: fam.name().to_string(),
        parameters: f.params.clone(),
        n_obs: design.n(),
        method: match f.fit.method {
            Method::Irls => "irls".into(),
            Method::Fallback => "fallback".into(),
        },
        pearson_residuals: Summary::of(&pearson_residuals(design, fam, &f.fit)),
        coefficients,
        aic: ic.aic,
        bic: ic.bic,
        deviance: ic.deviance,
        log_likelihood: f.fit.log_lik,
        df_residual: f.fit.df_residual(),
        iterations: f.fit.iterations,
        converged: f.fit.converged,
    }
}

fn cov_type(cfg: &RunConfig) -> CliResult<CovType> {
    match cfg.estimate.cov.as_deref().unwrap_or("observed") {
        "observed" => Ok(CovType::Observed),
        "expected" => Ok(CovType::Expected),
        c => Err(CliError::usage(format!("unknown covariance type '{c}' (observed or expected)"))),
    }
}

fn boot_control(cfg: &RunConfig, alpha: f64) -> CliResult<BootControl> {
    let boot_type: BootType = cfg.estimate.boot_type.as_deref().unwrap_or("parametric").parse()?;
    Ok(BootControl {
        boot_type,
        replicates: cfg.estimate.replicates.unwrap_or(500),
        alpha,
        cores: cores(cfg)?,
        seed: cfg.estimate.seed.unwrap_or(1),
        keep_replicates: true,
        ..BootControl::default()
    })
}

fn progress_logger(what: &'static str, total: usize) -> impl Fn(usize) + Sync {
    let step = (total / 10).max(1);
    move |done: usize| {
        if done.is_multiple_of(step) || done == total {
            log::info!("{what}: {done}/{total}");
        }
    }
}

fn estimate(f: &Fitted, cfg: &RunConfig, force_bootstrap: bool) -> CliResult<PopSizeEstimate> {
    let design = &f.frame.design;
    let fam = f.family.as_ref();
    let alpha = alpha(cfg)?;
    let var = if force_bootstrap { "bootstrap" } else { cfg.estimate.var.as_deref().unwrap_or("analytic") };
    match var {
        "analytic" => {
            let cov = coefficient_covariance(&f.fit, design, fam, cov_type(cfg)?)?;
            Ok(popsize_from_fit(design, fam, &f.fit, &cov, alpha)?)
        }
        "skip" => {
            let point = fam.point_estimate(&design.y, &f.fit.eta, &design.weights)?;
            Ok(summarize(point, None, design.observed(), alpha)?)
        }
        "bootstrap" => {
            let point = fam.point_estimate(&design.y, &f.fit.eta, &design.weights)?;
            let bc = boot_control(cfg, alpha)?;
            let progress = progress_logger("bootstrap", bc.replicates);
            let boot = run_bootstrap(design, fam, &f.fit, point, &bc, Some(&progress))?;
            let mut e = summarize(point, Some(boot.variance), design.observed(), alpha)?;
            e.ci_percentile = boot.ci_percentile;
            e.boot = Some(boot);
            Ok(e)
        }
        v => Err(CliError::usage(format!("unknown variance method '{v}' (analytic, bootstrap or skip)"))),
    }
}

fn pop_report(e: PopSizeEstimate) -> PopReport {
    PopReport {
        point: e.point,
        variance: e.variance,
        se: e.se,
        alpha: e.alpha,
        observed: e.observed,
        observed_percent: e.observed_percent,
        ci_normal: e.ci_normal.map(Into::into),
        ci_lognormal: e.ci_lognormal.map(Into::into),
        ci_percentile: e.ci_percentile.map(Into::into),
        observed_percent_ci_normal: e.observed_percent_ci_normal.map(Into::into),
        observed_percent_ci_lognormal: e.observed_percent_ci_lognormal.map(Into::into),
        bootstrap: e.boot.map(|b| BootSummary {
            boot_type: b.boot_type,
            replicates: b.replicates.len(),
            failures: b.failures,
            variance: b.variance,
            se: b.se,
            skewness: b.skewness,
            values: b.replicates,
        }),
    }
}

fn base_report(command: &str, call: String, f: &Fitted) -> Report {
    Report {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        call,
        model: model_summary(f),
        popsize: None,
        strata: None,
        diagnostics: None,
        warnings: f.fit.warnings.clone(),
    }
}

fn write_output(cfg: &RunConfig, text: &str) -> CliResult<()> {
    match &cfg.output.output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(format!("cannot write to standard output: {e}"))),
    }
}

/// Writes the report and returns whether the fit converged.
fn emit(cfg: &RunConfig, report: &Report) -> CliResult<bool> {
    let text = match cfg.output.format.as_deref().unwrap_or("text") {
        "text" => report.to_text(),
        "json" => report.to_json(),
        f => return Err(CliError::usage(format!("unknown output format '{f}' (text or json)"))),
    };
    write_output(cfg, &text)?;
    Ok(report.model.converged)
}

pub fn fit(cfg: &RunConfig, call: String) -> CliResult<bool> {
    let f = fit_from_config(cfg)?;
    let mut report = base_report("fit", call, &f);
    report.popsize = Some(pop_report(estimate(&f, cfg, false)?));
    emit(cfg, &report)
}

pub fn bootstrap(cfg: &RunConfig, call: String, replicates_out: Option<&Path>) -> CliResult<bool> {
    let f = fit_from_config(cfg)?;
    let mut report = base_report("bootstrap", call, &f);
    let pop = pop_report(estimate(&f, cfg, true)?);
    if let (Some(path), Some(b)) = (replicates_out, &pop.bootstrap) {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        let io = |e: csv::Error| CliError::io(format!("cannot write {}: {e}", path.display()));
        w.write_record(["replicate", "estimate"]).map_err(io)?;
        for (i, v) in b.values.iter().enumerate() {
            w.write_record([(i + 1).to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    }
    report.popsize = Some(pop);
    emit(cfg, &report)
}

/// Strata from a formula ("~ a + b:c"), selectors ("a==x & b==y; a==z")
/// or a comma-separated list of factors.
fn strata_spec(text: Option<&str>, data: &Dataset) -> CliResult<StrataSpec> {
    match text.map(str::trim) {
        None | Some("") => Ok(StrataSpec::Default),
        Some(t) if t.contains('~') => Ok(StrataSpec::Formula(parse_formula(t)?)),
        Some(t) if t.contains("==") || t.contains("!=") => t
            .split(';')
            .map(str::trim)
            .filter(|e| !e.is_empty())
            .map(|e| Ok((e.to_string(), selector_mask(e, data)?)))
            .collect::<CliResult<Vec<_>>>()
            .map(StrataSpec::Selectors),
        Some(t) => Ok(StrataSpec::Variables(t.split(',').map(|v| v.trim().to_string()).collect())),
    }
}

/// Rows matching every `var==value` or `var!=value` condition joined by `&`.
fn selector_mask(expr: &str, data: &Dataset) -> CliResult<Vec<bool>> {
    let mut mask = vec![true; data.n_rows()];
    for cond in expr.split('&').map(str::trim) {
        let (var, value, equal) = if let Some((v, x)) = cond.split_once("==") {
            (v.trim(), x.trim(), true)
        } else if let Some((v, x)) = cond.split_once("!=") {
            (v.trim(), x.trim(), false)
        } else {
            return Err(CliError::usage(format!("bad strata condition '{cond}' (expected var==value)")));
        };
        let value = value.trim_matches(|c| c == '"' || c == '\'');
        let hit: Vec<bool> = match data.require(var)? {
            Column::Categorical(c) => (0..data.n_rows()).map(|r| c.value(r) == Some(value)).collect(),
            Column::Numeric(v) => {
                let x: f64 = value
                    .parse()
                    .map_err(|_| CliError::usage(format!("'{value}' is not a number in strata condition '{cond}'")))?;
                v.iter().map(|o| *o == Some(x)).collect()
            }
        };
        for (m, h) in mask.iter_mut().zip(hit) {
            *m &= h == equal;
        }
    }
    Ok(mask)
}

/// A square matrix of numbers, with or without a header row.
fn read_matrix(path: &Path, dim: usize) -> CliResult<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(CliError::usage(format!("{}: row {} is not numeric", path.display(), i + 1)))
            }
        }
    }
    // A leading label column makes the rows one longer than the matrix.
    for r in rows.iter_mut() {
        if r.len() == dim + 1 {
            r.remove(0);
        }
    }
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::usage(format!(
            "{}: expected a {dim} x {dim} covariance matrix",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

pub fn strata(cfg: &RunConfig, call: String) -> CliResult<bool> {
    let f = fit_from_config(cfg)?;
    let spec = strata_spec(cfg.strata.strata.as_deref(), &f.frame.data)?;
    let cov = match &cfg.strata.cov_file {
        Some(p) => Some(read_matrix(p, f.fit.beta.len())?),
        None => match cfg.estimate.cov.as_deref() {
            Some(_) => Some(coefficient_covariance(&f.fit, &f.frame.design, f.family.as_ref(), cov_type(cfg)?)?),
            None => None,
        },
    };
    let rows = stratify_popsize(&f.frame, f.family.as_ref(), &f.fit, &spec, &alphas(cfg), cov.as_ref())?;
    let mut report = base_report("strata", call, &f);
    report.strata = Some(
        rows.into_iter()
            .map(|s| StratumRow {
                name: s.name,
                observed: s.observed,
                estimated: s.estimated,
                variance: s.variance,
                se: s.variance.max(0.0).sqrt(),
                ci_normal: s.ci_normal.into(),
                ci_lognormal: s.ci_lognormal.into(),
                conf_level: s.conf_level,
            })
            .collect(),
    );
    emit(cfg, &report)
}

pub fn diagnostics(cfg: &RunConfig, call: String) -> CliResult<bool> {
    let f = fit_from_config(cfg)?;
    let design = &f.frame.design;
    let fam = f.family.as_ref();
    let d = &cfg.diagnostics;
    let drop5: Drop5 = d.drop5.as_deref().unwrap_or("group").parse()?;
    let table = marginal_freq(design, fam, &f.fit);
    let gof = gof_tests(&table, d.df.unwrap_or(1), drop5)?;
    let influence = if d.skip_influence.unwrap_or(false) {
        None
    } else {
        let mode = match d.dfbeta.as_deref().unwrap_or("exact") {
            "exact" => DfbetaMode::Exact,
            "one-step" | "onestep" => DfbetaMode::OneStep,
            m => return Err(CliError::usage(format!("unknown dfbeta mode '{m}' (exact or one-step)"))),
        };
        let cores = cores(cfg)?;
        let progress = progress_logger("dfbeta", design.n());
        let db = dfbeta(design, fam, &f.fit, mode, cores, Some(&progress))?;
        let dp = dfpopsize(design, fam, &f.fit, &db, cores)?;
        let names = design.coefficient_names();
        let dfbeta = (0..db.ncols())
            .map(|j| {
                let mut v: Vec<f64> = db.column(j).iter().copied().filter(|x| x.is_finite()).collect();
                v.sort_by(f64::total_cmp);
                DfbetaQuantiles {
                    name: names[j].clone(),
                    quantiles_x100: [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| 100.0 * quantile(&v, p)),
                }
            })
            .collect();
        Some(Influence {
            mode: match mode {
                DfbetaMode::Exact => "exact".into(),
                DfbetaMode::OneStep => "one-step".into(),
            },
            dfbeta,
            dfpopsize: Summary::of(&dp),
            failed_refits: db.row_iter().filter(|r| r.iter().any(|x| !x.is_finite())).count(),
            dfpopsize_values: dp,
        })
    };
    let mut report = base_report("diagnostics", call, &f);
    report.diagnostics = Some(DiagReport {
        rootogram: rootogram_data(&table),
        marginal: table.rows,
        tail_expected: table.tail_expected,
        gof,
        drop5: d.drop5.clone().unwrap_or_else(|| "group".into()),
        deviance_residuals: Summary::of(&deviance_residuals(design, fam, &f.fit)),
        influence,
    });
    emit(cfg, &report)
}

/// Linear predictors from an eta file: the columns named after the
/// parameters, or all columns when there are exactly as many as parameters.
fn eta_from_file(path: &Path, params: &[&str]) -> CliResult<(Dataset, DMatrix<f64>)> {
    let data = read_csv(path, None)?;
    let names: Vec<String> = if params.iter().all(|p| data.column(p).is_some()) {
        params.iter().map(|p| p.to_string()).collect()
    } else if data.names().len() == params.len() {
        data.names().to_vec()
    } else {
        return Err(CliError::usage(format!(
            "{}: need columns named {} or exactly {} columns",
            path.display(),
            params.join(", "),
            params.len()
        )));
    };
    let n = data.n_rows();
    let mut eta = DMatrix::zeros(n, params.len());
    for (j, name) in names.iter().enumerate() {
        let col = numeric_column(&data, name)?;
        for (i, v) in col.iter().enumerate() {
            eta[(i, j)] = v.ok_or_else(|| CliError::usage(format!("{}: missing value in column '{name}' row {}", path.display(), i + 1)))?;
        }
    }
    Ok((data, eta))
}

fn cell(data: &Dataset, name: &str, row: usize) -> String {
    match data.column(name) {
        Some(Column::Numeric(v)) => v[row].map(|x| x.to_string()).unwrap_or_default(),
        Some(Column::Categorical(c)) => c.value(row).unwrap_or("").to_string(),
        None => String::new(),
    }
}

pub fn simulate(cfg: &RunConfig) -> CliResult<bool> {
    let fam = build_family(cfg)?;
    let params = fam.eta_names();
    let s = &cfg.simulate;
    let (passthrough, eta) = match (&s.eta_file, &s.eta) {
        (Some(_), Some(_)) => return Err(CliError::usage("give either --eta or --eta-file, not both")),
        (Some(path), None) => {
            let (data, eta) = eta_from_file(path, params)?;
            if s.n.is_some_and(|n| n != eta.nrows()) {
                return Err(CliError::usage("--n does not match the number of rows in the eta file"));
            }
            (Some(data), eta)
        }
        (None, eta) => {
            let n = s.n.ok_or_else(|| CliError::usage("no sample size given (use --n)"))?;
            let values = eta.as_ref().map(|e| e.0.clone()).unwrap_or_else(|| vec![0.0; params.len()]);
            if values.len() != params.len() {
                return Err(CliError::usage(format!(
                    "--eta needs {} values ({}), got {}",
                    params.len(),
                    params.join(", "),
                    values.len()
                )));
            }
            (None, DMatrix::from_fn(n, params.len(), |_, j| values[j]))
        }
    };
    let kind = if s.truncated.unwrap_or(false) { PmfType::Truncated } else { PmfType::Untruncated };
    let y = fam.simulate(&eta, cfg.estimate.seed.unwrap_or(1), kind);

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| CliError::io(format!("cannot write csv: {e}"));
        let mut header: Vec<String> = passthrough.as_ref().map(|d| d.names().to_vec()).unwrap_or_default();
        header.push("y".into());
        w.write_record(&header).map_err(io)?;
        for (i, yi) in y.iter().enumerate() {
            let mut rec: Vec<String> = match &passthrough {
                Some(d) => d.names().iter().map(|n| cell(d, n, i)).collect(),
                None => Vec::new(),
            };
            rec.push(yi.to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io(format!("cannot write csv: {e}")))?;
    }
    write_output(cfg, &String::from_utf8(buf).expect("csv output is utf-8"))?;
    Ok(true)
}
