//! From a data set, a family and one formula per parameter to the design
//! used for fitting.

use std::collections::BTreeSet;

use crate::dataset::{Column, Dataset};
use crate::design::{build_design, DesignBlocks};
use crate::error::{Error, Result};
use crate::families::CountFamily;
use crate::formula::{Formula, Term};

/// Formulas keyed by parameter name. The lambda formula carries the
/// response; parameters without a formula get an intercept only.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub formulas: Vec<(String, Formula)>,
}

impl ModelSpec {
    pub fn new(lambda: Formula) -> Self {
        ModelSpec {
            formulas: vec![("lambda".into(), lambda)],
        }
    }

    pub fn with(mut self, param: &str, formula: Formula) -> Self {
        self.formulas.retain(|(p, _)| p != param);
        self.formulas.push((param.to_string(), formula));
        self
    }

    pub fn formula(&self, param: &str) -> Option<&Formula> {
        self.formulas.iter().find(|(p, _)| p == param).map(|(_, f)| f)
    }
}

#[derive(Debug, Clone)]
pub struct ModelFrame {
    /// Rows kept after listwise deletion.
    pub data: Dataset,
    /// One formula per family parameter, in family order.
    pub formulas: Vec<(String, Formula)>,
    pub design: DesignBlocks,
    pub response: String,
    /// Indices (0-based) of the kept rows in the input data set.
    pub kept_rows: Vec<usize>,
}

impl ModelFrame {
    pub fn build(data: &Dataset, family: &dyn CountFamily, spec: &ModelSpec) -> Result<ModelFrame> {
        let lambda = spec
            .formula("lambda")
            .ok_or_else(|| Error::InvalidInput("a formula for lambda is required".into()))?;
        let response = lambda
            .response
            .clone()
            .ok_or_else(|| Error::InvalidInput("the lambda formula needs a response".into()))?;
        for (p, f) in &spec.formulas {
            if !family.eta_names().contains(&p.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "family '{}' has no parameter '{p}'",
                    family.name()
                )));
            }
            if p != "lambda" && f.response.is_some() {
                return Err(Error::InvalidInput(format!(
                    "the formula for '{p}' must not have a response"
                )));
            }
        }
        let formulas: Vec<(String, Formula)> = family
            .eta_names()
            .iter()
            .map(|&p| {
                let f = spec.formula(p).cloned().unwrap_or_else(Formula::intercept_only);
                (p.to_string(), f)
            })
            .collect();

        let used = used_columns(data, &formulas, &response)?;
        let kept_rows: Vec<usize> = (0..data.n_rows())
            .filter(|&r| used.iter().all(|c| !data.require(c).map(|col| col.is_missing(r)).unwrap_or(true)))
            .collect();
        let dropped = data.n_rows() - kept_rows.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} rows with missing values");
        }
        if kept_rows.is_empty() {
            return Err(Error::InvalidInput("no complete rows remain".into()));
        }
        let data = data.select_rows(&kept_rows);

        let y = response_counts(&data, &response, &kept_rows)?;
        let blocks = formulas
            .iter()
            .map(|(p, f)| {
                let mut b = build_design(&data, f, &[response.as_str()])?;
                if p != "lambda" {
                    for n in &mut b.names {
                        n.push(':');
                        n.push_str(p);
                    }
                }
                if b.names.is_empty() {
                    return Err(Error::Design(format!("the formula for '{p}' has no terms")));
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        let design = DesignBlocks::new(y, blocks)?;
        family.check_support(&design.y)?;
        Ok(ModelFrame {
            data,
            formulas,
            design,
            response,
            kept_rows,
        })
    }

    /// Categorical variables used by any formula, in order of first use.
    pub fn factor_variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, f) in &self.formulas {
            for v in expand_vars(&self.data, f, &self.response) {
                if matches!(self.data.column(&v), Some(Column::Categorical(_))) && !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }
}

fn expand_vars(data: &Dataset, f: &Formula, response: &str) -> Vec<String> {
    let mut out = Vec::new();
    for t in &f.terms {
        match t {
            Term::Dot => out.extend(data.names().iter().filter(|n| n.as_str() != response).cloned()),
            Term::Vars(v) => out.extend(v.iter().cloned()),
        }
    }
    out
}

fn used_columns(data: &Dataset, formulas: &[(String, Formula)], response: &str) -> Result<BTreeSet<String>> {
    let mut used = BTreeSet::new();
    used.insert(response.to_string());
    for (_, f) in formulas {
        for v in expand_vars(data, f, response) {
            data.require(&v)?;
            used.insert(v);
        }
    }
    data.require(response)?;
    Ok(used)
}

fn response_counts(data: &Dataset, response: &str, kept: &[usize]) -> Result<Vec<u64>> {
    match data.require(response)? {
        Column::Numeric(v) => v
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let x = x.expect("missing responses were dropped");
                if x >= 0.0 && x.fract() == 0.0 && x.is_finite() {
                    Ok(x as u64)
                } else {
                    Err(Error::InvalidInput(format!(
                        "response '{response}' must be a nonnegative integer; found {x} in data row {}",
                        kept[i] + 1
                    )))
                }
            })
            .collect(),
        Column::Categorical(_) => Err(Error::InvalidInput(format!("response '{response}' is not numeric"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::read_csv_from;
    use crate::families::family;
    use crate::formula::parse_formula;

    fn data() -> Dataset {
        read_csv_from(
            "y,g,x\n1,a,0.1\n2,b,NA\n1,b,0.3\n3,a,0.4\n1,b,0.5\n".as_bytes(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn builds_blocks_in_family_order_with_suffixes() {
        let f = family("oiztgeom").unwrap();
        let spec = ModelSpec::new(parse_formula("y ~ x").unwrap()).with("omega", parse_formula("~ g").unwrap());
        let mf = ModelFrame::build(&data(), f.as_ref(), &spec).unwrap();
        assert_eq!(mf.kept_rows, vec![0, 2, 3, 4]);
        assert_eq!(mf.design.y, vec![1, 1, 3, 1]);
        assert_eq!(
            mf.design.coefficient_names(),
            vec!["(Intercept)", "x", "(Intercept):omega", "gb:omega"]
        );
        assert_eq!(mf.factor_variables(), vec!["g"]);
    }

    #[test]
    fn rejects_unknown_parameter_and_zero_counts() {
        let f = family("ztpoisson").unwrap();
        let spec = ModelSpec::new(parse_formula("y ~ 1").unwrap()).with("omega", parse_formula("~ 1").unwrap());
        assert!(ModelFrame::build(&data(), f.as_ref(), &spec).is_err());
        let zeros = read_csv_from("y\n1\n0\n".as_bytes(), None).unwrap();
        let spec = ModelSpec::new(parse_formula("y ~ 1").unwrap());
        assert!(matches!(
            ModelFrame::build(&zeros, f.as_ref(), &spec),
            Err(Error::Support { row: 2, .. })
        ));
    }
}
