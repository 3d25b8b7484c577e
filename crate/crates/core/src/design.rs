//! Design matrices: treatment-coded blocks per distribution parameter and
//! the stacked block-diagonal matrix of the vector GLM.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Column, Dataset};
use crate::error::{Error, Result};
use crate::formula::{Formula, Term};
use crate::jet::MAX_PARAMS;

pub const INTERCEPT: &str = "(Intercept)";

/// One design matrix with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlock {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

/// Columns generated by one variable, as (name suffix, values).
fn variable_columns(data: &Dataset, var: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let n = data.n_rows();
    match data.require(var)? {
        Column::Numeric(v) => {
            let vals = v
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    x.ok_or_else(|| Error::Design(format!("missing value in column '{var}' at row {}", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(vec![(var.to_string(), vals)])
        }
        Column::Categorical(c) => {
            if let Some(i) = c.codes.iter().position(Option::is_none) {
                return Err(Error::Design(format!("missing value in column '{var}' at row {}", i + 1)));
            }
            let levels = c.observed_levels(0..n);
            Ok(levels
                .iter()
                .skip(1)
                .map(|lvl| {
                    let vals = (0..n)
                        .map(|r| if c.value(r) == Some(*lvl) { 1.0 } else { 0.0 })
                        .collect();
                    (format!("{var}{lvl}"), vals)
                })
                .collect())
        }
    }
}

/// Builds the treatment-coded design matrix for `formula`.
///
/// `exclude` lists columns that `.` must not expand to (the response of
/// the main formula).
pub fn build_design(data: &Dataset, formula: &Formula, exclude: &[&str]) -> Result<DesignBlock> {
    let n = data.n_rows();
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    if formula.intercept {
        cols.push((INTERCEPT.to_string(), vec![1.0; n]));
    }
    let mut expanded: Vec<Vec<String>> = Vec::new();
    for t in &formula.terms {
        match t {
            Term::Dot => {
                for name in data.names() {
                    let skip = exclude.contains(&name.as_str()) || formula.response.as_deref() == Some(name.as_str());
                    let single = vec![name.clone()];
                    if !skip && !expanded.contains(&single) {
                        expanded.push(single);
                    }
                }
            }
            Term::Vars(v) => {
                if !expanded.contains(v) {
                    expanded.push(v.clone());
                }
            }
        }
    }
    for vars in &expanded {
        let mut acc: Vec<(String, Vec<f64>)> = vec![(String::new(), vec![1.0; n])];
        for var in vars {
            let vc = variable_columns(data, var)?;
            if vc.is_empty() {
                log::warn!("column '{var}' has a single level and contributes no design columns");
            }
            let mut next = Vec::with_capacity(acc.len() * vc.len());
            for (an, av) in &acc {
                for (vn, vv) in &vc {
                    let name = if an.is_empty() { vn.clone() } else { format!("{an}:{vn}") };
                    let vals = av.iter().zip(vv).map(|(a, b)| a * b).collect();
                    next.push((name, vals));
                }
            }
            acc = next;
        }
        cols.extend(acc);
    }
    if cols.is_empty() {
        log::warn!("formula '{formula}' produces an empty design");
    }
    let names: Vec<String> = cols.iter().map(|(n, _)| n.clone()).collect();
    let matrix = DMatrix::from_fn(n, cols.len(), |r, c| cols[c].1[r]);
    Ok(DesignBlock { matrix, names })
}

/// The vector-GLM design: one block per linear predictor, conceptually
/// stacked block-diagonally into an (n·p) × q matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VlmMatrix {
    blocks: Vec<DMatrix<f64>>,
}

impl VlmMatrix {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Design("at least one design block is required".into()))?;
        let n = first.nrows();
        if blocks.iter().any(|b| b.nrows() != n) {
            return Err(Error::Design("design blocks have unequal row counts".into()));
        }
        if blocks.len() > MAX_PARAMS {
            return Err(Error::Design(format!("at most {MAX_PARAMS} linear predictors are supported")));
        }
        Ok(VlmMatrix { blocks })
    }

    pub fn n_rows(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_coefficients(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    /// Column count of each block (the "hwm" attribute).
    pub fn block_widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    fn block_starts(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for b in &self.blocks {
            s.push(acc);
            acc += b.ncols();
        }
        s
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Materialises the stacked block-diagonal matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_rows();
        let mut out = DMatrix::zeros(n * self.blocks.len(), self.n_coefficients());
        for (k, (b, start)) in self.blocks.iter().zip(self.block_starts()).enumerate() {
            out.view_mut((k * n, start), (n, b.ncols())).copy_from(b);
        }
        out
    }

    /// Splits a coefficient vector into per-block slices.
    pub fn split<'a>(&self, beta: &'a DVector<f64>) -> Vec<nalgebra::DVectorView<'a, f64>> {
        self.blocks
            .iter()
            .zip(self.block_starts())
            .map(|(b, s)| beta.rows(s, b.ncols()))
            .collect()
    }

    /// η = X β + o as an n × p matrix.
    pub fn linear_predictors(&self, beta: &DVector<f64>, offsets: &DMatrix<f64>) -> DMatrix<f64> {
        let mut eta = offsets.clone();
        for (k, (b, part)) in self.blocks.iter().zip(self.split(beta)).enumerate() {
            let col = b * part;
            let mut target = eta.column_mut(k);
            target += col;
        }
        eta
    }

    /// X' W X, where `info[k]` is the p × p weight block of row k.
    pub fn weighted_cross_product(&self, info: &[[[f64; MAX_PARAMS]; MAX_PARAMS]]) -> DMatrix<f64> {
        let q = self.n_coefficients();
        let starts = self.block_starts();
        let mut out = DMatrix::zeros(q, q);
        for (a, xa) in self.blocks.iter().enumerate() {
            for (b, xb) in self.blocks.iter().enumerate().skip(a) {
                let mut scaled = xb.clone();
                for (r, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= info[r][a][b];
                }
                let prod = xa.transpose() * scaled;
                out.view_mut((starts[a], starts[b]), (xa.ncols(), xb.ncols()))
                    .copy_from(&prod);
                if a != b {
                    out.view_mut((starts[b], starts[a]), (xb.ncols(), xa.ncols()))
                        .copy_from(&prod.transpose());
                }
            }
        }
        out
    }

    /// X' g for an n × p matrix of per-row η-space vectors.
    pub fn transpose_mul(&self, g: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_coefficients());
        for ((b, s), k) in self.blocks.iter().zip(self.block_starts()).zip(0..) {
            let part = b.tr_mul(&g.column(k));
            out.rows_mut(s, b.ncols()).copy_from(&part);
        }
        out
    }

    /// Σ_k X_(k)' H_k X_(k) for per-row p × p blocks.
    pub fn sandwich_rows(&self, h: &[[[f64; MAX_PARAMS]; MAX_PARAMS]]) -> DMatrix<f64> {
        self.weighted_cross_product(h)
    }

    pub fn select_rows(&self, rows: &[usize]) -> VlmMatrix {
        VlmMatrix {
            blocks: self.blocks.iter().map(|b| b.select_rows(rows)).collect(),
        }
    }
}

/// Builds the stacked design matrix from per-parameter blocks.
pub fn build_vlm_matrix(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    Ok(VlmMatrix::new(blocks.to_vec())?.to_dense())
}

/// Response, design and row-level inputs for a fit.
#[derive(Debug, Clone)]
pub struct DesignBlocks {
    pub y: Vec<u64>,
    pub x: VlmMatrix,
    /// n × p offsets.
    pub offsets: DMatrix<f64>,
    /// Prior weights.
    pub weights: Vec<f64>,
    /// Coefficient names, block by block.
    pub names: Vec<Vec<String>>,
}

impl DesignBlocks {
    pub fn new(y: Vec<u64>, blocks: Vec<DesignBlock>) -> Result<Self> {
        let names = blocks.iter().map(|b| b.names.clone()).collect();
        let x = VlmMatrix::new(blocks.into_iter().map(|b| b.matrix).collect())?;
        if y.len() != x.n_rows() {
            return Err(Error::Design(format!(
                "response has {} entries but design has {} rows",
                y.len(),
                x.n_rows()
            )));
        }
        let n = y.len();
        let p = x.n_predictors();
        Ok(DesignBlocks {
            y,
            x,
            offsets: DMatrix::zeros(n, p),
            weights: vec![1.0; n],
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn block_widths(&self) -> Vec<usize> {
        self.x.block_widths()
    }

    /// Flattened coefficient names.
    pub fn coefficient_names(&self) -> Vec<String> {
        self.names.iter().flatten().cloned().collect()
    }

    pub fn with_offsets(mut self, offsets: DMatrix<f64>) -> Result<Self> {
        if offsets.nrows() != self.n() || offsets.ncols() != self.x.n_predictors() {
            return Err(Error::Design(format!(
                "offset matrix must be {}x{}",
                self.n(),
                self.x.n_predictors()
            )));
        }
        self.offsets = offsets;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Design("prior weights must be finite, nonnegative and one per row".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Rows `rows` (duplicates allowed) as a new design.
    pub fn subset(&self, rows: &[usize]) -> DesignBlocks {
        DesignBlocks {
            y: rows.iter().map(|&r| self.y[r]).collect(),
            x: self.x.select_rows(rows),
            offsets: self.offsets.select_rows(rows),
            weights: rows.iter().map(|&r| self.weights[r]).collect(),
            names: self.names.clone(),
        }
    }

    /// Weighted number of observed units.
    pub fn observed(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::read_csv_from;
    use crate::formula::parse_formula;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        read_csv_from(
            "y,g,x,h\n1,b,0.5,u\n2,a,1.5,v\n1,b,2.0,w\n3,a,-1.0,u\n".as_bytes(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn intercept_only_design() {
        let d = build_design(&toy(), &parse_formula("~ 1").unwrap(), &[]).unwrap();
        assert_eq!(d.names, vec![INTERCEPT]);
        assert!(d.matrix.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_level_factor_treatment_coding() {
        let d = build_design(&toy(), &parse_formula("y ~ g").unwrap(), &[]).unwrap();
        assert_eq!(d.matrix.shape(), (4, 2));
        assert_eq!(d.names, vec![INTERCEPT, "gb"]);
        assert_eq!(d.matrix.column(1).as_slice(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn factor_indicators_plus_reference_sum_to_one() {
        let data = toy();
        let d = build_design(&data, &parse_formula("~ h - 1").unwrap(), &[]).unwrap();
        // reference level 'u' is rows 0 and 3
        for r in 0..4 {
            let s: f64 = d.matrix.row(r).iter().sum();
            let is_ref = matches!(r, 0 | 3) as u8 as f64;
            assert_eq!(s + is_ref, 1.0);
        }
    }

    #[test]
    fn dot_excludes_response_and_interactions_are_named() {
        let d = build_design(&toy(), &parse_formula("y ~ .").unwrap(), &[]).unwrap();
        assert_eq!(d.names, vec![INTERCEPT, "gb", "x", "hv", "hw"]);
        let d = build_design(&toy(), &parse_formula("y ~ g*x").unwrap(), &[]).unwrap();
        assert_eq!(d.names, vec![INTERCEPT, "gb", "x", "gb:x"]);
        assert_eq!(d.matrix.column(3).as_slice(), &[0.5, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn unknown_column_is_named() {
        match build_design(&toy(), &parse_formula("y ~ nope").unwrap(), &[]) {
            Err(Error::UnknownColumn(c)) => assert_eq!(c, "nope"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_parameter_stack_is_identity() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        assert_eq!(build_vlm_matrix(&[x.clone()]).unwrap(), x);
    }

    #[test]
    fn two_blocks_of_ones() {
        let ones = DMatrix::from_element(2, 1, 1.0);
        let m = build_vlm_matrix(&[ones.clone(), ones]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn banded_layout() {
        let n = 5;
        let a = DMatrix::from_fn(n, 4, |r, c| (r * 4 + c + 1) as f64);
        let b = DMatrix::from_fn(n, 3, |r, c| -((r * 3 + c + 1) as f64));
        let m = build_vlm_matrix(&[a, b]).unwrap();
        assert_eq!(m.shape(), (2 * n, 7));
        for r in 0..n {
            assert!((4..7).all(|c| m[(r, c)] == 0.0));
            assert!((0..4).all(|c| m[(n + r, c)] == 0.0));
        }
    }

    proptest! {
        #[test]
        fn stacked_product_matches_blockwise(
            n in 1usize..6,
            w1 in 1usize..4,
            w2 in 1usize..4,
            seed in proptest::collection::vec(-3.0f64..3.0, 60),
        ) {
            let a = DMatrix::from_fn(n, w1, |r, c| seed[(r * 7 + c) % 60]);
            let b = DMatrix::from_fn(n, w2, |r, c| seed[(r * 5 + c + 13) % 60]);
            let beta = DVector::from_fn(w1 + w2, |i, _| seed[(i * 11 + 3) % 60]);
            let vlm = VlmMatrix::new(vec![a.clone(), b.clone()]).unwrap();
            let dense = vlm.to_dense() * &beta;
            let eta = vlm.linear_predictors(&beta, &DMatrix::zeros(n, 2));
            for r in 0..n {
                prop_assert!((dense[r] - eta[(r, 0)]).abs() < 1e-12);
                prop_assert!((dense[n + r] - eta[(r, 1)]).abs() < 1e-12);
            }
            // X'WX against the dense route with W block diagonal per row
            let info: Vec<[[f64; MAX_PARAMS]; MAX_PARAMS]> = (0..n)
                .map(|r| {
                    let d = seed[(r + 29) % 60].abs() + 0.5;
                    let o = seed[(r + 41) % 60] * 0.1;
                    [[d, o, 0.0], [o, d + 1.0, 0.0], [0.0; 3]]
                })
                .collect();
            let mut w = DMatrix::zeros(2 * n, 2 * n);
            for r in 0..n {
                w[(r, r)] = info[r][0][0];
                w[(r, n + r)] = info[r][0][1];
                w[(n + r, r)] = info[r][1][0];
                w[(n + r, n + r)] = info[r][1][1];
            }
            let xd = vlm.to_dense();
            let dense_xtwx = xd.transpose() * w * &xd;
            let fast = vlm.weighted_cross_product(&info);
            prop_assert!((dense_xtwx - fast).abs().max() < 1e-10);
        }
    }
}
