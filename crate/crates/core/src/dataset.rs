//! Tabular input data: numeric and categorical columns read from CSV.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(CategoricalColumn),
}

/// String-valued column. Codes index into `levels`, which are kept in
/// order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    pub codes: Vec<Option<usize>>,
    pub levels: Vec<String>,
}

impl CategoricalColumn {
    pub fn from_strings<S: AsRef<str>>(values: &[Option<S>]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let codes = values
            .iter()
            .map(|v| {
                v.as_ref().map(|s| {
                    let s = s.as_ref();
                    *index.entry(s.to_string()).or_insert_with(|| {
                        levels.push(s.to_string());
                        levels.len() - 1
                    })
                })
            })
            .collect();
        CategoricalColumn { codes, levels }
    }

    /// Levels sorted lexicographically, as used for treatment coding.
    pub fn sorted_levels(&self) -> Vec<&str> {
        let mut l: Vec<&str> = self.levels.iter().map(String::as_str).collect();
        l.sort_unstable();
        l
    }

    pub fn value(&self, row: usize) -> Option<&str> {
        self.codes[row].map(|c| self.levels[c].as_str())
    }

    /// Levels that actually occur among the given rows, sorted.
    pub fn observed_levels(&self, rows: impl Iterator<Item = usize>) -> Vec<&str> {
        let mut seen = vec![false; self.levels.len()];
        for r in rows {
            if let Some(c) = self.codes[r] {
                seen[c] = true;
            }
        }
        let mut l: Vec<&str> = self
            .levels
            .iter()
            .zip(&seen)
            .filter(|(_, &s)| s)
            .map(|(l, _)| l.as_str())
            .collect();
        l.sort_unstable();
        l
    }
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(c) => c.codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical(c) => c.codes[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(c) => Column::Categorical(CategoricalColumn {
                codes: rows.iter().map(|&r| c.codes[r]).collect(),
                levels: c.levels.clone(),
            }),
        }
    }
}

/// Forces the type of a column instead of inferring it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let n_rows = columns
            .first()
            .map(|(_, c)| c.len())
            .ok_or_else(|| Error::InvalidInput("dataset has no columns".into()))?;
        if n_rows == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        for (name, c) in &columns {
            if c.len() != n_rows {
                return Err(Error::InvalidInput(format!(
                    "column '{name}' has {} rows, expected {n_rows}",
                    c.len()
                )));
            }
        }
        let (names, columns) = columns.into_iter().unzip();
        Ok(Dataset {
            names,
            columns,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Returns a dataset holding only `rows` (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

/// Reads a CSV file with a header row.
///
/// A column is numeric when every non-empty cell parses as a number;
/// otherwise it is categorical. `hints` overrides inference per column.
pub fn read_csv(path: impl AsRef<Path>, hints: Option<&HashMap<String, ColumnKind>>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv_from(file, hints)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, hints: Option<&HashMap<String, ColumnKind>>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Csv {
            row: 1,
            message: "empty file or missing header".into(),
        });
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let rec = rec.map_err(|e| csv_error(e, i + 2))?;
        for (col, cell) in raw.iter_mut().zip(rec.iter()) {
            col.push(cell.trim().to_string());
        }
    }
    if raw[0].is_empty() {
        return Err(Error::Csv {
            row: 2,
            message: "no data rows".into(),
        });
    }

    let columns = headers
        .into_iter()
        .zip(raw)
        .map(|(name, cells)| {
            let kind = hints.and_then(|h| h.get(&name)).copied().unwrap_or_else(|| {
                let numeric = cells
                    .iter()
                    .filter(|c| !is_missing_token(c))
                    .all(|c| c.parse::<f64>().is_ok());
                if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            });
            let col = match kind {
                ColumnKind::Numeric => {
                    let mut vals = Vec::with_capacity(cells.len());
                    for (i, c) in cells.iter().enumerate() {
                        if is_missing_token(c) {
                            vals.push(None);
                        } else {
                            vals.push(Some(c.parse::<f64>().map_err(|_| Error::Csv {
                                row: i + 2,
                                message: format!("column '{name}': '{c}' is not numeric"),
                            })?));
                        }
                    }
                    Column::Numeric(vals)
                }
                ColumnKind::Categorical => {
                    let vals: Vec<Option<&str>> = cells
                        .iter()
                        .map(|c| (!is_missing_token(c)).then_some(c.as_str()))
                        .collect();
                    Column::Categorical(CategoricalColumn::from_strings(&vals))
                }
            };
            Ok((name, col))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(columns)
}

fn csv_error(e: csv::Error, fallback_row: usize) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_row);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => e.to_string(),
    };
    Error::Csv { row, message }
}
