//! Count datasets, CSV ingestion and design-matrix construction.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub cohort: String,
    /// Covariates in model order. Names listed in `categoricals` are expanded
    /// to indicator columns, the rest are parsed as reals.
    pub covariates: Vec<String>,
    #[serde(default)]
    pub categoricals: Vec<String>,
    pub error_prone: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.covariates {
            if !seen.insert(c) {
                return Err(Error::Schema(format!("covariate `{c}` listed twice")));
            }
        }
        for c in &self.categoricals {
            if !self.covariates.contains(c) {
                return Err(Error::Schema(format!(
                    "categorical `{c}` is not among the covariates"
                )));
            }
        }
        if !self.covariates.contains(&self.error_prone) {
            return Err(Error::Schema(format!(
                "error-prone column `{}` is not among the covariates",
                self.error_prone
            )));
        }
        if self.categoricals.contains(&self.error_prone) {
            return Err(Error::Schema(format!(
                "error-prone column `{}` must be numeric",
                self.error_prone
            )));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Schema("delimiter must be an ASCII character".into()));
        }
        Ok(())
    }
}

/// One covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariate {
    Numeric {
        name: String,
        values: Vec<f64>,
    },
    /// `levels` is sorted lexicographically; `levels[0]` is the reference.
    Categorical {
        name: String,
        levels: Vec<String>,
        codes: Vec<usize>,
    },
}

impl Covariate {
    pub fn name(&self) -> &str {
        match self {
            Covariate::Numeric { name, .. } | Covariate::Categorical { name, .. } => name,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Covariate::Numeric { values, .. } => values.len(),
            Covariate::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Covariate {
        match self {
            Covariate::Numeric { name, values } => Covariate::Numeric {
                name: name.clone(),
                values: rows.iter().map(|&r| values[r]).collect(),
            },
            Covariate::Categorical {
                name,
                levels,
                codes,
            } => Covariate::Categorical {
                name: name.clone(),
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Covariate::Numeric { values, .. } => values[row].to_string(),
            Covariate::Categorical { levels, codes, .. } => levels[codes[row]].clone(),
        }
    }
}

/// Cohort-indexed count records.
///
/// Cohort ids are zero-based indices into `cohort_labels`, assigned in order
/// of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDataset {
    y: Vec<u64>,
    covariates: Vec<Covariate>,
    cohort: Vec<usize>,
    cohort_labels: Vec<String>,
    error_prone_index: usize,
}

impl CountDataset {
    pub fn new(
        y: Vec<u64>,
        covariates: Vec<Covariate>,
        cohort: Vec<usize>,
        cohort_labels: Vec<String>,
        error_prone_index: usize,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no records".into()));
        }
        if covariates.is_empty() {
            return Err(Error::Validation("dataset has no covariates".into()));
        }
        if cohort.len() != n {
            return Err(Error::Validation(format!(
                "cohort column has {} entries, expected {n}",
                cohort.len()
            )));
        }
        for cov in &covariates {
            if cov.len() != n {
                return Err(Error::Validation(format!(
                    "covariate `{}` has {} entries, expected {n}",
                    cov.name(),
                    cov.len()
                )));
            }
            match cov {
                Covariate::Numeric { name, values } => {
                    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!(
                            "covariate `{name}` has a non-finite value at record {i}"
                        )));
                    }
                }
                Covariate::Categorical {
                    name,
                    levels,
                    codes,
                } => {
                    if codes.iter().any(|&c| c >= levels.len()) {
                        return Err(Error::Validation(format!(
                            "covariate `{name}` has an out-of-range level code"
                        )));
                    }
                }
            }
        }
        let m = cohort_labels.len();
        let mut sizes = vec![0usize; m];
        for &c in &cohort {
            if c >= m {
                return Err(Error::Validation(format!("cohort id {c} outside 0..{m}")));
            }
            sizes[c] += 1;
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Validation(format!(
                "cohort `{}` has no records",
                cohort_labels[j]
            )));
        }
        if error_prone_index >= covariates.len() {
            return Err(Error::Validation(format!(
                "error-prone index {error_prone_index} outside 0..{}",
                covariates.len()
            )));
        }
        if !matches!(covariates[error_prone_index], Covariate::Numeric { .. }) {
            return Err(Error::Validation(
                "error-prone covariate must be numeric".into(),
            ));
        }
        Ok(Self {
            y,
            covariates,
            cohort,
            cohort_labels,
            error_prone_index,
        })
    }

    /// Build a dataset from raw cohort labels, relabelling them in order of
    /// first appearance.
    pub fn from_labels(
        y: Vec<u64>,
        covariates: Vec<Covariate>,
        labels: &[String],
        error_prone_index: usize,
    ) -> Result<Self> {
        let (cohort, cohort_labels) = relabel(labels);
        Self::new(y, covariates, cohort, cohort_labels, error_prone_index)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of cohorts.
    pub fn m(&self) -> usize {
        self.cohort_labels.len()
    }

    /// Number of (unexpanded) covariates.
    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn cohort(&self) -> &[usize] {
        &self.cohort
    }

    pub fn cohort_labels(&self) -> &[String] {
        &self.cohort_labels
    }

    pub fn error_prone_index(&self) -> usize {
        self.error_prone_index
    }

    pub fn error_prone_values(&self) -> &[f64] {
        match &self.covariates[self.error_prone_index] {
            Covariate::Numeric { values, .. } => values,
            Covariate::Categorical { .. } => unreachable!("validated numeric"),
        }
    }

    /// Copy of the dataset with the error-prone column replaced.
    pub fn with_error_prone(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::Validation(format!(
                "replacement column has {} entries, expected {}",
                values.len(),
                self.n()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "replacement column has non-finite values".into(),
            ));
        }
        let mut out = self.clone();
        let name = self.covariates[self.error_prone_index].name().to_string();
        out.covariates[self.error_prone_index] = Covariate::Numeric { name, values };
        Ok(out)
    }

    /// Rows belonging to each cohort, in record order.
    pub fn cohort_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.m()];
        for (i, &c) in self.cohort.iter().enumerate() {
            rows[c].push(i);
        }
        rows
    }

    /// Sub-dataset with the given rows (repeats allowed). Cohort labelling is
    /// kept as is, so every cohort must still be represented.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&r| self.y[r]).collect(),
            self.covariates.iter().map(|c| c.select(rows)).collect(),
            rows.iter().map(|&r| self.cohort[r]).collect(),
            self.cohort_labels.clone(),
            self.error_prone_index,
        )
    }

    /// Sub-dataset with the given rows; cohorts without rows are dropped and
    /// the rest relabelled in order of first appearance.
    pub fn select_compact(&self, rows: &[usize]) -> Result<Self> {
        let labels: Vec<String> = rows
            .iter()
            .map(|&r| self.cohort_labels[self.cohort[r]].clone())
            .collect();
        Self::from_labels(
            rows.iter().map(|&r| self.y[r]).collect(),
            self.covariates.iter().map(|c| c.select(rows)).collect(),
            &labels,
            self.error_prone_index,
        )
    }

    pub fn outcome_mean(&self) -> f64 {
        self.y.iter().map(|&v| v as f64).sum::<f64>() / self.n() as f64
    }

    /// Sample variance of the outcome (divisor n - 1).
    pub fn outcome_variance(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let mean = self.outcome_mean();
        self.y
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64
    }

    /// Schema reproducing this dataset's column layout.
    pub fn schema(&self, outcome: &str, cohort: &str) -> Schema {
        Schema {
            outcome: outcome.to_string(),
            cohort: cohort.to_string(),
            covariates: self
                .covariates
                .iter()
                .map(|c| c.name().to_string())
                .collect(),
            categoricals: self
                .covariates
                .iter()
                .filter(|c| matches!(c, Covariate::Categorical { .. }))
                .map(|c| c.name().to_string())
                .collect(),
            error_prone: self.covariates[self.error_prone_index].name().to_string(),
            delimiter: ',',
        }
    }

    /// Write the dataset as CSV using the column names in `schema`.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &Schema) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(schema.delimiter as u8)
            .from_writer(writer);
        let mut header = vec![schema.outcome.clone(), schema.cohort.clone()];
        header.extend(self.covariates.iter().map(|c| c.name().to_string()));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![
                self.y[i].to_string(),
                self.cohort_labels[self.cohort[i]].clone(),
            ];
            row.extend(self.covariates.iter().map(|c| c.cell(i)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path, schema: &Schema) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, schema)
    }
}

fn relabel(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut ordered = Vec::new();
    let ids = labels
        .iter()
        .map(|l| {
            *index.entry(l.as_str()).or_insert_with(|| {
                ordered.push(l.clone());
                ordered.len() - 1
            })
        })
        .collect();
    (ids, ordered)
}

/// Round half up to the nearest non-negative integer count.
fn round_count(v: f64) -> Option<u64> {
    if !v.is_finite() {
        return None;
    }
    let r = (v + 0.5).floor();
    if r < 0.0 || r > u64::MAX as f64 {
        None
    } else {
        Some(r as u64)
    }
}

pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<CountDataset> {
    ingest_reader(std::fs::File::open(path)?, schema)
}

/// Parse a headed CSV stream into a validated dataset.
pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<CountDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let outcome_col = col(&schema.outcome)?;
    let cohort_col = col(&schema.cohort)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let is_cat: Vec<bool> = schema
        .covariates
        .iter()
        .map(|c| schema.categoricals.contains(c))
        .collect();

    let mut y = Vec::new();
    let mut labels = Vec::new();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    let mut raw_levels: Vec<Vec<String>> = vec![Vec::new(); cov_cols.len()];

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: name.to_string(),
                message: "missing cell".into(),
            })
        };
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let s = cell(idx, name)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("`{s}` is not a finite number"),
                })
        };
        let raw_y = parse(outcome_col, &schema.outcome)?;
        let count = round_count(raw_y).ok_or_else(|| Error::Parse {
            row,
            column: schema.outcome.clone(),
            message: format!("`{raw_y}` is not a non-negative count"),
        })?;
        y.push(count);
        labels.push(cell(cohort_col, &schema.cohort)?.to_string());
        for (k, (&c, name)) in cov_cols.iter().zip(&schema.covariates).enumerate() {
            if is_cat[k] {
                raw_levels[k].push(cell(c, name)?.to_string());
            } else {
                numeric[k].push(parse(c, name)?);
            }
        }
    }

    let covariates = schema
        .covariates
        .iter()
        .enumerate()
        .map(|(k, name)| {
            if is_cat[k] {
                let levels: Vec<String> = raw_levels[k]
                    .iter()
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let codes = raw_levels[k]
                    .iter()
                    .map(|l| levels.binary_search(l).expect("level present"))
                    .collect();
                Covariate::Categorical {
                    name: name.clone(),
                    levels,
                    codes,
                }
            } else {
                Covariate::Numeric {
                    name: name.clone(),
                    values: std::mem::take(&mut numeric[k]),
                }
            }
        })
        .collect();
    let error_prone_index = schema
        .covariates
        .iter()
        .position(|c| c == &schema.error_prone)
        .expect("validated schema");
    CountDataset::from_labels(y, covariates, &labels, error_prone_index)
}

/// Where a design column comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSource {
    pub name: String,
    /// Index into the dataset's covariates.
    pub covariate: usize,
    /// Indicator level for categorical expansions.
    pub level: Option<String>,
}

/// Model matrix with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: DMatrix<f64>,
    /// Source of every non-intercept column; `column_map[k]` describes
    /// matrix column `k + 1`.
    column_map: Vec<ColumnSource>,
    error_prone_column: usize,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn column_map(&self) -> &[ColumnSource] {
        &self.column_map
    }

    /// Column names including the leading `(intercept)`.
    pub fn column_names(&self) -> Vec<String> {
        std::iter::once("(intercept)".to_string())
            .chain(self.column_map.iter().map(|c| c.name.clone()))
            .collect()
    }

    /// Matrix column holding the error-prone covariate.
    pub fn error_prone_column(&self) -> usize {
        self.error_prone_column
    }

    /// Copy with the error-prone column replaced by `values`.
    pub fn with_error_prone(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.nrows() {
            return Err(Error::Validation(format!(
                "replacement column has {} entries, expected {}",
                values.len(),
                self.nrows()
            )));
        }
        let mut out = self.clone();
        for (i, &v) in values.iter().enumerate() {
            out.rows[(i, self.error_prone_column)] = v;
        }
        Ok(out)
    }
}

/// Expand the covariates into an intercept-led model matrix.
pub fn build_design(dataset: &CountDataset) -> Result<DesignMatrix> {
    let mut column_map = Vec::new();
    let mut error_prone_column = 0;
    for (k, cov) in dataset.covariates().iter().enumerate() {
        match cov {
            Covariate::Numeric { name, .. } => {
                if k == dataset.error_prone_index() {
                    error_prone_column = column_map.len() + 1;
                }
                column_map.push(ColumnSource {
                    name: name.clone(),
                    covariate: k,
                    level: None,
                });
            }
            Covariate::Categorical { name, levels, .. } => {
                if levels.len() < 2 {
                    return Err(Error::DegenerateColumn(format!(
                        "categorical `{name}` has a single level"
                    )));
                }
                for level in &levels[1..] {
                    column_map.push(ColumnSource {
                        name: format!("{name}={level}"),
                        covariate: k,
                        level: Some(level.clone()),
                    });
                }
            }
        }
    }
    let n = dataset.n();
    let mut rows = DMatrix::zeros(n, column_map.len() + 1);
    for i in 0..n {
        rows[(i, 0)] = 1.0;
    }
    for (j, src) in column_map.iter().enumerate() {
        match &dataset.covariates()[src.covariate] {
            Covariate::Numeric { values, .. } => {
                for (i, &v) in values.iter().enumerate() {
                    rows[(i, j + 1)] = v;
                }
            }
            Covariate::Categorical { levels, codes, .. } => {
                let level = src
                    .level
                    .as_deref()
                    .expect("categorical column has a level");
                let code = levels
                    .iter()
                    .position(|l| l == level)
                    .expect("level exists");
                for (i, &c) in codes.iter().enumerate() {
                    rows[(i, j + 1)] = if c == code { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Ok(DesignMatrix {
        rows,
        column_map,
        error_prone_column,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(covs: &[&str], cats: &[&str], ep: &str) -> Schema {
        Schema {
            outcome: "y".into(),
            cohort: "id".into(),
            covariates: covs.iter().map(|s| s.to_string()).collect(),
            categoricals: cats.iter().map(|s| s.to_string()).collect(),
            error_prone: ep.into(),
            delimiter: ',',
        }
    }

    #[test]
    fn single_row_dataset() {
        let ds = ingest_reader("y,id,x\n0,7,1.5\n".as_bytes(), &schema(&["x"], &[], "x")).unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.m(), 1);
        assert_eq!(ds.y(), &[0]);
    }

    #[test]
    fn cohorts_relabel_in_order_of_appearance() {
        let csv = "y,id,x\n1,A,0\n2,B,1\n3,A,2\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["x"], &[], "x")).unwrap();
        assert_eq!(ds.cohort(), &[0, 1, 0]);
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.cohort_labels(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn outcome_rounds_half_up() {
        let csv = "y,id,x\n2.5,A,0\n2.49,A,1\n0.5,A,2\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["x"], &[], "x")).unwrap();
        assert_eq!(ds.y(), &[3, 2, 1]);
    }

    #[test]
    fn negative_outcome_rejected() {
        let err =
            ingest_reader("y,id,x\n-3,A,0\n".as_bytes(), &schema(&["x"], &[], "x")).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 0, .. }));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = ingest_reader("y,id\n1,A\n".as_bytes(), &schema(&["x"], &[], "x")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = "y,id,x\n1,A,0\n1,A,abc\n";
        match ingest_reader(csv.as_bytes(), &schema(&["x"], &[], "x")).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "x");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn empty_cohort_rejected() {
        let cov = Covariate::Numeric {
            name: "x".into(),
            values: vec![0.0],
        };
        let err = CountDataset::new(vec![1], vec![cov], vec![0], vec!["a".into(), "b".into()], 0)
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn numeric_only_design_has_intercept_plus_columns() {
        let csv = "y,id,a,b\n1,A,0.5,2\n3,B,1.5,4\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["a", "b"], &[], "b")).unwrap();
        let d = build_design(&ds).unwrap();
        assert_eq!(d.ncols(), 3);
        assert!(d.matrix().column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.error_prone_column(), 2);
    }

    #[test]
    fn three_level_categorical_encodes_all_levels() {
        // Hand enumeration of the treatment coding with reference `a`.
        let expected = [("a", [0.0, 0.0]), ("b", [1.0, 0.0]), ("c", [0.0, 1.0])];
        let csv = "y,id,x,edu\n1,A,0,c\n2,A,1,a\n3,B,2,b\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["x", "edu"], &["edu"], "x")).unwrap();
        let d = build_design(&ds).unwrap();
        assert_eq!(d.ncols(), 4);
        assert_eq!(d.column_names(), ["(intercept)", "x", "edu=b", "edu=c"]);
        let levels = ["c", "a", "b"];
        for (i, lvl) in levels.iter().enumerate() {
            let want = expected.iter().find(|(l, _)| l == lvl).unwrap().1;
            assert_eq!(
                [d.matrix()[(i, 2)], d.matrix()[(i, 3)]],
                want,
                "level {lvl}"
            );
        }
    }

    #[test]
    fn single_level_categorical_is_degenerate() {
        let csv = "y,id,x,edu\n1,A,0,a\n2,A,1,a\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["x", "edu"], &["edu"], "x")).unwrap();
        assert!(matches!(build_design(&ds), Err(Error::DegenerateColumn(_))));
    }

    #[test]
    fn error_prone_must_be_numeric() {
        let s = schema(&["x", "edu"], &["edu"], "edu");
        assert!(matches!(
            ingest_reader("y,id,x,edu\n1,A,0,a\n".as_bytes(), &s),
            Err(Error::Schema(_))
        ));
    }
}
