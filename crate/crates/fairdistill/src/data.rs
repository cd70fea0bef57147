//! Tabular dataset ingestion: column roles, one-hot/min-max encoding,
//! deterministic train/test splits, and the inverse decoding used when
//! synthetic rows are written back out.
//!
//! Column roles split a table into three parts: `feature` columns are encoded
//! into the numeric matrix `x` (one-hot blocks for categoricals, min-max
//! scaled numerics in `[0, 1]`), the single `protected` column becomes a group
//! index `s` per row, and the single `target` column becomes a binary label
//! `y`. Protected and target columns are never part of `x`; models receive
//! them explicitly where their contracts say so.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column '{0}' in CSV header")]
    MissingColumn(String),
    #[error("unknown category '{value}' in column '{column}' at data row {row}")]
    UnknownCategory {
        column: String,
        row: usize,
        value: String,
    },
    #[error("non-finite or unparseable numeric '{value}' in column '{column}' at data row {row}")]
    NonFiniteNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error(
        "value {value} in column '{column}' at data row {row} is outside the declared range [{min}, {max}]"
    )]
    OutOfRange {
        column: String,
        row: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("CSV file has no data rows")]
    EmptyFile,
    #[error("dataset has {got} rows; at least {need} are required")]
    TooFewRows { got: usize, need: usize },
    #[error("encoded row width {got} does not match schema feature width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Protected,
    Target,
}

/// Column declaration as it appears in a run config. Vocabularies and numeric
/// ranges may be omitted, in which case they are inferred from the loaded
/// file (categories sorted lexicographically, range = observed min/max).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_role")]
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

fn default_role() -> ColumnRole {
    ColumnRole::Feature
}

/// Ordered column declarations for a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub columns: Vec<ColumnSpec>,
}

/// Concrete per-column value domain, known once a file has been loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ColumnDomain {
    Numeric { min: f64, max: f64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    pub domain: ColumnDomain,
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self.domain {
            ColumnDomain::Numeric { .. } => ColumnKind::Numeric,
            ColumnDomain::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    /// Width of this column's block in the encoded feature matrix.
    pub fn encoded_width(&self) -> usize {
        match &self.domain {
            ColumnDomain::Numeric { .. } => 1,
            ColumnDomain::Categorical { categories } => categories.len(),
        }
    }
}

/// One feature column's block inside the encoded matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureBlock {
    /// Index of the column in `schema.columns`.
    pub column: usize,
    /// Offset of the block's first cell in an encoded row.
    pub offset: usize,
    /// Number of cells (1 for numeric, vocabulary size for categorical).
    pub width: usize,
}

/// Fully resolved schema: ordered columns, each with a concrete domain.
/// Exactly one column is `protected` and exactly one is `target`; both must
/// be categorical, and the target must have exactly two categories (the
/// second category is the positive class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<Column>,
}

impl TabularSchema {
    pub fn validate(&self) -> Result<(), DataError> {
        let protected: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Protected)
            .collect();
        let target: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Target)
            .collect();
        if protected.len() != 1 {
            return Err(DataError::InvalidSchema(format!(
                "expected exactly one protected column, found {}",
                protected.len()
            )));
        }
        if target.len() != 1 {
            return Err(DataError::InvalidSchema(format!(
                "expected exactly one target column, found {}",
                target.len()
            )));
        }
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "duplicate column name '{}'",
                    col.name
                )));
            }
            match &col.domain {
                ColumnDomain::Numeric { min, max } => {
                    if !(min.is_finite() && max.is_finite()) || min > max {
                        return Err(DataError::InvalidSchema(format!(
                            "column '{}' has invalid numeric range [{min}, {max}]",
                            col.name
                        )));
                    }
                }
                ColumnDomain::Categorical { categories } => {
                    if categories.is_empty() {
                        return Err(DataError::InvalidSchema(format!(
                            "column '{}' has an empty vocabulary",
                            col.name
                        )));
                    }
                    let mut seen = HashSet::new();
                    for c in categories {
                        if !seen.insert(c.as_str()) {
                            return Err(DataError::InvalidSchema(format!(
                                "column '{}' has duplicate category '{c}'",
                                col.name
                            )));
                        }
                    }
                }
            }
        }
        let prot = protected[0];
        if prot.kind() != ColumnKind::Categorical {
            return Err(DataError::InvalidSchema(format!(
                "protected column '{}' must be categorical",
                prot.name
            )));
        }
        if prot.encoded_width() < 2 {
            return Err(DataError::InvalidSchema(format!(
                "protected column '{}' needs at least two subgroups",
                prot.name
            )));
        }
        let tgt = target[0];
        match &tgt.domain {
            ColumnDomain::Categorical { categories } if categories.len() == 2 => {}
            _ => {
                return Err(DataError::InvalidSchema(format!(
                    "target column '{}' must be categorical with exactly two categories",
                    tgt.name
                )));
            }
        }
        Ok(())
    }

    pub fn protected_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Protected)
            .expect("validated schema has a protected column")
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Target)
            .expect("validated schema has a target column")
    }

    pub fn protected_column(&self) -> &Column {
        &self.columns[self.protected_index()]
    }

    pub fn target_column(&self) -> &Column {
        &self.columns[self.target_index()]
    }

    /// Number of protected subgroups.
    pub fn num_groups(&self) -> usize {
        self.protected_column().encoded_width()
    }

    /// Feature columns in schema order, with their encoded block layout.
    pub fn feature_layout(&self) -> Vec<FeatureBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (i, col) in self.columns.iter().enumerate() {
            if col.role != ColumnRole::Feature {
                continue;
            }
            let width = col.encoded_width();
            blocks.push(FeatureBlock {
                column: i,
                offset,
                width,
            });
            offset += width;
        }
        blocks
    }

    /// Width of an encoded feature row.
    pub fn encoded_width(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .map(|c| c.encoded_width())
            .sum()
    }

    /// Names of feature columns in schema order.
    pub fn feature_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .map(|c| c.name.as_str())
            .collect()
    }

    /// A fully pinned spec for strict re-loading (e.g. of exported synthetic
    /// files) against this schema's vocabularies and ranges.
    pub fn to_spec(&self) -> SchemaSpec {
        SchemaSpec {
            columns: self
                .columns
                .iter()
                .map(|c| match &c.domain {
                    ColumnDomain::Numeric { min, max } => ColumnSpec {
                        name: c.name.clone(),
                        kind: ColumnKind::Numeric,
                        role: c.role,
                        categories: None,
                        min: Some(*min),
                        max: Some(*max),
                    },
                    ColumnDomain::Categorical { categories } => ColumnSpec {
                        name: c.name.clone(),
                        kind: ColumnKind::Categorical,
                        role: c.role,
                        categories: Some(categories.clone()),
                        min: None,
                        max: None,
                    },
                })
                .collect(),
        }
    }

    /// Encode one row of feature cells (in feature-column order) to its
    /// numeric representation.
    pub fn encode_feature_row(&self, cells: &[String]) -> Result<Vec<f64>, DataError> {
        let features: Vec<&Column> = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .collect();
        if cells.len() != features.len() {
            return Err(DataError::WidthMismatch {
                expected: features.len(),
                got: cells.len(),
            });
        }
        let mut out = Vec::with_capacity(self.encoded_width());
        for (col, cell) in features.iter().zip(cells) {
            encode_cell(col, cell, 0, &mut out)?;
        }
        Ok(out)
    }

    /// Decode one encoded feature row back to human-readable cells: each
    /// one-hot block by argmax, numerics de-scaled to their original range.
    pub fn decode_feature_row(&self, encoded: &[f64]) -> Result<Vec<String>, DataError> {
        if encoded.len() != self.encoded_width() {
            return Err(DataError::WidthMismatch {
                expected: self.encoded_width(),
                got: encoded.len(),
            });
        }
        let mut cells = Vec::new();
        for block in self.feature_layout() {
            let col = &self.columns[block.column];
            let slice = &encoded[block.offset..block.offset + block.width];
            match &col.domain {
                ColumnDomain::Numeric { min, max } => {
                    let v = min + slice[0].clamp(0.0, 1.0) * (max - min);
                    cells.push(format!("{v}"));
                }
                ColumnDomain::Categorical { categories } => {
                    let mut best = 0;
                    for (i, v) in slice.iter().enumerate() {
                        if *v > slice[best] {
                            best = i;
                        }
                    }
                    cells.push(categories[best].clone());
                }
            }
        }
        Ok(cells)
    }
}

fn encode_cell(
    col: &Column,
    cell: &str,
    row: usize,
    out: &mut Vec<f64>,
) -> Result<(), DataError> {
    match &col.domain {
        ColumnDomain::Numeric { min, max } => {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| DataError::NonFiniteNumeric {
                    column: col.name.clone(),
                    row,
                    value: cell.to_string(),
                })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteNumeric {
                    column: col.name.clone(),
                    row,
                    value: cell.to_string(),
                });
            }
            if v < *min || v > *max {
                return Err(DataError::OutOfRange {
                    column: col.name.clone(),
                    row,
                    value: v,
                    min: *min,
                    max: *max,
                });
            }
            // Constant columns scale to the midpoint so decoding returns min.
            let scaled = if max > min { (v - min) / (max - min) } else { 0.5 };
            out.push(scaled);
        }
        ColumnDomain::Categorical { categories } => {
            let trimmed = cell.trim();
            let idx = categories
                .iter()
                .position(|c| c == trimmed)
                .ok_or_else(|| DataError::UnknownCategory {
                    column: col.name.clone(),
                    row,
                    value: cell.to_string(),
                })?;
            for i in 0..categories.len() {
                out.push(if i == idx { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(())
}

/// Decode a batch of encoded feature rows. Inverse of the feature encoding:
/// argmax per one-hot block, numerics de-scaled to their original ranges.
pub fn decode_rows(
    encoded: &Array2<f64>,
    schema: &TabularSchema,
) -> Result<Vec<Vec<String>>, DataError> {
    encoded
        .axis_iter(Axis(0))
        .map(|row| schema.decode_feature_row(&row.to_vec()))
        .collect()
}

/// An encoded dataset: feature matrix plus per-row protected group and
/// binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: TabularSchema,
    pub x: Array2<f64>,
    pub s: Vec<usize>,
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    /// One-hot encoding of the protected group per row, `n x num_groups`.
    pub fn protected_onehot(&self) -> Array2<f64> {
        let g = self.schema.num_groups();
        let mut m = Array2::zeros((self.s.len(), g));
        for (i, &si) in self.s.iter().enumerate() {
            m[[i, si]] = 1.0;
        }
        m
    }

    /// Two-cell one-hot encoding of the binary target per row.
    pub fn target_onehot(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.y.len(), 2));
        for (i, &yi) in self.y.iter().enumerate() {
            m[[i, yi as usize]] = 1.0;
        }
        m
    }

    /// New dataset with the given row indices, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let mut x = Array2::zeros((idx.len(), self.x.ncols()));
        let mut s = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for (out_i, &i) in idx.iter().enumerate() {
            x.row_mut(out_i).assign(&self.x.row(i));
            s.push(self.s[i]);
            y.push(self.y[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            x,
            s,
            y,
        }
    }
}

/// A deterministic train/test split of a dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Load a CSV file and encode it against a schema spec.
///
/// The header must contain every schema column (extra CSV columns are
/// ignored). Row order is preserved. Categorical cells outside a declared
/// vocabulary and numerics outside a declared range are hard errors; columns
/// without a declared vocabulary/range get them inferred from the file
/// (categories sorted lexicographically).
pub fn load_csv<P: AsRef<Path>>(path: P, spec: &SchemaSpec) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut positions = Vec::with_capacity(spec.columns.len());
    for col in &spec.columns {
        let pos = headers
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| DataError::MissingColumn(col.name.clone()))?;
        positions.push(pos);
    }

    let mut records: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        records.push(
            positions
                .iter()
                .map(|&p| record.get(p).unwrap_or("").trim().to_string())
                .collect(),
        );
    }
    if records.is_empty() {
        return Err(DataError::EmptyFile);
    }

    let schema = resolve_schema(spec, &records)?;
    schema.validate()?;
    encode_dataset(schema, &records)
}

/// Resolve a spec into a concrete schema, inferring missing vocabularies and
/// ranges from the raw records (column j of `records` corresponds to spec
/// column j).
fn resolve_schema(
    spec: &SchemaSpec,
    records: &[Vec<String>],
) -> Result<TabularSchema, DataError> {
    let mut columns = Vec::with_capacity(spec.columns.len());
    for (j, cs) in spec.columns.iter().enumerate() {
        let domain = match cs.kind {
            ColumnKind::Numeric => {
                if let (Some(min), Some(max)) = (cs.min, cs.max) {
                    ColumnDomain::Numeric { min, max }
                } else {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for (row, rec) in records.iter().enumerate() {
                        let v: f64 =
                            rec[j].parse().map_err(|_| DataError::NonFiniteNumeric {
                                column: cs.name.clone(),
                                row,
                                value: rec[j].clone(),
                            })?;
                        if !v.is_finite() {
                            return Err(DataError::NonFiniteNumeric {
                                column: cs.name.clone(),
                                row,
                                value: rec[j].clone(),
                            });
                        }
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    // A declared half-open bound still pins that side; values
                    // outside it are rejected during encoding.
                    ColumnDomain::Numeric {
                        min: cs.min.unwrap_or(lo),
                        max: cs.max.unwrap_or(hi),
                    }
                }
            }
            ColumnKind::Categorical => {
                if let Some(categories) = &cs.categories {
                    ColumnDomain::Categorical {
                        categories: categories.clone(),
                    }
                } else {
                    let mut seen: Vec<String> = Vec::new();
                    for rec in records {
                        if !seen.contains(&rec[j]) {
                            seen.push(rec[j].clone());
                        }
                    }
                    seen.sort();
                    ColumnDomain::Categorical { categories: seen }
                }
            }
        };
        columns.push(Column {
            name: cs.name.clone(),
            role: cs.role,
            domain,
        });
    }
    Ok(TabularSchema { columns })
}

fn encode_dataset(
    schema: TabularSchema,
    records: &[Vec<String>],
) -> Result<Dataset, DataError> {
    let width = schema.encoded_width();
    let prot_idx = schema.protected_index();
    let tgt_idx = schema.target_index();
    let prot_categories = match &schema.protected_column().domain {
        ColumnDomain::Categorical { categories } => categories.clone(),
        ColumnDomain::Numeric { .. } => unreachable!("validated protected is categorical"),
    };
    let tgt_categories = match &schema.target_column().domain {
        ColumnDomain::Categorical { categories } => categories.clone(),
        ColumnDomain::Numeric { .. } => unreachable!("validated target is categorical"),
    };

    let mut x = Array2::zeros((records.len(), width));
    let mut s = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for (row, rec) in records.iter().enumerate() {
        let mut enc = Vec::with_capacity(width);
        for (j, col) in schema.columns.iter().enumerate() {
            if col.role == ColumnRole::Feature {
                encode_cell(col, &rec[j], row, &mut enc)?;
            }
        }
        x.row_mut(row)
            .assign(&ndarray::ArrayView1::from(enc.as_slice()));

        let sv = &rec[prot_idx];
        let si = prot_categories.iter().position(|c| c == sv).ok_or_else(|| {
            DataError::UnknownCategory {
                column: schema.protected_column().name.clone(),
                row,
                value: sv.clone(),
            }
        })?;
        s.push(si);

        let tv = &rec[tgt_idx];
        let ti = tgt_categories.iter().position(|c| c == tv).ok_or_else(|| {
            DataError::UnknownCategory {
                column: schema.target_column().name.clone(),
                row,
                value: tv.clone(),
            }
        })?;
        y.push(ti as u8);
    }
    Ok(Dataset { schema, x, s, y })
}

/// Deterministic 80/20 split. Train size is `floor(0.8 * n)`; row indices are
/// shuffled with a seeded generator and each side keeps ascending row order.
pub fn split_80_20(d: &Dataset, seed: u64) -> Result<SplitPair, DataError> {
    let n = d.rows();
    if n < 5 {
        return Err(DataError::TooFewRows { got: n, need: 5 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = crate::util::shuffled_indices(n, &mut rng);
    let train_len = (0.8 * n as f64).floor() as usize;
    let mut train_idx = idx[..train_len].to_vec();
    let mut test_idx = idx[train_len..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitPair {
        train: d.select_rows(&train_idx),
        test: d.select_rows(&test_idx),
        seed,
    })
}
