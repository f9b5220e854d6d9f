//! Dense row-major feature matrix with labels and per-row weights.
//!
//! Missing cells are stored as NaN; every other cell is finite.

use serde::{Deserialize, Serialize};

use crate::cache::{CacheError, StagePayload};

/// Marker for a missing cell.
pub const MISSING: f64 = f64::NAN;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MatrixError {
    #[error("row has {got} values, expected {expected}")]
    Width { expected: usize, got: usize },
    #[error("row {row}: cell {col} is infinite")]
    Infinite { row: usize, col: usize },
    #[error("row {row}: label must be 0 or 1, got {label}")]
    Label { row: usize, label: u8 },
    #[error("row {row}: weight must be positive and finite, got {weight}")]
    Weight { row: usize, weight: f64 },
    #[error("CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    column_names: Vec<String>,
    #[serde(with = "nan_as_null")]
    values: Vec<f64>,
    labels: Vec<u8>,
    weights: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(column_names: Vec<String>) -> Self {
        FeatureMatrix { column_names, values: Vec::new(), labels: Vec::new(), weights: Vec::new() }
    }

    pub fn from_rows(
        column_names: Vec<String>,
        rows: impl IntoIterator<Item = (Vec<f64>, u8)>,
    ) -> Result<Self, MatrixError> {
        let mut m = FeatureMatrix::new(column_names);
        for (r, y) in rows {
            m.push_row(&r, y, 1.0)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64], label: u8, weight: f64) -> Result<(), MatrixError> {
        let n = self.n_rows();
        if row.len() != self.width() {
            return Err(MatrixError::Width { expected: self.width(), got: row.len() });
        }
        if let Some(col) = row.iter().position(|v| v.is_infinite()) {
            return Err(MatrixError::Infinite { row: n, col });
        }
        if label > 1 {
            return Err(MatrixError::Label { row: n, label });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(MatrixError::Weight { row: n, weight });
        }
        self.values.extend_from_slice(row);
        self.labels.push(label);
        self.weights.push(weight);
        Ok(())
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width() + col]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), MatrixError> {
        if weights.len() != self.n_rows() {
            return Err(MatrixError::Width { expected: self.n_rows(), got: weights.len() });
        }
        if let Some((row, &weight)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(MatrixError::Weight { row, weight });
        }
        self.weights = weights;
        Ok(())
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows()).map(move |r| self.get(r, col))
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::new(self.column_names.clone());
        for &r in rows {
            out.values.extend_from_slice(self.row(r));
            out.labels.push(self.labels[r]);
            out.weights.push(self.weights[r]);
        }
        out
    }

    /// New matrix without the named column.
    pub fn drop_column(&self, name: &str) -> FeatureMatrix {
        let Some(skip) = self.column_index(name) else { return self.clone() };
        let mut names = self.column_names.clone();
        names.remove(skip);
        let mut out = FeatureMatrix::new(names);
        for r in 0..self.n_rows() {
            out.values.extend(self.row(r).iter().enumerate().filter(|(c, _)| *c != skip).map(|(_, v)| *v));
        }
        out.labels = self.labels.clone();
        out.weights = self.weights.clone();
        out
    }

    /// CSV with the feature columns followed by `label` and `weight`;
    /// missing cells are empty.
    pub fn to_csv(&self) -> Result<Vec<u8>, MatrixError> {
        let err = |e: csv::Error| MatrixError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.column_names.iter().map(String::as_str).collect();
        header.extend(["label", "weight"]);
        w.write_record(&header).map_err(err)?;
        let mut rec = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            rec.clear();
            rec.extend(self.row(r).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            rec.push(self.labels[r].to_string());
            rec.push(self.weights[r].to_string());
            w.write_record(&rec).map_err(err)?;
        }
        w.into_inner().map_err(|e| MatrixError::Csv(e.to_string()))
    }

    /// Reads a CSV whose label column is `label_column`; an optional `weight`
    /// column supplies row weights, every other column is a feature.
    pub fn from_csv(bytes: &[u8], label_column: &str) -> Result<FeatureMatrix, MatrixError> {
        let err = |e: csv::Error| MatrixError::Csv(e.to_string());
        let mut rdr = csv::Reader::from_reader(bytes);
        let headers = rdr.headers().map_err(err)?.clone();
        let label_i = headers
            .iter()
            .position(|h| h.trim() == label_column)
            .ok_or_else(|| MatrixError::Csv(format!("missing label column `{label_column}`")))?;
        let weight_i = headers.iter().position(|h| h.trim() == "weight");
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_i && Some(i) != weight_i).collect();
        let names = feature_cols.iter().map(|&i| headers[i].trim().to_string()).collect();
        let mut m = FeatureMatrix::new(names);
        let mut row = Vec::with_capacity(feature_cols.len());
        for rec in rdr.records() {
            let rec = rec.map_err(err)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            row.clear();
            for &i in &feature_cols {
                let c = rec[i].trim();
                row.push(if c.is_empty() {
                    MISSING
                } else {
                    c.parse::<f64>().map_err(|_| MatrixError::Csv(format!("line {line}: bad number `{c}`")))?
                });
            }
            let label = parse_label(rec[label_i].trim())
                .ok_or_else(|| MatrixError::Csv(format!("line {line}: bad label `{}`", &rec[label_i])))?;
            let weight = match weight_i {
                Some(i) => {
                    rec[i].trim().parse::<f64>().map_err(|_| MatrixError::Csv(format!("line {line}: bad weight")))?
                }
                None => 1.0,
            };
            m.push_row(&row, label, weight)?;
        }
        Ok(m)
    }
}

/// JSON has no NaN; missing cells are written as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_nan() { None } else { Some(*x) }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// Accepts 0/1, -1/1 and quoted variants such as `'1'`.
fn parse_label(s: &str) -> Option<u8> {
    let t = s.trim_matches(|c| c == '\'' || c == '"').trim();
    match t.parse::<f64>().ok()? {
        v if v == 1.0 => Some(1),
        v if v == 0.0 || v == -1.0 => Some(0),
        _ => None,
    }
}

impl StagePayload for FeatureMatrix {
    const FILE_NAME: &'static str = "data.csv";

    fn encode(&self) -> Result<Vec<u8>, CacheError> {
        self.to_csv().map_err(|e| CacheError::Codec(e.to_string()))
    }

    fn decode(bytes: &[u8]) -> Result<Self, CacheError> {
        FeatureMatrix::from_csv(bytes, "label").map_err(|e| CacheError::Codec(e.to_string()))
    }

    fn row_count(&self) -> usize {
        self.n_rows()
    }
}
