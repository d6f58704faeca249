//! Named per-sample feature vectors.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Rows of named features, one row per sample, in insertion order.
///
/// Every column is oriented so that larger values look more like a
/// training member. Non-finite values are rejected on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>) -> Self {
        Self {
            feature_names,
            ids: Vec::new(),
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push_row(&mut self, sample_id: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                got: values.len(),
            });
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sample_id: sample_id.to_string(),
                feature: self.feature_names[j].clone(),
            });
        }
        if self.index.contains_key(sample_id) {
            return Err(Error::DuplicateSample(sample_id.to_string()));
        }
        self.index.insert(sample_id.to_string(), self.rows.len());
        self.ids.push(sample_id.to_string());
        self.rows.push(values);
        Ok(())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, sample_id: &str) -> Option<&[f64]> {
        self.index.get(sample_id).map(|&i| self.rows[i].as_slice())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Sub-matrix holding `ids` in the given order.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<FeatureMatrix> {
        let mut out = FeatureMatrix::new(self.feature_names.clone());
        for id in ids {
            let id = id.as_ref();
            let row = self.row(id).ok_or_else(|| Error::SchemaViolation {
                sample_id: id.to_string(),
                field: "missing from feature matrix".into(),
            })?;
            out.push_row(id, row.to_vec())?;
        }
        Ok(out)
    }

    /// Rows by position.
    pub fn take_rows(&self, positions: &[usize]) -> Vec<Vec<f64>> {
        positions.iter().map(|&i| self.rows[i].clone()).collect()
    }

    /// CSV with header `id,<feature names>`; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "id")?;
        for name in &self.feature_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            write!(w, "{id}")?;
            for v in row {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<FeatureMatrix> {
        let mut lines = r.lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            Some((_, Err(e))) => {
                return Err(Error::MalformedLine { line_no: 1, message: e.to_string() })
            }
            None => return Err(Error::EmptyInput),
        };
        let mut cols = header.trim_end().split(',');
        if cols.next() != Some("id") {
            return Err(Error::MalformedLine {
                line_no: 1,
                message: "header must start with `id`".into(),
            });
        }
        let mut m = FeatureMatrix::new(cols.map(str::to_string).collect());
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::MalformedLine { line_no, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim_end().split(',');
            let id = fields.next().unwrap_or_default();
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MalformedLine { line_no, message: e.to_string() })?;
            m.push_row(id, values)?;
        }
        Ok(m)
    }
}
