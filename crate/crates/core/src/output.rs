//! Plain-text writers: CSV with `.` decimals, LF endings and 17 significant
//! digits, and pretty-printed JSON.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::estimator::DensityEstimate;

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV table built in memory.
#[derive(Debug, Clone, Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut t = Self::default();
        t.push_line(header.iter().map(|s| s.as_ref().to_string()));
        t
    }

    fn push_line(&mut self, fields: impl Iterator<Item = String>) {
        let line: Vec<String> = fields.collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    /// Appends a row of already formatted fields.
    pub fn row(&mut self, fields: Vec<String>) {
        self.push_line(fields.into_iter());
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Coordinate column names: `y` in one dimension, `y1..yd` otherwise.
pub fn coordinate_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// `{y..., value, stderr, n, bandwidth}`.
pub fn density_table(est: &DensityEstimate) -> Table {
    let mut header = coordinate_names("y", est.dim);
    header.extend(["value", "stderr", "n", "bandwidth"].map(String::from));
    let mut t = Table::new(&header);
    for ((y, v), s) in est.queries.iter().zip(&est.values).zip(&est.stderrs) {
        let mut row: Vec<String> = y.iter().map(|c| fmt_f64(*c)).collect();
        row.push(fmt_f64(*v));
        row.push(fmt_f64(*s));
        row.push(est.n_paths.to_string());
        row.push(fmt_f64(est.bandwidth));
        t.row(row);
    }
    t
}

pub fn json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}
