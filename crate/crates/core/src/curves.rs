//! Learning-curve rows and their CSV form.
//!
//! Every trainer emits the base columns
//! `episode,return_raw,return_scaled,success_rolling_50,wall_ms`; GAIL adds
//! `disc_loss,disc_acc,surrogate_return` and BC adds `bc_loss`.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};

pub const BASE_COLUMNS: [&str; 5] = [
    "episode",
    "return_raw",
    "return_scaled",
    "success_rolling_50",
    "wall_ms",
];
pub const GAIL_COLUMNS: [&str; 3] = ["disc_loss", "disc_acc", "surrogate_return"];
pub const BC_COLUMNS: [&str; 1] = ["bc_loss"];
pub const ROLLING_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub return_raw: f64,
    pub return_scaled: f64,
    pub success_rolling_50: f64,
    pub wall_ms: u64,
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curve {
    pub extra_columns: Vec<&'static str>,
    pub rows: Vec<CurveRow>,
}

impl Curve {
    pub fn new(extra_columns: &[&'static str]) -> Self {
        Curve {
            extra_columns: extra_columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> String {
        BASE_COLUMNS
            .iter()
            .chain(self.extra_columns.iter())
            .copied()
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.episode, r.return_raw, r.return_scaled, r.success_rolling_50, r.wall_ms
            ));
            for v in &r.extra {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last_rolling_success(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.success_rolling_50)
    }
}

/// Success fraction over the most recent [`ROLLING_WINDOW`] episodes.
#[derive(Debug, Clone, Default)]
pub struct RollingSuccess {
    window: VecDeque<bool>,
}

impl RollingSuccess {
    pub fn push(&mut self, success: bool) -> f64 {
        self.window.push_back(success);
        if self.window.len() > ROLLING_WINDOW {
            self.window.pop_front();
        }
        self.window.iter().filter(|s| **s).count() as f64 / self.window.len() as f64
    }
}

/// Columns a curve CSV must start with, plus whatever extras its header names.
pub fn check_schema(csv_text: &str) -> Result<Vec<String>> {
    let mut lines = csv_text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format {
            what: "curve csv",
            line: 1,
            msg: "empty file".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    if header.len() < BASE_COLUMNS.len() || header[..BASE_COLUMNS.len()] != BASE_COLUMNS {
        return Err(Error::Format {
            what: "curve csv",
            line: 1,
            msg: format!("header must start with {}", BASE_COLUMNS.join(",")),
        });
    }
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() || fields.iter().any(|f| f.parse::<f64>().is_err()) {
            return Err(Error::Format {
                what: "curve csv",
                line: i + 2,
                msg: format!("expected {} numeric fields", header.len()),
            });
        }
    }
    Ok(header)
}
