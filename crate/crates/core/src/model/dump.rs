//! Attention matrices as plain text.
//!
//! One file per (layer, module, head, slice), named
//! `layer{l}_{fsa|bta}_h{h}_s{slice}.txt`, holding a `rows cols` header line
//! followed by one line of space-separated decimals per row. `index.json`
//! lists every file with its coordinates.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionRecord, Axis};

/// Which records to keep; an empty list keeps everything.
#[derive(Clone, Debug, Default)]
pub struct DumpFilter {
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub axes: Vec<Axis>,
}

impl DumpFilter {
    fn keeps(&self, r: &AttentionRecord) -> bool {
        (self.layers.is_empty() || self.layers.contains(&r.block))
            && (self.heads.is_empty() || self.heads.contains(&r.head))
            && (self.axes.is_empty() || self.axes.contains(&r.axis))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub file: String,
    pub layer: usize,
    pub module: String,
    pub head: usize,
    pub slice: usize,
    pub rows: usize,
    pub cols: usize,
    /// Largest `|Σ row − 1|` of the stored matrix.
    pub max_row_sum_error: f64,
}

pub fn format_matrix(rows: usize, cols: usize, data: &[f32]) -> String {
    let mut text = format!("{rows} {cols}\n");
    for row in data.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.10}")).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    text
}

/// Parse the text format back into `(rows, cols, row-major values)`.
pub fn parse_matrix(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: String| Error::Config(format!("attention matrix: {m}"));
    let mut lines = text.lines();
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad(format!("bad header value `{v}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = header[..] else {
        return Err(bad("header must be `rows cols`".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(format!("bad value `{v}` on row {i}"))))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(bad(format!("row {i} has {} values, expected {cols}", row.len())));
        }
        data.extend(row);
    }
    if data.len() != rows * cols {
        return Err(bad(format!("{} rows, expected {rows}", data.len() / cols.max(1))));
    }
    Ok((rows, cols, data))
}

/// Write the kept records under `dir` and return the index.
pub fn write_dump(records: &[AttentionRecord], filter: &DumpFilter, dir: &Path) -> Result<Vec<DumpEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::new();
    for r in records.iter().filter(|r| filter.keeps(r)) {
        let module = r.axis.label();
        let file = format!("layer{}_{module}_h{}_s{}.txt", r.block, r.head, r.index);
        let text = format_matrix(r.len, r.len, &r.weights);
        let path = dir.join(&file);
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        let (_, _, stored) = parse_matrix(&text)?;
        let max_row_sum_error = stored
            .chunks(r.len)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        index.push(DumpEntry {
            file,
            layer: r.block,
            module: module.to_string(),
            head: r.head,
            slice: r.index,
            rows: r.len,
            cols: r.len,
            max_row_sum_error,
        });
    }
    let path = dir.join("index.json");
    fs::write(&path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}
