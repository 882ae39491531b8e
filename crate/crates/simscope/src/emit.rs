//! CSV and JSON rendering of results.
//!
//! CSV columns are `left_layer,right_layer,metric,score,n_examples,seeds_averaged`,
//! one row per cell in row-major order. Scores carry 17 significant digits,
//! enough to recover every `f64` exactly.

use std::path::Path;

use serde::Serialize;
use simscope_core::SimilarityGrid;

use crate::fsutil;
use crate::synth::SynthTable;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "left_layer,right_layer,metric,score,n_examples,seeds_averaged";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

pub fn format_score(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn grid_csv(grid: &SimilarityGrid) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, r) in grid.rows.iter().enumerate() {
        for (j, c) in grid.cols.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(r),
                csv_field(c),
                grid.metric,
                format_score(grid.get(i, j)),
                grid.n_examples,
                grid.seeds_averaged
            ));
        }
    }
    out
}

pub fn synth_csv(table: &SynthTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &table.scores {
        out.push_str(&format!("{},{},{},{},{},1\n", s.left, s.right, s.metric, format_score(s.score), s.n_examples));
    }
    out
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialise");
    s.push('\n');
    s
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fsutil::create_dir_all(dir)?;
    }
    fsutil::write_atomic(path, contents.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use simscope_core::Metric;

    fn grid() -> SimilarityGrid {
        SimilarityGrid {
            rows: vec!["input".into(), "mean".into()],
            cols: vec!["input".into(), "sampled".into()],
            scores: vec![1.0, 0.1 + 0.2, 1.0 / 3.0, 5e-324],
            metric: Metric::Cka,
            n_examples: 172,
            seeds_averaged: 5,
            details: None,
        }
    }

    #[test]
    fn two_by_two_csv() {
        let csv = grid_csv(&grid());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[2], "input,sampled,cka,3.0000000000000004e-1,172,5");
    }

    #[test]
    fn scores_reparse_bit_exactly() {
        let g = grid();
        for (line, want) in grid_csv(&g).lines().skip(1).zip(&g.scores) {
            let v: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
            assert_eq!(v.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn json_round_trip() {
        let g = grid();
        let back: SimilarityGrid = serde_json::from_str(&json(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(OutputFormat::from_path(Path::new("a/b.json")), OutputFormat::Json);
        assert_eq!(OutputFormat::from_path(Path::new("a/b.csv")), OutputFormat::Csv);
        assert_eq!(OutputFormat::from_path(Path::new("out")), OutputFormat::Csv);
    }
}
