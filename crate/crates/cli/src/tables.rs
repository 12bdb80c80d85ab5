use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use prsfm::generate::Exclusion;
use prsfm::Error;

use crate::error::CliResult;

/// Header-keyed tab-separated table.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    path: String,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| schema(path, "empty table"))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let r: Vec<String> = l.split('\t').map(str::to_string).collect();
            if r.len() != header.len() {
                return Err(schema(path, &format!("line {}: {} fields, header has {}", i + 2, r.len(), header.len())).into());
            }
            rows.push(r);
        }
        Ok(Self {
            header,
            rows,
            path: path.display().to_string(),
        })
    }

    pub fn col(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(Path::new(&self.path), &format!("missing column {name:?}")).into())
    }

    pub fn f64_at(&self, row: usize, col: usize) -> CliResult<f64> {
        let v = &self.rows[row][col];
        v.parse()
            .map_err(|_| schema(Path::new(&self.path), &format!("line {}: {v:?} is not a number", row + 2)).into())
    }
}

fn schema(path: &Path, reason: &str) -> prsfm::Error {
    Error::Schema {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub const SCORE_HEADER: &str = "participant_id\testimator\tvalue\tn_paths\ttruncated_paths";

/// `(participant_id, value)` rows of one estimator from a score file.
pub fn read_score_column(path: &Path, estimator: &str) -> CliResult<Vec<(String, f64)>> {
    let t = Table::read(path)?;
    let (id, est, val) = (t.col("participant_id")?, t.col("estimator")?, t.col("value")?);
    let mut out = Vec::new();
    for i in 0..t.rows.len() {
        if t.rows[i][est] == estimator {
            out.push((t.rows[i][id].clone(), t.f64_at(i, val)?));
        }
    }
    if out.is_empty() {
        return Err(schema(path, &format!("no rows for estimator {estimator:?}")).into());
    }
    Ok(out)
}

/// Score file rows for single-pass classifiers.
pub fn score_rows(out: &mut String, estimator: &str, scores: &BTreeMap<String, f64>) {
    for (id, v) in scores {
        let _ = writeln!(out, "{id}\t{estimator}\t{v}\t1\t0");
    }
}

pub fn write_exclusions(excluded: &[Exclusion], path: &Path) -> CliResult<()> {
    let mut s = String::from("participant_id\treason\n");
    for e in excluded {
        let reason = serde_json::to_value(e.reason)?;
        let _ = writeln!(s, "{}\t{}", e.participant_id, reason.as_str().unwrap_or_default());
    }
    write_text(path, &s)
}

pub fn write_text(path: &Path, s: &str) -> CliResult<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))?;
    Ok(())
}
