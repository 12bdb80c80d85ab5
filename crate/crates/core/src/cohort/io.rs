//! Line-delimited events files and cohort directories.
//!
//! Events file: UTF-8, tab-separated, header
//! `participant_id time_days code kind numeric_value visit_id`, one record
//! per line, empty `numeric_value`/`visit_id` allowed. Demographic rows are
//! folded into [`ParticipantRecord::demographics`].
//!
//! A cohort directory holds `events.tsv`, optional `prs.tsv` and
//! `labels.tsv`, and a `manifest.json` with epoch, provenance and counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, EventKind, EventRecord, ParticipantRecord, Provenance, TaskLabel, DEFAULT_EPOCH};
use crate::error::{Error, Result};
use crate::prs::PrsVector;

pub const EVENTS_HEADER: [&str; 6] = [
    "participant_id",
    "time_days",
    "code",
    "kind",
    "numeric_value",
    "visit_id",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedLine>,
}

fn parse_record(fields: &[&str]) -> std::result::Result<EventRecord, String> {
    if fields.len() != EVENTS_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            EVENTS_HEADER.len(),
            fields.len()
        ));
    }
    let participant_id = fields[0].trim();
    if participant_id.is_empty() {
        return Err("empty participant_id".into());
    }
    let time_days: i64 = fields[1]
        .trim()
        .parse()
        .map_err(|_| format!("time_days {:?} is not an integer", fields[1]))?;
    let kind = EventKind::parse(fields[3].trim())
        .ok_or_else(|| format!("unknown kind {:?}", fields[3]))?;
    let numeric_value = match fields[4].trim() {
        "" => None,
        v => Some(
            v.parse::<f64>()
                .map_err(|_| format!("numeric_value {v:?} is not a number"))?,
        ),
    };
    let visit_id = match fields[5].trim() {
        "" => None,
        v => Some(v.to_string()),
    };
    let rec = EventRecord {
        participant_id: participant_id.to_string(),
        time_days,
        code: fields[2].trim().to_string(),
        kind,
        numeric_value,
        visit_id,
    };
    rec.validate()?;
    Ok(rec)
}

/// Parses an events file. Malformed lines are collected in the report; only
/// an unreadable file or a bad header is fatal.
pub fn load_events(path: impl AsRef<Path>) -> Result<(Cohort, LoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let mut report = LoadReport::default();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, ParticipantRecord> = HashMap::new();

    let header = loop {
        match lines.next() {
            None => return Ok((Cohort::empty(Provenance::Ingested), report)),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
        }
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    for (i, want) in EVENTS_HEADER.iter().enumerate() {
        match cols.get(i) {
            Some(c) if c == want => {}
            Some(c) => {
                return Err(Error::Schema {
                    path: path.into(),
                    reason: format!("column {} must be {want:?}, found {c:?}", i + 1),
                })
            }
            None => {
                return Err(Error::Schema {
                    path: path.into(),
                    reason: format!("missing required column {want:?}"),
                })
            }
        }
    }

    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match parse_record(&fields) {
            Ok(rec) => {
                report.accepted += 1;
                let p = by_id.entry(rec.participant_id.clone()).or_insert_with(|| {
                    order.push(rec.participant_id.clone());
                    ParticipantRecord::new(rec.participant_id.clone())
                });
                if rec.kind == EventKind::Demographic {
                    p.demographics.push(rec.code);
                } else {
                    p.events.push(rec);
                }
            }
            Err(reason) => {
                log::warn!("{}:{}: {reason}", path.display(), idx + 1);
                report.rejected.push(RejectedLine {
                    line: idx + 1,
                    reason,
                });
            }
        }
    }

    let participants = order
        .into_iter()
        .map(|id| {
            let mut p = by_id.remove(&id).expect("participant registered");
            p.sort_events();
            p
        })
        .collect();
    Ok((
        Cohort {
            participants,
            epoch: DEFAULT_EPOCH.to_string(),
            provenance: Provenance::Ingested,
        },
        report,
    ))
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation.
    format!("{v:?}")
}

pub fn write_events(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = EVENTS_HEADER.join("\t");
    out.push('\n');
    for p in &cohort.participants {
        let day0 = p.first_event_day().unwrap_or(0);
        for d in &p.demographics {
            let _ = writeln!(out, "{}\t{day0}\t{d}\tdemographic\t\t", p.participant_id);
        }
        for e in &p.events {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.participant_id,
                e.time_days,
                e.code,
                e.kind.as_str(),
                e.numeric_value.map(fmt_f64).unwrap_or_default(),
                e.visit_id.as_deref().unwrap_or(""),
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub epoch: String,
    pub provenance: Provenance,
    pub n_participants: usize,
    pub n_events: usize,
    pub n_with_prs: usize,
    pub tasks: Vec<String>,
}

/// Writes `events.tsv`, `prs.tsv`, `labels.tsv` and `manifest.json`.
pub fn save_cohort(cohort: &Cohort, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_events(cohort, dir.join("events.tsv"))?;

    let with_prs: Vec<&ParticipantRecord> =
        cohort.participants.iter().filter(|p| p.prs.is_some()).collect();
    if let Some(first) = with_prs.first() {
        let traits = &first.prs.as_ref().unwrap().trait_ids;
        let mut out = String::from("participant_id");
        for t in traits {
            out.push('\t');
            out.push_str(t);
        }
        out.push('\n');
        for p in &with_prs {
            out.push_str(&p.participant_id);
            for v in &p.prs.as_ref().unwrap().values {
                out.push('\t');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        let path = dir.join("prs.tsv");
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }

    let mut tasks = std::collections::BTreeSet::new();
    let mut out = String::from("participant_id\ttask\tpositive\ttime_zero_days\thorizon_days\n");
    for p in &cohort.participants {
        for (task, l) in &p.labels {
            tasks.insert(task.clone());
            let _ = writeln!(
                out,
                "{}\t{task}\t{}\t{}\t{}",
                p.participant_id,
                u8::from(l.positive),
                l.time_zero_days,
                l.horizon_days
            );
        }
    }
    let path = dir.join("labels.tsv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

    let manifest = CohortManifest {
        epoch: cohort.epoch.clone(),
        provenance: cohort.provenance,
        n_participants: cohort.len(),
        n_events: cohort.n_events(),
        n_with_prs: with_prs.len(),
        tasks: tasks.into_iter().collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

fn read_tsv(path: &Path) -> Result<Option<(Vec<String>, Vec<Vec<String>>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else {
        return Ok(Some((Vec::new(), Vec::new())));
    };
    let header: Vec<String> = header.split('\t').map(|s| s.trim().to_string()).collect();
    let rows = lines
        .map(|l| l.split('\t').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok(Some((header, rows)))
}

/// Reads a participants-by-traits matrix (`participant_id` then trait columns).
pub fn read_prs_matrix(path: &Path) -> Result<Option<(Vec<String>, Vec<(String, Vec<f64>)>)>> {
    let Some((header, rows)) = read_tsv(path)? else {
        return Ok(None);
    };
    let schema = |reason: String| Error::Schema {
        path: path.into(),
        reason,
    };
    if header.first().map(String::as_str) != Some("participant_id") {
        return Err(schema("first column must be participant_id".into()));
    }
    let traits = header[1..].to_vec();
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != header.len() {
            return Err(schema(format!("row {} has {} fields", i + 2, row.len())));
        }
        let vals = row[1..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| schema(format!("row {}: {e}", i + 2)))?;
        out.push((row[0].clone(), vals));
    }
    Ok(Some((traits, out)))
}

/// Loads a cohort directory written by [`save_cohort`].
pub fn load_cohort(dir: impl AsRef<Path>) -> Result<(Cohort, LoadReport)> {
    let dir = dir.as_ref();
    let (mut cohort, report) = load_events(dir.join("events.tsv"))?;
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: CohortManifest = serde_json::from_str(&text)?;
        cohort.epoch = m.epoch;
        cohort.provenance = m.provenance;
    }
    let index: HashMap<String, usize> = cohort
        .participants
        .iter()
        .enumerate()
        .map(|(i, p)| (p.participant_id.clone(), i))
        .collect();

    if let Some((traits, rows)) = read_prs_matrix(&dir.join("prs.tsv"))? {
        for (id, values) in rows {
            if let Some(&i) = index.get(&id) {
                cohort.participants[i].prs = Some(PrsVector::new(traits.clone(), values)?);
            }
        }
    }

    let labels_path = dir.join("labels.tsv");
    if let Some((header, rows)) = read_tsv(&labels_path)? {
        if header.len() < 5 {
            return Err(Error::Schema {
                path: labels_path,
                reason: "labels need participant_id, task, positive, time_zero_days, horizon_days"
                    .into(),
            });
        }
        let mut labels: BTreeMap<(usize, String), TaskLabel> = BTreeMap::new();
        for (ln, row) in rows.iter().enumerate() {
            let bad = |what: &str| Error::Schema {
                path: labels_path.clone(),
                reason: format!("line {}: bad {what}", ln + 2),
            };
            let Some(&i) = index.get(&row[0]) else { continue };
            let positive = match row.get(2).map(String::as_str) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                _ => return Err(bad("positive")),
            };
            let t0 = row.get(3).and_then(|v| v.parse().ok()).ok_or_else(|| bad("time_zero_days"))?;
            let h = row.get(4).and_then(|v| v.parse().ok()).ok_or_else(|| bad("horizon_days"))?;
            labels.insert(
                (i, row[1].clone()),
                TaskLabel {
                    positive,
                    time_zero_days: t0,
                    horizon_days: h,
                },
            );
        }
        for ((i, task), l) in labels {
            cohort.participants[i].labels.insert(task, l);
        }
    }
    Ok((cohort, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_line_fixture_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.tsv",
            "participant_id\ttime_days\tcode\tkind\tnumeric_value\tvisit_id\n\
             p1\t30\tC2\tcondition\t\tv2\n\
             p1\t10\tLAB\tmeasurement\t4.5\tv1\n\
             p1\t20\tC1\tprocedure\t\t\n",
        );
        let (c, r) = load_events(&p).unwrap();
        assert_eq!(c.len(), 1);
        assert!(r.rejected.is_empty());
        let days: Vec<i64> = c.participants[0].events.iter().map(|e| e.time_days).collect();
        assert_eq!(days, vec![10, 20, 30]);
        assert_eq!(c.participants[0].events[0].numeric_value, Some(4.5));
    }

    #[test]
    fn empty_file_is_empty_cohort() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.tsv", "");
        let (c, r) = load_events(&p).unwrap();
        assert!(c.is_empty());
        assert!(r.rejected.is_empty());
    }

    #[test]
    fn malformed_records_are_rejected_individually() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.tsv",
            "participant_id\ttime_days\tcode\tkind\tnumeric_value\tvisit_id\n\
             p1\t1\tLAB\tmeasurement\t\t\n\
             p1\t2\tC\tcondition\t\t\n\
             p1\t-4\tC\tcondition\t\t\n\
             p1\tx\tC\tcondition\t\t\n\
             p1\t3\tC\tcondition\t2.0\t\n\
             p1\t3\tC\tbogus\t\t\n",
        );
        let (c, r) = load_events(&p).unwrap();
        assert_eq!(c.participants[0].events.len(), 1);
        let lines: Vec<usize> = r.rejected.iter().map(|x| x.line).collect();
        assert_eq!(lines, vec![2, 4, 5, 6, 7]);
        assert!(r.rejected[0].reason.contains("measurement"));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.tsv", "participant_id\ttime_days\tcode\tkind\n");
        assert!(matches!(load_events(&p), Err(Error::Schema { .. })));
        assert!(matches!(
            load_events(dir.path().join("nope.tsv")),
            Err(Error::Io { .. })
        ));
    }
}
