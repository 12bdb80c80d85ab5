//! Participant event streams: types, frequency filters and train/test splits.

mod io;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prs::PrsVector;
use crate::rng::{rng_for, tag};

pub use io::{load_cohort, load_events, save_cohort, write_events, LoadReport, RejectedLine};
pub use synth::{generate_synthetic, SynthConfig, SynthLayout, TARGET_CODE, TARGET_TASK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Condition,
    Procedure,
    Measurement,
    VisitStart,
    VisitEnd,
    Demographic,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Condition => "condition",
            EventKind::Procedure => "procedure",
            EventKind::Measurement => "measurement",
            EventKind::VisitStart => "visit_start",
            EventKind::VisitEnd => "visit_end",
            EventKind::Demographic => "demographic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "condition" => EventKind::Condition,
            "procedure" => EventKind::Procedure,
            "measurement" => EventKind::Measurement,
            "visit_start" => EventKind::VisitStart,
            "visit_end" => EventKind::VisitEnd,
            "demographic" => EventKind::Demographic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub participant_id: String,
    pub time_days: i64,
    pub code: String,
    pub kind: EventKind,
    pub numeric_value: Option<f64>,
    pub visit_id: Option<String>,
}

impl EventRecord {
    /// Checks the per-record invariants shared by the loader and generator.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.time_days < 0 {
            return Err(format!("time_days {} precedes the cohort epoch", self.time_days));
        }
        if self.code.is_empty() {
            return Err("empty code".into());
        }
        match (self.kind, self.numeric_value) {
            (EventKind::Measurement, None) => Err("measurement without numeric_value".into()),
            (EventKind::Measurement, Some(v)) if !v.is_finite() => {
                Err(format!("non-finite numeric_value {v}"))
            }
            (k, Some(_)) if k != EventKind::Measurement => {
                Err(format!("numeric_value present on {} event", k.as_str()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLabel {
    pub positive: bool,
    pub time_zero_days: i64,
    pub horizon_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub demographics: Vec<String>,
    pub events: Vec<EventRecord>,
    pub prs: Option<PrsVector>,
    pub labels: BTreeMap<String, TaskLabel>,
}

impl ParticipantRecord {
    pub fn new(participant_id: impl Into<String>) -> Self {
        Self {
            participant_id: participant_id.into(),
            demographics: Vec::new(),
            events: Vec::new(),
            prs: None,
            labels: BTreeMap::new(),
        }
    }

    /// Stable sort by day; same-day events keep input order.
    pub fn sort_events(&mut self) {
        self.events.sort_by_key(|e| e.time_days);
    }

    pub fn first_event_day(&self) -> Option<i64> {
        self.events.first().map(|e| e.time_days)
    }

    /// Whether any event with one of `codes` falls in `(from, to]`.
    pub fn has_code_in(&self, codes: &HashSet<String>, from: i64, to: i64) -> bool {
        self.events
            .iter()
            .any(|e| e.time_days > from && e.time_days <= to && codes.contains(&e.code))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub participants: Vec<ParticipantRecord>,
    pub epoch: String,
    pub provenance: Provenance,
}

pub const DEFAULT_EPOCH: &str = "2000-01-01";

impl Cohort {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            participants: Vec::new(),
            epoch: DEFAULT_EPOCH.to_string(),
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.participants.iter().map(|p| p.events.len()).sum()
    }

    pub fn get(&self, participant_id: &str) -> Option<&ParticipantRecord> {
        self.participants
            .iter()
            .find(|p| p.participant_id == participant_id)
    }

    fn with_participants(&self, participants: Vec<ParticipantRecord>) -> Self {
        Self {
            participants,
            epoch: self.epoch.clone(),
            provenance: self.provenance,
        }
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.participants {
            if !seen.insert(p.participant_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate participant_id {}",
                    p.participant_id
                )));
            }
        }
        Ok(())
    }
}

/// Keeps participants whose event count lies in `[min_events, max_events]`.
pub fn filter_participants(cohort: &Cohort, min_events: usize, max_events: usize) -> Result<Cohort> {
    if min_events > max_events {
        return Err(Error::invalid(format!(
            "min_events {min_events} exceeds max_events {max_events}"
        )));
    }
    let kept = cohort
        .participants
        .iter()
        .filter(|p| (min_events..=max_events).contains(&p.events.len()))
        .cloned()
        .collect();
    Ok(cohort.with_participants(kept))
}

/// Drops every event whose code occurs in fewer than `min_participants`
/// distinct participants. Demographics are untouched.
pub fn filter_rare_codes(cohort: &Cohort, min_participants: usize) -> Result<Cohort> {
    if min_participants == 0 {
        return Err(Error::invalid("min_participants must be at least 1"));
    }
    let mut support: HashMap<&str, usize> = HashMap::new();
    for p in &cohort.participants {
        let distinct: HashSet<&str> = p.events.iter().map(|e| e.code.as_str()).collect();
        for code in distinct {
            *support.entry(code).or_default() += 1;
        }
    }
    let kept: HashSet<&str> = support
        .into_iter()
        .filter(|&(_, n)| n >= min_participants)
        .map(|(c, _)| c)
        .collect();
    let participants = cohort
        .participants
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.events.retain(|e| kept.contains(e.code.as_str()));
            q
        })
        .collect();
    Ok(cohort.with_participants(participants))
}

/// Random split into `(train, test)` with `round(n * test_fraction)` test
/// participants. Both halves keep the input order.
pub fn split(cohort: &Cohort, test_fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let n = cohort.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "cannot split a cohort of {n} participant(s)"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[tag::SPLIT]));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, t) in cohort.participants.iter().zip(is_test) {
        if t {
            test.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    Ok((cohort.with_participants(train), cohort.with_participants(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn participant(id: &str, n_events: usize, code_of: impl Fn(usize) -> String) -> ParticipantRecord {
        let mut p = ParticipantRecord::new(id);
        p.demographics.push("SEX:F".into());
        for i in 0..n_events {
            p.events.push(EventRecord {
                participant_id: id.into(),
                time_days: i as i64,
                code: code_of(i),
                kind: EventKind::Condition,
                numeric_value: None,
                visit_id: None,
            });
        }
        p
    }

    fn cohort(ps: Vec<ParticipantRecord>) -> Cohort {
        Cohort {
            participants: ps,
            epoch: DEFAULT_EPOCH.into(),
            provenance: Provenance::Ingested,
        }
    }

    #[test]
    fn filter_participants_applies_bounds() {
        let c = cohort(vec![
            participant("a", 50, |_| "X".into()),
            participant("b", 150, |_| "X".into()),
            participant("c", 2500, |_| "X".into()),
        ]);
        let f = filter_participants(&c, 100, 2000).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.participants[0].participant_id, "b");
        assert_eq!(filter_participants(&c, 0, usize::MAX).unwrap(), c);
        assert!(filter_participants(&c, 3000, 4000).unwrap().is_empty());
        assert_eq!(filter_participants(&f, 100, 2000).unwrap(), f);
        assert!(filter_participants(&c, 5, 4).is_err());
    }

    #[test]
    fn rare_codes_are_removed_everywhere() {
        let mut ps: Vec<_> = (0..300)
            .map(|i| participant(&format!("p{i}"), 3, |_| "COMMON".into()))
            .collect();
        ps[17].events[1].code = "RARE".into();
        let c = cohort(ps);
        let f = filter_rare_codes(&c, 200).unwrap();
        assert!(f
            .participants
            .iter()
            .all(|p| p.events.iter().all(|e| e.code == "COMMON")));
        assert_eq!(f.participants[17].events.len(), 2);
        assert_eq!(filter_rare_codes(&c, 1).unwrap(), c);

        let g = filter_rare_codes(&c, 301).unwrap();
        assert_eq!(g.n_events(), 0);
        assert!(g.participants.iter().all(|p| p.demographics == ["SEX:F"]));
    }

    #[test]
    fn rare_code_filter_preserves_order() {
        let c = cohort(vec![
            participant("a", 6, |i| if i % 2 == 0 { "K".into() } else { format!("U{i}") }),
            participant("b", 6, |i| if i % 2 == 0 { "K".into() } else { "L".into() }),
        ]);
        let f = filter_rare_codes(&c, 2).unwrap();
        let days: Vec<i64> = f.participants[0].events.iter().map(|e| e.time_days).collect();
        assert_eq!(days, vec![0, 2, 4]);
    }

    #[test]
    fn split_is_exact_disjoint_and_seeded() {
        let c = cohort(
            (0..100)
                .map(|i| participant(&format!("p{i}"), 1, |_| "X".into()))
                .collect(),
        );
        let (train, test) = split(&c, 0.1, 7).unwrap();
        assert_eq!((train.len(), test.len()), (90, 10));
        let a: HashSet<_> = train.participants.iter().map(|p| &p.participant_id).collect();
        let b: HashSet<_> = test.participants.iter().map(|p| &p.participant_id).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 100);

        let (_, again) = split(&c, 0.1, 7).unwrap();
        assert_eq!(again, test);
        let (_, other) = split(&c, 0.1, 8).unwrap();
        let c8: HashSet<_> = other.participants.iter().map(|p| &p.participant_id).collect();
        assert_ne!(b, c8);

        assert!(split(&cohort(vec![participant("x", 1, |_| "X".into())]), 0.5, 1).is_err());
        assert!(split(&c, 1.0, 1).is_err());
    }
}
