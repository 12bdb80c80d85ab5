//! Synthetic cohorts with a planted genetic latent.
//!
//! Each participant draws a latent liability `g ~ N(0, 1)`. A fixed subset of
//! PRS traits tag `g`; the rest are noise. Visits arrive as a Poisson process
//! and the target condition's per-visit hazard is
//! `sigmoid(baseline + genetic_effect * g + history_effect * prodromal_count + sex_effect)`.
//! Three prodromal codes are emitted more often when `g` is high, so the
//! event history slowly reveals the latent.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Cohort, EventKind, EventRecord, ParticipantRecord, Provenance, TaskLabel, DEFAULT_EPOCH};
use crate::error::{Error, Result};
use crate::prs::PrsVector;
use crate::rng::{rng_for, tag, Rng};

pub const TARGET_TASK: &str = "target";
pub const TARGET_CODE: &str = "COND_TARGET";
const VISIT_TYPES: [(&str, f64); 3] = [("OUTPATIENT", 0.8), ("INPATIENT", 0.1), ("EMERGENCY", 0.1)];
const RACES: [(&str, f64); 4] = [("RACE:A", 0.6), ("RACE:B", 0.2), ("RACE:C", 0.1), ("RACE:D", 0.1)];
const SEX_EFFECT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_participants: usize,
    /// PRS dimension.
    pub n_traits: usize,
    pub n_codes: usize,
    pub visit_rate_per_year: f64,
    /// Log-odds weight of the latent on the target's per-visit hazard.
    pub genetic_effect: f64,
    /// Log-odds weight of each prodromal code seen so far.
    pub history_effect: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub n_tagging_traits: usize,
    pub time_zero_offset_days: i64,
    pub horizon_days: i64,
    pub baseline_log_odds: f64,
    /// Follow-up beyond `time_zero + horizon`, drawn uniformly up to this.
    pub extra_followup_days: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 2000,
            n_traits: 16,
            n_codes: 40,
            visit_rate_per_year: 2.0,
            genetic_effect: 1.0,
            history_effect: 0.4,
            noise_sd: 1.0,
            seed: 0,
            n_tagging_traits: 4,
            time_zero_offset_days: 365,
            horizon_days: 1095,
            baseline_log_odds: -3.4,
            extra_followup_days: 730,
        }
    }
}

/// Names of the designated codes and traits of a generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLayout {
    pub task: String,
    pub target_code: String,
    pub prodromal_codes: Vec<String>,
    pub lab_codes: Vec<String>,
    pub background_codes: Vec<(String, EventKind)>,
    pub trait_ids: Vec<String>,
    /// Indices into `trait_ids` of the traits that tag the latent.
    pub tagging_traits: Vec<usize>,
}

impl SynthLayout {
    pub fn new(config: &SynthConfig) -> Self {
        let n_labs = (config.n_codes / 8).max(1);
        let n_background = config.n_codes.saturating_sub(4 + n_labs).max(1);
        Self {
            task: TARGET_TASK.into(),
            target_code: TARGET_CODE.into(),
            prodromal_codes: (1..=3).map(|k| format!("COND_PRODROMAL_{k}")).collect(),
            lab_codes: (0..n_labs).map(|k| format!("LAB_{k:02}")).collect(),
            background_codes: (0..n_background)
                .map(|k| {
                    if k % 2 == 0 {
                        (format!("COND_{k:03}"), EventKind::Condition)
                    } else {
                        (format!("PROC_{k:03}"), EventKind::Procedure)
                    }
                })
                .collect(),
            trait_ids: (0..config.n_traits).map(|j| format!("TRAIT_{j:03}")).collect(),
            tagging_traits: (0..config.n_tagging_traits.min(config.n_traits)).collect(),
        }
    }

    /// Sum of the tagging traits, the "known PRS" for the target.
    pub fn tagging_score(&self, prs: &PrsVector) -> f64 {
        self.tagging_traits.iter().map(|&j| prs.values[j]).sum()
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_participants", self.n_participants),
            ("n_traits", self.n_traits),
            ("n_codes", self.n_codes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.visit_rate_per_year > 0.0) {
            return Err(Error::invalid("visit_rate_per_year must be positive"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be non-negative"));
        }
        if self.horizon_days < 1 || self.time_zero_offset_days < 0 || self.extra_followup_days < 0 {
            return Err(Error::invalid("time offsets must be non-negative, horizon positive"));
        }
        Ok(())
    }
}

fn pick<'a>(rng: &mut Rng, table: &[(&'a str, f64)]) -> &'a str {
    let mut u: f64 = rng.random();
    for (name, p) in table {
        if u < *p {
            return name;
        }
        u -= p;
    }
    table[table.len() - 1].0
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn participant(config: &SynthConfig, layout: &SynthLayout, index: usize) -> ParticipantRecord {
    let mut rng = rng_for(config.seed, &[tag::SYNTH, index as u64]);
    let id = format!("P{index:06}");
    let mut p = ParticipantRecord::new(id.clone());
    let ge = config.genetic_effect;

    let g: f64 = StandardNormal.sample(&mut rng);
    let female = rng.random::<f64>() < 0.5;
    p.demographics.push(if female { "SEX:F" } else { "SEX:M" }.to_string());
    let gender_matches = rng.random::<f64>() < 0.97;
    p.demographics.push(
        match (female, gender_matches) {
            (true, true) | (false, false) => "GENDER:W",
            _ => "GENDER:M",
        }
        .to_string(),
    );
    p.demographics.push(pick(&mut rng, &RACES).to_string());

    let values = (0..config.n_traits)
        .map(|j| {
            let w = if layout.tagging_traits.contains(&j) { 1.0 } else { 0.0 };
            let eps: f64 = StandardNormal.sample(&mut rng);
            w * g + config.noise_sd * eps
        })
        .collect();
    p.prs = Some(PrsVector::new(layout.trait_ids.clone(), values).expect("lengths match"));

    let start: i64 = rng.random_range(0..3650);
    let span = config.time_zero_offset_days
        + config.horizon_days
        + rng.random_range(0..=config.extra_followup_days);
    let end = start + span;
    let gap = Exp::new(config.visit_rate_per_year / 365.0).expect("positive rate");
    let zipf: Vec<f64> = (0..layout.background_codes.len())
        .map(|k| 1.0 / (k as f64 + 1.0))
        .collect();
    let zipf_total: f64 = zipf.iter().sum();
    let prodromal_p = (0.12 * (0.6 * ge * g).exp()).min(0.9);
    let sex_shift = if female { SEX_EFFECT } else { 0.0 };

    let mut n_prodromal = 0usize;
    let mut diagnosed = false;
    let mut day = start;
    let mut visit = 0usize;
    while day <= end {
        let vid = format!("{id}_v{visit}");
        let vtype = pick(&mut rng, &VISIT_TYPES);
        let ev = |day: i64, code: &str, kind: EventKind, value: Option<f64>| EventRecord {
            participant_id: id.clone(),
            time_days: day,
            code: code.to_string(),
            kind,
            numeric_value: value,
            visit_id: Some(vid.clone()),
        };
        p.events.push(ev(day, vtype, EventKind::VisitStart, None));

        let n_background = 1 + usize::from(rng.random::<f64>() < 0.5) + usize::from(rng.random::<f64>() < 0.25);
        for _ in 0..n_background {
            let mut u = rng.random::<f64>() * zipf_total;
            let mut k = 0;
            while k + 1 < zipf.len() && u >= zipf[k] {
                u -= zipf[k];
                k += 1;
            }
            let (code, kind) = &layout.background_codes[k];
            p.events.push(ev(day, code, *kind, None));
        }
        for (k, lab) in layout.lab_codes.iter().enumerate() {
            if rng.random::<f64>() < 0.35 {
                let shift = if k == 0 { 0.5 * ge * g } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                let value = ((100.0 + 15.0 * (shift + z)) * 10.0).round() / 10.0;
                p.events.push(ev(day, lab, EventKind::Measurement, Some(value)));
            }
        }
        for code in &layout.prodromal_codes {
            if rng.random::<f64>() < prodromal_p {
                n_prodromal += 1;
                p.events.push(ev(day, code, EventKind::Condition, None));
            }
        }
        let emit_target = if diagnosed {
            rng.random::<f64>() < 0.5
        } else {
            let logit = config.baseline_log_odds
                + ge * g
                + config.history_effect * n_prodromal as f64
                + sex_shift;
            diagnosed = rng.random::<f64>() < sigmoid(logit);
            diagnosed
        };
        if emit_target {
            p.events.push(ev(day, &layout.target_code, EventKind::Condition, None));
        }

        let stay = if vtype == "INPATIENT" { rng.random_range(1..=4) } else { 0 };
        p.events.push(ev(day + stay, vtype, EventKind::VisitEnd, None));
        day += stay + (gap.sample(&mut rng).round() as i64).max(1);
        visit += 1;
    }

    let time_zero = start + config.time_zero_offset_days;
    let positive = p.events.iter().any(|e| {
        e.code == layout.target_code
            && e.time_days > time_zero
            && e.time_days <= time_zero + config.horizon_days
    });
    p.labels.insert(
        layout.task.clone(),
        TaskLabel {
            positive,
            time_zero_days: time_zero,
            horizon_days: config.horizon_days,
        },
    );
    p
}

/// Generates a cohort; participant `i` depends only on `(seed, i)`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(Cohort, SynthLayout)> {
    config.validate()?;
    let layout = SynthLayout::new(config);
    let participants = (0..config.n_participants)
        .map(|i| participant(config, &layout, i))
        .collect();
    Ok((
        Cohort {
            participants,
            epoch: DEFAULT_EPOCH.to_string(),
            provenance: Provenance::Synthetic,
        },
        layout,
    ))
}
