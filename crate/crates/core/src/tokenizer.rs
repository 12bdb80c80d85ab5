//! Vocabulary construction and event-stream encoding with time-interval,
//! quantile and visit tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, EventKind, EventRecord, ParticipantRecord};
use crate::error::{Error, Result};

pub const TIME_GRID: [u32; 13] = [1, 2, 4, 7, 14, 30, 60, 90, 180, 365, 730, 1825, 3650];
pub const MAX_TIME_TOKENS: usize = 5;
pub const DEFAULT_N_QUANTILES: usize = 10;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const VISIT_END: &str = "<VISIT_END>";

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

const VOCAB_FORMAT: &str = "prsfm-vocab/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Code,
    Quantile,
    TimeInterval,
    VisitStart,
    VisitEnd,
    Demographic,
    Pad,
    Bos,
    Eos,
    Unknown,
}

pub fn time_token(days: u32) -> String {
    format!("<T:{days}d>")
}

pub fn visit_token(visit_type: &str) -> String {
    format!("<VISIT:{visit_type}>")
}

pub fn demographic_token(code: &str) -> String {
    format!("DEM:{code}")
}

pub fn quantile_token(code: &str, bucket: usize) -> String {
    format!("{code}//Q{bucket}")
}

/// Greedy largest-first decomposition of a gap, at most five tokens.
pub fn time_tokens(gap_days: i64, grid: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut rest = gap_days.max(0);
    for &g in grid.iter().rev() {
        while rest >= i64::from(g) && out.len() < MAX_TIME_TOKENS {
            out.push(g);
            rest -= i64::from(g);
        }
    }
    out
}

/// numpy's default ("linear") quantiles of sorted data at `k / n`, k = 1..n.
pub fn quantile_boundaries(sorted: &[f64], n_quantiles: usize) -> Vec<f64> {
    let m = sorted.len();
    (1..n_quantiles)
        .map(|k| {
            let pos = (m - 1) as f64 * k as f64 / n_quantiles as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// 1-based bucket; values equal to a boundary fall in the lower bucket.
pub fn bucket(bounds: &[f64], value: f64) -> usize {
    1 + bounds.partition_point(|&b| b < value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, u32>,
    days: Vec<u32>,
    quantile_bounds: BTreeMap<String, Vec<f64>>,
    time_grid: Vec<u32>,
    n_quantiles: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Cumulative days advanced by time tokens, per position.
    pub time_offsets_days: Vec<i64>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn push(&mut self, id: u32, advance: u32) {
        let last = self.time_offsets_days.last().copied().unwrap_or(0);
        self.ids.push(id);
        self.time_offsets_days.push(last + i64::from(advance));
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    n_quantiles: usize,
    time_grid: Vec<u32>,
    quantile_bounds: BTreeMap<String, Vec<f64>>,
    tokens: Vec<TokenEntry>,
}

#[derive(Serialize, Deserialize)]
struct TokenEntry {
    token: String,
    kind: TokenKind,
}

impl Vocabulary {
    pub fn build(train: &Cohort, n_quantiles: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty cohort"));
        }
        if n_quantiles < 2 {
            return Err(Error::invalid(format!("n_quantiles {n_quantiles} must be at least 2")));
        }
        let mut visit_types = BTreeSet::new();
        let mut demos = BTreeSet::new();
        let mut codes = BTreeSet::new();
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for p in &train.participants {
            demos.extend(p.demographics.iter().cloned());
            for e in &p.events {
                match e.kind {
                    EventKind::VisitStart => {
                        visit_types.insert(e.code.clone());
                    }
                    EventKind::VisitEnd => {}
                    EventKind::Demographic => {
                        demos.insert(e.code.clone());
                    }
                    EventKind::Measurement => {
                        if let Some(v) = e.numeric_value {
                            values.entry(e.code.clone()).or_default().push(v);
                        }
                    }
                    EventKind::Condition | EventKind::Procedure => {
                        codes.insert(e.code.clone());
                    }
                }
            }
        }
        let mut quantile_bounds = BTreeMap::new();
        for (code, mut v) in values {
            v.sort_by(f64::total_cmp);
            let mut distinct = v.clone();
            distinct.dedup();
            if distinct.len() < n_quantiles {
                log::warn!(
                    "{code}: {} distinct values for {n_quantiles} quantiles, boundaries collapse",
                    distinct.len()
                );
            }
            quantile_bounds.insert(code, quantile_boundaries(&v, n_quantiles));
        }

        let mut entries: Vec<(String, TokenKind, u32)> = vec![
            (PAD.into(), TokenKind::Pad, 0),
            (BOS.into(), TokenKind::Bos, 0),
            (EOS.into(), TokenKind::Eos, 0),
            (UNK.into(), TokenKind::Unknown, 0),
            (VISIT_END.into(), TokenKind::VisitEnd, 0),
        ];
        entries.extend(TIME_GRID.iter().map(|&d| (time_token(d), TokenKind::TimeInterval, d)));
        entries.extend(visit_types.iter().map(|t| (visit_token(t), TokenKind::VisitStart, 0)));
        entries.extend(demos.iter().map(|d| (demographic_token(d), TokenKind::Demographic, 0)));
        entries.extend(codes.iter().map(|c| (c.clone(), TokenKind::Code, 0)));
        for code in quantile_bounds.keys() {
            entries.extend((1..=n_quantiles).map(|k| (quantile_token(code, k), TokenKind::Quantile, 0)));
        }
        Self::from_entries(entries, quantile_bounds, TIME_GRID.to_vec(), n_quantiles)
    }

    fn from_entries(
        entries: Vec<(String, TokenKind, u32)>,
        quantile_bounds: BTreeMap<String, Vec<f64>>,
        time_grid: Vec<u32>,
        n_quantiles: usize,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut kinds = Vec::with_capacity(entries.len());
        let mut days = Vec::with_capacity(entries.len());
        for (i, (tok, kind, d)) in entries.into_iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate token {tok:?}")));
            }
            tokens.push(tok);
            kinds.push(kind);
            days.push(d);
        }
        let specials = [(PAD, PAD_ID), (BOS, BOS_ID), (EOS, EOS_ID), (UNK, UNK_ID)];
        if specials.iter().any(|(t, id)| index.get(*t) != Some(id)) {
            return Err(Error::invalid("special tokens must occupy ids 0..4"));
        }
        if time_grid.first() != Some(&1) || time_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("time grid must be strictly increasing from 1 day"));
        }
        for (code, b) in &quantile_bounds {
            if b.len() + 1 != n_quantiles || b.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::invalid(format!("bad quantile boundaries for {code}")));
            }
        }
        Ok(Self {
            tokens,
            kinds,
            index,
            days,
            quantile_bounds,
            time_grid,
            n_quantiles,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: u32) -> Option<TokenKind> {
        self.kinds.get(id as usize).copied()
    }

    /// Day length of a time token, 0 for every other token.
    pub fn time_days(&self, id: u32) -> u32 {
        self.days.get(id as usize).copied().unwrap_or(0)
    }

    /// Day length for every id, indexed by id.
    pub fn day_table(&self) -> &[u32] {
        &self.days
    }

    pub fn kinds(&self) -> &[TokenKind] {
        &self.kinds
    }

    pub fn quantile_bounds(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.quantile_bounds
    }

    pub fn time_grid(&self) -> &[u32] {
        &self.time_grid
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    /// Every token representing `code`: its code token and all quantile tokens.
    pub fn ids_for_code(&self, code: &str) -> Vec<u32> {
        let mut out: Vec<u32> = self.id(code).into_iter().collect();
        if self.quantile_bounds.contains_key(code) {
            out.extend((1..=self.n_quantiles).filter_map(|k| self.id(&quantile_token(code, k))));
        }
        out
    }

    fn time_ids(&self, gap: i64) -> impl Iterator<Item = (u32, u32)> + '_ {
        time_tokens(gap, &self.time_grid)
            .into_iter()
            .map(|d| (self.index[&time_token(d)], d))
    }

    fn event_id(&self, e: &EventRecord) -> u32 {
        if e.kind == EventKind::Measurement {
            if let (Some(b), Some(v)) = (self.quantile_bounds.get(&e.code), e.numeric_value) {
                if v.is_finite() {
                    return self.id(&quantile_token(&e.code, bucket(b, v))).unwrap_or(UNK_ID);
                }
            }
        }
        self.id(&e.code).unwrap_or(UNK_ID)
    }

    fn push_demographics(&self, p: &ParticipantRecord, seq: &mut TokenSequence) {
        seq.push(BOS_ID, 0);
        for d in &p.demographics {
            seq.push(self.id(&demographic_token(d)).unwrap_or(UNK_ID), 0);
        }
    }

    /// Appends `events` (sorted by day), starting the gap clock at `cursor`.
    fn push_events<'a>(
        &self,
        events: impl Iterator<Item = &'a EventRecord>,
        mut cursor: Option<i64>,
        seq: &mut TokenSequence,
    ) {
        let mut open = false;
        for e in events {
            if e.kind == EventKind::Demographic || (e.kind == EventKind::VisitEnd && !open) {
                continue;
            }
            if let Some(c) = cursor {
                for (tid, d) in self.time_ids(e.time_days - c) {
                    seq.push(tid, d);
                }
            }
            cursor = Some(e.time_days);
            match e.kind {
                EventKind::VisitStart => {
                    if open {
                        seq.push(self.visit_end_id(), 0);
                    }
                    let id = self.id(&visit_token(&e.code));
                    open = id.is_some();
                    seq.push(id.unwrap_or(UNK_ID), 0);
                }
                EventKind::VisitEnd => {
                    open = false;
                    seq.push(self.visit_end_id(), 0);
                }
                _ => seq.push(self.event_id(e), 0),
            }
        }
        if open {
            seq.push(self.visit_end_id(), 0);
        }
    }

    fn visit_end_id(&self) -> u32 {
        self.index[VISIT_END]
    }

    /// Full training sequence: bos, demographics, events, eos.
    pub fn encode(&self, p: &ParticipantRecord) -> TokenSequence {
        let mut seq = TokenSequence::default();
        self.push_demographics(p, &mut seq);
        self.push_events(p.events.iter(), None, &mut seq);
        seq.push(EOS_ID, 0);
        seq
    }

    /// Prediction context ending at `time_zero`: bos and demographics, then
    /// (for a positive history) time tokens aligning the window start to the
    /// first event, then events in `[time_zero - history_days, time_zero)`
    /// with any open visit closed. No eos.
    pub fn encode_context(&self, p: &ParticipantRecord, time_zero: i64, history_days: i64) -> TokenSequence {
        let mut seq = TokenSequence::default();
        self.push_demographics(p, &mut seq);
        if history_days > 0 {
            let start = time_zero - history_days;
            let first = p.first_event_day().unwrap_or(start);
            let origin = start.max(first);
            for (tid, d) in self.time_ids(origin - first) {
                seq.push(tid, d);
            }
            let window = p
                .events
                .iter()
                .filter(|e| e.time_days >= origin && e.time_days < time_zero);
            self.push_events(window, Some(origin), &mut seq);
        }
        seq
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    /// Maps token strings back to ids; unknown strings map to `<unk>`.
    pub fn ids_of(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK_ID)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            format: VOCAB_FORMAT.into(),
            n_quantiles: self.n_quantiles,
            time_grid: self.time_grid.clone(),
            quantile_bounds: self.quantile_bounds.clone(),
            tokens: self
                .tokens
                .iter()
                .zip(&self.kinds)
                .map(|(t, &k)| TokenEntry { token: t.clone(), kind: k })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.format != VOCAB_FORMAT {
            return Err(Error::invalid(format!("unsupported vocabulary format {:?}", file.format)));
        }
        let entries = file
            .tokens
            .into_iter()
            .map(|e| {
                let d = match e.kind {
                    TokenKind::TimeInterval => e
                        .token
                        .strip_prefix("<T:")
                        .and_then(|s| s.strip_suffix("d>"))
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::invalid(format!("malformed time token {:?}", e.token)))?,
                    _ => 0,
                };
                Ok((e.token, e.kind, d))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(entries, file.quantile_bounds, file.time_grid, file.n_quantiles)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
