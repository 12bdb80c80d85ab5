//! Trajectory sampling and the two risk estimators.
//!
//! Every path records, at each step, the mass the model puts on the target
//! set before sampling. When a target token is drawn, the first hit is noted
//! and the token is redrawn from the non-target part of the distribution, so
//! a path continues as a target-free continuation. The frequency estimator
//! counts first hits; the path estimator sums `Π_{j<i}(1 − p_j)·p_i` along
//! the target-free path, which is unbiased for the first-hit probability.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ParticipantRecord, TARGET_CODE};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params, Session};
use crate::rng::{hash_str, rng_for, tag, Rng};
use crate::tokenizer::{Vocabulary, EOS_ID};
use crate::train::prs_input;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
    Max,
}

impl Aggregation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Self::Mean),
            "median" => Some(Self::Median),
            "max" => Some(Self::Max),
            _ => None,
        }
    }

    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            Self::Mean => v.iter().sum::<f64>() / v.len() as f64,
            Self::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Self::Median => {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                let m = s.len() / 2;
                if s.len() % 2 == 1 {
                    s[m]
                } else {
                    0.5 * (s[m - 1] + s[m])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTask {
    pub target_token_ids: BTreeSet<u32>,
    pub horizon_days: i64,
    pub n_paths: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Stop a path once it crosses the horizon; neither estimator looks further.
    pub stop_at_horizon: bool,
}

impl GenerationTask {
    pub fn new(target_token_ids: impl IntoIterator<Item = u32>, horizon_days: i64) -> Self {
        Self {
            target_token_ids: target_token_ids.into_iter().collect(),
            horizon_days,
            n_paths: 10,
            max_new_tokens: 512,
            temperature: 1.0,
            aggregation: Aggregation::Mean,
            seed: 0,
            stop_at_horizon: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_token_ids.is_empty() {
            return Err(Error::invalid("empty target token set"));
        }
        if self.n_paths == 0 || self.max_new_tokens == 0 {
            return Err(Error::invalid("n_paths and max_new_tokens must be at least 1"));
        }
        if self.horizon_days < 1 {
            return Err(Error::invalid(format!("horizon_days {} must be at least 1", self.horizon_days)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Autoregressive model that can be advanced one token at a time.
pub trait StepModel: Sync {
    type State: Clone + Send;

    fn vocab_size(&self) -> usize;
    /// Days a token advances the clock by.
    fn token_days(&self, token: u32) -> u32;
    fn eos(&self) -> Option<u32>;
    /// Longest context + generation length the model accepts.
    fn capacity(&self) -> usize;
    /// Consumes the context; returns the state and next-token logits.
    fn start(&self, context: &[u32]) -> Result<(Self::State, Vec<f64>)>;
    fn step(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>>;
}

/// A transformer checkpoint bound to one participant's PRS input.
pub struct TransformerModel<'a> {
    params: &'a Params<f32>,
    prs: Option<Vec<f32>>,
    day_table: &'a [u32],
}

impl<'a> TransformerModel<'a> {
    pub fn new(params: &'a Params<f32>, prs: Option<Vec<f32>>, day_table: &'a [u32]) -> Result<Self> {
        if day_table.len() != params.config.vocab_size {
            return Err(Error::Dimension {
                what: "token day table".into(),
                expected: params.config.vocab_size,
                got: day_table.len(),
            });
        }
        Ok(Self { params, prs, day_table })
    }
}

fn widen(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

impl<'a> StepModel for TransformerModel<'a> {
    type State = Session<'a, f32>;

    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn token_days(&self, token: u32) -> u32 {
        self.day_table[token as usize]
    }

    fn eos(&self) -> Option<u32> {
        Some(EOS_ID)
    }

    fn capacity(&self) -> usize {
        self.params.config.max_tokens()
    }

    fn start(&self, context: &[u32]) -> Result<(Self::State, Vec<f64>)> {
        if context.is_empty() {
            return Err(Error::invalid("empty context"));
        }
        let mut s = Session::new(self.params, self.prs.as_deref())?;
        let mut logits = Vec::new();
        for &t in context {
            logits = s.step(t)?;
        }
        Ok((s, widen(logits)))
    }

    fn step(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>> {
        state.step(token).map(widen)
    }
}

/// First-order Markov chain over a small vocabulary with explicit
/// transition probabilities. State is the last token.
#[derive(Debug, Clone)]
pub struct TableModel {
    pub transitions: Vec<Vec<f64>>,
    pub days: Vec<u32>,
    pub eos: Option<u32>,
}

impl TableModel {
    pub fn new(transitions: Vec<Vec<f64>>, days: Vec<u32>, eos: Option<u32>) -> Result<Self> {
        let v = transitions.len();
        for row in &transitions {
            if row.len() != v || row.iter().any(|&x| !(x >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("transition rows must be probability vectors over the vocabulary"));
            }
        }
        if days.len() != v {
            return Err(Error::Dimension {
                what: "day table".into(),
                expected: v,
                got: days.len(),
            });
        }
        Ok(Self { transitions, days, eos })
    }

    fn logits(&self, from: u32) -> Vec<f64> {
        self.transitions[from as usize].iter().map(|p| p.ln()).collect()
    }
}

impl StepModel for TableModel {
    type State = u32;

    fn vocab_size(&self) -> usize {
        self.transitions.len()
    }

    fn token_days(&self, token: u32) -> u32 {
        self.days[token as usize]
    }

    fn eos(&self) -> Option<u32> {
        self.eos
    }

    fn capacity(&self) -> usize {
        usize::MAX
    }

    fn start(&self, context: &[u32]) -> Result<(u32, Vec<f64>)> {
        let &last = context.last().ok_or_else(|| Error::invalid("empty context"))?;
        if last as usize >= self.transitions.len() {
            return Err(Error::invalid(format!("token {last} outside the table")));
        }
        Ok((last, self.logits(last)))
    }

    fn step(&self, state: &mut u32, token: u32) -> Result<Vec<f64>> {
        *state = token;
        Ok(self.logits(token))
    }
}

/// One generated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Sampled tokens; one shorter than `target_mass` when the path ended
    /// because nothing but target tokens remained.
    pub tokens: Vec<u32>,
    /// Target-set mass before each step, at temperature 1.
    pub target_mass: Vec<f64>,
    /// Cumulative elapsed days after each step.
    pub elapsed_days: Vec<i64>,
    /// Step at which a target token was first drawn.
    pub first_hit: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.target_mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_mass.is_empty()
    }

    /// First step whose elapsed days exceed the horizon, or the path length.
    pub fn truncation_step(&self, horizon_days: i64) -> usize {
        self.elapsed_days
            .iter()
            .position(|&e| e > horizon_days)
            .unwrap_or(self.len())
    }

    pub fn crosses(&self, horizon_days: i64) -> bool {
        self.truncation_step(horizon_days) < self.len()
    }

    /// `Σ_{i ≤ s} Π_{j<i}(1 − p_j)·p_i`, with `s` the truncation step.
    pub fn path_score(&self, horizon_days: i64) -> f64 {
        let s = self.truncation_step(horizon_days);
        let end = (s + 1).min(self.len());
        let (mut score, mut survive) = (0.0, 1.0);
        for &p in &self.target_mass[..end] {
            score += survive * p;
            survive *= 1.0 - p;
        }
        score.clamp(0.0, 1.0)
    }

    pub fn hit_before(&self, horizon_days: i64) -> bool {
        self.first_hit.is_some_and(|i| i <= self.truncation_step(horizon_days))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub paths: Vec<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    McFrequency,
    PathProbability,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::McFrequency => "mc_frequency",
            Self::PathProbability => "path_probability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub participant_id: String,
    pub estimator: Estimator,
    pub value: f64,
    pub n_paths: usize,
    pub truncated_paths: usize,
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| ((l - mx) / temperature).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

fn draw(rng: &mut Rng, weights: &[f64], total: f64) -> Option<usize> {
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

struct StepDist {
    mass: f64,
    /// Tempered distribution with target entries zeroed.
    rest: Vec<f64>,
    rest_total: f64,
    tempered: Vec<f64>,
}

fn step_dist(logits: &[f64], targets: &[bool], temperature: f64) -> StepDist {
    let p1 = softmax(logits, 1.0);
    let mass: f64 = p1.iter().zip(targets).filter(|(_, &t)| t).map(|(p, _)| p).sum();
    let tempered = if temperature == 1.0 { p1 } else { softmax(logits, temperature) };
    let rest: Vec<f64> = tempered.iter().zip(targets).map(|(&p, &t)| if t { 0.0 } else { p }).collect();
    let rest_total = rest.iter().sum();
    StepDist {
        mass: mass.clamp(0.0, 1.0),
        rest,
        rest_total,
        tempered,
    }
}

fn target_mask(task: &GenerationTask, vocab_size: usize) -> Result<Vec<bool>> {
    let mut m = vec![false; vocab_size];
    for &t in &task.target_token_ids {
        *m.get_mut(t as usize)
            .ok_or_else(|| Error::invalid(format!("target token {t} outside vocabulary of {vocab_size}")))? = true;
    }
    Ok(m)
}

fn check_context<M: StepModel>(model: &M, context: &[u32], task: &GenerationTask) -> Result<()> {
    if context.len().saturating_add(task.max_new_tokens) > model.capacity() {
        return Err(Error::ContextOverflow {
            len: context.len() + task.max_new_tokens,
            window: model.capacity(),
        });
    }
    Ok(())
}

fn sample_path<M: StepModel>(
    model: &M,
    mut state: M::State,
    mut logits: Vec<f64>,
    targets: &[bool],
    task: &GenerationTask,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let mut t = Trajectory {
        tokens: Vec::new(),
        target_mass: Vec::new(),
        elapsed_days: Vec::new(),
        first_hit: None,
    };
    let mut elapsed = 0i64;
    for i in 0..task.max_new_tokens {
        let d = step_dist(&logits, targets, task.temperature);
        t.target_mass.push(d.mass);
        let mut tok = draw(rng, &d.tempered, 1.0);
        if tok.is_some_and(|k| targets[k]) {
            t.first_hit.get_or_insert(i);
            tok = draw(rng, &d.rest, d.rest_total);
        }
        let Some(tok) = tok else {
            t.elapsed_days.push(elapsed);
            break;
        };
        let tok = tok as u32;
        elapsed += i64::from(model.token_days(tok));
        t.tokens.push(tok);
        t.elapsed_days.push(elapsed);
        if (task.stop_at_horizon && elapsed > task.horizon_days) || model.eos() == Some(tok) {
            break;
        }
        if i + 1 < task.max_new_tokens {
            logits = model.step(&mut state, tok)?;
        }
    }
    Ok(t)
}

/// `n_paths` independent paths; path `k` uses the stream `(seed, stream_key, k)`.
pub fn sample_trajectories<M: StepModel>(
    model: &M,
    context: &[u32],
    task: &GenerationTask,
    stream_key: u64,
) -> Result<TrajectorySet> {
    task.validate()?;
    check_context(model, context, task)?;
    let targets = target_mask(task, model.vocab_size())?;
    let (state, logits) = model.start(context)?;
    let paths = (0..task.n_paths)
        .map(|k| {
            let mut rng = rng_for(task.seed, &[tag::SAMPLE, stream_key, k as u64]);
            sample_path(model, state.clone(), logits.clone(), &targets, task, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(TrajectorySet { paths })
}

/// Fraction of paths with a target token drawn before the horizon.
pub fn mc_frequency(set: &TrajectorySet, task: &GenerationTask) -> f64 {
    if set.paths.is_empty() {
        return 0.0;
    }
    let hits = set.paths.iter().filter(|p| p.hit_before(task.horizon_days)).count();
    hits as f64 / set.paths.len() as f64
}

/// Aggregated path-computed probability.
pub fn path_probability(set: &TrajectorySet, task: &GenerationTask) -> Result<f64> {
    if set.paths.is_empty() {
        return Err(Error::invalid("no paths to score"));
    }
    if set.paths.iter().any(|p| p.elapsed_days.len() != p.target_mass.len()) {
        return Err(Error::invalid("path is missing per-step target mass records"));
    }
    let scores: Vec<f64> = set.paths.iter().map(|p| p.path_score(task.horizon_days)).collect();
    Ok(task.aggregation.apply(&scores))
}

/// The path estimator averaged over every target-free continuation, each
/// weighted by its sampling probability at temperature 1. Exponential in
/// `max_new_tokens`; meant for small reference models.
pub fn enumerate_path_probability<M: StepModel>(model: &M, context: &[u32], task: &GenerationTask) -> Result<f64> {
    task.validate()?;
    check_context(model, context, task)?;
    let targets = target_mask(task, model.vocab_size())?;
    let (state, logits) = model.start(context)?;
    let mut prefix = Trajectory {
        tokens: Vec::new(),
        target_mass: Vec::new(),
        elapsed_days: Vec::new(),
        first_hit: None,
    };
    enumerate(model, state, logits, &targets, task, 1.0, 0, &mut prefix)
}

#[allow(clippy::too_many_arguments)]
fn enumerate<M: StepModel>(
    model: &M,
    state: M::State,
    logits: Vec<f64>,
    targets: &[bool],
    task: &GenerationTask,
    weight: f64,
    elapsed: i64,
    prefix: &mut Trajectory,
) -> Result<f64> {
    let d = step_dist(&logits, targets, 1.0);
    let i = prefix.target_mass.len();
    prefix.target_mass.push(d.mass);
    let mut total = 0.0;
    if d.rest_total <= 0.0 {
        prefix.elapsed_days.push(elapsed);
        total += weight * prefix.path_score(task.horizon_days);
        prefix.elapsed_days.pop();
    } else {
        for (tok, &q) in d.rest.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let w = weight * q / d.rest_total;
            let tok = tok as u32;
            let e = elapsed + i64::from(model.token_days(tok));
            prefix.elapsed_days.push(e);
            let done = i + 1 == task.max_new_tokens
                || (task.stop_at_horizon && e > task.horizon_days)
                || model.eos() == Some(tok);
            if done {
                total += w * prefix.path_score(task.horizon_days);
            } else {
                let mut s = state.clone();
                let next = model.step(&mut s, tok)?;
                total += enumerate(model, s, next, targets, task, w, e, prefix)?;
            }
            prefix.elapsed_days.pop();
        }
    }
    prefix.target_mass.pop();
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoTimeZero,
    TargetInContext,
    ContextTooLong,
    MissingPrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub participant_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortScores {
    pub scores: Vec<RiskScore>,
    pub excluded: Vec<Exclusion>,
}

impl CohortScores {
    pub fn values(&self, estimator: Estimator) -> BTreeMap<String, f64> {
        self.scores
            .iter()
            .filter(|s| s.estimator == estimator)
            .map(|s| (s.participant_id.clone(), s.value))
            .collect()
    }
}

/// Token ids of the code the synthetic target task predicts.
pub fn target_ids(vocab: &Vocabulary, code: Option<&str>) -> Vec<u32> {
    vocab.ids_for_code(code.unwrap_or(TARGET_CODE))
}

/// Which participants get a prediction context, and how it is built.
#[derive(Debug, Clone, Copy)]
pub struct ContextSpec<'a> {
    /// Label whose time zero anchors the context.
    pub label_task: &'a str,
    pub history_days: i64,
    /// Participants with any of these tokens in context are excluded.
    pub target_ids: &'a BTreeSet<u32>,
    /// Positions kept free after the context (generation length).
    pub reserve: usize,
}

impl<'a> ContextSpec<'a> {
    /// The contexts `score_cohort` uses for `task`.
    pub fn for_generation(task: &'a GenerationTask, label_task: &'a str, history_days: i64) -> Self {
        Self {
            label_task,
            history_days,
            target_ids: &task.target_token_ids,
            reserve: task.max_new_tokens,
        }
    }
}

/// Context tokens and PRS input, or the reason the participant is excluded.
pub fn prediction_context(
    vocab: &Vocabulary,
    config: &ModelConfig,
    p: &ParticipantRecord,
    spec: &ContextSpec<'_>,
) -> Result<std::result::Result<(Vec<u32>, Option<Vec<f32>>), ExclusionReason>> {
    let Some(label) = p.labels.get(spec.label_task) else {
        return Ok(Err(ExclusionReason::NoTimeZero));
    };
    let context = vocab.encode_context(p, label.time_zero_days, spec.history_days).ids;
    if context.iter().any(|t| spec.target_ids.contains(t)) {
        return Ok(Err(ExclusionReason::TargetInContext));
    }
    if context.len() + spec.reserve > config.max_tokens() {
        return Ok(Err(ExclusionReason::ContextTooLong));
    }
    if config.mode.uses_prs() && p.prs.is_none() {
        return Ok(Err(ExclusionReason::MissingPrs));
    }
    Ok(Ok((context, prs_input(config, p)?)))
}

/// Both estimators for every eligible participant. Time zero comes from the
/// participant's `label_task` label; the context keeps `history_days` of
/// events before it.
pub fn score_cohort(
    params: &Params<f32>,
    cohort: &Cohort,
    vocab: &Vocabulary,
    task: &GenerationTask,
    label_task: &str,
    history_days: i64,
) -> Result<CohortScores> {
    task.validate()?;
    if history_days < 0 {
        return Err(Error::invalid("history_days must be ≥ 0"));
    }
    let outcomes: Vec<std::result::Result<[RiskScore; 2], Exclusion>> = cohort
        .participants
        .par_iter()
        .map(|p| -> Result<_> {
            let spec = ContextSpec::for_generation(task, label_task, history_days);
            let (context, prs) = match prediction_context(vocab, &params.config, p, &spec)? {
                Ok(x) => x,
                Err(reason) => {
                    return Ok(Err(Exclusion {
                        participant_id: p.participant_id.clone(),
                        reason,
                    }))
                }
            };
            let model = TransformerModel::new(params, prs, vocab.day_table())?;
            let set = sample_trajectories(&model, &context, task, hash_str(&p.participant_id))?;
            let truncated = set.paths.iter().filter(|t| t.crosses(task.horizon_days)).count();
            let mk = |estimator, value| RiskScore {
                participant_id: p.participant_id.clone(),
                estimator,
                value,
                n_paths: task.n_paths,
                truncated_paths: truncated,
            };
            Ok(Ok([
                mk(Estimator::McFrequency, mc_frequency(&set, task)),
                mk(Estimator::PathProbability, path_probability(&set, task)?),
            ]))
        })
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o {
            Ok(pair) => scores.extend(pair),
            Err(x) => excluded.push(x),
        }
    }
    if scores.is_empty() {
        return Err(Error::invalid("no eligible participants to score"));
    }
    Ok(CohortScores { scores, excluded })
}

pub fn write_scores(scores: &CohortScores, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "participant_id\testimator\tvalue\tn_paths\ttruncated_paths").expect("in-memory write");
    for s in &scores.scores {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            s.participant_id,
            s.estimator.as_str(),
            s.value,
            s.n_paths,
            s.truncated_paths
        )
        .expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<RiskScore>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema = |line: usize, reason: &str| Error::Schema {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some("participant_id\testimator\tvalue\tn_paths\ttruncated_paths") {
        return Err(schema(1, "unexpected header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(schema(i + 2, "expected 5 fields"));
            }
            let estimator = match f[1] {
                "mc_frequency" => Estimator::McFrequency,
                "path_probability" => Estimator::PathProbability,
                _ => return Err(schema(i + 2, "unknown estimator")),
            };
            Ok(RiskScore {
                participant_id: f[0].to_string(),
                estimator,
                value: f[2].parse().map_err(|_| schema(i + 2, "bad value"))?,
                n_paths: f[3].parse().map_err(|_| schema(i + 2, "bad n_paths"))?,
                truncated_paths: f[4].parse().map_err(|_| schema(i + 2, "bad truncated_paths"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(p: &[f64], elapsed: &[i64]) -> Trajectory {
        Trajectory {
            tokens: vec![0; p.len()],
            target_mass: p.to_vec(),
            elapsed_days: elapsed.to_vec(),
            first_hit: None,
        }
    }

    #[test]
    fn path_score_examples() {
        assert_eq!(traj(&[1.0], &[0]).path_score(10), 1.0);
        assert_eq!(traj(&[0.5, 0.5], &[0, 0]).path_score(10), 0.75);
        assert_eq!(traj(&[1.0, 0.3, 0.9], &[0, 0, 0]).path_score(10), 1.0);
        assert_eq!(traj(&[0.0, 0.0], &[0, 0]).path_score(10), 0.0);
    }

    #[test]
    fn truncation_counts_the_crossing_step() {
        // crossing at step 1: steps 0 and 1 count, step 2 does not
        let t = traj(&[0.5, 0.5, 0.5], &[0, 30, 30]);
        assert_eq!(t.truncation_step(10), 1);
        assert_eq!(t.path_score(10), 0.75);
        assert_eq!(t.path_score(30), 0.875);
        let mut h = t.clone();
        h.first_hit = Some(2);
        assert!(!h.hit_before(10));
        assert!(h.hit_before(30));
    }

    #[test]
    fn mc_frequency_counts_hits() {
        let mut paths = vec![traj(&[0.1], &[0]); 10];
        for p in paths.iter_mut().take(3) {
            p.first_hit = Some(0);
        }
        let task = GenerationTask::new([1], 10);
        assert_eq!(mc_frequency(&TrajectorySet { paths: paths.clone() }, &task), 0.3);
        paths.iter_mut().for_each(|p| p.first_hit = None);
        assert_eq!(mc_frequency(&TrajectorySet { paths }, &task), 0.0);
    }

    #[test]
    fn aggregation_rules() {
        let v = [0.1, 0.4, 0.2, 0.9];
        assert!((Aggregation::Mean.apply(&v) - 0.4).abs() < 1e-15);
        assert!((Aggregation::Median.apply(&v) - 0.3).abs() < 1e-15);
        assert_eq!(Aggregation::Max.apply(&v), 0.9);
    }

    #[test]
    fn task_validation() {
        let mut t = GenerationTask::new([], 10);
        assert!(t.validate().is_err());
        t.target_token_ids.insert(2);
        assert!(t.validate().is_ok());
        t.temperature = 0.0;
        assert!(t.validate().is_err());
    }
}
