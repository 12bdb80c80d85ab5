//! Next-token training, test-loss evaluation and paired loss comparison.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cohort::{Cohort, ParticipantRecord};
use crate::error::{Error, Result};
use crate::model::{batch_loss_and_grad, sequence_loss, BatchEntry, ModelCheckpoint, ModelConfig, Params};
use crate::rng::{derive_seed, rng_for, tag};
use crate::stats;
use crate::tokenizer::Vocabulary;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    LinearDecay,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub grad_accum_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 4,
            learning_rate: 1e-4,
            schedule: Schedule::LinearDecay,
            weight_decay: 0.01,
            grad_accum_steps: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::invalid("epochs, batch_size and grad_accum_steps must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight_decay {} must be finite and ≥ 0", self.weight_decay)));
        }
        Ok(())
    }

    /// Optimizer steps per epoch for `n` participants.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size).div_ceil(self.grad_accum_steps)
    }

    /// Learning rate of 1-based optimizer step `t` out of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::LinearDecay => self.learning_rate * (1.0 - (t - 1) as f64 / total as f64),
        }
    }
}

/// Token ids (right-truncated to the model's capacity) and PRS input for one participant.
pub fn model_input(
    vocab: &Vocabulary,
    config: &ModelConfig,
    p: &ParticipantRecord,
) -> Result<(Vec<u32>, Option<Vec<f32>>)> {
    let mut ids = vocab.encode(p).ids;
    let cap = config.max_tokens();
    if ids.len() > cap {
        ids.drain(..ids.len() - cap);
    }
    Ok((ids, prs_input(config, p)?))
}

pub(crate) fn prs_input(config: &ModelConfig, p: &ParticipantRecord) -> Result<Option<Vec<f32>>> {
    if !config.mode.uses_prs() {
        return Ok(None);
    }
    let prs = p.prs.as_ref().ok_or_else(|| {
        Error::invalid(format!("participant {} has no PRS vector but the model is {}", p.participant_id, config.mode.as_str()))
    })?;
    if prs.values.len() != config.prs_dim {
        return Err(Error::Dimension {
            what: format!("PRS of {}", p.participant_id),
            expected: config.prs_dim,
            got: prs.values.len(),
        });
    }
    Ok(Some(prs.as_f32()))
}

/// AdamW with decoupled weight decay on matrix-shaped tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    decay_mask: Vec<bool>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &Params<f32>) -> Self {
        let mut decay_mask = vec![false; params.data.len()];
        for t in &params.layout.tensors {
            if t.decays() {
                decay_mask[t.range()].fill(true);
            }
        }
        Self {
            m: vec![0.0; params.data.len()],
            v: vec![0.0; params.data.len()],
            decay_mask,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64, weight_decay: f64) {
        self.t += 1;
        let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
        let c1 = 1.0 - ADAM_BETA1.powi(self.t) as f32;
        let c2 = 1.0 - ADAM_BETA2.powi(self.t) as f32;
        let (lr, wd, eps) = (lr as f32, weight_decay as f32, ADAM_EPS as f32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
            let decay = if self.decay_mask[i] { wd * params[i] } else { 0.0 };
            params[i] -= lr * (update + decay);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Token-weighted mean training loss over the epoch's steps.
    pub loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: ModelCheckpoint,
    pub trace: Vec<EpochLoss>,
    /// Token-weighted mean loss of the initial parameters over the training set.
    pub initial_loss: f64,
    pub total_steps: usize,
}

struct Example {
    tokens: Vec<u32>,
    prs: Option<Vec<f32>>,
}

/// Initializes a model from `train_config.seed` and trains it.
pub fn train(cohort: &Cohort, vocab: &Vocabulary, config: &ModelConfig, tc: &TrainConfig) -> Result<TrainRun> {
    let params = Params::<f32>::init(config, derive_seed(tc.seed, &[tag::INIT]))?;
    train_from(params, cohort, vocab, tc)
}

/// Continues training from given parameters.
pub fn train_from(mut params: Params<f32>, cohort: &Cohort, vocab: &Vocabulary, tc: &TrainConfig) -> Result<TrainRun> {
    tc.validate()?;
    let config = params.config.clone();
    if config.vocab_size != vocab.len() {
        return Err(Error::Dimension {
            what: "vocabulary".into(),
            expected: config.vocab_size,
            got: vocab.len(),
        });
    }
    if cohort.is_empty() {
        return Err(Error::invalid("empty training cohort"));
    }
    let examples: Vec<Example> = cohort
        .participants
        .iter()
        .map(|p| model_input(vocab, &config, p).map(|(tokens, prs)| Example { tokens, prs }))
        .collect::<Result<_>>()?;

    let initial_loss = mean_loss(&params, &examples)?;
    let n = examples.len();
    let steps_per_epoch = tc.steps_per_epoch(n);
    let total = tc.epochs * steps_per_epoch;
    let dropout = config.dropout_rate > 0.0;
    let mut opt = AdamW::new(&params);
    let mut trace = Vec::with_capacity(tc.epochs);
    let mut step = 0;
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(tc.seed, &[tag::SHUFFLE, epoch as u64]));
        let micro: Vec<&[usize]> = order.chunks(tc.batch_size).collect();
        let (mut epoch_sum, mut epoch_targets) = (0.0, 0usize);
        for group in micro.chunks(tc.grad_accum_steps) {
            step += 1;
            let mut grad = vec![0f32; params.data.len()];
            let (mut loss_sum, mut targets) = (0.0f64, 0usize);
            for (k, mb) in group.iter().enumerate() {
                let batch: Vec<BatchEntry<'_, f32>> = mb
                    .iter()
                    .map(|&i| BatchEntry {
                        tokens: &examples[i].tokens,
                        prs: examples[i].prs.as_deref(),
                    })
                    .filter(|e| e.tokens.len() >= 2)
                    .collect();
                if batch.is_empty() {
                    continue;
                }
                let seed = dropout.then(|| derive_seed(tc.seed, &[tag::DROPOUT, step as u64, k as u64]));
                let lg = batch_loss_and_grad(&params, &batch, seed)?;
                let w = lg.n_targets as f32;
                for (g, x) in grad.iter_mut().zip(&lg.grad) {
                    *g += w * x;
                }
                loss_sum += f64::from(lg.loss) * lg.n_targets as f64;
                targets += lg.n_targets;
            }
            if targets == 0 {
                continue;
            }
            let loss = loss_sum / targets as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            let inv = 1.0 / targets as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut params.data, &grad, tc.lr_at(step, total), tc.weight_decay);
            epoch_sum += loss_sum;
            epoch_targets += targets;
        }
        let loss = epoch_sum / epoch_targets.max(1) as f64;
        log::info!("epoch {} loss {loss:.4}", epoch + 1);
        trace.push(EpochLoss {
            epoch: epoch + 1,
            loss,
            steps: steps_per_epoch,
        });
    }
    let meta = json!({
        "vocab": serde_json::from_str::<serde_json::Value>(&vocab.to_json()?)?,
        "train_config": tc,
        "initial_loss": initial_loss,
        "final_epoch_loss": trace.last().map(|e| e.loss),
    });
    Ok(TrainRun {
        checkpoint: ModelCheckpoint { params, meta },
        trace,
        initial_loss,
        total_steps: total,
    })
}

fn mean_loss(params: &Params<f32>, examples: &[Example]) -> Result<f64> {
    let parts: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|e| sequence_loss(params, &e.tokens, e.prs.as_deref()).map(|(l, n)| (f64::from(l), n)))
        .collect::<Result<_>>()?;
    let (s, n) = parts.iter().fold((0.0, 0), |(s, n), (l, k)| (s + l, n + k));
    Ok(s / n.max(1) as f64)
}

/// Vocabulary stored alongside a trained checkpoint.
pub fn checkpoint_vocab(ck: &ModelCheckpoint) -> Result<Vocabulary> {
    let v = ck
        .meta
        .get("vocab")
        .ok_or_else(|| Error::Corrupt("checkpoint carries no vocabulary".into()))?;
    Vocabulary::from_json(&v.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_participant: BTreeMap<String, f64>,
    pub overall: f64,
    /// Participants with no scoreable targets.
    pub excluded: Vec<String>,
}

/// Mean next-token cross-entropy per participant.
pub fn evaluate_loss(test: &Cohort, vocab: &Vocabulary, ck: &ModelCheckpoint) -> Result<LossReport> {
    let params = &ck.params;
    let results: Vec<(String, Option<f64>)> = test
        .participants
        .par_iter()
        .map(|p| {
            let (tokens, prs) = model_input(vocab, &params.config, p)?;
            let (sum, n) = sequence_loss(params, &tokens, prs.as_deref())?;
            Ok((p.participant_id.clone(), (n > 0).then(|| f64::from(sum) / n as f64)))
        })
        .collect::<Result<_>>()?;
    let mut per_participant = BTreeMap::new();
    let mut excluded = Vec::new();
    for (id, l) in results {
        match l {
            Some(l) => {
                per_participant.insert(id, l);
            }
            None => excluded.push(id),
        }
    }
    if per_participant.is_empty() {
        return Err(Error::Undefined("no participant has a scoreable target".into()));
    }
    let overall = per_participant.values().sum::<f64>() / per_participant.len() as f64;
    Ok(LossReport {
        per_participant,
        overall,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedLossTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub t_p: f64,
    pub wilcoxon_p: f64,
    /// Shapiro-Wilk p of the differences; absent when they are constant.
    pub normality_p: Option<f64>,
    pub zero_variance: bool,
    pub all_zero: bool,
}

pub fn paired_loss_test(a: &LossReport, b: &LossReport) -> Result<PairedLossTest> {
    if a.per_participant.len() != b.per_participant.len()
        || a.per_participant.keys().zip(b.per_participant.keys()).any(|(x, y)| x != y)
    {
        return Err(Error::invalid("loss reports cover different participants"));
    }
    let diffs: Vec<f64> = a
        .per_participant
        .values()
        .zip(b.per_participant.values())
        .map(|(x, y)| x - y)
        .collect();
    paired_differences_test(&diffs)
}

pub fn paired_differences_test(diffs: &[f64]) -> Result<PairedLossTest> {
    if diffs.len() < 3 {
        return Err(Error::invalid(format!("paired test needs at least 3 participants, got {}", diffs.len())));
    }
    let t = stats::ttest_1samp(diffs)?;
    let w = stats::wilcoxon_signed_rank(diffs)?;
    let normality_p = if t.zero_variance || diffs.len() > 5000 {
        None
    } else {
        Some(stats::shapiro_wilk(diffs)?.1)
    };
    Ok(PairedLossTest {
        n: diffs.len(),
        mean_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        t_p: t.p_two_sided,
        wilcoxon_p: w.p_two_sided,
        normality_p,
        zero_variance: t.zero_variance,
        all_zero: w.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_endpoints() {
        let tc = TrainConfig {
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        assert_eq!(tc.lr_at(1, 10), 0.5);
        assert!((tc.lr_at(10, 10) - 0.05).abs() < 1e-15);
        let lrs: Vec<f64> = (1..=10).map(|t| tc.lr_at(t, 10)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn steps_per_epoch_rounds_up() {
        let tc = TrainConfig {
            batch_size: 4,
            grad_accum_steps: 3,
            ..TrainConfig::default()
        };
        assert_eq!(tc.steps_per_epoch(25), 3);
        assert_eq!(tc.steps_per_epoch(24), 2);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let cfg = ModelConfig {
            vocab_size: 8,
            ..ModelConfig::desk(8, crate::model::Mode::EhrOnly, 0)
        };
        let p = Params::<f32>::init(&cfg, 1).unwrap();
        let mut opt = AdamW::new(&p);
        let mut data = vec![0.0f32; p.data.len()];
        let grad: Vec<f32> = (0..data.len()).map(|i| if i % 2 == 0 { 3.0 } else { -0.2 }).collect();
        opt.step(&mut data, &grad, 0.01, 0.0);
        for (x, g) in data.iter().zip(&grad) {
            assert!((x + 0.01 * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_and_decay_is_a_fixed_point() {
        let cfg = ModelConfig::desk(8, crate::model::Mode::EhrOnly, 0);
        let p = Params::<f32>::init(&cfg, 2).unwrap();
        let mut opt = AdamW::new(&p);
        let mut data = p.data.clone();
        let zeros = vec![0.0; data.len()];
        opt.step(&mut data, &zeros, 0.1, 0.0);
        assert_eq!(data, p.data);
    }

    #[test]
    fn paired_test_flags() {
        let same = vec![0.0; 10];
        let r = paired_differences_test(&same).unwrap();
        assert!(r.all_zero && r.wilcoxon_p == 1.0);
        let shift = vec![0.1; 20];
        let r = paired_differences_test(&shift).unwrap();
        assert!(r.zero_variance && r.t_p < 1e-6 && r.normality_p.is_none());
        assert!(paired_differences_test(&[0.1, 0.2]).is_err());
    }
}
