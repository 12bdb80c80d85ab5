//! Transfer learning on a trained backbone: a classification head on the
//! frozen final state, PRS embeddings from the projector, and small
//! classifiers on fixed feature sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cohort::{Cohort, ParticipantRecord};
use crate::error::{Error, Result};
use crate::generate::{prediction_context, ContextSpec, Exclusion};
use crate::model::{last_hidden, read_container, write_container, Container, Params};
use crate::prs::PrsVector;
use crate::rng::{rng_for, tag, Rng};
use crate::tokenizer::Vocabulary;

/// Frozen backbone that counts its forward passes.
pub struct Backbone<'a> {
    params: &'a Params<f32>,
    passes: AtomicUsize,
}

impl<'a> Backbone<'a> {
    pub fn new(params: &'a Params<f32>) -> Self {
        Self {
            params,
            passes: AtomicUsize::new(0),
        }
    }

    pub fn params(&self) -> &Params<f32> {
        self.params
    }

    /// Final normalized state at the last non-pad position.
    pub fn pooled(&self, tokens: &[u32], prs: Option<&[f32]>) -> Result<Vec<f64>> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        Ok(last_hidden(self.params, tokens, prs)?.into_iter().map(f64::from).collect())
    }

    pub fn forward_passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }
}

/// Pooled states and labels for every eligible participant.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSet {
    pub participant_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub excluded: Vec<Exclusion>,
}

pub fn pooled_states(backbone: &Backbone<'_>, cohort: &Cohort, vocab: &Vocabulary, spec: &ContextSpec<'_>) -> Result<PooledSet> {
    let cfg = &backbone.params.config;
    let rows: Vec<std::result::Result<(String, Vec<f64>, bool), Exclusion>> = cohort
        .participants
        .par_iter()
        .map(|p| -> Result<_> {
            match prediction_context(vocab, cfg, p, spec)? {
                Err(reason) => Ok(Err(Exclusion {
                    participant_id: p.participant_id.clone(),
                    reason,
                })),
                Ok((ctx, prs)) => {
                    let h = backbone.pooled(&ctx, prs.as_deref())?;
                    Ok(Ok((p.participant_id.clone(), h, p.labels[spec.label_task].positive)))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut out = PooledSet {
        participant_ids: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        excluded: Vec::new(),
    };
    for r in rows {
        match r {
            Ok((id, h, y)) => {
                out.participant_ids.push(id);
                out.features.push(h);
                out.labels.push(y);
            }
            Err(e) => out.excluded.push(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            n_classes: 2,
            dropout_rate: 0.1,
            learning_rate: 1e-2,
            epochs: 100,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Linear map from the pooled final state to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub d_model: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    /// Row-major `d_model × n_classes`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2) = (0.9, 0.999);
        let (c1, c2) = (1.0 - f64::powi(b1, self.t), 1.0 - f64::powi(b2, self.t));
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in z.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    z.iter_mut().for_each(|x| *x /= s);
}

fn check_two_classes(labels: &[usize]) -> Result<()> {
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::invalid("training labels hold a single class"));
    }
    Ok(())
}

impl ClassifierHead {
    /// Softmax regression with inverted dropout on the inputs.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], cfg: &HeadConfig) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::invalid("features and labels must be non-empty and aligned"));
        }
        if cfg.n_classes < 2 || labels.iter().any(|&l| l >= cfg.n_classes) {
            return Err(Error::invalid("labels must lie in 0..n_classes with n_classes ≥ 2"));
        }
        check_two_classes(labels)?;
        let d = features[0].len();
        let c = cfg.n_classes;
        let mut head = Self {
            d_model: d,
            n_classes: c,
            dropout_rate: cfg.dropout_rate,
            weight: vec![0.0; d * c],
            bias: vec![0.0; c],
        };
        let mut params = vec![0.0; d * c + c];
        let mut opt = Adam::new(params.len());
        let keep = 1.0 - cfg.dropout_rate;
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut x = vec![0.0; d];
        let mut z = vec![0.0; c];
        for epoch in 0..cfg.epochs {
            let mut rng = rng_for(cfg.seed, &[tag::HEAD, epoch as u64]);
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let mut g = vec![0.0; params.len()];
                for &i in batch {
                    for (xj, &fj) in x.iter_mut().zip(&features[i]) {
                        *xj = if cfg.dropout_rate > 0.0 && rng.random::<f64>() >= keep {
                            0.0
                        } else {
                            fj / keep
                        };
                    }
                    logits_into(&params, &x, d, c, &mut z);
                    softmax(&mut z);
                    z[labels[i]] -= 1.0;
                    for j in 0..d {
                        if x[j] != 0.0 {
                            for k in 0..c {
                                g[j * c + k] += x[j] * z[k];
                            }
                        }
                    }
                    for k in 0..c {
                        g[d * c + k] += z[k];
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                for (gi, pi) in g.iter_mut().zip(&params).take(d * c) {
                    *gi = *gi * inv + cfg.weight_decay * pi;
                }
                g[d * c..].iter_mut().for_each(|v| *v *= inv);
                opt.step(&mut params, &g, cfg.learning_rate);
            }
        }
        head.weight.copy_from_slice(&params[..d * c]);
        head.bias.copy_from_slice(&params[d * c..]);
        Ok(head)
    }

    /// Class probabilities (no dropout).
    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        let (d, c) = (self.d_model, self.n_classes);
        let mut z = self.bias.clone();
        for j in 0..d {
            for k in 0..c {
                z[k] += features[j] * self.weight[j * c + k];
            }
        }
        softmax(&mut z);
        z
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(
            &Container {
                kind: "classifier_head".into(),
                config: json!({"d_model": self.d_model, "n_classes": self.n_classes, "dropout_rate": self.dropout_rate}),
                meta: json!({"pooling": "last_non_pad"}),
                tensors: vec![
                    ("weight".into(), vec![self.d_model, self.n_classes], to_f32(&self.weight)),
                    ("bias".into(), vec![self.n_classes], to_f32(&self.bias)),
                ],
            },
            path,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = read_container(path)?;
        expect_kind(&c, "classifier_head")?;
        let weight = tensor(&c, "weight")?;
        let bias = tensor(&c, "bias")?;
        Ok(Self {
            d_model: weight.0[0],
            n_classes: weight.0[1],
            dropout_rate: c.config["dropout_rate"].as_f64().unwrap_or(0.0),
            weight: weight.1,
            bias: bias.1,
        })
    }
}

fn logits_into(params: &[f64], x: &[f64], d: usize, c: usize, z: &mut [f64]) {
    z.copy_from_slice(&params[d * c..]);
    for j in 0..d {
        if x[j] != 0.0 {
            for k in 0..c {
                z[k] += x[j] * params[j * c + k];
            }
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn expect_kind(c: &Container, kind: &str) -> Result<()> {
    if c.kind != kind {
        return Err(Error::Corrupt(format!("container holds a {:?}, expected {kind:?}", c.kind)));
    }
    Ok(())
}

fn tensor(c: &Container, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    c.tensors
        .iter()
        .find(|t| t.0 == name)
        .map(|t| (t.1.clone(), t.2.iter().map(|&x| f64::from(x)).collect()))
        .ok_or_else(|| Error::Tensor {
            name: name.into(),
            reason: "missing from classifier".into(),
        })
}

/// Trains a head on the frozen backbone's pooled states for `spec.label_task`.
pub fn finetune_head(
    backbone: &Backbone<'_>,
    train: &Cohort,
    vocab: &Vocabulary,
    spec: &ContextSpec<'_>,
    cfg: &HeadConfig,
) -> Result<(ClassifierHead, PooledSet)> {
    let set = pooled_states(backbone, train, vocab, spec)?;
    if set.labels.is_empty() {
        return Err(Error::invalid("no eligible training participants"));
    }
    let labels: Vec<usize> = set.labels.iter().map(|&l| usize::from(l)).collect();
    let head = ClassifierHead::fit(&set.features, &labels, cfg)?;
    Ok((head, set))
}

/// Positive-class probability per eligible participant, one forward pass each.
pub fn head_scores(
    head: &ClassifierHead,
    backbone: &Backbone<'_>,
    cohort: &Cohort,
    vocab: &Vocabulary,
    spec: &ContextSpec<'_>,
) -> Result<(BTreeMap<String, f64>, Vec<Exclusion>)> {
    let set = pooled_states(backbone, cohort, vocab, spec)?;
    let scores = set
        .participant_ids
        .into_iter()
        .zip(&set.features)
        .map(|(id, f)| (id, head.predict_proba(f)[1]))
        .collect();
    Ok((scores, set.excluded))
}

/// Mean of the projector's soft-token rows.
pub fn extract_prs_embedding(params: &Params<f32>, prs: &PrsVector) -> Result<Vec<f64>> {
    if !params.config.mode.uses_prs() {
        return Err(Error::invalid("ehr_only checkpoint has no PRS projector"));
    }
    let rows = params.project_prs(&prs.as_f32())?;
    let (s, d) = (params.config.n_soft_tokens, params.config.d_model);
    Ok((0..d)
        .map(|j| (0..s).map(|r| f64::from(rows[r * d + j])).sum::<f64>() / s as f64)
        .collect())
}

/// Embeddings for every participant with a PRS vector, keyed by id.
pub fn embed_cohort(params: &Params<f32>, cohort: &Cohort) -> Result<BTreeMap<String, Vec<f64>>> {
    cohort
        .participants
        .par_iter()
        .filter_map(|p| p.prs.as_ref().map(|v| (p, v)))
        .map(|(p, v)| Ok((p.participant_id.clone(), extract_prs_embedding(params, v)?)))
        .collect()
}

pub fn write_embeddings(rows: &BTreeMap<String, Vec<f64>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = rows.values().next().map_or(0, Vec::len);
    let mut s = String::from("participant_id");
    for j in 0..d {
        let _ = write!(s, "\te{j}");
    }
    s.push('\n');
    for (id, v) in rows {
        s.push_str(id);
        for x in v {
            let _ = write!(s, "\t{x}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema = |reason: String| Error::Schema {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| schema("empty file".into()))?;
    let width = header.split('\t').count();
    let mut out = BTreeMap::new();
    for (i, l) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != width {
            return Err(schema(format!("line {}: expected {width} fields", i + 2)));
        }
        let v = f[1..]
            .iter()
            .map(|x| x.parse::<f64>().map_err(|_| schema(format!("line {}: bad number {x:?}", i + 2))))
            .collect::<Result<_>>()?;
        out.insert(f[0].to_string(), v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    /// Plateau rule: stop after `patience` epochs without a training-loss
    /// improvement larger than `tol`.
    pub tol: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            learning_rate: 1e-3,
            max_epochs: 200,
            batch_size: 200,
            l2: 1e-4,
            tol: 1e-4,
            patience: 10,
            seed: 0,
        }
    }
}

/// Feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Features with zero training variance; they map to 0.
    pub zero_variance: Vec<usize>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("no training rows"));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged feature matrix"));
        }
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let sd: Vec<f64> = (0..d)
            .map(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
            .collect();
        let zero_variance = (0..d).filter(|&j| sd[j] <= 1e-12 * mean[j].abs().max(1.0)).collect();
        Ok(Self { mean, sd, zero_variance })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.zero_variance.binary_search(&j).is_ok() {
                    0.0
                } else {
                    (v - self.mean[j]) / self.sd[j]
                }
            })
            .collect()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One-hidden-layer binary classifier with GELU and a logistic output.
/// `hidden = 0` gives plain logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub standardizer: Standardizer,
    pub n_features: usize,
    pub hidden: usize,
    /// `n_features × hidden`, or empty for logistic regression.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden` (or `n_features`) output weights.
    pub w2: Vec<f64>,
    pub b2: f64,
    pub epochs_run: usize,
    pub final_loss: f64,
}

struct Layout {
    f: usize,
    h: usize,
}

impl Layout {
    fn len(&self) -> usize {
        if self.h == 0 {
            self.f + 1
        } else {
            self.f * self.h + 2 * self.h + 1
        }
    }
}

/// Log-loss and its gradient for one standardized row; returns the loss.
fn mlp_row(lay: &Layout, p: &[f64], x: &[f64], y: f64, g: &mut [f64], hbuf: &mut [f64], zbuf: &mut [f64]) -> f64 {
    let (f, h) = (lay.f, lay.h);
    let logit = if h == 0 {
        p[f] + x.iter().zip(&p[..f]).map(|(a, b)| a * b).sum::<f64>()
    } else {
        let (w1, rest) = p.split_at(f * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        zbuf.copy_from_slice(b1);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (z, w) in zbuf.iter_mut().zip(&w1[j * h..(j + 1) * h]) {
                    *z += xj * w;
                }
            }
        }
        for (a, &z) in hbuf.iter_mut().zip(zbuf.iter()) {
            *a = gelu(z);
        }
        b2[0] + hbuf.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>()
    };
    let prob = sigmoid(logit);
    let loss = -(y * prob.max(1e-15).ln() + (1.0 - y) * (1.0 - prob).max(1e-15).ln());
    let dz = prob - y;
    if h == 0 {
        for j in 0..f {
            g[j] += dz * x[j];
        }
        g[f] += dz;
    } else {
        let w2 = &p[f * h + h..f * h + 2 * h];
        for k in 0..h {
            g[f * h + h + k] += dz * hbuf[k];
        }
        g[f * h + 2 * h] += dz;
        for k in 0..h {
            let dzk = dz * w2[k] * gelu_grad(zbuf[k]);
            g[f * h + k] += dzk;
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    g[j * h + k] += xj * dzk;
                }
            }
        }
    }
    loss
}

impl MlpClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &MlpConfig) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                what: "labels".into(),
                expected: x.len(),
                got: y.len(),
            });
        }
        let yi: Vec<usize> = y.iter().map(|&b| usize::from(b)).collect();
        if yi.is_empty() {
            return Err(Error::invalid("no training rows"));
        }
        check_two_classes(&yi)?;
        let standardizer = Standardizer::fit(x)?;
        let xs: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
        let lay = Layout {
            f: standardizer.mean.len(),
            h: cfg.hidden,
        };
        let mut rng = rng_for(cfg.seed, &[tag::MLP]);
        let mut p = vec![0.0; lay.len()];
        glorot(&mut rng, &lay, &mut p);
        let mut opt = Adam::new(p.len());
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let (mut hbuf, mut zbuf) = (vec![0.0; lay.h], vec![0.0; lay.h]);
        let mut best = f64::INFINITY;
        let mut stall = 0;
        let mut epochs_run = 0;
        let mut last_loss = f64::NAN;
        let n_weights = if lay.h == 0 { lay.f } else { lay.f * lay.h };
        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng_for(cfg.seed, &[tag::MLP, 1 + epoch as u64]));
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let mut g = vec![0.0; p.len()];
                for &i in batch {
                    total += mlp_row(&lay, &p, &xs[i], f64::from(u8::from(y[i])), &mut g, &mut hbuf, &mut zbuf);
                }
                let inv = 1.0 / batch.len() as f64;
                g.iter_mut().for_each(|v| *v *= inv);
                for (gi, pi) in g.iter_mut().zip(&p).take(n_weights) {
                    *gi += cfg.l2 * pi / xs.len() as f64;
                }
                if lay.h > 0 {
                    let w2 = lay.f * lay.h + lay.h;
                    for k in 0..lay.h {
                        g[w2 + k] += cfg.l2 * p[w2 + k] / xs.len() as f64;
                    }
                }
                opt.step(&mut p, &g, cfg.learning_rate);
            }
            epochs_run = epoch + 1;
            last_loss = total / xs.len() as f64;
            if !last_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: epochs_run,
                    loss: last_loss,
                });
            }
            if last_loss > best - cfg.tol {
                stall += 1;
            } else {
                stall = 0;
            }
            best = best.min(last_loss);
            if stall >= cfg.patience {
                break;
            }
        }
        let (f, h) = (lay.f, lay.h);
        let (w1, b1, w2, b2) = if h == 0 {
            (Vec::new(), Vec::new(), p[..f].to_vec(), p[f])
        } else {
            (p[..f * h].to_vec(), p[f * h..f * h + h].to_vec(), p[f * h + h..f * h + 2 * h].to_vec(), p[f * h + 2 * h])
        };
        Ok(Self {
            standardizer,
            n_features: f,
            hidden: h,
            w1,
            b1,
            w2,
            b2,
            epochs_run,
            final_loss: last_loss,
        })
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let x = self.standardizer.apply(row);
        let logit = if self.hidden == 0 {
            self.b2 + x.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>()
        } else {
            let h = self.hidden;
            let mut z = self.b1.clone();
            for (j, &xj) in x.iter().enumerate() {
                for k in 0..h {
                    z[k] += xj * self.w1[j * h + k];
                }
            }
            self.b2 + z.iter().zip(&self.w2).map(|(&a, b)| gelu(a) * b).sum::<f64>()
        };
        sigmoid(logit)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (f, h) = (self.n_features, self.hidden);
        let mut tensors = vec![
            ("mean".into(), vec![f], to_f32(&self.standardizer.mean)),
            ("sd".into(), vec![f], to_f32(&self.standardizer.sd)),
        ];
        if h > 0 {
            tensors.push(("w1".into(), vec![f, h], to_f32(&self.w1)));
            tensors.push(("b1".into(), vec![h], to_f32(&self.b1)));
        }
        tensors.push(("w2".into(), vec![self.w2.len()], to_f32(&self.w2)));
        tensors.push(("b2".into(), vec![1], vec![self.b2 as f32]));
        write_container(
            &Container {
                kind: "mlp_classifier".into(),
                config: json!({"n_features": f, "hidden": h}),
                meta: json!({
                    "zero_variance": self.standardizer.zero_variance,
                    "epochs_run": self.epochs_run,
                    "final_loss": self.final_loss,
                }),
                tensors,
            },
            path,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = read_container(path)?;
        expect_kind(&c, "mlp_classifier")?;
        let hidden = c.config["hidden"].as_u64().unwrap_or(0) as usize;
        let mean = tensor(&c, "mean")?.1;
        let zero_variance = serde_json::from_value(c.meta["zero_variance"].clone()).unwrap_or_default();
        let (w1, b1) = if hidden > 0 {
            (tensor(&c, "w1")?.1, tensor(&c, "b1")?.1)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            n_features: mean.len(),
            standardizer: Standardizer {
                mean,
                sd: tensor(&c, "sd")?.1,
                zero_variance,
            },
            hidden,
            w1,
            b1,
            w2: tensor(&c, "w2")?.1,
            b2: tensor(&c, "b2")?.1[0],
            epochs_run: c.meta["epochs_run"].as_u64().unwrap_or(0) as usize,
            final_loss: c.meta["final_loss"].as_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Default recipe with the given hidden width and seed.
pub fn train_mlp_classifier(x: &[Vec<f64>], y: &[bool], hidden: usize, seed: u64) -> Result<MlpClassifier> {
    MlpClassifier::fit(
        x,
        y,
        &MlpConfig {
            hidden,
            seed,
            ..MlpConfig::default()
        },
    )
}

fn glorot(rng: &mut Rng, lay: &Layout, p: &mut [f64]) {
    let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for x in slice {
            *x = rng.random_range(-bound..bound);
        }
    };
    let (f, h) = (lay.f, lay.h);
    if h == 0 {
        fill(&mut p[..f], f, 1);
    } else {
        fill(&mut p[..f * h], f, h);
        fill(&mut p[f * h..f * h + h], f, h);
        fill(&mut p[f * h + h..f * h + 2 * h + 1], h, 1);
    }
}

/// One-hot demographic codes, column order fixed by `codes`.
pub fn demographic_features(p: &ParticipantRecord, codes: &[String]) -> Vec<f64> {
    codes
        .iter()
        .map(|c| f64::from(u8::from(p.demographics.iter().any(|d| d == c))))
        .collect()
}

pub fn demographic_codes(cohort: &Cohort) -> Vec<String> {
    let mut codes: Vec<String> = cohort
        .participants
        .iter()
        .flat_map(|p| p.demographics.iter().cloned())
        .collect();
    codes.sort();
    codes.dedup();
    codes
}

/// Logistic regression on one-hot demographics.
pub fn fit_demographics_baseline(
    train: &Cohort,
    label_task: &str,
    seed: u64,
) -> Result<(Vec<String>, MlpClassifier)> {
    let codes = demographic_codes(train);
    let (x, y): (Vec<Vec<f64>>, Vec<bool>) = train
        .participants
        .iter()
        .filter_map(|p| p.labels.get(label_task).map(|l| (demographic_features(p, &codes), l.positive)))
        .unzip();
    let cfg = MlpConfig {
        hidden: 0,
        learning_rate: 1e-2,
        seed,
        ..MlpConfig::default()
    };
    Ok((codes, MlpClassifier::fit(&x, &y, &cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_flags_constant_features() {
        let x = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.zero_variance, vec![1]);
        let r = s.apply(&[3.0, 7.0]);
        assert_eq!(r, vec![0.0, 0.0]);
    }

    #[test]
    fn mlp_gradient_matches_differences() {
        let lay = Layout { f: 3, h: 4 };
        let mut rng = rng_for(1, &[0]);
        let mut p = vec![0.0; lay.len()];
        glorot(&mut rng, &lay, &mut p);
        let x = [0.3, -1.2, 0.8];
        let (mut hb, mut zb) = (vec![0.0; 4], vec![0.0; 4]);
        let mut g = vec![0.0; p.len()];
        mlp_row(&lay, &p, &x, 1.0, &mut g, &mut hb, &mut zb);
        for i in 0..p.len() {
            let mut scratch = vec![0.0; p.len()];
            let mut q = p.clone();
            q[i] += 1e-6;
            let up = mlp_row(&lay, &q, &x, 1.0, &mut scratch, &mut hb, &mut zb);
            q[i] -= 2e-6;
            let down = mlp_row(&lay, &q, &x, 1.0, &mut scratch, &mut hb, &mut zb);
            assert!(((up - down) / 2e-6 - g[i]).abs() < 1e-7, "coordinate {i}");
        }
    }

    #[test]
    fn head_rejects_single_class() {
        let x = vec![vec![0.0, 1.0]; 4];
        assert!(ClassifierHead::fit(&x, &[1, 1, 1, 1], &HeadConfig::default()).is_err());
    }
}
