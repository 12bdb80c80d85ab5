//! Classification metrics, paired bootstrap comparison, precision-recall
//! difference curves and inverse-variance meta-analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};
use crate::stats::{average_ranks, chi2_sf, normal_sf};

pub use crate::stats::{spearman_positive, Spearman};

pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_RECALL_GRID: usize = 101;
const Z95: f64 = 1.959_963_984_540_054;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_lengths(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Dimension {
            what: "scores".into(),
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    Ok(())
}

/// Mann-Whitney estimate of P(score_pos > score_neg) + ½·P(tie).
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_lengths(labels, scores)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Descending-threshold ROC points with tied scores grouped: (fpr, tpr),
/// starting at (0, 0).
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_lengths(labels, scores)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        if order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]) {
            out.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(out)
}

/// Descending-threshold PR points with tied scores grouped: (recall, precision).
pub fn pr_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_lengths(labels, scores)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::Undefined("precision-recall needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// Average precision: Σ (recall_k − recall_{k−1}) · precision_k.
pub fn auprc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let pts = pr_curve(labels, scores)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in pts {
        ap += (r - prev) * p;
        prev = r;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholded {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    /// No score reached the threshold; precision is reported as 0.
    pub no_predicted_positives: bool,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Confusion-matrix metrics with predicted positive iff score ≥ threshold.
pub fn thresholded_metrics(labels: &[bool], scores: &[f64], threshold: f64) -> Result<Thresholded> {
    check_lengths(labels, scores)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fneg += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Thresholded {
        accuracy: ratio(tp + tn, labels.len()),
        precision,
        recall,
        f1,
        specificity: ratio(tn, tn + fp),
        no_predicted_positives: tp + fp == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", content = "threshold", rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Auprc,
    Accuracy(f64),
    Precision(f64),
    Recall(f64),
    F1(f64),
    Specificity(f64),
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Self::Auroc => "auroc".into(),
            Self::Auprc => "auprc".into(),
            Self::Accuracy(t) => format!("accuracy@{t:.2}"),
            Self::Precision(t) => format!("precision@{t:.2}"),
            Self::Recall(t) => format!("recall@{t:.2}"),
            Self::F1(t) => format!("f1@{t:.2}"),
            Self::Specificity(t) => format!("specificity@{t:.2}"),
        }
    }

    /// The Table 2 row set at one threshold.
    pub fn standard_set(threshold: f64) -> Vec<Metric> {
        vec![
            Self::Auroc,
            Self::Auprc,
            Self::Accuracy(threshold),
            Self::Precision(threshold),
            Self::Recall(threshold),
            Self::F1(threshold),
            Self::Specificity(threshold),
        ]
    }

    pub fn eval(&self, labels: &[bool], scores: &[f64]) -> Result<f64> {
        let th = |t| thresholded_metrics(labels, scores, t);
        Ok(match *self {
            Self::Auroc => auroc(labels, scores)?,
            Self::Auprc => auprc(labels, scores)?,
            Self::Accuracy(t) => th(t)?.accuracy,
            Self::Precision(t) => th(t)?.precision,
            Self::Recall(t) => th(t)?.recall,
            Self::F1(t) => th(t)?.f1,
            Self::Specificity(t) => th(t)?.specificity,
        })
    }
}

/// Two models' scores aligned by subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPredictions {
    pub subject_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub score_a: Vec<f64>,
    pub score_b: Vec<f64>,
}

fn mean_by_subject(scores: &[(String, f64)]) -> BTreeMap<&str, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (id, s) in scores {
        let e = acc.entry(id.as_str()).or_default();
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

impl PairedPredictions {
    pub fn new(labels: Vec<bool>, score_a: Vec<f64>, score_b: Vec<f64>) -> Result<Self> {
        check_lengths(&labels, &score_a)?;
        check_lengths(&labels, &score_b)?;
        let subject_ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Ok(Self {
            subject_ids,
            labels,
            score_a,
            score_b,
        })
    }

    /// Aligns subjects present in the labels and both score lists; repeated
    /// scores for a subject are averaged.
    pub fn align(labels: &BTreeMap<String, bool>, a: &[(String, f64)], b: &[(String, f64)]) -> Result<Self> {
        let (ma, mb) = (mean_by_subject(a), mean_by_subject(b));
        let mut out = Self {
            subject_ids: Vec::new(),
            labels: Vec::new(),
            score_a: Vec::new(),
            score_b: Vec::new(),
        };
        for (id, &l) in labels {
            if let (Some(&sa), Some(&sb)) = (ma.get(id.as_str()), mb.get(id.as_str())) {
                out.subject_ids.push(id.clone());
                out.labels.push(l);
                out.score_a.push(sa);
                out.score_b.push(sb);
            }
        }
        if out.labels.is_empty() {
            return Err(Error::invalid("no subject has a label and both scores"));
        }
        check_lengths(&out.labels, &out.score_a)?;
        check_lengths(&out.labels, &out.score_b)?;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            score_a: self.score_b.clone(),
            score_b: self.score_a.clone(),
            ..self.clone()
        }
    }

    fn take(&self, idx: &[usize]) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
        (
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.score_a[i]).collect(),
            idx.iter().map(|&i| self.score_b[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDelta {
    pub metric: String,
    pub value_a: f64,
    pub value_b: f64,
    /// Mean of the bootstrap deltas.
    pub mean_delta: f64,
    pub ci95: (f64, f64),
    pub p_two_sided: f64,
    pub iterations: usize,
    /// Single-class resamples that were drawn again.
    pub redrawn: usize,
}

impl BootstrapDelta {
    pub fn percent_change(&self) -> f64 {
        100.0 * (self.value_b - self.value_a) / self.value_a
    }
}

/// Linear-interpolated percentile of sorted data (numpy's default).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn both_classes(labels: &[bool], idx: &[usize]) -> bool {
    let first = labels[idx[0]];
    idx.iter().any(|&i| labels[i] != first)
}

/// Resample indices for iteration `it`; single-class draws are retried.
fn resample(pp: &PairedPredictions, seed: u64, it: usize) -> (Vec<usize>, usize) {
    let n = pp.len();
    let mut attempt = 0u64;
    loop {
        let mut rng = rng_for(seed, &[tag::BOOTSTRAP, it as u64, attempt]);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        if both_classes(&pp.labels, &idx) || attempt >= 10_000 {
            return (idx, attempt as usize);
        }
        attempt += 1;
    }
}

fn summarize(metric: String, value_a: f64, value_b: f64, mut deltas: Vec<f64>, redrawn: usize) -> BootstrapDelta {
    let iters = deltas.len();
    let mean_delta = deltas.iter().sum::<f64>() / iters as f64;
    let le = deltas.iter().filter(|&&d| d <= 0.0).count() as f64 / iters as f64;
    let ge = deltas.iter().filter(|&&d| d >= 0.0).count() as f64 / iters as f64;
    let p = (2.0 * le.min(ge)).clamp(1.0 / iters as f64, 1.0);
    deltas.sort_by(f64::total_cmp);
    BootstrapDelta {
        metric,
        value_a,
        value_b,
        mean_delta,
        ci95: (percentile(&deltas, 2.5), percentile(&deltas, 97.5)),
        p_two_sided: p,
        iterations: iters,
        redrawn,
    }
}

/// Paired bootstrap of several metrics over shared resamples.
pub fn paired_bootstrap_many(
    pp: &PairedPredictions,
    metrics: &[Metric],
    iterations: usize,
    seed: u64,
) -> Result<Vec<BootstrapDelta>> {
    if iterations < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 iterations, got {iterations}")));
    }
    if pp.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let mut full = Vec::with_capacity(metrics.len());
    for m in metrics {
        full.push((m.eval(&pp.labels, &pp.score_a)?, m.eval(&pp.labels, &pp.score_b)?));
    }
    let draws: Vec<(Vec<f64>, usize)> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let (idx, redrawn) = resample(pp, seed, it);
            let (l, a, b) = pp.take(&idx);
            let d = metrics
                .iter()
                .map(|m| Ok(m.eval(&l, &b)? - m.eval(&l, &a)?))
                .collect::<Result<Vec<f64>>>()?;
            Ok((d, redrawn))
        })
        .collect::<Result<_>>()?;
    let redrawn = draws.iter().map(|d| d.1).sum();
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let deltas = draws.iter().map(|d| d.0[k]).collect();
            summarize(m.name(), full[k].0, full[k].1, deltas, redrawn)
        })
        .collect())
}

pub fn paired_bootstrap(pp: &PairedPredictions, metric: Metric, iterations: usize, seed: u64) -> Result<BootstrapDelta> {
    Ok(paired_bootstrap_many(pp, &[metric], iterations, seed)?.remove(0))
}

/// Precision at each recall level: that of the first PR point whose recall
/// reaches it (stepwise constant from the right).
pub fn precision_on_grid(curve: &[(f64, f64)], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&r| {
            curve
                .iter()
                .find(|(rc, _)| *rc >= r - 1e-12)
                .map_or(curve.last().map_or(0.0, |c| c.1), |c| c.1)
        })
        .collect()
}

pub fn recall_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub observed_delta: f64,
    pub mean_delta: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrDifference {
    pub points: Vec<PrPoint>,
    pub iterations_used: usize,
    /// Resamples dropped for holding one class only.
    pub excluded: usize,
}

pub fn pr_difference(pp: &PairedPredictions, grid_size: usize, iterations: usize, seed: u64) -> Result<PrDifference> {
    if grid_size < 2 {
        return Err(Error::invalid("recall grid needs at least 2 points"));
    }
    if iterations < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 iterations, got {iterations}")));
    }
    let grid = recall_grid(grid_size);
    let delta_at = |l: &[bool], a: &[f64], b: &[f64]| -> Result<Vec<f64>> {
        let pa = precision_on_grid(&pr_curve(l, a)?, &grid);
        let pb = precision_on_grid(&pr_curve(l, b)?, &grid);
        Ok(pb.iter().zip(&pa).map(|(b, a)| b - a).collect())
    };
    let observed = delta_at(&pp.labels, &pp.score_a, &pp.score_b)?;
    let n = pp.len();
    let draws: Vec<Option<Vec<f64>>> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = rng_for(seed, &[tag::BOOTSTRAP, it as u64, u64::MAX]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            if !both_classes(&pp.labels, &idx) {
                return Ok(None);
            }
            let (l, a, b) = pp.take(&idx);
            delta_at(&l, &a, &b).map(Some)
        })
        .collect::<Result<_>>()?;
    let kept: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::Undefined("every resample held a single class".into()));
    }
    let points = grid
        .iter()
        .enumerate()
        .map(|(g, &recall)| {
            let mut d: Vec<f64> = kept.iter().map(|k| k[g]).collect();
            let mean_delta = d.iter().sum::<f64>() / d.len() as f64;
            d.sort_by(f64::total_cmp);
            PrPoint {
                recall,
                observed_delta: observed[g],
                mean_delta,
                ci95: (percentile(&d, 2.5), percentile(&d, 97.5)),
            }
        })
        .collect();
    Ok(PrDifference {
        points,
        iterations_used: kept.len(),
        excluded: iterations - kept.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub estimate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub p_two_sided: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaModel {
    Fixed,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub effects: Vec<(f64, f64)>,
    pub fixed: Pooled,
    pub random: Pooled,
    pub tau2: f64,
    pub q: f64,
    pub q_df: usize,
    pub q_p: f64,
    pub i2: f64,
    pub preferred: MetaModel,
    pub reason: String,
}

fn pool(effects: &[(f64, f64)], tau2: f64) -> (Pooled, Vec<f64>) {
    let w: Vec<f64> = effects.iter().map(|(_, se)| 1.0 / (se * se + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let estimate = w.iter().zip(effects).map(|(w, (t, _))| w * t).sum::<f64>() / sw;
    let se = 1.0 / sw.sqrt();
    (
        Pooled {
            estimate,
            se,
            ci95: (estimate - Z95 * se, estimate + Z95 * se),
            p_two_sided: (2.0 * normal_sf((estimate / se).abs())).min(1.0),
        },
        w,
    )
}

/// Fixed-effect and DerSimonian-Laird random-effects pooling of `(effect, se)`.
pub fn meta_analysis(effects: &[(f64, f64)]) -> Result<MetaResult> {
    let k = effects.len();
    if k < 2 {
        return Err(Error::invalid(format!("meta-analysis needs at least 2 effects, got {k}")));
    }
    if effects.iter().any(|&(t, se)| !(se > 0.0 && se.is_finite()) || !t.is_finite()) {
        return Err(Error::invalid("every standard error must be positive and finite"));
    }
    let (fixed, w) = pool(effects, 0.0);
    let q: f64 = w
        .iter()
        .zip(effects)
        .map(|(w, (t, _))| w * (t - fixed.estimate).powi(2))
        .sum();
    let df = (k - 1) as f64;
    let i2 = if q > 0.0 { ((q - df) / q).max(0.0) } else { 0.0 };
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let tau2 = ((q - df) / (sw - sw2 / sw)).max(0.0);
    let random = if tau2 == 0.0 { fixed } else { pool(effects, tau2).0 };
    let q_p = chi2_sf(q, df);
    let (preferred, reason) = if k <= 5 {
        (MetaModel::Random, format!("few tasks (k = {k} ≤ 5)"))
    } else if i2 <= 0.25 || q_p >= 0.10 {
        (MetaModel::Fixed, format!("low heterogeneity (I² = {:.1}%, Q p = {q_p:.3})", 100.0 * i2))
    } else {
        (MetaModel::Random, format!("moderate to high heterogeneity (I² = {:.1}%, Q p = {q_p:.3})", 100.0 * i2))
    };
    Ok(MetaResult {
        effects: effects.to_vec(),
        fixed,
        random,
        tau2,
        q,
        q_df: k - 1,
        q_p,
        i2,
        preferred,
        reason,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Metric table: A, B, Δ, CI, p, % change.
pub fn metric_table(rows: &[BootstrapDelta]) -> String {
    let mut s = String::from("metric\tmodel_a\tmodel_b\tdelta\tci_low\tci_high\tp_value\tpct_change\titerations\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}\t{}",
            r.metric,
            r.value_a,
            r.value_b,
            r.mean_delta,
            r.ci95.0,
            r.ci95.1,
            r.p_two_sided,
            r.percent_change(),
            r.iterations
        );
    }
    s
}

pub fn pr_table(pr: &PrDifference) -> String {
    let mut s = String::from("recall\tobserved_delta\tmean_delta\tci_low\tci_high\n");
    for p in &pr.points {
        let _ = writeln!(
            s,
            "{:.4}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            p.recall, p.observed_delta, p.mean_delta, p.ci95.0, p.ci95.1
        );
    }
    s
}

/// Forest-plot data: one row per task, then the pooled rows.
pub fn meta_table(names: &[String], m: &MetaResult) -> String {
    let mut s = String::from("label\teffect\tse\tci_low\tci_high\tweight_fixed\tweight_random\n");
    let wf: Vec<f64> = m.effects.iter().map(|(_, se)| 1.0 / (se * se)).collect();
    let wr: Vec<f64> = m.effects.iter().map(|(_, se)| 1.0 / (se * se + m.tau2)).collect();
    let (sf, sr): (f64, f64) = (wf.iter().sum(), wr.iter().sum());
    for (i, &(t, se)) in m.effects.iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("task{}", i + 1));
        let _ = writeln!(
            s,
            "{name}\t{t:.6}\t{se:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
            t - Z95 * se,
            t + Z95 * se,
            wf[i] / sf,
            wr[i] / sr
        );
    }
    for (label, p) in [("pooled_fixed", m.fixed), ("pooled_random", m.random)] {
        let _ = writeln!(
            s,
            "{label}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t\t",
            p.estimate, p.se, p.ci95.0, p.ci95.1
        );
    }
    s
}

pub fn write_metric_table(rows: &[BootstrapDelta], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &metric_table(rows))
}

pub fn write_pr_table(pr: &PrDifference, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &pr_table(pr))
}

pub fn write_meta_table(names: &[String], m: &MetaResult, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &meta_table(names, m))
}

#[cfg(test)]
mod tests {
    #[test]
    fn roc_trapezoid_equals_auroc() {
        let l = [true, false, true, true, false, false, true];
        let s = [0.9, 0.8, 0.8, 0.4, 0.3, 0.3, 0.1];
        let c = super::roc_curve(&l, &s).unwrap();
        let area: f64 = c.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - super::auroc(&l, &s).unwrap()).abs() < 1e-12);
        assert_eq!(*c.last().unwrap(), (1.0, 1.0));
    }

    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[false, true], &[0.1, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[false, true, true, false], &[0.3; 4]).unwrap(), 0.5);
        assert!(auroc(&[true, true], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[true, false, false], &[0.9, 0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(auprc(&[true, true, false], &[0.9, 0.8, 0.1]).unwrap(), 1.0);
        // one tie group holding everything: precision = prevalence
        assert!((auprc(&[true, false, false, false], &[0.5; 4]).unwrap() - 0.25).abs() < 1e-15);
        assert!(auprc(&[false, false], &[0.5, 0.4]).is_err());
    }

    #[test]
    fn thresholded_examples() {
        let l = [true, true, false, false];
        let m = thresholded_metrics(&l, &[0.9, 0.2, 0.8, 0.1], 0.5).unwrap();
        for v in [m.precision, m.recall, m.specificity, m.accuracy, m.f1] {
            assert_eq!(v, 0.5);
        }
        let s = [0.9, 0.2, 0.8, 0.1];
        assert_eq!(thresholded_metrics(&l, &s, 0.0).unwrap().recall, 1.0);
        let hi = thresholded_metrics(&l, &s, 1.5).unwrap();
        assert_eq!((hi.recall, hi.specificity, hi.precision), (0.0, 1.0, 0.0));
        assert!(hi.no_predicted_positives);
    }

    #[test]
    fn grid_interpolation_from_the_right() {
        let curve = [(0.25, 1.0), (0.5, 0.5), (1.0, 0.4)];
        let p = precision_on_grid(&curve, &[0.0, 0.25, 0.3, 0.5, 0.9, 1.0]);
        assert_eq!(p, vec![1.0, 1.0, 0.5, 0.5, 0.4, 0.4]);
    }

    #[test]
    fn hand_meta_fixture() {
        let m = meta_analysis(&[(0.01, 0.005), (0.02, 0.005), (0.03, 0.005)]).unwrap();
        assert!((m.fixed.estimate - 0.02).abs() < 1e-12);
        assert!((m.q - 8.0).abs() < 1e-12);
        assert!((m.i2 - 0.75).abs() < 1e-12);
        assert!((m.tau2 - 7.5e-5).abs() < 1e-12);
        assert!((m.random.estimate - 0.02).abs() < 1e-12);
        assert_eq!(m.preferred, MetaModel::Random);
    }

    #[test]
    fn identical_effects_have_no_heterogeneity() {
        let m = meta_analysis(&[(0.02, 0.01), (0.02, 0.004), (0.02, 0.007)]).unwrap();
        assert_eq!((m.q, m.i2, m.tau2), (0.0, 0.0, 0.0));
        assert_eq!(m.fixed, m.random);
        assert!(meta_analysis(&[(0.02, 0.01)]).is_err());
        assert!(meta_analysis(&[(0.02, 0.01), (0.01, 0.0)]).is_err());
    }

    #[test]
    fn preferred_model_rule() {
        let many: Vec<(f64, f64)> = (0..8).map(|i| (0.01 + 0.0001 * f64::from(i), 0.01)).collect();
        assert_eq!(meta_analysis(&many).unwrap().preferred, MetaModel::Fixed);
        let spread: Vec<(f64, f64)> = (0..8).map(|i| (0.01 * f64::from(i), 0.002)).collect();
        assert_eq!(meta_analysis(&spread).unwrap().preferred, MetaModel::Random);
    }

    #[test]
    fn percentile_matches_numpy_linear() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert!((percentile(&v, 2.5) - 1.075).abs() < 1e-12);
    }
}
