#![allow(dead_code)]

use prsfm::model::{batch_loss_and_grad, BatchEntry, Mode, ModelConfig, Params};
use prsfm::rng::rng_for;
use rand::Rng as _;

pub fn tiny_config(mode: Mode) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        window: 24,
        vocab_size: 13,
        mode,
        n_soft_tokens: 3,
        projector_hidden: 6,
        prs_dim: 4,
        dropout_rate: 0.0,
    }
}

/// Random non-pad token ids in `4..vocab`, starting with bos.
pub fn random_tokens(seed: u64, len: usize, vocab: usize) -> Vec<u32> {
    let mut rng = rng_for(seed, &[77]);
    let mut out = vec![1u32];
    out.extend((1..len).map(|_| rng.random_range(4..vocab as u32)));
    out
}

pub fn random_prs(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &[78]);
    (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
}

pub fn entries(batch: &[(Vec<u32>, Option<Vec<f64>>)]) -> Vec<BatchEntry<'_, f64>> {
    batch
        .iter()
        .map(|(t, p)| BatchEntry {
            tokens: t,
            prs: p.as_deref(),
        })
        .collect()
}

pub struct GradSample {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// Relative error; the 1e-7 floor covers coordinates whose gradient is
    /// identically zero (key biases under softmax shift invariance).
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(1e-7);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Central differences on `n` coordinates spread round-robin over every
/// tensor. Embedding rows are drawn from the rows the batch touches.
pub fn gradient_check(
    params: &Params<f64>,
    batch: &[(Vec<u32>, Option<Vec<f64>>)],
    dropout_seed: Option<u64>,
    n: usize,
    seed: u64,
) -> Vec<GradSample> {
    let base = batch_loss_and_grad(params, &entries(batch), dropout_seed).unwrap();
    let used_tokens: Vec<u32> = {
        let mut v: Vec<u32> = batch.iter().flat_map(|(t, _)| t.iter().copied()).filter(|&t| t != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let max_len = batch.iter().map(|(t, _)| t.iter().filter(|&&x| x != 0).count()).max().unwrap();
    let d = params.config.d_model;
    let mut rng = rng_for(seed, &[79]);
    let tensors = &params.layout.tensors;
    let mut out = Vec::with_capacity(n);
    let mut p = params.clone();
    let h = 1e-4;
    for k in 0..n {
        let t = &tensors[k % tensors.len()];
        let local = match t.name.as_str() {
            "tok_emb" => used_tokens[rng.random_range(0..used_tokens.len())] as usize * d + rng.random_range(0..d),
            "pos_emb" => rng.random_range(0..max_len) * d + rng.random_range(0..d),
            _ => rng.random_range(0..t.len()),
        };
        let i = t.offset + local;
        let orig = p.data[i];
        p.data[i] = orig + h;
        let up = batch_loss_and_grad(&p, &entries(batch), dropout_seed).unwrap().loss;
        p.data[i] = orig - h;
        let down = batch_loss_and_grad(&p, &entries(batch), dropout_seed).unwrap().loss;
        p.data[i] = orig;
        out.push(GradSample {
            name: format!("{}[{local}]", t.name),
            analytic: base.grad[i],
            numeric: (up - down) / (2.0 * h),
        });
    }
    out
}
