//! Incremental decoding with a per-layer key/value cache.

use std::sync::Arc;

use super::ops::{add_into, attention, gelu, layernorm, matmul};
use super::{Mode, Params, Scalar};
use crate::error::{Error, Result};
use crate::tokenizer::PAD_ID;

/// One decoding state. Cloning forks the cache so paths can branch from a
/// shared context.
#[derive(Clone)]
pub struct Session<'a, T> {
    params: &'a Params<T>,
    cross_kv: Arc<Vec<Vec<T>>>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pos: usize,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(params: &'a Params<T>, prs: Option<&[T]>) -> Result<Self> {
        let cfg = &params.config;
        let d = cfg.d_model;
        let soft = match (cfg.mode.uses_prs(), prs) {
            (false, _) => None,
            (true, None) => return Err(Error::invalid(format!("{} model needs a PRS vector", cfg.mode.as_str()))),
            (true, Some(x)) => Some(params.project_prs(x)?),
        };
        let cross_kv = match (&soft, cfg.mode) {
            (Some(s), Mode::PrsCross) => params
                .layout
                .idx
                .layers
                .iter()
                .map(|li| {
                    let ci = li.cross.as_ref().expect("cross layer");
                    matmul(s, params.s(&ci.w_kv), Some(params.s(&ci.b_kv)), cfg.n_soft_tokens, d, 2 * d)
                })
                .collect(),
            _ => Vec::new(),
        };
        let mut session = Self {
            params,
            cross_kv: Arc::new(cross_kv),
            keys: vec![Vec::new(); cfg.n_layers],
            values: vec![Vec::new(); cfg.n_layers],
            pos: 0,
        };
        if let (Some(s), Mode::PrsPrefix) = (&soft, cfg.mode) {
            for row in s.chunks(d) {
                session.row(row.to_vec(), true);
            }
        }
        Ok(session)
    }

    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&mut self, token: u32) -> Result<Vec<T>> {
        let cfg = &self.params.config;
        if token as usize >= cfg.vocab_size {
            return Err(Error::invalid(format!("token id {token} outside vocabulary of {}", cfg.vocab_size)));
        }
        if token == PAD_ID {
            return Ok(self.isolated_logits(PAD_ID));
        }
        if self.pos >= cfg.max_tokens() {
            return Err(Error::ContextOverflow {
                len: self.pos + 1,
                window: cfg.max_tokens(),
            });
        }
        let d = cfg.d_model;
        let idx = &self.params.layout.idx;
        let te = &self.params.s(&idx.tok_emb)[token as usize * d..][..d];
        let pe = &self.params.s(&idx.pos_emb)[self.pos * d..][..d];
        let x = te.iter().zip(pe).map(|(&a, &b)| a + b).collect();
        self.pos += 1;
        let h = self.row(x, true);
        Ok(self.logits(&h))
    }

    /// Logits of a row that attends only to itself (pad positions).
    pub fn isolated_logits(&self, token: u32) -> Vec<T> {
        let d = self.params.config.d_model;
        let te = &self.params.s(&self.params.layout.idx.tok_emb)[token as usize * d..][..d];
        let mut scratch = self.clone_shallow();
        let h = scratch.row(te.to_vec(), false);
        self.logits(&h)
    }

    fn clone_shallow(&self) -> Self {
        Self {
            params: self.params,
            cross_kv: Arc::clone(&self.cross_kv),
            keys: Vec::new(),
            values: Vec::new(),
            pos: self.pos,
        }
    }

    fn logits(&self, h: &[T]) -> Vec<T> {
        let cfg = &self.params.config;
        matmul(h, self.params.s(&self.params.layout.idx.head), None, 1, cfg.d_model, cfg.vocab_size)
    }

    /// Pushes one embedded row through the stack; `append` caches its keys.
    fn row(&mut self, mut x: Vec<T>, append: bool) -> Vec<T> {
        let p = self.params;
        let cfg = &p.config;
        let d = cfg.d_model;
        let (nh, dh) = (cfg.n_heads, cfg.head_dim());
        for (l, li) in p.layout.idx.layers.iter().enumerate() {
            let (a, _) = layernorm(&x, p.s(&li.ln1.g), p.s(&li.ln1.b), 1, d);
            let qkv = matmul(&a, p.s(&li.w_qkv), Some(p.s(&li.b_qkv)), 1, d, 3 * d);
            let ctx = if append {
                self.keys[l].extend_from_slice(&qkv[d..2 * d]);
                self.values[l].extend_from_slice(&qkv[2 * d..]);
                let rows = self.keys[l].len() / d;
                attention((&qkv, 3 * d, 0), (&self.keys[l], d, 0), (&self.values[l], d, 0), 1, rows, false, nh, dh).1
            } else {
                attention((&qkv, 3 * d, 0), (&qkv, 3 * d, d), (&qkv, 3 * d, 2 * d), 1, 1, false, nh, dh).1
            };
            let out = matmul(&ctx, p.s(&li.w_o), Some(p.s(&li.b_o)), 1, d, d);
            add_into(&mut x, &out);
            if let Some(ci) = &li.cross {
                let kv = &self.cross_kv[l];
                let ns = cfg.n_soft_tokens;
                let (cc, _) = layernorm(&x, p.s(&ci.ln.g), p.s(&ci.ln.b), 1, d);
                let q = matmul(&cc, p.s(&ci.w_q), Some(p.s(&ci.b_q)), 1, d, d);
                let (_, ctx) = attention((&q, d, 0), (kv, 2 * d, 0), (kv, 2 * d, d), 1, ns, false, nh, dh);
                let out = matmul(&ctx, p.s(&ci.w_o), Some(p.s(&ci.b_o)), 1, d, d);
                add_into(&mut x, &out);
            }
            let (m, _) = layernorm(&x, p.s(&li.ln2.g), p.s(&li.ln2.b), 1, d);
            let h = matmul(&m, p.s(&li.w_fc), Some(p.s(&li.b_fc)), 1, d, 4 * d);
            let g: Vec<T> = h.iter().map(|&v| gelu(v)).collect();
            let y = matmul(&g, p.s(&li.w_proj), Some(p.s(&li.b_proj)), 1, 4 * d, d);
            add_into(&mut x, &y);
        }
        let idx = &p.layout.idx;
        layernorm(&x, p.s(&idx.ln_f.g), p.s(&idx.ln_f.b), 1, d).0
    }
}
