//! Full-sequence forward pass with activation trace, backward pass and loss.

use std::ops::Range;

use rand::Rng as _;
use rayon::prelude::*;

use super::ops::{
    add_into, attention, attention_bwd, gelu, gelu_grad, layernorm, layernorm_bwd, matmul, matmul_bwd,
    softmax_in_place, LnStats,
};
use super::session::Session;
use super::{c, Mode, Params, ProjIdx, Scalar};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, tag, Rng};
use crate::tokenizer::PAD_ID;

pub(crate) struct ProjCache<T> {
    x: Vec<T>,
    z1: Vec<T>,
    u: Vec<T>,
    pub soft: Vec<T>,
}

pub(crate) fn project<T: Scalar>(p: &Params<T>, idx: &ProjIdx, x: &[T]) -> ProjCache<T> {
    let cfg = &p.config;
    let (pd, h, s) = (cfg.prs_dim, cfg.projector_hidden, cfg.n_soft_tokens * cfg.d_model);
    let z1 = matmul(x, p.s(&idx.w1), Some(p.s(&idx.b1)), 1, pd, h);
    let u: Vec<T> = z1.iter().map(|&v| gelu(v)).collect();
    let z2 = matmul(&u, p.s(&idx.w2), Some(p.s(&idx.b2)), 1, h, s);
    let half: T = c(0.5);
    let edge = T::one() - T::epsilon();
    let soft = z2.iter().map(|&v| (v * half).tanh().max(-edge).min(edge)).collect();
    ProjCache {
        x: x.to_vec(),
        z1,
        u,
        soft,
    }
}

fn project_bwd<T: Scalar>(p: &Params<T>, idx: &ProjIdx, cache: &ProjCache<T>, dsoft: &[T], grad: &mut [T]) {
    let cfg = &p.config;
    let (pd, h, s) = (cfg.prs_dim, cfg.projector_hidden, cfg.n_soft_tokens * cfg.d_model);
    let half: T = c(0.5);
    let dz2: Vec<T> = dsoft
        .iter()
        .zip(&cache.soft)
        .map(|(&g, &y)| g * half * (T::one() + y) * (T::one() - y))
        .collect();
    let mut du = vec![T::zero(); h];
    {
        let (gw, gb) = two(grad, &idx.w2, &idx.b2);
        matmul_bwd(&cache.u, p.s(&idx.w2), &dz2, 1, h, s, Some(&mut du), gw, Some(gb));
    }
    for (g, &z) in du.iter_mut().zip(&cache.z1) {
        *g *= gelu_grad(z);
    }
    let (gw, gb) = two(grad, &idx.w1, &idx.b1);
    matmul_bwd(&cache.x, p.s(&idx.w1), &du, 1, pd, h, None, gw, Some(gb));
}

/// Two disjoint mutable sub-slices, `a` strictly before `b`.
fn two<'g, T>(grad: &'g mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'g mut [T], &'g mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

struct CrossTrace<T> {
    x1: Vec<T>,
    ln: LnStats<T>,
    c: Vec<T>,
    q: Vec<T>,
    kv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    mask: Option<Vec<T>>,
}

struct LayerTrace<T> {
    x0: Vec<T>,
    ln1: LnStats<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_mask: Option<Vec<T>>,
    cross: Option<CrossTrace<T>>,
    x2: Vec<T>,
    ln2: LnStats<T>,
    m: Vec<T>,
    h: Vec<T>,
    g: Vec<T>,
    mlp_mask: Option<Vec<T>>,
}

struct Trace<T> {
    rows: usize,
    soft_rows: usize,
    emb_mask: Option<Vec<T>>,
    layers: Vec<LayerTrace<T>>,
    x_final: Vec<T>,
    lnf: LnStats<T>,
    f: Vec<T>,
}

fn dropout_mask<T: Scalar>(rng: Option<&mut Rng>, n: usize, rate: f64) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep: T = c(1.0 / (1.0 - rate));
    Some(
        (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// Runs the stack over non-pad tokens (`toks`) with optional soft rows.
fn run<T: Scalar>(p: &Params<T>, toks: &[u32], soft: Option<&[T]>, mut rng: Option<&mut Rng>) -> Trace<T> {
    let cfg = &p.config;
    let idx = &p.layout.idx;
    let d = cfg.d_model;
    let (nh, dh) = (cfg.n_heads, cfg.head_dim());
    let rate = cfg.dropout_rate;
    let soft_rows = match (cfg.mode, soft) {
        (Mode::PrsPrefix, Some(_)) => cfg.n_soft_tokens,
        _ => 0,
    };
    let r = soft_rows + toks.len();

    let mut x = vec![T::zero(); r * d];
    if soft_rows > 0 {
        x[..soft_rows * d].copy_from_slice(soft.expect("prefix mode has soft rows"));
    }
    let (te, pe) = (p.s(&idx.tok_emb), p.s(&idx.pos_emb));
    for (t, &tok) in toks.iter().enumerate() {
        let row = &mut x[(soft_rows + t) * d..(soft_rows + t + 1) * d];
        let tok = tok as usize;
        for j in 0..d {
            row[j] = te[tok * d + j] + pe[t * d + j];
        }
    }
    let emb_mask = dropout_mask(rng.as_deref_mut(), r * d, rate);
    apply_mask(&mut x, &emb_mask);

    let mut layers = Vec::with_capacity(idx.layers.len());
    for li in &idx.layers {
        let x0 = x.clone();
        let (a, ln1) = layernorm(&x, p.s(&li.ln1.g), p.s(&li.ln1.b), r, d);
        let qkv = matmul(&a, p.s(&li.w_qkv), Some(p.s(&li.b_qkv)), r, d, 3 * d);
        let (probs, ctx) = attention((&qkv, 3 * d, 0), (&qkv, 3 * d, d), (&qkv, 3 * d, 2 * d), r, r, true, nh, dh);
        let mut out = matmul(&ctx, p.s(&li.w_o), Some(p.s(&li.b_o)), r, d, d);
        let attn_mask = dropout_mask(rng.as_deref_mut(), r * d, rate);
        apply_mask(&mut out, &attn_mask);
        add_into(&mut x, &out);

        let cross = li.cross.as_ref().map(|ci| {
            let s = soft.expect("cross mode has soft rows");
            let ns = cfg.n_soft_tokens;
            let x1 = x.clone();
            let (cc, ln) = layernorm(&x1, p.s(&ci.ln.g), p.s(&ci.ln.b), r, d);
            let q = matmul(&cc, p.s(&ci.w_q), Some(p.s(&ci.b_q)), r, d, d);
            let kv = matmul(s, p.s(&ci.w_kv), Some(p.s(&ci.b_kv)), ns, d, 2 * d);
            let (probs, ctx) = attention((&q, d, 0), (&kv, 2 * d, 0), (&kv, 2 * d, d), r, ns, false, nh, dh);
            let mut out = matmul(&ctx, p.s(&ci.w_o), Some(p.s(&ci.b_o)), r, d, d);
            let mask = dropout_mask(rng.as_deref_mut(), r * d, rate);
            apply_mask(&mut out, &mask);
            add_into(&mut x, &out);
            CrossTrace {
                x1,
                ln,
                c: cc,
                q,
                kv,
                probs,
                ctx,
                mask,
            }
        });

        let x2 = x.clone();
        let (m, ln2) = layernorm(&x, p.s(&li.ln2.g), p.s(&li.ln2.b), r, d);
        let h = matmul(&m, p.s(&li.w_fc), Some(p.s(&li.b_fc)), r, d, 4 * d);
        let g: Vec<T> = h.iter().map(|&v| gelu(v)).collect();
        let mut y = matmul(&g, p.s(&li.w_proj), Some(p.s(&li.b_proj)), r, 4 * d, d);
        let mlp_mask = dropout_mask(rng.as_deref_mut(), r * d, rate);
        apply_mask(&mut y, &mlp_mask);
        add_into(&mut x, &y);
        layers.push(LayerTrace {
            x0,
            ln1,
            a,
            qkv,
            probs,
            ctx,
            attn_mask,
            cross,
            x2,
            ln2,
            m,
            h,
            g,
            mlp_mask,
        });
    }
    let (f, lnf) = layernorm(&x, p.s(&idx.ln_f.g), p.s(&idx.ln_f.b), r, d);
    Trace {
        rows: r,
        soft_rows,
        emb_mask,
        layers,
        x_final: x,
        lnf,
        f,
    }
}

fn interleave<T: Scalar>(parts: &[&[T]], rows: usize, d: usize) -> Vec<T> {
    let w = parts.len() * d;
    let mut out = vec![T::zero(); rows * w];
    for i in 0..rows {
        for (k, part) in parts.iter().enumerate() {
            out[i * w + k * d..i * w + (k + 1) * d].copy_from_slice(&part[i * d..(i + 1) * d]);
        }
    }
    out
}

/// Backpropagates `df` (gradient w.r.t. the final normalized states) and
/// returns the gradient w.r.t. the soft rows when present.
fn backward<T: Scalar>(
    p: &Params<T>,
    tr: &Trace<T>,
    toks: &[u32],
    soft: Option<&[T]>,
    df: &[T],
    grad: &mut [T],
) -> Option<Vec<T>> {
    let cfg = &p.config;
    let idx = &p.layout.idx;
    let d = cfg.d_model;
    let (nh, dh) = (cfg.n_heads, cfg.head_dim());
    let r = tr.rows;
    let ns = cfg.n_soft_tokens;
    let mut dsoft = soft.map(|_| vec![T::zero(); ns * d]);

    let mut dx = vec![T::zero(); r * d];
    {
        let (gg, gb) = two(grad, &idx.ln_f.g, &idx.ln_f.b);
        layernorm_bwd(&tr.x_final, p.s(&idx.ln_f.g), &tr.lnf, df, r, d, &mut dx, gg, gb);
    }
    for (lt, li) in tr.layers.iter().zip(&idx.layers).rev() {
        let mut dy = dx.clone();
        apply_mask(&mut dy, &lt.mlp_mask);
        let mut dg = vec![T::zero(); r * 4 * d];
        {
            let (gw, gb) = two(grad, &li.w_proj, &li.b_proj);
            matmul_bwd(&lt.g, p.s(&li.w_proj), &dy, r, 4 * d, d, Some(&mut dg), gw, Some(gb));
        }
        for (g, &h) in dg.iter_mut().zip(&lt.h) {
            *g *= gelu_grad(h);
        }
        let mut dm = vec![T::zero(); r * d];
        {
            let (gw, gb) = two(grad, &li.w_fc, &li.b_fc);
            matmul_bwd(&lt.m, p.s(&li.w_fc), &dg, r, d, 4 * d, Some(&mut dm), gw, Some(gb));
        }
        {
            let (gg, gb) = two(grad, &li.ln2.g, &li.ln2.b);
            layernorm_bwd(&lt.x2, p.s(&li.ln2.g), &lt.ln2, &dm, r, d, &mut dx, gg, gb);
        }

        if let (Some(ct), Some(ci)) = (&lt.cross, &li.cross) {
            let s = soft.expect("cross mode has soft rows");
            let mut dout = dx.clone();
            apply_mask(&mut dout, &ct.mask);
            let mut dctx = vec![T::zero(); r * d];
            {
                let (gw, gb) = two(grad, &ci.w_o, &ci.b_o);
                matmul_bwd(&ct.ctx, p.s(&ci.w_o), &dout, r, d, d, Some(&mut dctx), gw, Some(gb));
            }
            let (dq, dk, dv) = attention_bwd(
                (&ct.q, d, 0),
                (&ct.kv, 2 * d, 0),
                (&ct.kv, 2 * d, d),
                &ct.probs,
                &dctx,
                r,
                ns,
                false,
                nh,
                dh,
            );
            let dkv = interleave(&[&dk, &dv], ns, d);
            let mut dc = vec![T::zero(); r * d];
            {
                let (gw, gb) = two(grad, &ci.w_q, &ci.b_q);
                matmul_bwd(&ct.c, p.s(&ci.w_q), &dq, r, d, d, Some(&mut dc), gw, Some(gb));
            }
            {
                let (gg, gb) = two(grad, &ci.ln.g, &ci.ln.b);
                layernorm_bwd(&ct.x1, p.s(&ci.ln.g), &ct.ln, &dc, r, d, &mut dx, gg, gb);
            }
            let (gw, gb) = two(grad, &ci.w_kv, &ci.b_kv);
            let ds = dsoft.as_deref_mut().expect("soft gradient buffer");
            matmul_bwd(s, p.s(&ci.w_kv), &dkv, ns, d, 2 * d, Some(ds), gw, Some(gb));
        }

        let mut dout = dx.clone();
        apply_mask(&mut dout, &lt.attn_mask);
        let mut dctx = vec![T::zero(); r * d];
        {
            let (gw, gb) = two(grad, &li.w_o, &li.b_o);
            matmul_bwd(&lt.ctx, p.s(&li.w_o), &dout, r, d, d, Some(&mut dctx), gw, Some(gb));
        }
        let (dq, dk, dv) = attention_bwd(
            (&lt.qkv, 3 * d, 0),
            (&lt.qkv, 3 * d, d),
            (&lt.qkv, 3 * d, 2 * d),
            &lt.probs,
            &dctx,
            r,
            r,
            true,
            nh,
            dh,
        );
        let dqkv = interleave(&[&dq, &dk, &dv], r, d);
        let mut da = vec![T::zero(); r * d];
        {
            let (gw, gb) = two(grad, &li.w_qkv, &li.b_qkv);
            matmul_bwd(&lt.a, p.s(&li.w_qkv), &dqkv, r, d, 3 * d, Some(&mut da), gw, Some(gb));
        }
        let (gg, gb) = two(grad, &li.ln1.g, &li.ln1.b);
        layernorm_bwd(&lt.x0, p.s(&li.ln1.g), &lt.ln1, &da, r, d, &mut dx, gg, gb);
    }
    apply_mask(&mut dx, &tr.emb_mask);
    if tr.soft_rows > 0 {
        add_into(dsoft.as_deref_mut().expect("soft gradient buffer"), &dx[..tr.soft_rows * d]);
    }
    let (te, pe) = (idx.tok_emb.start, idx.pos_emb.start);
    for (t, &tok) in toks.iter().enumerate() {
        let row = &dx[(tr.soft_rows + t) * d..(tr.soft_rows + t + 1) * d];
        add_into(&mut grad[te + tok as usize * d..te + (tok as usize + 1) * d], row);
        add_into(&mut grad[pe + t * d..pe + (t + 1) * d], row);
    }
    dsoft
}

fn check_input<T: Scalar>(p: &Params<T>, tokens: &[u32], prs: Option<&[T]>) -> Result<()> {
    let cfg = &p.config;
    if tokens.len() > cfg.max_tokens() {
        return Err(Error::ContextOverflow {
            len: tokens.len(),
            window: cfg.max_tokens(),
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::invalid(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    match (cfg.mode.uses_prs(), prs) {
        (true, None) => Err(Error::invalid(format!("{} model needs a PRS vector", cfg.mode.as_str()))),
        (true, Some(v)) if v.len() != cfg.prs_dim => Err(Error::Dimension {
            what: "PRS vector".into(),
            expected: cfg.prs_dim,
            got: v.len(),
        }),
        _ => Ok(()),
    }
}

fn soft_rows<T: Scalar>(p: &Params<T>, prs: Option<&[T]>) -> Option<ProjCache<T>> {
    match (&p.layout.idx.proj, prs) {
        (Some(idx), Some(x)) => Some(project(p, idx, x)),
        _ => None,
    }
}

fn non_pad(tokens: &[u32]) -> Vec<u32> {
    tokens.iter().copied().filter(|&t| t != PAD_ID).collect()
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Vec<T>,
    pub len: usize,
    pub vocab_size: usize,
}

impl<T> ForwardOutput<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.logits[i * self.vocab_size..(i + 1) * self.vocab_size]
    }
}

/// Logits for every input position. Pad positions are masked as keys and
/// take no position; `dropout_seed` switches on training-mode dropout.
pub fn forward<T: Scalar>(
    p: &Params<T>,
    tokens: &[u32],
    prs: Option<&[T]>,
    dropout_seed: Option<u64>,
) -> Result<ForwardOutput<T>> {
    check_input(p, tokens, prs)?;
    let cfg = &p.config;
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    let proj = soft_rows(p, prs);
    let soft = proj.as_ref().map(|c| c.soft.as_slice());
    let toks = non_pad(tokens);
    let mut rng = dropout_seed.map(|s| rng_for(s, &[tag::DROPOUT]));
    let tr = run(p, &toks, soft, rng.as_mut());
    let body = matmul(&tr.f[tr.soft_rows * d..], p.s(&p.layout.idx.head), None, toks.len(), d, v);
    let pad_row = if toks.len() < tokens.len() {
        Some(Session::new(p, prs)?.isolated_logits(PAD_ID))
    } else {
        None
    };
    let mut logits = Vec::with_capacity(tokens.len() * v);
    let mut k = 0;
    for &t in tokens {
        if t == PAD_ID {
            logits.extend_from_slice(pad_row.as_deref().expect("pad row computed"));
        } else {
            logits.extend_from_slice(&body[k * v..(k + 1) * v]);
            k += 1;
        }
    }
    Ok(ForwardOutput {
        logits,
        len: tokens.len(),
        vocab_size: v,
    })
}

/// Prefix-mode logits with pads in place of the soft tokens, for the non-pad
/// input tokens. Pads are masked as keys and take no position.
pub fn forward_pad_prefix<T: Scalar>(p: &Params<T>, tokens: &[u32]) -> Result<ForwardOutput<T>> {
    let cfg = &p.config;
    if cfg.mode != Mode::PrsPrefix {
        return Err(Error::invalid(format!("pad substitution needs a prs_prefix model, got {}", cfg.mode.as_str())));
    }
    check_input(p, tokens, Some(&vec![T::zero(); cfg.prs_dim]))?;
    let toks = non_pad(tokens);
    let tr = run(p, &toks, None, None);
    let logits = matmul(&tr.f, p.s(&p.layout.idx.head), None, toks.len(), cfg.d_model, cfg.vocab_size);
    Ok(ForwardOutput {
        logits,
        len: toks.len(),
        vocab_size: cfg.vocab_size,
    })
}

/// Final normalized state at the last non-pad position.
pub fn last_hidden<T: Scalar>(p: &Params<T>, tokens: &[u32], prs: Option<&[T]>) -> Result<Vec<T>> {
    check_input(p, tokens, prs)?;
    let toks = non_pad(tokens);
    if toks.is_empty() {
        return Err(Error::invalid("all-pad sequence"));
    }
    let proj = soft_rows(p, prs);
    let tr = run(p, &toks, proj.as_ref().map(|c| c.soft.as_slice()), None);
    let d = p.config.d_model;
    Ok(tr.f[(tr.rows - 1) * d..tr.rows * d].to_vec())
}

/// Summed next-token cross-entropy and target count, without gradients.
pub fn sequence_loss<T: Scalar>(p: &Params<T>, tokens: &[u32], prs: Option<&[T]>) -> Result<(T, usize)> {
    check_input(p, tokens, prs)?;
    let toks = non_pad(tokens);
    if toks.is_empty() {
        return Err(Error::invalid("all-pad sequence"));
    }
    if toks.len() < 2 {
        return Ok((T::zero(), 0));
    }
    let proj = soft_rows(p, prs);
    let tr = run(p, &toks, proj.as_ref().map(|c| c.soft.as_slice()), None);
    let (d, v) = (p.config.d_model, p.config.vocab_size);
    let n = toks.len() - 1;
    let start = tr.soft_rows * d;
    let mut logits = matmul(&tr.f[start..start + n * d], p.s(&p.layout.idx.head), None, n, d, v);
    let mut total = T::zero();
    for i in 0..n {
        let row = &mut logits[i * v..(i + 1) * v];
        let target = toks[i + 1] as usize;
        let raw = row[target];
        total += softmax_in_place(row) - raw;
    }
    Ok((total, n))
}

#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a, T> {
    pub tokens: &'a [u32],
    pub prs: Option<&'a [T]>,
}

#[derive(Debug, Clone)]
pub struct LossAndGrad<T> {
    /// Mean cross-entropy over all scored targets in the batch.
    pub loss: T,
    pub n_targets: usize,
    /// Gradient of `loss`, laid out like the parameters.
    pub grad: Vec<T>,
}

fn entry_grad<T: Scalar>(p: &Params<T>, e: &BatchEntry<'_, T>, rng: Option<&mut Rng>) -> (T, usize, Vec<T>) {
    let mut grad = vec![T::zero(); p.data.len()];
    let toks = non_pad(e.tokens);
    if toks.len() < 2 {
        return (T::zero(), 0, grad);
    }
    let (d, v) = (p.config.d_model, p.config.vocab_size);
    let proj = soft_rows(p, e.prs);
    let soft = proj.as_ref().map(|c| c.soft.as_slice());
    let tr = run(p, &toks, soft, rng);
    let n = toks.len() - 1;
    let start = tr.soft_rows * d;
    let head = &p.layout.idx.head;
    let mut dl = matmul(&tr.f[start..start + n * d], p.s(head), None, n, d, v);
    let mut total = T::zero();
    for i in 0..n {
        let row = &mut dl[i * v..(i + 1) * v];
        let target = toks[i + 1] as usize;
        let raw = row[target];
        total += softmax_in_place(row) - raw;
        row[target] -= T::one();
    }
    let mut df = vec![T::zero(); tr.rows * d];
    matmul_bwd(
        &tr.f[start..start + n * d],
        p.s(head),
        &dl,
        n,
        d,
        v,
        Some(&mut df[start..start + n * d]),
        &mut grad[head.clone()],
        None,
    );
    let dsoft = backward(p, &tr, &toks, soft, &df, &mut grad);
    if let (Some(cache), Some(ds), Some(idx)) = (&proj, &dsoft, &p.layout.idx.proj) {
        project_bwd(p, idx, cache, ds, &mut grad);
    }
    (total, n, grad)
}

/// Mean token cross-entropy over a batch and its exact gradient. Entries are
/// processed in parallel and reduced in input order.
pub fn batch_loss_and_grad<T: Scalar>(
    p: &Params<T>,
    batch: &[BatchEntry<'_, T>],
    dropout_seed: Option<u64>,
) -> Result<LossAndGrad<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for e in batch {
        check_input(p, e.tokens, e.prs)?;
        if e.tokens.iter().all(|&t| t == PAD_ID) {
            return Err(Error::invalid("all-pad sequence in batch"));
        }
    }
    let parts: Vec<(T, usize, Vec<T>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = dropout_seed.map(|s| rng_for(derive_seed(s, &[i as u64]), &[tag::DROPOUT]));
            entry_grad(p, e, rng.as_mut())
        })
        .collect();
    let n_targets: usize = parts.iter().map(|x| x.1).sum();
    if n_targets == 0 {
        return Err(Error::invalid("batch has no scoreable targets"));
    }
    let mut grad = vec![T::zero(); p.data.len()];
    let mut total = T::zero();
    for (l, _, g) in &parts {
        total += *l;
        add_into(&mut grad, g);
    }
    let inv = T::one() / c::<T>(n_targets as f64);
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(LossAndGrad {
        loss: total * inv,
        n_targets,
        grad,
    })
}
