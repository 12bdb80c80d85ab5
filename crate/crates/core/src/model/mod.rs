//! Decoder-only transformer with optional PRS conditioning through prefix
//! soft tokens or per-layer cross-attention, with hand-written gradients.

mod checkpoint;
mod forward;
mod ops;
mod session;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Range, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};

pub use checkpoint::{
    load_checkpoint, read_container, save_checkpoint, write_container, Container, ModelCheckpoint, TensorEntry,
    FORMAT_VERSION,
};
pub use forward::{
    batch_loss_and_grad, forward, forward_pad_prefix, last_hidden, sequence_loss, BatchEntry, ForwardOutput,
    LossAndGrad,
};
pub use session::Session;

pub trait Scalar:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Send + Sync + Default + Debug + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EhrOnly,
    PrsPrefix,
    PrsCross,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::EhrOnly => "ehr_only",
            Mode::PrsPrefix => "prs_prefix",
            Mode::PrsCross => "prs_cross",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ehr_only" => Some(Mode::EhrOnly),
            "prs_prefix" => Some(Mode::PrsPrefix),
            "prs_cross" => Some(Mode::PrsCross),
            _ => None,
        }
    }

    pub fn uses_prs(self) -> bool {
        self != Mode::EhrOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub window: usize,
    pub vocab_size: usize,
    pub mode: Mode,
    pub n_soft_tokens: usize,
    pub projector_hidden: usize,
    pub prs_dim: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize, mode: Mode, prs_dim: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            window: 256,
            vocab_size,
            mode,
            n_soft_tokens: 4,
            projector_hidden: 256,
            prs_dim,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.window < 2 {
            return bad(format!("window {} must be at least 2", self.window));
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.mode.uses_prs() && (self.prs_dim == 0 || self.n_soft_tokens == 0 || self.projector_hidden == 0) {
            return bad(format!("{} needs prs_dim, n_soft_tokens and projector_hidden", self.mode.as_str()));
        }
        if self.mode == Mode::PrsPrefix && self.n_soft_tokens >= self.window {
            return bad("soft tokens fill the whole window".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Longest token sequence accepted by `forward`.
    pub fn max_tokens(&self) -> usize {
        match self.mode {
            Mode::PrsPrefix => self.window - self.n_soft_tokens,
            _ => self.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Matrices and embeddings; biases and norm parameters are excluded.
    pub fn decays(&self) -> bool {
        self.shape.len() == 2
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LnIdx {
    pub g: Range<usize>,
    pub b: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct CrossIdx {
    pub ln: LnIdx,
    pub w_q: Range<usize>,
    pub b_q: Range<usize>,
    pub w_kv: Range<usize>,
    pub b_kv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIdx {
    pub ln1: LnIdx,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub cross: Option<CrossIdx>,
    pub ln2: LnIdx,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct ProjIdx {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Idx {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerIdx>,
    pub ln_f: LnIdx,
    pub head: Range<usize>,
    pub proj: Option<ProjIdx>,
}

/// Named tensor directory over one flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) idx: Idx,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Range<usize> {
        let spec = TensorSpec {
            name,
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        let r = spec.range();
        self.total = r.end;
        self.tensors.push(spec);
        r
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIdx {
        LnIdx {
            g: self.add(format!("{prefix}.g"), &[d], Init::Ones),
            b: self.add(format!("{prefix}.b"), &[d], Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let tok_emb = b.add("tok_emb".into(), &[cfg.vocab_size, d], Init::Normal);
        let pos_emb = b.add("pos_emb".into(), &[cfg.window, d], Init::Normal);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("layers.{l}");
                let ln1 = b.ln(&format!("{p}.ln1"), d);
                let w_qkv = b.add(format!("{p}.attn.w_qkv"), &[d, 3 * d], Init::Normal);
                let b_qkv = b.add(format!("{p}.attn.b_qkv"), &[3 * d], Init::Zeros);
                let w_o = b.add(format!("{p}.attn.w_o"), &[d, d], Init::Normal);
                let b_o = b.add(format!("{p}.attn.b_o"), &[d], Init::Zeros);
                let cross = (cfg.mode == Mode::PrsCross).then(|| CrossIdx {
                    ln: b.ln(&format!("{p}.cross.ln"), d),
                    w_q: b.add(format!("{p}.cross.w_q"), &[d, d], Init::Normal),
                    b_q: b.add(format!("{p}.cross.b_q"), &[d], Init::Zeros),
                    w_kv: b.add(format!("{p}.cross.w_kv"), &[d, 2 * d], Init::Normal),
                    b_kv: b.add(format!("{p}.cross.b_kv"), &[2 * d], Init::Zeros),
                    w_o: b.add(format!("{p}.cross.w_o"), &[d, d], Init::Normal),
                    b_o: b.add(format!("{p}.cross.b_o"), &[d], Init::Zeros),
                });
                let ln2 = b.ln(&format!("{p}.ln2"), d);
                LayerIdx {
                    ln1,
                    w_qkv,
                    b_qkv,
                    w_o,
                    b_o,
                    cross,
                    ln2,
                    w_fc: b.add(format!("{p}.mlp.w_fc"), &[d, 4 * d], Init::Normal),
                    b_fc: b.add(format!("{p}.mlp.b_fc"), &[4 * d], Init::Zeros),
                    w_proj: b.add(format!("{p}.mlp.w_proj"), &[4 * d, d], Init::Normal),
                    b_proj: b.add(format!("{p}.mlp.b_proj"), &[d], Init::Zeros),
                }
            })
            .collect();
        let ln_f = b.ln("ln_f", d);
        let head = b.add("head".into(), &[d, cfg.vocab_size], Init::Normal);
        let proj = cfg.mode.uses_prs().then(|| {
            let (p, h, s) = (cfg.prs_dim, cfg.projector_hidden, cfg.n_soft_tokens * d);
            ProjIdx {
                w1: b.add("projector.w1".into(), &[p, h], Init::Normal),
                b1: b.add("projector.b1".into(), &[h], Init::Zeros),
                w2: b.add("projector.w2".into(), &[h, s], Init::Normal),
                b2: b.add("projector.b2".into(), &[s], Init::Zeros),
            }
        });
        Layout {
            tensors: b.tensors,
            total: b.total,
            idx: Idx {
                tok_emb,
                pos_emb,
                layers,
                ln_f,
                head,
                proj,
            },
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Params<T> {
    pub config: ModelConfig,
    pub layout: Arc<Layout>,
    pub data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: &ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![T::zero(); layout.total];
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        for (i, t) in layout.tensors.iter().enumerate() {
            let mut rng = rng_for(seed, &[tag::INIT, i as u64]);
            for x in &mut data[t.range()] {
                *x = match t.init {
                    Init::Normal => c(normal.sample(&mut rng)),
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                };
            }
        }
        Ok(Self {
            config: config.clone(),
            layout: Arc::new(layout),
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.get(name)?.range();
        Some(&mut self.data[r])
    }

    #[inline]
    pub(crate) fn s(&self, r: &Range<usize>) -> &[T] {
        &self.data[r.clone()]
    }

    /// Projector output (`n_soft_tokens × d_model`, row-major).
    pub fn project_prs(&self, prs: &[T]) -> Result<Vec<T>> {
        let p = self
            .layout
            .idx
            .proj
            .as_ref()
            .ok_or_else(|| Error::invalid("ehr_only model has no PRS projector"))?;
        if prs.len() != self.config.prs_dim {
            return Err(Error::Dimension {
                what: "PRS vector".into(),
                expected: self.config.prs_dim,
                got: prs.len(),
            });
        }
        Ok(forward::project(self, p, prs).soft)
    }
}

/// Parameter count of a configuration, without allocating it.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg).total
}
