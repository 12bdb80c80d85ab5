//! Polygenic risk scores from summary statistics: greedy LD clumping,
//! significance/effect-size selection, dosage scoring and SD winsorization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};

pub const DEFAULT_P_LEAD: f64 = 1e-4;
pub const DEFAULT_P_SECONDARY: f64 = 1.1e-4;
pub const DEFAULT_R2: f64 = 0.1;
pub const DEFAULT_P_RETAIN: f64 = 5e-8;
pub const DEFAULT_MAX_VARIANTS: usize = 1500;
pub const DEFAULT_CLIP_SD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrsVector {
    pub trait_ids: Vec<String>,
    pub values: Vec<f64>,
    /// Per-trait `(low, high)` once clipped.
    pub clip_bounds: Option<Vec<(f64, f64)>>,
}

impl PrsVector {
    pub fn new(trait_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if trait_ids.len() != values.len() {
            return Err(Error::Dimension {
                what: "PRS values".into(),
                expected: trait_ids.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            trait_ids,
            values,
            clip_bounds: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEffect {
    pub variant_id: String,
    pub trait_id: String,
    pub beta: f64,
    pub p_value: f64,
}

impl VariantEffect {
    fn validate(&self) -> Result<()> {
        if !(self.p_value > 0.0 && self.p_value <= 1.0) {
            return Err(Error::invalid(format!(
                "p_value {} of {} outside (0, 1]",
                self.p_value, self.variant_id
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::invalid(format!("non-finite beta for {}", self.variant_id)));
        }
        Ok(())
    }
}

/// Dense symmetric R² matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LdPanel {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    r2: Vec<f64>,
}

impl LdPanel {
    pub fn new(ids: Vec<String>, r2: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if r2.len() != n * n {
            return Err(Error::Dimension {
                what: "LD matrix".into(),
                expected: n * n,
                got: r2.len(),
            });
        }
        for i in 0..n {
            if r2[i * n + i] != 1.0 {
                return Err(Error::invalid(format!("LD diagonal of {} is not 1", ids[i])));
            }
            for j in 0..n {
                let v = r2[i * n + j];
                if !(0.0..=1.0).contains(&v) || v != r2[j * n + i] {
                    return Err(Error::invalid(format!(
                        "LD entry ({}, {}) = {v} is not a symmetric value in [0, 1]",
                        ids[i], ids[j]
                    )));
                }
            }
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, index, r2 })
    }

    /// Panel with no correlation between distinct variants.
    pub fn identity(ids: Vec<String>) -> Self {
        let n = ids.len();
        let mut r2 = vec![0.0; n * n];
        for i in 0..n {
            r2[i * n + i] = 1.0;
        }
        Self::new(ids, r2).expect("identity panel is valid")
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn r2(&self, a: &str, b: &str) -> Result<f64> {
        let i = *self.index.get(a).ok_or_else(|| Error::MissingLd(a.to_string()))?;
        let j = *self.index.get(b).ok_or_else(|| Error::MissingLd(b.to_string()))?;
        Ok(self.r2[i * self.ids.len() + j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClumpParams {
    pub p_lead: f64,
    pub p_secondary: f64,
    pub r2_threshold: f64,
}

impl Default for ClumpParams {
    fn default() -> Self {
        Self {
            p_lead: DEFAULT_P_LEAD,
            p_secondary: DEFAULT_P_SECONDARY,
            r2_threshold: DEFAULT_R2,
        }
    }
}

/// Greedy clumping of one trait's effects; leads are returned in selection
/// order (ascending p, ties by variant id).
pub fn clump(effects: &[VariantEffect], ld: &LdPanel, params: ClumpParams) -> Result<Vec<VariantEffect>> {
    if let Some(first) = effects.first() {
        if let Some(other) = effects.iter().find(|e| e.trait_id != first.trait_id) {
            return Err(Error::invalid(format!(
                "clump expects one trait, found {} and {}",
                first.trait_id, other.trait_id
            )));
        }
    }
    let mut idx = Vec::with_capacity(effects.len());
    for e in effects {
        e.validate()?;
        idx.push(*ld.index.get(&e.variant_id).ok_or_else(|| Error::MissingLd(e.variant_id.clone()))?);
    }
    let mut order: Vec<usize> = (0..effects.len()).collect();
    order.sort_by(|&a, &b| {
        effects[a]
            .p_value
            .total_cmp(&effects[b].p_value)
            .then_with(|| effects[a].variant_id.cmp(&effects[b].variant_id))
    });
    let n = ld.ids.len();
    let mut assigned = vec![false; effects.len()];
    let mut leads = Vec::new();
    for &i in &order {
        if assigned[i] || effects[i].p_value > params.p_lead {
            continue;
        }
        assigned[i] = true;
        leads.push(effects[i].clone());
        for &j in &order {
            if !assigned[j]
                && effects[j].p_value <= params.p_secondary
                && ld.r2[idx[i] * n + idx[j]] >= params.r2_threshold
            {
                assigned[j] = true;
            }
        }
    }
    Ok(leads)
}

/// Keeps `p <= p_retain`, ranks by `|beta|` descending (ties by id) and
/// truncates to `max_variants`.
pub fn select_variants(leads: &[VariantEffect], p_retain: f64, max_variants: usize) -> Vec<VariantEffect> {
    let mut kept: Vec<VariantEffect> = leads.iter().filter(|e| e.p_value <= p_retain).cloned().collect();
    kept.sort_by(|a, b| {
        b.beta
            .abs()
            .total_cmp(&a.beta.abs())
            .then_with(|| a.variant_id.cmp(&b.variant_id))
    });
    kept.truncate(max_variants);
    kept
}

/// `Σ beta_v * dosage_v` over the selected variants.
pub fn score(dosages: &HashMap<String, f64>, selected: &[VariantEffect]) -> Result<f64> {
    let mut total = 0.0;
    for e in selected {
        let d = *dosages
            .get(&e.variant_id)
            .ok_or_else(|| Error::MissingDosage(e.variant_id.clone()))?;
        if !(0.0..=2.0).contains(&d) {
            return Err(Error::invalid(format!("dosage {d} of {} outside [0, 2]", e.variant_id)));
        }
        total += e.beta * d;
    }
    Ok(total)
}

/// Per-trait training statistics for winsorization at `mean ± k_sd * sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    pub trait_ids: Vec<String>,
    pub k_sd: f64,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub sd: Vec<f64>,
}

impl ClipStats {
    pub fn fit(training: &[PrsVector], k_sd: f64) -> Result<Self> {
        let first = training
            .first()
            .ok_or_else(|| Error::invalid("cannot fit clipping bounds on no vectors"))?;
        if !(k_sd > 0.0) {
            return Err(Error::invalid(format!("k_sd {k_sd} must be positive")));
        }
        let m = first.len();
        let n = training.len() as f64;
        let mut mean = vec![0.0; m];
        for v in training {
            if v.len() != m {
                return Err(Error::Dimension {
                    what: "PRS vector".into(),
                    expected: m,
                    got: v.len(),
                });
            }
            for (acc, x) in mean.iter_mut().zip(&v.values) {
                *acc += x;
            }
        }
        mean.iter_mut().for_each(|x| *x /= n);
        let mut sd = vec![0.0; m];
        for v in training {
            for ((acc, x), mu) in sd.iter_mut().zip(&v.values).zip(&mean) {
                *acc += (x - mu) * (x - mu);
            }
        }
        sd.iter_mut().for_each(|x| *x = (*x / n).sqrt());
        Ok(Self {
            trait_ids: first.trait_ids.clone(),
            k_sd,
            mean,
            sd,
        })
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.mean
            .iter()
            .zip(&self.sd)
            .map(|(&mu, &sd)| {
                if sd == 0.0 {
                    (mu, mu)
                } else {
                    (mu - self.k_sd * sd, mu + self.k_sd * sd)
                }
            })
            .collect()
    }
}

/// Winsorizes one vector with training statistics. Zero-variance traits are
/// left unchanged (their bounds collapse to the constant).
pub fn clip(prs: &PrsVector, stats: &ClipStats) -> Result<PrsVector> {
    if prs.len() != stats.mean.len() {
        return Err(Error::Dimension {
            what: "PRS vector".into(),
            expected: stats.mean.len(),
            got: prs.len(),
        });
    }
    let bounds = stats.bounds();
    let values = prs
        .values
        .iter()
        .zip(&bounds)
        .zip(&stats.sd)
        .map(|((&v, &(lo, hi)), &sd)| if sd == 0.0 { v } else { v.clamp(lo, hi) })
        .collect();
    Ok(PrsVector {
        trait_ids: prs.trait_ids.clone(),
        values,
        clip_bounds: Some(bounds),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrsParams {
    pub clump: ClumpParams,
    pub p_retain: f64,
    pub max_variants: usize,
    pub clip_sd: f64,
}

impl Default for PrsParams {
    fn default() -> Self {
        Self {
            clump: ClumpParams::default(),
            p_retain: DEFAULT_P_RETAIN,
            max_variants: DEFAULT_MAX_VARIANTS,
            clip_sd: DEFAULT_CLIP_SD,
        }
    }
}

/// Participants × variants dosage table.
#[derive(Debug, Clone, PartialEq)]
pub struct DosageMatrix {
    pub participant_ids: Vec<String>,
    pub variant_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DosageMatrix {
    pub fn row_map(&self, i: usize) -> HashMap<String, f64> {
        self.variant_ids.iter().cloned().zip(self.rows[i].iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrsMatrix {
    pub participant_ids: Vec<String>,
    pub vectors: Vec<PrsVector>,
    pub stats: ClipStats,
    /// Traits left with no variant after selection.
    pub dropped_traits: Vec<String>,
    pub variants_per_trait: BTreeMap<String, usize>,
}

/// Full pipeline: clump and select per trait, score every participant, clip.
pub fn build_prs_matrix(
    effects: &[VariantEffect],
    ld: &LdPanel,
    dosages: &DosageMatrix,
    params: PrsParams,
) -> Result<PrsMatrix> {
    let mut by_trait: BTreeMap<&str, Vec<VariantEffect>> = BTreeMap::new();
    for e in effects {
        by_trait.entry(e.trait_id.as_str()).or_default().push(e.clone());
    }
    let mut selected: Vec<(String, Vec<VariantEffect>)> = Vec::new();
    let mut dropped = Vec::new();
    for (trait_id, effs) in by_trait {
        let leads = clump(&effs, ld, params.clump)?;
        let sel = select_variants(&leads, params.p_retain, params.max_variants);
        if sel.is_empty() {
            dropped.push(trait_id.to_string());
        } else {
            selected.push((trait_id.to_string(), sel));
        }
    }
    if selected.is_empty() {
        return Err(Error::invalid("no trait retained any variant"));
    }
    let trait_ids: Vec<String> = selected.iter().map(|(t, _)| t.clone()).collect();
    let mut raw = Vec::with_capacity(dosages.rows.len());
    for i in 0..dosages.rows.len() {
        let d = dosages.row_map(i);
        let values = selected
            .iter()
            .map(|(_, sel)| score(&d, sel))
            .collect::<Result<Vec<_>>>()?;
        raw.push(PrsVector::new(trait_ids.clone(), values)?);
    }
    let stats = ClipStats::fit(&raw, params.clip_sd)?;
    let vectors = raw.iter().map(|v| clip(v, &stats)).collect::<Result<Vec<_>>>()?;
    Ok(PrsMatrix {
        participant_ids: dosages.participant_ids.clone(),
        vectors,
        stats,
        dropped_traits: dropped,
        variants_per_trait: selected.iter().map(|(t, s)| (t.clone(), s.len())).collect(),
    })
}

// ---------------------------------------------------------------------------
// Files

fn lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split('\t').map(|s| s.trim().to_string()).collect())
        .collect())
}

fn schema(path: &Path, reason: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

fn parse_f64(path: &Path, line: usize, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| schema(path, format!("line {line}: {v:?} is not a number")))
}

/// Effects table: `trait_id variant_id beta p_value`.
pub fn read_effects(path: &Path) -> Result<Vec<VariantEffect>> {
    let rows = lines(path)?;
    let header = rows.first().ok_or_else(|| schema(path, "empty effects table"))?;
    if header[..] != ["trait_id", "variant_id", "beta", "p_value"] {
        return Err(schema(path, "header must be trait_id, variant_id, beta, p_value"));
    }
    rows[1..]
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 4 {
                return Err(schema(path, format!("line {} has {} fields", i + 2, r.len())));
            }
            let e = VariantEffect {
                trait_id: r[0].clone(),
                variant_id: r[1].clone(),
                beta: parse_f64(path, i + 2, &r[2])?,
                p_value: parse_f64(path, i + 2, &r[3])?,
            };
            e.validate()?;
            Ok(e)
        })
        .collect()
}

pub fn write_effects(effects: &[VariantEffect], path: &Path) -> Result<()> {
    let mut out = String::from("trait_id\tvariant_id\tbeta\tp_value\n");
    for e in effects {
        let _ = writeln!(out, "{}\t{}\t{:?}\t{:e}", e.trait_id, e.variant_id, e.beta, e.p_value);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dosage matrix: header `participant_id v1 v2 ...`.
pub fn read_dosages(path: &Path) -> Result<DosageMatrix> {
    let rows = lines(path)?;
    let header = rows.first().ok_or_else(|| schema(path, "empty dosage matrix"))?;
    if header.first().map(String::as_str) != Some("participant_id") {
        return Err(schema(path, "first column must be participant_id"));
    }
    let variant_ids = header[1..].to_vec();
    let mut participant_ids = Vec::new();
    let mut out = Vec::new();
    for (i, r) in rows[1..].iter().enumerate() {
        if r.len() != header.len() {
            return Err(schema(path, format!("line {} has {} fields", i + 2, r.len())));
        }
        participant_ids.push(r[0].clone());
        out.push(
            r[1..]
                .iter()
                .map(|v| parse_f64(path, i + 2, v))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(DosageMatrix {
        participant_ids,
        variant_ids,
        rows: out,
    })
}

pub fn write_dosages(d: &DosageMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("participant_id");
    for v in &d.variant_ids {
        out.push('\t');
        out.push_str(v);
    }
    out.push('\n');
    for (id, row) in d.participant_ids.iter().zip(&d.rows) {
        out.push_str(id);
        for x in row {
            let _ = write!(out, "\t{x:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dense LD matrix: header `variant_id v1 ... vn`, then one row per variant.
pub fn read_ld(path: &Path) -> Result<LdPanel> {
    let rows = lines(path)?;
    let header = rows.first().ok_or_else(|| schema(path, "empty LD matrix"))?;
    let ids = header[1..].to_vec();
    if rows.len() != ids.len() + 1 {
        return Err(schema(path, "LD matrix must be square"));
    }
    let mut r2 = Vec::with_capacity(ids.len() * ids.len());
    for (i, r) in rows[1..].iter().enumerate() {
        if r.len() != ids.len() + 1 || r[0] != ids[i] {
            return Err(schema(path, format!("row {} does not match header", i + 2)));
        }
        for v in &r[1..] {
            r2.push(parse_f64(path, i + 2, v)?);
        }
    }
    LdPanel::new(ids, r2)
}

pub fn write_ld(ld: &LdPanel, path: &Path) -> Result<()> {
    let n = ld.ids.len();
    let mut out = String::from("variant_id");
    for v in &ld.ids {
        out.push('\t');
        out.push_str(v);
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&ld.ids[i]);
        for j in 0..n {
            let _ = write!(out, "\t{:?}", ld.r2[i * n + j]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct BoundsDoc<'a> {
    k_sd: f64,
    traits: Vec<TraitBounds<'a>>,
}

#[derive(Serialize)]
struct TraitBounds<'a> {
    trait_id: &'a str,
    mean: f64,
    sd: f64,
    low: f64,
    high: f64,
}

/// PRS matrix (participants × traits) plus a JSON sidecar with the bounds.
pub fn write_prs_matrix(m: &PrsMatrix, path: &Path, bounds_path: &Path) -> Result<()> {
    let mut out = String::from("participant_id");
    for t in &m.stats.trait_ids {
        out.push('\t');
        out.push_str(t);
    }
    out.push('\n');
    for (id, v) in m.participant_ids.iter().zip(&m.vectors) {
        out.push_str(id);
        for x in &v.values {
            let _ = write!(out, "\t{x:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let bounds = m.stats.bounds();
    let doc = BoundsDoc {
        k_sd: m.stats.k_sd,
        traits: m
            .stats
            .trait_ids
            .iter()
            .enumerate()
            .map(|(j, t)| TraitBounds {
                trait_id: t,
                mean: m.stats.mean[j],
                sd: m.stats.sd[j],
                low: bounds[j].0,
                high: bounds[j].1,
            })
            .collect(),
    };
    fs::write(bounds_path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(bounds_path, e))
}

/// Synthetic GWAS fixtures: variants in LD blocks (R² = 0.8^distance within a
/// block), a few strongly associated variants per trait, and Binomial(2, maf)
/// dosages for the given participants.
pub fn synthetic_variants(
    participant_ids: &[String],
    trait_ids: &[String],
    n_variants: usize,
    seed: u64,
) -> (Vec<VariantEffect>, LdPanel, DosageMatrix) {
    const BLOCK: usize = 5;
    let mut rng = rng_for(seed, &[tag::VARIANTS]);
    let ids: Vec<String> = (0..n_variants).map(|i| format!("rs{:06}", i + 1)).collect();
    let mut r2 = vec![0.0; n_variants * n_variants];
    for i in 0..n_variants {
        for j in 0..n_variants {
            if i / BLOCK == j / BLOCK {
                r2[i * n_variants + j] = 0.8f64.powi((i as i32 - j as i32).abs());
            }
        }
    }
    let ld = LdPanel::new(ids.clone(), r2).expect("block LD is valid");
    let beta = Normal::new(0.0, 0.1).expect("valid normal");
    let mut effects = Vec::new();
    for t in trait_ids {
        let causal: HashSet<usize> = (0..3).map(|_| rng.random_range(0..n_variants)).collect();
        for (i, v) in ids.iter().enumerate() {
            let near = causal.iter().any(|&c| c / BLOCK == i / BLOCK);
            let p = if causal.contains(&i) {
                1e-12 + rng.random::<f64>() * 1e-9
            } else if near {
                1e-6 + rng.random::<f64>() * 1e-4
            } else {
                1e-3 + rng.random::<f64>() * (1.0 - 1e-3)
            };
            effects.push(VariantEffect {
                variant_id: v.clone(),
                trait_id: t.clone(),
                beta: beta.sample(&mut rng),
                p_value: p,
            });
        }
    }
    let maf: Vec<f64> = (0..n_variants).map(|_| 0.05 + 0.45 * rng.random::<f64>()).collect();
    let rows = participant_ids
        .iter()
        .map(|_| {
            maf.iter()
                .map(|&f| f64::from(u8::from(rng.random::<f64>() < f) + u8::from(rng.random::<f64>() < f)))
                .collect()
        })
        .collect();
    let dosages = DosageMatrix {
        participant_ids: participant_ids.to_vec(),
        variant_ids: ids,
        rows,
    };
    (effects, ld, dosages)
}
