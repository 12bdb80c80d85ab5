//! Python bindings: cohorts, vocabularies, model training and scoring,
//! evaluation statistics and the transfer pathways.

use std::collections::{BTreeMap, BTreeSet};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use prsfm::cohort::{
    filter_participants, filter_rare_codes, generate_synthetic, load_cohort, save_cohort, split, SynthConfig,
};
use prsfm::evalstats::{auprc as auprc_, auroc as auroc_, meta_analysis as meta_, paired_bootstrap, Metric, PairedPredictions};
use prsfm::generate::{score_cohort, target_ids, ContextSpec, Estimator, GenerationTask};
use prsfm::model::{load_checkpoint, save_checkpoint, Mode, ModelCheckpoint, ModelConfig};
use prsfm::train::{checkpoint_vocab, evaluate_loss, train, TrainConfig};
use prsfm::transfer::{embed_cohort, finetune_head, head_scores, Backbone, HeadConfig};

fn err(e: prsfm::Error) -> PyErr {
    match e {
        prsfm::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_numerical() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for prsfm::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Participants with events, demographics, PRS vectors and task labels.
#[pyclass(module = "prsfm_py", skip_from_py_object)]
#[derive(Clone)]
struct Cohort {
    inner: prsfm::cohort::Cohort,
}

#[pymethods]
impl Cohort {
    /// Planted-signal synthetic cohort.
    #[staticmethod]
    #[pyo3(signature = (n=2000, seed=0, genetic_effect=1.0, history_effect=0.4, n_traits=16, n_codes=40))]
    fn synthetic(
        n: usize,
        seed: u64,
        genetic_effect: f64,
        history_effect: f64,
        n_traits: usize,
        n_codes: usize,
    ) -> PyResult<Self> {
        let cfg = SynthConfig {
            n_participants: n,
            seed,
            genetic_effect,
            history_effect,
            n_traits,
            n_codes,
            ..SynthConfig::default()
        };
        let (inner, _) = generate_synthetic(&cfg).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_cohort(dir).py()?.0,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        save_cohort(&self.inner, dir).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn participant_ids(&self) -> Vec<String> {
        self.inner.participants.iter().map(|p| p.participant_id.clone()).collect()
    }

    fn n_events(&self) -> usize {
        self.inner.n_events()
    }

    /// participant id -> positive, for participants labelled for `task`.
    #[pyo3(signature = (task="target"))]
    fn labels(&self, task: &str) -> BTreeMap<String, bool> {
        self.inner
            .participants
            .iter()
            .filter_map(|p| p.labels.get(task).map(|l| (p.participant_id.clone(), l.positive)))
            .collect()
    }

    /// participant id -> PRS vector.
    fn prs(&self) -> BTreeMap<String, Vec<f64>> {
        self.inner
            .participants
            .iter()
            .filter_map(|p| p.prs.as_ref().map(|v| (p.participant_id.clone(), v.values.clone())))
            .collect()
    }

    #[pyo3(signature = (min_events=20, max_events=500, min_code_participants=10))]
    fn filtered(&self, min_events: usize, max_events: usize, min_code_participants: usize) -> PyResult<Self> {
        let kept = filter_participants(&self.inner, min_events, max_events).py()?;
        Ok(Self {
            inner: filter_rare_codes(&kept, min_code_participants).py()?,
        })
    }

    /// (train, test) split.
    #[pyo3(signature = (test_fraction=0.1, seed=0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = split(&self.inner, test_fraction, seed).py()?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn __repr__(&self) -> String {
        format!("Cohort({} participants, {} events)", self.inner.len(), self.inner.n_events())
    }
}

#[pyclass(module = "prsfm_py", skip_from_py_object)]
#[derive(Clone)]
struct Vocabulary {
    inner: prsfm::tokenizer::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    #[pyo3(signature = (cohort, n_quantiles=10))]
    fn build(cohort: &Cohort, n_quantiles: usize) -> PyResult<Self> {
        Ok(Self {
            inner: prsfm::tokenizer::Vocabulary::build(&cohort.inner, n_quantiles).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: prsfm::tokenizer::Vocabulary::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn encode(&self, cohort: &Cohort, participant_id: &str) -> PyResult<Vec<u32>> {
        let p = cohort
            .inner
            .get(participant_id)
            .ok_or_else(|| PyValueError::new_err(format!("no participant {participant_id}")))?;
        Ok(self.inner.encode(p).ids)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<Vec<String>> {
        self.inner.decode(&ids).py()
    }
}

fn mode_of(s: &str) -> PyResult<Mode> {
    Mode::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown mode {s:?}; use ehr_only, prs_prefix or prs_cross")))
}

/// A trained checkpoint with its vocabulary.
#[pyclass(module = "prsfm_py")]
struct Model {
    checkpoint: ModelCheckpoint,
    vocab: prsfm::tokenizer::Vocabulary,
}

impl Model {
    fn new(checkpoint: ModelCheckpoint) -> PyResult<Self> {
        let vocab = checkpoint_vocab(&checkpoint).py()?;
        Ok(Self { checkpoint, vocab })
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (
        cohort, vocab, mode="prs_cross", epochs=5, learning_rate=1e-3, d_model=32, n_layers=2, n_heads=4,
        window=256, soft_tokens=4, projector_hidden=64, seed=0
    ))]
    fn train(
        cohort: &Cohort,
        vocab: &Vocabulary,
        mode: &str,
        epochs: usize,
        learning_rate: f64,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        window: usize,
        soft_tokens: usize,
        projector_hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let prs_dim = cohort.inner.participants.iter().find_map(|p| p.prs.as_ref()).map_or(0, |v| v.values.len());
        let cfg = ModelConfig {
            d_model,
            n_layers,
            n_heads,
            window,
            n_soft_tokens: soft_tokens,
            projector_hidden,
            ..ModelConfig::desk(vocab.inner.len(), mode_of(mode)?, prs_dim)
        };
        let tc = TrainConfig {
            epochs,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        let run = train(&cohort.inner, &vocab.inner, &cfg, &tc).py()?;
        Model::new(run.checkpoint)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Model::new(load_checkpoint(path).py()?)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.checkpoint, path).py()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.checkpoint.params.config.mode.as_str()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.checkpoint.params.n_params()
    }

    fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            inner: self.vocab.clone(),
        }
    }

    /// (overall mean loss, participant id -> mean next-token loss).
    fn loss(&self, cohort: &Cohort) -> PyResult<(f64, BTreeMap<String, f64>)> {
        let r = evaluate_loss(&cohort.inner, &self.vocab, &self.checkpoint).py()?;
        Ok((r.overall, r.per_participant))
    }

    /// participant id -> (path_probability, mc_frequency).
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (
        cohort, task="target", target_code="COND_TARGET", history_days=0, horizon_days=1095, paths=10,
        max_new_tokens=96, temperature=1.0, seed=0
    ))]
    fn score(
        &self,
        cohort: &Cohort,
        task: &str,
        target_code: &str,
        history_days: i64,
        horizon_days: i64,
        paths: usize,
        max_new_tokens: usize,
        temperature: f64,
        seed: u64,
    ) -> PyResult<BTreeMap<String, (f64, f64)>> {
        let t = GenerationTask {
            n_paths: paths,
            max_new_tokens,
            temperature,
            seed,
            ..GenerationTask::new(target_ids(&self.vocab, Some(target_code)), horizon_days)
        };
        let s = score_cohort(&self.checkpoint.params, &cohort.inner, &self.vocab, &t, task, history_days).py()?;
        let freq = s.values(Estimator::McFrequency);
        Ok(s.values(Estimator::PathProbability)
            .into_iter()
            .map(|(k, v)| {
                let f = freq[&k];
                (k, (v, f))
            })
            .collect())
    }

    /// participant id -> projector embedding of the PRS vector.
    fn prs_embeddings(&self, cohort: &Cohort) -> PyResult<BTreeMap<String, Vec<f64>>> {
        embed_cohort(&self.checkpoint.params, &cohort.inner).py()
    }

    /// Fits a linear head on the frozen model and scores `test`.
    /// Returns (participant id -> probability, forward passes used on `test`).
    #[pyo3(signature = (train, test, task="target", target_code="COND_TARGET", history_days=0, reserve=96, epochs=100, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn finetune_head(
        &self,
        train: &Cohort,
        test: &Cohort,
        task: &str,
        target_code: &str,
        history_days: i64,
        reserve: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(BTreeMap<String, f64>, usize)> {
        let targets: BTreeSet<u32> = target_ids(&self.vocab, Some(target_code)).into_iter().collect();
        let spec = ContextSpec {
            label_task: task,
            history_days,
            target_ids: &targets,
            reserve,
        };
        let cfg = HeadConfig {
            epochs,
            seed,
            ..HeadConfig::default()
        };
        let params = &self.checkpoint.params;
        let (head, _) = finetune_head(&Backbone::new(params), &train.inner, &self.vocab, &spec, &cfg).py()?;
        let counter = Backbone::new(params);
        let (scores, _) = head_scores(&head, &counter, &test.inner, &self.vocab, &spec).py()?;
        Ok((scores, counter.forward_passes()))
    }

    fn __repr__(&self) -> String {
        format!("Model({}, {} parameters)", self.mode(), self.n_params())
    }
}

#[pyfunction]
fn auroc(labels: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    auroc_(&labels, &scores).py()
}

#[pyfunction]
fn auprc(labels: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    auprc_(&labels, &scores).py()
}

/// Paired bootstrap of metric(b) − metric(a).
#[pyfunction]
#[pyo3(signature = (labels, a, b, metric="auroc", iterations=2000, threshold=0.5, seed=0))]
#[allow(clippy::too_many_arguments)]
fn bootstrap_delta(
    py: Python<'_>,
    labels: Vec<bool>,
    a: Vec<f64>,
    b: Vec<f64>,
    metric: &str,
    iterations: usize,
    threshold: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let m = Metric::standard_set(threshold)
        .into_iter()
        .find(|m| m.name() == metric)
        .ok_or_else(|| PyValueError::new_err(format!("unknown metric {metric:?}")))?;
    let pp = PairedPredictions::new(labels, a, b).py()?;
    let r = paired_bootstrap(&pp, m, iterations, seed).py()?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("metric", r.metric)?;
    d.set_item("value_a", r.value_a)?;
    d.set_item("value_b", r.value_b)?;
    d.set_item("mean_delta", r.mean_delta)?;
    d.set_item("ci95", r.ci95)?;
    d.set_item("p_value", r.p_two_sided)?;
    d.set_item("iterations", r.iterations)?;
    Ok(d.into_any().unbind())
}

/// Fixed- and random-effects pooling of (effect, standard error) pairs.
#[pyfunction]
fn meta_analysis(py: Python<'_>, effects: Vec<(f64, f64)>) -> PyResult<Py<PyAny>> {
    let m = meta_(&effects).py()?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("fixed", (m.fixed.estimate, m.fixed.se, m.fixed.ci95, m.fixed.p_two_sided))?;
    d.set_item("random", (m.random.estimate, m.random.se, m.random.ci95, m.random.p_two_sided))?;
    d.set_item("q", m.q)?;
    d.set_item("q_p", m.q_p)?;
    d.set_item("i2", m.i2)?;
    d.set_item("tau2", m.tau2)?;
    d.set_item("preferred", format!("{:?}", m.preferred).to_lowercase())?;
    Ok(d.into_any().unbind())
}

#[pymodule]
fn prsfm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_delta, m)?)?;
    m.add_function(wrap_pyfunction!(meta_analysis, m)?)?;
    Ok(())
}
