use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use prsfm::cohort::{
    filter_participants, filter_rare_codes, generate_synthetic, load_cohort, save_cohort, split, Cohort, SynthConfig,
};
use prsfm::evalstats::{
    meta_analysis, paired_bootstrap_many, pr_difference, roc_curve, write_meta_table, write_metric_table,
    write_pr_table, BootstrapDelta, MetaModel, Metric, PairedPredictions,
};
use prsfm::generate::{
    score_cohort, target_ids, write_scores, Aggregation, ContextSpec, Estimator, GenerationTask,
};
use prsfm::model::{load_checkpoint, parameter_count, save_checkpoint, Mode, ModelCheckpoint, ModelConfig};
use prsfm::prs::{
    build_prs_matrix, read_dosages, read_effects, read_ld, synthetic_variants, write_dosages, write_effects,
    write_ld, write_prs_matrix, ClumpParams, PrsParams,
};
use prsfm::tokenizer::{Vocabulary, UNK_ID};
use prsfm::train::{checkpoint_vocab, evaluate_loss, paired_loss_test, train, Schedule, TrainConfig};
use prsfm::transfer::{
    demographic_features, embed_cohort, finetune_head, fit_demographics_baseline, head_scores, train_mlp_classifier,
    write_embeddings, Backbone, HeadConfig,
};
use prsfm::Error;

use crate::args::*;
use crate::error::{usage, CliResult};
use crate::manifest::{self, RunManifest};
use crate::tables::{read_score_column, score_rows, write_exclusions, write_text, Table, SCORE_HEADER};
use crate::{pipeline, plot};

const Z95: f64 = 1.959_963_984_540_054;

/// What a subcommand did, for the manifest and the summary line.
struct Outcome {
    summary: String,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
}

fn out_dir(out: &OutArg, name: &str) -> CliResult<PathBuf> {
    let dir = match &out.out {
        Some(d) => d.clone(),
        None => std::env::var_os("PRSFM_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("prsfm-out"))
            .join(name),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Runs one subcommand, writes its manifest and returns the summary line.
pub fn dispatch(command: Command) -> CliResult<String> {
    let name = command.name();
    let (config, out) = match &command {
        Command::Synth(a) => (json!(a), &a.out),
        Command::Tokenize(a) => (json!(a), &a.out),
        Command::Prs(a) => (json!(a), &a.out),
        Command::Train(a) => (json!(a), &a.out),
        Command::Loss(a) => (json!(a), &a.out),
        Command::Score(a) => (json!(a), &a.out),
        Command::Eval(a) => (json!(a), &a.out),
        Command::Meta(a) => (json!(a), &a.out),
        Command::Transfer(a) => (json!(a), &a.out),
        Command::Plot(a) => (json!(a), &a.out),
        Command::Pipeline(a) => (json!(a), &a.out),
    };
    let dir = out_dir(out, name)?;
    let outcome = match &command {
        Command::Synth(a) => synth(a, &dir)?,
        Command::Tokenize(a) => tokenize(a, &dir)?,
        Command::Prs(a) => prs(a, &dir)?,
        Command::Train(a) => train_cmd(a, &dir)?,
        Command::Loss(a) => loss(a, &dir)?,
        Command::Score(a) => score(a, &dir)?,
        Command::Eval(a) => eval(a, &dir)?,
        Command::Meta(a) => meta(a, &dir)?,
        Command::Transfer(a) => transfer(a, &dir)?,
        Command::Plot(a) => plot_cmd(a, &dir)?,
        Command::Pipeline(a) => return pipeline::run(a, &dir),
    };
    let inputs: Vec<&Path> = outcome.inputs.iter().map(PathBuf::as_path).collect();
    let m = RunManifest {
        tool: "prsfm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        config,
        seed: outcome.seed,
        out_dir: dir.clone(),
        inputs: manifest::hash_inputs(&inputs)?,
        outputs: manifest::hash_outputs(&dir)?,
        summary: outcome.summary.clone(),
    };
    manifest::write(&dir, &m)?;
    Ok(outcome.summary)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn read_vocab(path: &Path) -> CliResult<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Vocabulary::from_json(&text)?)
}

fn load(dir: &Path) -> CliResult<Cohort> {
    Ok(load_cohort(dir)?.0)
}

fn labels_for(cohort: &Cohort, task: &str) -> CliResult<BTreeMap<String, bool>> {
    let labels: BTreeMap<String, bool> = cohort
        .participants
        .iter()
        .filter_map(|p| p.labels.get(task).map(|l| (p.participant_id.clone(), l.positive)))
        .collect();
    if labels.is_empty() {
        return Err(Error::invalid(format!("no participant carries a label for task {task:?}")).into());
    }
    Ok(labels)
}

fn synth(a: &SynthArgs, dir: &Path) -> CliResult<Outcome> {
    let cfg = SynthConfig {
        n_participants: a.n,
        seed: a.seed,
        genetic_effect: a.genetic_effect,
        history_effect: a.history_effect,
        n_traits: a.n_traits,
        n_codes: a.n_codes,
        noise_sd: a.noise_sd,
        visit_rate_per_year: a.visit_rate,
        ..SynthConfig::default()
    };
    let (cohort, layout) = generate_synthetic(&cfg)?;
    save_cohort(&cohort, dir)?;
    write_json(&dir.join("layout.json"), &layout)?;
    write_json(&dir.join("synth_config.json"), &cfg)?;
    if a.variants > 0 {
        let ids: Vec<String> = cohort.participants.iter().map(|p| p.participant_id.clone()).collect();
        let (effects, ld, dosages) = synthetic_variants(&ids, &layout.trait_ids, a.variants, a.seed);
        write_effects(&effects, &dir.join("effects.tsv"))?;
        write_ld(&ld, &dir.join("ld.tsv"))?;
        write_dosages(&dosages, &dir.join("dosages.tsv"))?;
    }
    let positives = cohort
        .participants
        .iter()
        .filter(|p| p.labels.get(&layout.task).is_some_and(|l| l.positive))
        .count();
    Ok(Outcome {
        summary: format!(
            "synth: {} participants, {} events, {positives} positive for {}, {} PRS traits",
            cohort.len(),
            cohort.n_events(),
            layout.task,
            layout.trait_ids.len()
        ),
        inputs: Vec::new(),
        seed: Some(a.seed),
    })
}

fn tokenize(a: &TokenizeArgs, dir: &Path) -> CliResult<Outcome> {
    let (cohort, report) = load_cohort(&a.cohort)?;
    let kept = filter_participants(&cohort, a.min_events, a.max_events)?;
    let kept = filter_rare_codes(&kept, a.min_code_participants)?;
    let (train, test) = split(&kept, a.test_fraction, a.seed)?;
    let vocab = Vocabulary::build(&train, a.n_quantiles)?;
    write_text(&dir.join("vocab.json"), &vocab.to_json()?)?;
    save_cohort(&train, dir.join("train"))?;
    save_cohort(&test, dir.join("test"))?;
    let mut stats = String::from("split\tparticipants\ttokens_total\ttokens_mean\ttokens_max\tunknown_tokens\n");
    for (name, c) in [("train", &train), ("test", &test)] {
        let lens: Vec<(usize, usize)> = c
            .participants
            .iter()
            .map(|p| {
                let ids = vocab.encode(p).ids;
                (ids.len(), ids.iter().filter(|&&t| t == UNK_ID).count())
            })
            .collect();
        let total: usize = lens.iter().map(|l| l.0).sum();
        let unk: usize = lens.iter().map(|l| l.1).sum();
        let max = lens.iter().map(|l| l.0).max().unwrap_or(0);
        let mean = if lens.is_empty() { 0.0 } else { total as f64 / lens.len() as f64 };
        let _ = writeln!(stats, "{name}\t{}\t{total}\t{mean:.3}\t{max}\t{unk}", c.len());
    }
    write_text(&dir.join("encode_stats.tsv"), &stats)?;
    Ok(Outcome {
        summary: format!(
            "tokenize: vocabulary of {} tokens, {} train / {} test participants ({} filtered out, {} rejected lines)",
            vocab.len(),
            train.len(),
            test.len(),
            cohort.len() - kept.len(),
            report.rejected.len()
        ),
        inputs: vec![a.cohort.clone()],
        seed: Some(a.seed),
    })
}

fn prs(a: &PrsArgs, dir: &Path) -> CliResult<Outcome> {
    let effects = read_effects(&a.effects)?;
    let ld = read_ld(&a.ld)?;
    let dosages = read_dosages(&a.dosages)?;
    let d = PrsParams::default();
    let params = PrsParams {
        clump: ClumpParams {
            p_lead: a.p_lead.unwrap_or(d.clump.p_lead),
            p_secondary: a.p_secondary.unwrap_or(d.clump.p_secondary),
            r2_threshold: a.r2.unwrap_or(d.clump.r2_threshold),
        },
        p_retain: a.p_retain.unwrap_or(d.p_retain),
        max_variants: a.max_variants.unwrap_or(d.max_variants),
        clip_sd: a.clip_sd.unwrap_or(d.clip_sd),
    };
    let m = build_prs_matrix(&effects, &ld, &dosages, params)?;
    write_prs_matrix(&m, &dir.join("prs.tsv"), &dir.join("prs_bounds.json"))?;
    let selected: usize = m.variants_per_trait.values().sum();
    Ok(Outcome {
        summary: format!(
            "prs: {} participants x {} traits, {selected} variants selected, {} traits dropped",
            m.participant_ids.len(),
            m.stats.trait_ids.len(),
            m.dropped_traits.len()
        ),
        inputs: vec![a.effects.clone(), a.ld.clone(), a.dosages.clone()],
        seed: None,
    })
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::EhrOnly => Mode::EhrOnly,
        ModeArg::PrsPrefix => Mode::PrsPrefix,
        ModeArg::PrsCross => Mode::PrsCross,
    }
}

fn train_cmd(a: &TrainArgs, dir: &Path) -> CliResult<Outcome> {
    let cohort = load(&a.cohort)?;
    let vocab = read_vocab(&a.vocab)?;
    let mode = mode_of(a.mode);
    let prs_dim = if mode.uses_prs() {
        cohort
            .participants
            .iter()
            .find_map(|p| p.prs.as_ref().map(|v| v.len()))
            .ok_or_else(|| Error::invalid(format!("{} needs PRS vectors but the cohort has none", mode.as_str())))?
    } else {
        0
    };
    let cfg = ModelConfig {
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        window: a.window,
        vocab_size: vocab.len(),
        mode,
        n_soft_tokens: a.soft_tokens,
        projector_hidden: a.projector_hidden,
        prs_dim,
        dropout_rate: a.dropout,
    };
    cfg.validate()?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        schedule: match a.schedule {
            ScheduleArg::LinearDecay => Schedule::LinearDecay,
            ScheduleArg::Constant => Schedule::Constant,
        },
        weight_decay: a.weight_decay,
        grad_accum_steps: a.grad_accum,
        seed: a.seed,
    };
    let run = train(&cohort, &vocab, &cfg, &tc)?;
    save_checkpoint(&run.checkpoint, dir.join("checkpoint.bin"))?;
    write_json(&dir.join("config.json"), &json!({"model": cfg, "train": tc}))?;
    let mut trace = String::from("epoch,loss,steps\n");
    let _ = writeln!(trace, "0,{},0", run.initial_loss);
    for e in &run.trace {
        let _ = writeln!(trace, "{},{},{}", e.epoch, e.loss, e.steps);
    }
    write_text(&dir.join("loss_trace.csv"), &trace)?;
    write_text(&dir.join("seed.txt"), &format!("{}\n", a.seed))?;
    let last = run.trace.last().map_or(run.initial_loss, |e| e.loss);
    Ok(Outcome {
        summary: format!(
            "train: {} with {} parameters, {} steps, loss {:.4} -> {last:.4}",
            mode.as_str(),
            parameter_count(&cfg),
            run.total_steps,
            run.initial_loss
        ),
        inputs: vec![a.cohort.clone(), a.vocab.clone()],
        seed: Some(a.seed),
    })
}

fn loss(a: &LossArgs, dir: &Path) -> CliResult<Outcome> {
    let test = load(&a.cohort)?;
    let ck_a = load_checkpoint(&a.a)?;
    let ra = evaluate_loss(&test, &checkpoint_vocab(&ck_a)?, &ck_a)?;
    let mut inputs = vec![a.cohort.clone(), a.a.clone()];
    let mut per = String::new();
    let mut stats = String::from("statistic\tvalue\n");
    let _ = writeln!(stats, "overall_a\t{}", ra.overall);
    let summary;
    if let Some(b) = &a.b {
        inputs.push(b.clone());
        let ck_b = load_checkpoint(b)?;
        let rb = evaluate_loss(&test, &checkpoint_vocab(&ck_b)?, &ck_b)?;
        let t = paired_loss_test(&ra, &rb)?;
        per.push_str("participant_id\tloss_a\tloss_b\tdiff\n");
        for (id, la) in &ra.per_participant {
            let lb = rb.per_participant[id];
            let _ = writeln!(per, "{id}\t{la}\t{lb}\t{}", la - lb);
        }
        let _ = writeln!(stats, "overall_b\t{}", rb.overall);
        let _ = writeln!(stats, "n\t{}", t.n);
        let _ = writeln!(stats, "mean_diff\t{}", t.mean_diff);
        let _ = writeln!(stats, "t_p\t{}", t.t_p);
        let _ = writeln!(stats, "wilcoxon_p\t{}", t.wilcoxon_p);
        let _ = writeln!(stats, "normality_p\t{}", t.normality_p.map_or(String::new(), |p| p.to_string()));
        let _ = writeln!(stats, "zero_variance\t{}", t.zero_variance);
        let _ = writeln!(stats, "all_zero\t{}", t.all_zero);
        summary = format!(
            "loss: n={} mean loss {:.4} vs {:.4}, diff {:+.4}, t p={:.3e}, wilcoxon p={:.3e}",
            t.n, ra.overall, rb.overall, t.mean_diff, t.t_p, t.wilcoxon_p
        );
    } else {
        per.push_str("participant_id\tloss_a\n");
        for (id, la) in &ra.per_participant {
            let _ = writeln!(per, "{id}\t{la}");
        }
        summary = format!("loss: n={} mean loss {:.4}", ra.per_participant.len(), ra.overall);
    }
    write_text(&dir.join("per_participant_loss.tsv"), &per)?;
    write_text(&dir.join("loss_test.tsv"), &stats)?;
    Ok(Outcome {
        summary,
        inputs,
        seed: None,
    })
}

fn score(a: &ScoreArgs, dir: &Path) -> CliResult<Outcome> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?;
    let cohort = load(&a.cohort)?;
    let ids = target_ids(&vocab, Some(&a.target_code));
    if ids.is_empty() {
        return Err(Error::invalid(format!("target code {:?} is not in the vocabulary", a.target_code)).into());
    }
    let aggregation = Aggregation::parse(&a.aggregation)
        .ok_or_else(|| usage(format!("--aggregation must be mean, median or max, got {:?}", a.aggregation)))?;
    let task = GenerationTask {
        n_paths: a.paths,
        max_new_tokens: a.max_new_tokens,
        temperature: a.temperature,
        aggregation,
        seed: a.seed,
        stop_at_horizon: !a.no_stop_at_horizon,
        ..GenerationTask::new(ids, a.horizon_days)
    };
    let scores = score_cohort(&ck.params, &cohort, &vocab, &task, &a.task, a.history_days)?;
    write_scores(&scores, dir.join("scores.tsv"))?;
    write_exclusions(&scores.excluded, &dir.join("exclusions.tsv"))?;
    let distinct = |e: Estimator| {
        scores
            .values(e)
            .values()
            .map(|v| v.to_bits())
            .collect::<BTreeSet<_>>()
            .len()
    };
    let path = scores.values(Estimator::PathProbability);
    let mean = path.values().sum::<f64>() / path.len() as f64;
    Ok(Outcome {
        summary: format!(
            "score: {} scored, {} excluded, mean path probability {mean:.4}, distinct values {} path / {} frequency",
            path.len(),
            scores.excluded.len(),
            distinct(Estimator::PathProbability),
            distinct(Estimator::McFrequency)
        ),
        inputs: vec![a.checkpoint.clone(), a.cohort.clone()],
        seed: Some(a.seed),
    })
}

fn roc_rows(out: &mut String, model: &str, labels: &[bool], scores: &[f64]) -> CliResult<()> {
    for (fpr, tpr) in roc_curve(labels, scores)? {
        let _ = writeln!(out, "{model}\t{fpr}\t{tpr}");
    }
    Ok(())
}

/// Metric table, PR difference and ROC points for a paired comparison.
fn compare(pp: &PairedPredictions, names: (&str, &str), iterations: usize, threshold: f64, grid: usize, seed: u64, dir: &Path) -> CliResult<Vec<BootstrapDelta>> {
    let rows = paired_bootstrap_many(pp, &Metric::standard_set(threshold), iterations, seed)?;
    write_metric_table(&rows, dir.join("metrics.tsv"))?;
    let pr = pr_difference(pp, grid, iterations, seed)?;
    write_pr_table(&pr, dir.join("pr_difference.tsv"))?;
    let mut roc = String::from("model\tfpr\ttpr\n");
    roc_rows(&mut roc, names.0, &pp.labels, &pp.score_a)?;
    roc_rows(&mut roc, names.1, &pp.labels, &pp.score_b)?;
    write_text(&dir.join("roc.tsv"), &roc)?;
    Ok(rows)
}

fn auroc_summary(rows: &[BootstrapDelta]) -> String {
    rows.iter()
        .find(|r| r.metric == Metric::Auroc.name())
        .map(|r| {
            format!(
                "AUROC {:.4} -> {:.4}, delta {:+.4} [{:+.4}, {:+.4}], p={:.4}",
                r.value_a, r.value_b, r.mean_delta, r.ci95.0, r.ci95.1, r.p_two_sided
            )
        })
        .unwrap_or_default()
}

fn eval(a: &EvalArgs, dir: &Path) -> CliResult<Outcome> {
    let labels = labels_for(&load(&a.cohort)?, &a.task)?;
    let est_b = a.estimator_b.as_deref().unwrap_or(&a.estimator_a);
    let sa = read_score_column(&a.a, &a.estimator_a)?;
    let sb = read_score_column(&a.b, est_b)?;
    let pp = PairedPredictions::align(&labels, &sa, &sb)?;
    let rows = compare(&pp, ("A", "B"), a.iterations, a.threshold, a.recall_grid, a.seed, dir)?;
    let pos = pp.labels.iter().filter(|&&l| l).count();
    Ok(Outcome {
        summary: format!("eval: {} subjects ({pos} positive), {}", pp.len(), auroc_summary(&rows)),
        inputs: vec![a.cohort.clone(), a.a.clone(), a.b.clone()],
        seed: Some(a.seed),
    })
}

fn meta(a: &MetaArgs, dir: &Path) -> CliResult<Outcome> {
    let (names, effects, inputs) = if let Some(path) = &a.effects {
        let t = Table::read(path)?;
        let (l, e, s) = (t.col("label")?, t.col("effect")?, t.col("se")?);
        let mut names = Vec::new();
        let mut effects = Vec::new();
        for i in 0..t.rows.len() {
            names.push(t.rows[i][l].clone());
            effects.push((t.f64_at(i, e)?, t.f64_at(i, s)?));
        }
        (names, effects, vec![path.clone()])
    } else {
        if a.metrics.is_empty() {
            return Err(usage("meta needs --effects or --metrics"));
        }
        if !a.labels.is_empty() && a.labels.len() != a.metrics.len() {
            return Err(usage("--labels must match --metrics one to one"));
        }
        let mut names = Vec::new();
        let mut effects = Vec::new();
        for (k, path) in a.metrics.iter().enumerate() {
            let t = Table::read(path)?;
            let (m, d, lo, hi) = (t.col("metric")?, t.col("delta")?, t.col("ci_low")?, t.col("ci_high")?);
            let row = (0..t.rows.len())
                .find(|&i| t.rows[i][m] == a.metric)
                .ok_or_else(|| Error::invalid(format!("{} has no {} row", path.display(), a.metric)))?;
            let se = (t.f64_at(row, hi)? - t.f64_at(row, lo)?) / (2.0 * Z95);
            effects.push((t.f64_at(row, d)?, se));
            names.push(a.labels.get(k).cloned().unwrap_or_else(|| {
                path.parent()
                    .and_then(Path::file_name)
                    .map_or_else(|| format!("task{}", k + 1), |n| n.to_string_lossy().into_owned())
            }));
        }
        (names, effects, a.metrics.clone())
    };
    let m = meta_analysis(&effects)?;
    write_meta_table(&names, &m, dir.join("meta.tsv"))?;
    let mut s = String::from("statistic\tvalue\n");
    for (k, v) in [
        ("k", effects.len() as f64),
        ("fixed_estimate", m.fixed.estimate),
        ("fixed_se", m.fixed.se),
        ("fixed_p", m.fixed.p_two_sided),
        ("random_estimate", m.random.estimate),
        ("random_se", m.random.se),
        ("random_p", m.random.p_two_sided),
        ("tau2", m.tau2),
        ("q", m.q),
        ("q_df", m.q_df as f64),
        ("q_p", m.q_p),
        ("i2", m.i2),
    ] {
        let _ = writeln!(s, "{k}\t{v}");
    }
    let preferred = match m.preferred {
        MetaModel::Fixed => "fixed",
        MetaModel::Random => "random",
    };
    let _ = writeln!(s, "preferred\t{preferred}");
    let _ = writeln!(s, "reason\t{}", m.reason);
    write_text(&dir.join("meta_summary.tsv"), &s)?;
    let p = if m.preferred == MetaModel::Fixed { m.fixed } else { m.random };
    Ok(Outcome {
        summary: format!(
            "meta: k={} Q={:.3} I2={:.3} preferred {preferred}, pooled {:+.4} [{:+.4}, {:+.4}]",
            effects.len(),
            m.q,
            m.i2,
            p.estimate,
            p.ci95.0,
            p.ci95.1
        ),
        inputs,
        seed: None,
    })
}

fn transfer(a: &TransferArgs, dir: &Path) -> CliResult<Outcome> {
    let ck: ModelCheckpoint = load_checkpoint(&a.checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?;
    let train = load(&a.train)?;
    let test = load(&a.test)?;
    let inputs = vec![a.checkpoint.clone(), a.train.clone(), a.test.clone()];
    let test_labels = labels_for(&test, &a.task)?;
    let mut scores = format!("{SCORE_HEADER}\n");
    match a.pathway {
        Pathway::Head => {
            let targets: BTreeSet<u32> = target_ids(&vocab, Some(&a.target_code)).into_iter().collect();
            let spec = ContextSpec {
                label_task: &a.task,
                history_days: a.history_days,
                target_ids: &targets,
                reserve: a.reserve,
            };
            let cfg = HeadConfig {
                epochs: a.epochs,
                seed: a.seed,
                ..HeadConfig::default()
            };
            let (head, set) = finetune_head(&Backbone::new(&ck.params), &train, &vocab, &spec, &cfg)?;
            head.save(dir.join("head.bin"))?;
            let counter = Backbone::new(&ck.params);
            let (head_scores, excluded) = head_scores(&head, &counter, &test, &vocab, &spec)?;
            write_exclusions(&excluded, &dir.join("exclusions.tsv"))?;
            let (codes, demo) = fit_demographics_baseline(&train, &a.task, a.seed)?;
            let demo_scores: BTreeMap<String, f64> = test
                .participants
                .iter()
                .filter(|p| head_scores.contains_key(&p.participant_id))
                .map(|p| (p.participant_id.clone(), demo.predict_proba(&demographic_features(p, &codes))))
                .collect();
            score_rows(&mut scores, "demographics_logistic", &demo_scores);
            score_rows(&mut scores, "head", &head_scores);
            write_text(&dir.join("scores.tsv"), &scores)?;
            let pp = PairedPredictions::align(&test_labels, &to_vec(&demo_scores), &to_vec(&head_scores))?;
            let rows = compare(&pp, ("demographics_logistic", "head"), a.iterations, 0.5, 101, a.seed, dir)?;
            Ok(Outcome {
                summary: format!(
                    "transfer head: trained on {} subjects, {} test subjects in {} forward passes, demographics vs head {}",
                    set.labels.len(),
                    head_scores.len(),
                    counter.forward_passes(),
                    auroc_summary(&rows)
                ),
                inputs,
                seed: Some(a.seed),
            })
        }
        Pathway::Features => {
            let emb_train = embed_cohort(&ck.params, &train)?;
            let emb_test = embed_cohort(&ck.params, &test)?;
            let mut all = emb_train.clone();
            all.extend(emb_test.clone());
            write_embeddings(&all, dir.join("embeddings.tsv"))?;
            let rows_of = |c: &Cohort, emb: &BTreeMap<String, Vec<f64>>| {
                let mut out = Vec::new();
                for p in &c.participants {
                    if let (Some(l), Some(v), Some(e)) =
                        (p.labels.get(&a.task), p.prs.as_ref(), emb.get(&p.participant_id))
                    {
                        out.push((p.participant_id.clone(), v.values.clone(), e.clone(), l.positive));
                    }
                }
                out
            };
            let tr = rows_of(&train, &emb_train);
            let te = rows_of(&test, &emb_test);
            let y: Vec<bool> = tr.iter().map(|r| r.3).collect();
            let raw_x: Vec<Vec<f64>> = tr.iter().map(|r| r.1.clone()).collect();
            let emb_x: Vec<Vec<f64>> = tr.iter().map(|r| r.2.clone()).collect();
            let raw = train_mlp_classifier(&raw_x, &y, a.hidden, a.seed)?;
            let emb = train_mlp_classifier(&emb_x, &y, a.hidden, a.seed)?;
            raw.save(dir.join("mlp_raw_prs.bin"))?;
            emb.save(dir.join("mlp_embedding.bin"))?;
            let raw_s: BTreeMap<String, f64> = te.iter().map(|r| (r.0.clone(), raw.predict_proba(&r.1))).collect();
            let emb_s: BTreeMap<String, f64> = te.iter().map(|r| (r.0.clone(), emb.predict_proba(&r.2))).collect();
            score_rows(&mut scores, "raw_prs_mlp", &raw_s);
            score_rows(&mut scores, "embedding_mlp", &emb_s);
            write_text(&dir.join("scores.tsv"), &scores)?;
            let pp = PairedPredictions::align(&test_labels, &to_vec(&raw_s), &to_vec(&emb_s))?;
            let rows = compare(&pp, ("raw_prs_mlp", "embedding_mlp"), a.iterations, 0.5, 101, a.seed, dir)?;
            Ok(Outcome {
                summary: format!(
                    "transfer features: {} train / {} test subjects, raw PRS vs embedding {}",
                    tr.len(),
                    te.len(),
                    auroc_summary(&rows)
                ),
                inputs,
                seed: Some(a.seed),
            })
        }
    }
}

fn to_vec(m: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
    m.iter().map(|(k, v)| (k.clone(), *v)).collect()
}

fn plot_cmd(a: &PlotArgs, dir: &Path) -> CliResult<Outcome> {
    let mut written = Vec::new();
    let mut inputs = Vec::new();
    if let Some(p) = &a.metrics {
        fs_write(dir, "metric_deltas.svg", &plot::metric_bars(&Table::read(p)?)?, &mut written)?;
        inputs.push(p.clone());
    }
    if let Some(p) = &a.roc {
        fs_write(dir, "roc.svg", &plot::roc(&Table::read(p)?)?, &mut written)?;
        inputs.push(p.clone());
    }
    if let Some(p) = &a.pr {
        fs_write(dir, "pr_difference.svg", &plot::pr_band(&Table::read(p)?)?, &mut written)?;
        inputs.push(p.clone());
    }
    if let Some(p) = &a.meta {
        fs_write(dir, "forest.svg", &plot::forest(&Table::read(p)?)?, &mut written)?;
        inputs.push(p.clone());
    }
    if written.is_empty() {
        return Err(usage("plot needs at least one of --metrics, --roc, --pr, --meta"));
    }
    Ok(Outcome {
        summary: format!("plot: wrote {}", written.join(", ")),
        inputs,
        seed: None,
    })
}

fn fs_write(dir: &Path, name: &str, svg: &str, written: &mut Vec<String>) -> CliResult<()> {
    write_text(&dir.join(name), svg)?;
    written.push(name.to_string());
    Ok(())
}
