use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::Parser;
use serde::{Deserialize, Serialize};

use prsfm::Error;

use crate::args::{Cli, Command, PipelineArgs};
use crate::commands::dispatch;
use crate::error::{usage, CliResult};
use crate::manifest::{hash_outputs, PIPELINE_MANIFEST_FILE};

/// Placeholder for the pipeline output root inside step arguments.
pub const ROOT: &str = "{root}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub tool: String,
    pub version: String,
    /// Subcommand argument lists, with `{root}` unresolved.
    pub steps: Vec<Vec<String>>,
    pub summaries: Vec<String>,
    /// Path relative to the root → sha256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct StepsOnly {
    steps: Vec<Vec<String>>,
}

fn demo_steps() -> Vec<Vec<String>> {
    let small = "--epochs 1 --d-model 16 --layers 1 --heads 2 --window 128 --soft-tokens 2 --projector-hidden 16 --lr 1e-3 --seed 1";
    let score = "--paths 4 --max-new-tokens 24 --seed 1";
    [
        "synth --n 300 --seed 1 --out {root}/synth".to_string(),
        "tokenize --cohort {root}/synth --test-fraction 0.25 --seed 1 --out {root}/tokenize".into(),
        format!("train --cohort {{root}}/tokenize/train --vocab {{root}}/tokenize/vocab.json --mode ehr_only {small} --out {{root}}/train_ehr"),
        format!("train --cohort {{root}}/tokenize/train --vocab {{root}}/tokenize/vocab.json --mode prs_cross {small} --out {{root}}/train_prs"),
        "loss --cohort {root}/tokenize/test --a {root}/train_ehr/checkpoint.bin --b {root}/train_prs/checkpoint.bin --out {root}/loss".into(),
        format!("score --checkpoint {{root}}/train_ehr/checkpoint.bin --cohort {{root}}/tokenize/test {score} --out {{root}}/score_ehr"),
        format!("score --checkpoint {{root}}/train_prs/checkpoint.bin --cohort {{root}}/tokenize/test {score} --out {{root}}/score_prs"),
        "eval --cohort {root}/tokenize/test --a {root}/score_ehr/scores.tsv --b {root}/score_prs/scores.tsv --iterations 200 --seed 1 --out {root}/eval".into(),
        "plot --metrics {root}/eval/metrics.tsv --roc {root}/eval/roc.tsv --pr {root}/eval/pr_difference.tsv --out {root}/plot".into(),
    ]
    .iter()
    .map(|s| s.split_whitespace().map(str::to_string).collect())
    .collect()
}

/// Runs every step with `{root}` bound to `root`, then records the artifact hashes.
pub fn run(a: &PipelineArgs, root: &Path) -> CliResult<String> {
    let steps = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<StepsOnly>(&text)?.steps
        }
        None => demo_steps(),
    };
    let root_str = root.display().to_string();
    let mut commands = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let argv = std::iter::once("prsfm".to_string()).chain(step.iter().map(|s| s.replace(ROOT, &root_str)));
        let cli = Cli::try_parse_from(argv).map_err(|e| usage(format!("pipeline step {}: {e}", i + 1)))?;
        if matches!(cli.command, Command::Pipeline(_)) {
            return Err(usage(format!("pipeline step {} is itself a pipeline", i + 1)));
        }
        commands.push(cli.command);
    }
    let mut summaries = Vec::with_capacity(commands.len());
    for c in commands {
        summaries.push(dispatch(c)?);
    }
    let m = PipelineManifest {
        tool: "prsfm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        steps,
        summaries,
        artifacts: hash_outputs(root)?,
    };
    let path = root.join(PIPELINE_MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(format!(
        "pipeline: {} steps, {} artifacts\n{}",
        m.steps.len(),
        m.artifacts.len(),
        m.summaries.join("\n")
    ))
}
