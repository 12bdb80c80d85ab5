use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn prsfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prsfm"))
        .args(args)
        .env_remove("PRSFM_OUT")
        .output()
        .expect("spawn prsfm")
}

fn ok(args: &[&str]) -> String {
    let o = prsfm(args);
    assert!(
        o.status.success(),
        "prsfm {args:?} failed: {}\n{}",
        o.status,
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(root: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(root.join("pipeline_manifest.json")).unwrap()).unwrap()
}

/// One demo pipeline shared by the tests that only read its outputs.
fn demo() -> &'static (TempDir, String) {
    static DEMO: OnceLock<(TempDir, String)> = OnceLock::new();
    DEMO.get_or_init(|| {
        let t = TempDir::new().unwrap();
        let out = ok(&["pipeline", "--out", s(t.path())]);
        (t, out)
    })
}

fn root() -> PathBuf {
    demo().0.path().to_path_buf()
}

fn tabular(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if matches!(p.extension().and_then(|x| x.to_str()), Some("tsv" | "csv")) {
                out.insert(p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut m = BTreeMap::new();
    walk(root, root, &mut m);
    m
}

#[test]
fn pipeline_replay_from_manifest_is_bit_identical() {
    let first = root();
    let second = TempDir::new().unwrap();
    let spec = first.join("pipeline_manifest.json");
    let out = ok(&["pipeline", "--spec", s(&spec), "--out", s(second.path())]);
    assert_eq!(out, demo().1);

    let (a, b) = (manifest(&first), manifest(second.path()));
    assert_eq!(a["steps"], b["steps"]);
    assert_eq!(a["artifacts"], b["artifacts"]);
    assert_eq!(a["summaries"], b["summaries"]);

    let (ta, tb) = (tabular(&first), tabular(second.path()));
    assert!(ta.len() >= 15, "{} tabular files", ta.len());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs between runs");
    }
}

#[test]
fn every_step_writes_one_manifest() {
    let r = root();
    let steps = manifest(&r)["steps"].as_array().unwrap().len();
    let dirs: Vec<_> = fs::read_dir(&r).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), steps);
    for d in dirs {
        let m: Value = serde_json::from_str(&fs::read_to_string(d.join("run_manifest.json")).unwrap()).unwrap();
        assert_eq!(m["tool"], "prsfm");
        assert!(!m["outputs"].as_object().unwrap().is_empty(), "{}", d.display());
        assert!(m["config"].is_object());
    }
    let artifacts = manifest(&r)["artifacts"].as_object().unwrap().clone();
    assert!(artifacts.keys().all(|k| !k.ends_with("run_manifest.json")));
}

#[test]
fn unknown_flag_is_usage_error_without_artifacts() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("synth");
    let o = prsfm(&["synth", "--n", "10", "--bogus", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let spec = t.path().join("bad.json");
    fs::write(&spec, r#"{"steps": [["synth", "--n", "20", "--out", "{root}/synth"], ["tokenize", "--nope"]]}"#).unwrap();
    let root = t.path().join("run");
    let o = prsfm(&["pipeline", "--spec", s(&spec), "--out", s(&root)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!root.join("synth").exists());
    assert!(!root.join("pipeline_manifest.json").exists());
}

#[test]
fn missing_input_is_input_error() {
    let t = TempDir::new().unwrap();
    let o = prsfm(&["tokenize", "--cohort", "/nonexistent/cohort", "--out", s(t.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("prsfm: "));
}

fn read_tsv(p: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split('\t').map(str::to_string)).collect())
        .collect()
}

#[test]
fn eval_of_a_model_against_itself_is_null() {
    let r = root();
    let t = TempDir::new().unwrap();
    let scores = r.join("score_prs/scores.tsv");
    ok(&[
        "eval", "--cohort", s(&r.join("tokenize/test")), "--a", s(&scores), "--b", s(&scores),
        "--iterations", "300", "--out", s(t.path()),
    ]);
    let rows = read_tsv(&t.path().join("metrics.tsv"));
    assert!(rows.len() >= 5);
    for row in rows {
        assert_eq!(row["delta"].parse::<f64>().unwrap(), 0.0, "{}", row["metric"]);
        assert_eq!(row["p_value"].parse::<f64>().unwrap(), 1.0, "{}", row["metric"]);
    }
    for row in read_tsv(&t.path().join("pr_difference.tsv")) {
        assert_eq!(row["mean_delta"].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn path_scores_are_finer_than_frequencies() {
    let rows = read_tsv(&root().join("score_prs/scores.tsv"));
    let distinct = |est: &str| {
        let mut v: Vec<String> = rows.iter().filter(|r| r["estimator"] == est).map(|r| r["value"].clone()).collect();
        v.sort();
        v.dedup();
        v.len()
    };
    assert!(distinct("path_probability") > distinct("mc_frequency"));
    assert!(distinct("mc_frequency") <= 5);
}

#[test]
fn transfer_meta_and_plot_run_on_pipeline_outputs() {
    let r = root();
    let t = TempDir::new().unwrap();
    let ck = r.join("train_prs/checkpoint.bin");
    let (train, test) = (r.join("tokenize/train"), r.join("tokenize/test"));
    let head = t.path().join("head");
    let line = ok(&[
        "transfer", "--pathway", "head", "--checkpoint", s(&ck), "--train", s(&train), "--test", s(&test),
        "--reserve", "24", "--epochs", "20", "--iterations", "100", "--out", s(&head),
    ]);
    assert!(line.starts_with("transfer"), "{line}");
    for f in ["head.bin", "scores.tsv", "metrics.tsv", "pr_difference.tsv", "run_manifest.json"] {
        assert!(head.join(f).exists(), "{f}");
    }
    let feats = t.path().join("features");
    ok(&[
        "transfer", "--pathway", "features", "--checkpoint", s(&ck), "--train", s(&train), "--test", s(&test),
        "--hidden", "8", "--iterations", "100", "--out", s(&feats),
    ]);
    let emb = read_tsv(&feats.join("embeddings.tsv"));
    assert_eq!(emb[0].len(), 1 + 16);
    assert!(feats.join("metrics.tsv").exists());

    let meta = t.path().join("meta");
    ok(&[
        "meta", "--metrics", s(&r.join("eval/metrics.tsv")), s(&head.join("metrics.tsv")), s(&feats.join("metrics.tsv")),
        "--out", s(&meta),
    ]);
    let pooled = read_tsv(&meta.join("meta_summary.tsv"));
    assert!(!pooled.is_empty());

    let plot = t.path().join("plot");
    ok(&["plot", "--meta", s(&meta.join("meta.tsv")), "--metrics", s(&head.join("metrics.tsv")), "--out", s(&plot)]);
    for f in ["forest.svg", "metric_deltas.svg"] {
        let svg = fs::read_to_string(plot.join(f)).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"), "{f}");
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn prs_subcommand_builds_matrix_from_fixture() {
    let t = TempDir::new().unwrap();
    let synth = t.path().join("synth");
    ok(&["synth", "--n", "40", "--variants", "60", "--seed", "3", "--out", s(&synth)]);
    let out = t.path().join("prs");
    ok(&[
        "prs", "--effects", s(&synth.join("effects.tsv")), "--ld", s(&synth.join("ld.tsv")),
        "--dosages", s(&synth.join("dosages.tsv")), "--out", s(&out),
    ]);
    let rows = read_tsv(&out.join("prs.tsv"));
    assert_eq!(rows.len(), 40);
    for row in &rows {
        for (k, v) in row {
            if k != "participant_id" {
                assert!(v.parse::<f64>().unwrap().is_finite());
            }
        }
    }
}

#[test]
fn outputs_default_under_env_directory() {
    let t = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_prsfm"))
        .args(["synth", "--n", "12"])
        .env("PRSFM_OUT", t.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(t.path().join("synth/events.tsv").exists());
    assert!(t.path().join("synth/run_manifest.json").exists());
}
