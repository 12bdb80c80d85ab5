use std::collections::BTreeSet;
use std::time::Instant;

use proptest::prelude::*;
use prsfm::cohort::{generate_synthetic, EventKind, EventRecord, SynthConfig, TARGET_CODE, TARGET_TASK};
use prsfm::generate::{
    enumerate_path_probability, mc_frequency, path_probability, read_scores, sample_trajectories, score_cohort,
    target_ids, write_scores, ExclusionReason, GenerationTask, StepModel, TableModel,
};
use prsfm::model::{Mode, ModelConfig, Params};
use prsfm::tokenizer::Vocabulary;

// 0: ordinary code, 1: 30-day time token, 2: target, 3: eos
const TARGET: u32 = 2;

fn chain() -> TableModel {
    TableModel::new(
        vec![
            vec![0.40, 0.35, 0.15, 0.10],
            vec![0.30, 0.30, 0.25, 0.15],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.00, 0.00, 0.00, 1.00],
        ],
        vec![0, 30, 0, 0],
        Some(3),
    )
    .unwrap()
}

/// P[a target is emitted at some step i ≤ K with elapsed days before i ≤ horizon],
/// summing the model probability of every sequence.
fn exact_first_hit(m: &TableModel, last: u32, k_left: usize, elapsed: i64, horizon: i64) -> f64 {
    if k_left == 0 || elapsed > horizon {
        return 0.0;
    }
    let mut total = 0.0;
    for (tok, &p) in m.transitions[last as usize].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let tok = tok as u32;
        if tok == TARGET {
            total += p;
        } else if Some(tok) != m.eos {
            total += p * exact_first_hit(m, tok, k_left - 1, elapsed + i64::from(m.days[tok as usize]), horizon);
        }
    }
    total
}

fn task(k: usize, horizon: i64) -> GenerationTask {
    GenerationTask {
        max_new_tokens: k,
        ..GenerationTask::new([TARGET], horizon)
    }
}

#[test]
fn enumerated_path_estimator_is_exact() {
    let m = chain();
    for &(k, horizon, stop) in &[(8, 60, true), (8, 60, false), (5, 1, true), (8, 400, true), (1, 10, true)] {
        let t = GenerationTask {
            stop_at_horizon: stop,
            ..task(k, horizon)
        };
        for start in [0u32, 1] {
            let exact = exact_first_hit(&m, start, k, 0, horizon);
            let got = enumerate_path_probability(&m, &[start], &t).unwrap();
            assert!((got - exact).abs() < 1e-12, "k {k} h {horizon}: {got} vs {exact}");
        }
    }
}

#[test]
fn mc_frequency_converges_to_exact() {
    let m = chain();
    let t = GenerationTask {
        n_paths: 10_000,
        seed: 3,
        ..task(8, 60)
    };
    let start = Instant::now();
    let set = sample_trajectories(&m, &[0], &t, 0).unwrap();
    let exact = exact_first_hit(&m, 0, 8, 0, 60);
    let freq = mc_frequency(&set, &t);
    let se = (exact * (1.0 - exact) / 1e4).sqrt();
    assert!((freq - exact).abs() < 3.0 * se, "{freq} vs {exact}");
    let path = path_probability(&set, &t).unwrap();
    assert!((path - exact).abs() < 3.0 * se);
    assert!(start.elapsed().as_secs() < 10);
}

#[test]
fn target_mass_uses_unit_temperature() {
    let m = chain();
    let t = GenerationTask {
        temperature: 0.4,
        n_paths: 3,
        ..task(4, 1000)
    };
    let set = sample_trajectories(&m, &[1], &t, 0).unwrap();
    for p in &set.paths {
        assert!((p.target_mass[0] - 0.25).abs() < 1e-12);
    }
}

#[test]
fn low_temperature_is_greedy() {
    let m = chain();
    let t = GenerationTask {
        temperature: 1e-4,
        n_paths: 5,
        ..task(6, 1000)
    };
    let set = sample_trajectories(&m, &[0], &t, 0).unwrap();
    assert!(set.paths.iter().all(|p| p.tokens == vec![0; 6]));
    let again = sample_trajectories(&m, &[0], &GenerationTask { n_paths: 1, ..t }, 0).unwrap();
    assert_eq!(again.paths[0], set.paths[0]);
}

#[test]
fn distinct_paths_and_truncation() {
    let m = chain();
    let t = GenerationTask { seed: 1, ..task(8, 45) };
    let set = sample_trajectories(&m, &[0], &t, 0).unwrap();
    let distinct: BTreeSet<&Vec<u32>> = set.paths.iter().map(|p| &p.tokens).collect();
    assert!(distinct.len() > 5);
    for p in &set.paths {
        assert!(!p.tokens.contains(&TARGET));
        assert!(p.elapsed_days.windows(2).all(|w| w[0] <= w[1]));
        let s = p.truncation_step(45);
        assert!(s <= p.len());
        if s < p.len() {
            // second 30-day token crosses 45 days and ends the path
            assert_eq!(p.tokens.iter().take(s + 1).filter(|&&x| x == 1).count(), 2);
            assert_eq!(s + 1, p.len());
        }
    }
}

#[test]
fn overflowing_context_and_empty_target_set_are_errors() {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        window: 16,
        ..ModelConfig::desk(6, Mode::EhrOnly, 0)
    };
    let params = Params::<f32>::init(&cfg, 0).unwrap();
    let days = vec![0; 6];
    let model = prsfm::generate::TransformerModel::new(&params, None, &days).unwrap();
    let t = GenerationTask {
        max_new_tokens: 10,
        ..GenerationTask::new([4], 10)
    };
    assert!(sample_trajectories(&model, &[1; 7], &t, 0).is_err());
    assert!(sample_trajectories(&model, &[1; 6], &t, 0).is_ok());
    let empty = GenerationTask {
        target_token_ids: BTreeSet::new(),
        ..t
    };
    assert!(sample_trajectories(&model, &[1], &empty, 0).is_err());
}

fn scored_fixture() -> (prsfm::cohort::Cohort, Vocabulary, Params<f32>) {
    let (cohort, _) = generate_synthetic(&SynthConfig {
        n_participants: 40,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let vocab = Vocabulary::build(&cohort, 10).unwrap();
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        window: 256,
        n_soft_tokens: 2,
        projector_hidden: 8,
        ..ModelConfig::desk(vocab.len(), Mode::PrsCross, 16)
    };
    let params = Params::<f32>::init_with_std(&cfg, 2, 0.5).unwrap();
    (cohort, vocab, params)
}

#[test]
fn cohort_scoring_excludes_and_is_deterministic() {
    let (mut cohort, vocab, params) = scored_fixture();
    let t0 = cohort.participants[0].labels[TARGET_TASK].time_zero_days;
    let pid = cohort.participants[0].participant_id.clone();
    cohort.participants[0].events.push(EventRecord {
        participant_id: pid,
        time_days: t0 - 10,
        code: TARGET_CODE.into(),
        kind: EventKind::Condition,
        numeric_value: None,
        visit_id: None,
    });
    cohort.participants[0].sort_events();
    cohort.participants[1].labels.clear();
    let task = GenerationTask {
        n_paths: 4,
        max_new_tokens: 24,
        seed: 8,
        ..GenerationTask::new(target_ids(&vocab, None), 1095)
    };
    let a = score_cohort(&params, &cohort, &vocab, &task, TARGET_TASK, 365).unwrap();
    let ids: Vec<_> = a.excluded.iter().map(|e| (e.participant_id.as_str(), e.reason)).collect();
    assert!(ids.contains(&(cohort.participants[0].participant_id.as_str(), ExclusionReason::TargetInContext)));
    assert!(ids.contains(&(cohort.participants[1].participant_id.as_str(), ExclusionReason::NoTimeZero)));
    // history 0 ignores the planted event
    let h0 = score_cohort(&params, &cohort, &vocab, &task, TARGET_TASK, 0).unwrap();
    assert_eq!(h0.excluded.len(), 1);
    assert_eq!(h0.scores.len(), 2 * (cohort.len() - 1));
    let b = score_cohort(&params, &cohort, &vocab, &task, TARGET_TASK, 365).unwrap();
    assert_eq!(a, b);
    assert!(a.scores.iter().all(|s| (0.0..=1.0).contains(&s.value)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.tsv");
    write_scores(&a, &path).unwrap();
    assert_eq!(read_scores(&path).unwrap(), a.scores);
}

fn arb_chain() -> impl Strategy<Value = TableModel> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 4).prop_map(|rows| {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                if i == 3 {
                    return vec![0.0, 0.0, 0.0, 1.0];
                }
                let s: f64 = r.iter().sum();
                let mut r: Vec<f64> = r.iter().map(|x| x / s).collect();
                let fix = 1.0 - r[..3].iter().sum::<f64>();
                r[3] = fix;
                r
            })
            .collect();
        TableModel::new(rows, vec![0, 30, 0, 0], Some(3)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn horizon_monotone_and_scores_bounded(m in arb_chain(), seed in 0u64..1000, h in 1i64..200, extra in 0i64..200) {
        let t = GenerationTask { n_paths: 12, seed, stop_at_horizon: false, ..task(8, h) };
        let set = sample_trajectories(&m, &[0], &t, 0).unwrap();
        let wide = GenerationTask { horizon_days: h + extra, ..t.clone() };
        prop_assert!(mc_frequency(&set, &wide) >= mc_frequency(&set, &t));
        prop_assert!(path_probability(&set, &wide).unwrap() >= path_probability(&set, &t).unwrap() - 1e-15);
        for p in &set.paths {
            let s = p.path_score(h);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!(p.target_mass.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn enumeration_matches_brute_force(m in arb_chain(), k in 1usize..7, h in 1i64..120) {
        let t = task(k, h);
        let exact = exact_first_hit(&m, 0, k, 0, h);
        prop_assert!((enumerate_path_probability(&m, &[0], &t).unwrap() - exact).abs() < 1e-9);
    }
}

#[test]
fn table_model_rejects_bad_rows() {
    assert!(TableModel::new(vec![vec![0.5, 0.4]; 2], vec![0, 0], None).is_err());
    assert_eq!(chain().vocab_size(), 4);
}
