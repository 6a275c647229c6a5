use super::*;
use crate::data::{caption_dataset, oracle_dataset, MixtureSpec};
use crate::eval::{canonical_observation, Embodiment, EnvKind, EnvSpec};
use crate::policy::{registry_compose, PolicyConfig};

fn reach() -> EnvSpec {
    EnvSpec::new(EnvKind::PointReach, Embodiment::Point)
}

fn mixture(n: usize) -> Mixture {
    let d = oracle_dataset(&reach(), n, 4).unwrap();
    let spec = MixtureSpec::single(&d.name, "point", 9);
    Mixture::new(spec, vec![d]).unwrap()
}

fn small(head: &str) -> PolicyConfig {
    let mut c = PolicyConfig::new("vlm", head);
    c.k = 4;
    c.d = 16;
    c.head_hidden = 16;
    c.flow.hidden = 24;
    c.flow.denoise_steps = 4;
    c.fast.vocab_size = 96;
    c.fast.gamma = 0.1;
    c
}

fn cfg(steps: u64, batch: usize) -> TrainerConfig {
    TrainerConfig {
        max_steps: steps,
        batch_size: batch,
        aux_batch_size: batch,
        learning_rate: LearningRate {
            base: 3e-3,
            min: 1e-4,
            ..LearningRate::default()
        },
        ..TrainerConfig::default()
    }
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mix = mixture(6);
    let mut p = registry_compose(&small("oft"), 1).unwrap();
    let before = p.params().clone();
    let mut c = cfg(100, 4);
    c.learning_rate = LearningRate {
        base: 0.0,
        min: 0.0,
        ..LearningRate::default()
    };
    train_sft(&mut p, &mix, &c, 0, None, &mut NullSink).unwrap();
    assert_eq!(p.params(), &before);
}

#[test]
fn frozen_backbone_is_bit_identical() {
    let mix = mixture(6);
    let mut p = registry_compose(&small("oft"), 1).unwrap();
    let before = p.params().clone();
    let mut c = cfg(1000, 2);
    c.freeze_modules = "backbone".into();
    train_sft(&mut p, &mix, &c, 0, None, &mut NullSink).unwrap();
    for (a, b) in p.params().entries().iter().zip(before.entries()) {
        if a.name.starts_with("backbone.") {
            assert_eq!(a.values, b.values, "{}", a.name);
        } else {
            assert_ne!(a.values, b.values, "{}", a.name);
        }
    }
}

#[test]
fn unknown_freeze_path_is_rejected() {
    let mix = mixture(2);
    let mut p = registry_compose(&small("oft"), 1).unwrap();
    let mut c = cfg(1, 2);
    c.freeze_modules = "backbone,vision_tower".into();
    let err = train_sft(&mut p, &mix, &c, 0, None, &mut NullSink).unwrap_err();
    assert!(matches!(err, Error::Config(m) if m.contains("vision_tower")));
}

#[test]
fn freeze_prefix_respects_path_boundaries() {
    let p = registry_compose(&small("oft"), 1).unwrap();
    let c = TrainerConfig {
        freeze_modules: "backbone.patch".into(),
        ..TrainerConfig::default()
    };
    let rates = c.rates(p.params(), 0);
    for (e, r) in p.params().entries().iter().zip(rates) {
        assert_eq!(r.is_none(), e.name.starts_with("backbone.patch."), "{}", e.name);
    }
}

#[test]
fn group_rates_follow_their_own_peak() {
    let p = registry_compose(&small("oft"), 1).unwrap();
    let c = TrainerConfig {
        learning_rate: LearningRate {
            base: 1e-3,
            min: 1e-5,
            backbone: Some(1e-4),
            head: None,
        },
        ..TrainerConfig::default()
    };
    for (e, r) in p.params().entries().iter().zip(c.rates(p.params(), 0)) {
        let want = if e.name.starts_with("backbone.") { 1e-4 } else { 1e-3 };
        assert_eq!(r, Some(want));
    }
}

#[test]
fn accumulation_matches_one_large_batch() {
    let mix = mixture(6);
    let base = registry_compose(&small("oft"), 2).unwrap();
    let mut a = registry_compose(&small("oft"), 2).unwrap();
    let mut b = registry_compose(&small("oft"), 2).unwrap();
    let mut c1 = cfg(5, 8);
    c1.accumulation_steps = 1;
    let mut c2 = cfg(5, 4);
    c2.accumulation_steps = 2;
    train_sft(&mut a, &mix, &c1, 0, None, &mut NullSink).unwrap();
    train_sft(&mut b, &mix, &c2, 0, None, &mut NullSink).unwrap();
    let mut moved = 0.0f64;
    for ((x, y), z) in a.params().entries().iter().zip(b.params().entries()).zip(base.params().entries()) {
        for ((u, v), w) in x.values.iter().zip(&y.values).zip(&z.values) {
            assert!((u - v).abs() <= 1e-12, "{}: {u} vs {v}", x.name);
            moved = moved.max((u - w).abs());
        }
    }
    assert!(moved > 1e-4);
}

#[test]
fn cotraining_at_scale_zero_matches_sft() {
    let mix = mixture(6);
    let aux = caption_dataset(&reach(), 32, 3).unwrap();
    let mut a = registry_compose(&small("oft"), 2).unwrap();
    let mut b = registry_compose(&small("oft"), 2).unwrap();
    let c = cfg(30, 4);
    train_sft(&mut a, &mix, &c, 5, None, &mut NullSink).unwrap();
    let mut events = Vec::new();
    train_cotrain(&mut b, &mix, &aux, &c, 5, None, &mut events).unwrap();
    assert_eq!(a.params(), b.params());
    assert!(events.iter().all(|e| e.aux_loss.is_some()));
}

#[test]
fn recorded_total_is_action_plus_scaled_aux() {
    let mix = mixture(6);
    let aux = caption_dataset(&reach(), 32, 3).unwrap();
    let mut p = registry_compose(&small("oft"), 2).unwrap();
    let mut c = cfg(20, 4);
    c.loss_scale.vlm = 0.5;
    let mut events: Vec<StepEvent> = Vec::new();
    train_cotrain(&mut p, &mix, &aux, &c, 5, None, &mut events).unwrap();
    assert_eq!(events.len(), 20);
    for e in &events {
        let want = e.action_loss + 0.5 * e.aux_loss.unwrap();
        assert!((e.total_loss - want).abs() <= 1e-9);
        assert_eq!(e.global_batch, 4);
    }
}

#[test]
fn same_seed_same_weights() {
    let mix = mixture(4);
    let mut a = registry_compose(&small("pi"), 3).unwrap();
    let mut b = registry_compose(&small("pi"), 3).unwrap();
    let c = cfg(15, 4);
    train_sft(&mut a, &mix, &c, 1, None, &mut NullSink).unwrap();
    train_sft(&mut b, &mix, &c, 1, None, &mut NullSink).unwrap();
    assert_eq!(a.params().to_le_bytes(), b.params().to_le_bytes());
}

#[test]
fn loss_falls_on_the_toy_task() {
    let mix = mixture(20);
    let mut early = 0.0;
    let mut late = 0.0;
    for seed in 0..5 {
        let mut p = registry_compose(&small("oft"), seed).unwrap();
        let mut events: Vec<StepEvent> = Vec::new();
        train_sft(&mut p, &mix, &cfg(2000, 8), seed, None, &mut events).unwrap();
        early += events[199].action_loss;
        late += events[1999].action_loss;
    }
    assert!(late < early, "{late} vs {early}");
}

fn package(head: &str, dir: &Path) -> (Policy, RootConfig) {
    let mix = mixture(4);
    let mut rc = RootConfig::new(small(head));
    rc.trainer = cfg(6, 4);
    rc.trainer.checkpoint_every = 3;
    let mut p = registry_compose(&rc.model, rc.seed).unwrap();
    let target = CheckpointTarget {
        dir: dir.to_path_buf(),
        config: rc.clone(),
    };
    let out = train_sft(&mut p, &mix, &rc.trainer, rc.seed, Some(&target), &mut NullSink).unwrap();
    assert_eq!(out.checkpoints.iter().map(|c| c.step).collect::<Vec<_>>(), vec![3, 6]);
    (p, rc)
}

#[test]
fn checkpoint_round_trip_is_bit_exact_for_every_head() {
    for head in ["fast", "oft", "pi", "groot"] {
        let dir = tempfile::tempdir().unwrap();
        let (p, rc) = package(head, dir.path());
        let ck = load_checkpoint(&latest_checkpoint(dir.path()).unwrap()).unwrap();
        assert_eq!(ck.step, 6);
        assert_eq!(ck.config, rc);
        let obs = canonical_observation();
        for seed in 0..4 {
            let a = p.predict(&obs, seed).unwrap().normalized_actions;
            let b = ck.policy.predict(&obs, seed).unwrap().normalized_actions;
            let bits = |c: &ActionChunk| c.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b), "{head}");
        }
        assert!(ck.optimizer.is_some());
    }
}

#[test]
fn package_files_and_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rc) = package("oft", dir.path());
    let step = dir.path().join("step_000006");
    let yaml = std::fs::read_to_string(step.join(CONFIG_FILE)).unwrap();
    assert_eq!(RootConfig::from_yaml(&yaml).unwrap(), rc);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(step.join(STATS_FILE)).unwrap()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["dims", "per_dim", "sample_count"]);
    let mut dim_keys: Vec<&str> = v["per_dim"][0].as_object().unwrap().keys().map(String::as_str).collect();
    dim_keys.sort();
    assert_eq!(dim_keys, ["max", "mean", "min", "q01", "q99", "std"]);

    std::fs::remove_file(step.join(STATS_FILE)).unwrap();
    match load_checkpoint(&step) {
        Err(Error::Format { file, .. }) => assert_eq!(file, "dataset_statistics.json"),
        other => panic!("expected a format error, got {:?}", other.map(|c| c.step)),
    }
}

#[test]
fn weight_shape_mismatch_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    package("oft", dir.path());
    let step = dir.path().join("step_000006");
    let yaml = std::fs::read_to_string(step.join(CONFIG_FILE)).unwrap();
    std::fs::write(step.join(CONFIG_FILE), yaml.replace("d: 16", "d: 17")).unwrap();
    assert!(matches!(load_checkpoint(&step), Err(Error::Integrity(_))));
}

#[test]
fn jsonl_log_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let mix = mixture(3);
    let mut p = registry_compose(&small("oft"), 0).unwrap();
    let mut sink = JsonlSink::append(&path).unwrap();
    train_sft(&mut p, &mix, &cfg(7, 2), 0, None, &mut sink).unwrap();
    drop(sink);
    let ev = read_events(&path).unwrap();
    assert_eq!(ev.len(), 7);
    assert_eq!(ev[6].step, 7);
    assert!(ev.iter().all(|e| e.aux_loss.is_none() && e.wall_ms >= 0.0));
}
