use super::*;
use crate::error::Error;
use crate::eval::{Embodiment, EnvKind, EnvSpec};
use crate::types::validate_example;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn reach() -> EnvSpec {
    EnvSpec::new(EnvKind::PointReach, Embodiment::Point)
}

#[test]
fn store_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = EnvSpec::new(EnvKind::PickPlace, Embodiment::Arm7);
    let eps = oracle_episodes(&spec, 3, 11).unwrap();
    let store = write_store(dir.path(), "pp", &spec.embodiment.tag(), 10.0, &eps).unwrap();
    assert_eq!(store.episode_count(), 3);
    let again = open_store(dir.path()).unwrap();
    for (i, ep) in eps.iter().enumerate() {
        assert_eq!(&again.read_episode(i).unwrap(), ep);
    }
    let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["name", "robot_type", "native_dof", "control_mode", "fps", "episode_count"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn episode_files_are_msgpack_maps() {
    let dir = tempfile::tempdir().unwrap();
    generate_store(dir.path(), "r", &reach(), 1, 0).unwrap();
    let bytes = std::fs::read(dir.path().join("episodes/ep_000000.bin")).unwrap();
    let v: rmpv::Value = rmpv::decode::read_value(&mut &bytes[..]).unwrap();
    let frames = v
        .as_map()
        .unwrap()
        .iter()
        .find(|(k, _)| k.as_str() == Some("frames"))
        .unwrap()
        .1
        .as_array()
        .unwrap();
    let keys: Vec<&str> = frames[0]
        .as_map()
        .unwrap()
        .iter()
        .map(|(k, _)| k.as_str().unwrap())
        .collect();
    assert_eq!(keys, ["views", "instruction", "state", "action"]);
    let view = &frames[0].as_map().unwrap()[0].1.as_map().unwrap()[0].1;
    let rgb = view.as_map().unwrap().iter().find(|(k, _)| k.as_str() == Some("rgb")).unwrap();
    assert!(rgb.1.is_bin());
}

#[test]
fn count_mismatch_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    generate_store(dir.path(), "r", &reach(), 5, 0).unwrap();
    std::fs::remove_file(dir.path().join("episodes/ep_000004.bin")).unwrap();
    assert!(matches!(open_store(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn missing_or_corrupt_manifest_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(open_store(dir.path()), Err(Error::Format { .. })));
    std::fs::write(dir.path().join(MANIFEST), "{ nope").unwrap();
    assert!(matches!(open_store(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn store_statistics_match_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let store = generate_store(dir.path(), "r", &reach(), 4, 2).unwrap();
    let s = store_statistics(&store).unwrap();
    assert_eq!(s.dims, 3);
    assert_eq!(s, store.load().unwrap().stats);
}

#[test]
fn recorded_deltas_replay_to_the_goal() {
    let spec = reach();
    for seed in 0..50 {
        let ep = oracle_episode(&spec, seed).unwrap();
        let first = &ep.frames[0].obs;
        let goal = crate::eval::decode_scene(first).unwrap().goal;
        let state = first.state.as_ref().unwrap();
        let mut pos = [state[0], state[1]];
        let gap = |p: [f64; 2]| ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)).sqrt();
        for (i, f) in ep.frames.iter().enumerate() {
            assert!(f.action[0].abs().max(f.action[1].abs()) <= spec.step_max + 1e-12);
            assert!(gap(pos) > spec.success_epsilon, "seed {seed} frame {i}");
            pos = [pos[0] + f.action[0], pos[1] + f.action[1]];
        }
        assert!(gap(pos) <= spec.success_epsilon + 1e-9, "seed {seed}");
    }
}

fn two_sources() -> Mixture {
    let a = oracle_dataset(&reach(), 8, 1).unwrap();
    let b = oracle_dataset(&EnvSpec::new(EnvKind::PointReach, Embodiment::Arm7), 8, 2).unwrap();
    let spec = MixtureSpec {
        entries: vec![
            MixtureEntry {
                name: a.name.clone(),
                weight: 0.75,
                robot_type: "point".into(),
            },
            MixtureEntry {
                name: b.name.clone(),
                weight: 0.25,
                robot_type: "arm7".into(),
            },
        ],
        seed: 42,
    };
    Mixture::new(spec, vec![a, b]).unwrap()
}

#[test]
fn mixture_frequencies_match_weights() {
    let mix = two_sources();
    let n = 100_000u64;
    let mut counts = [0u64; 2];
    for i in 0..n {
        counts[mix.choose(i / 64, i % 64)] += 1;
    }
    let freq = counts[0] as f64 / n as f64;
    assert!((freq - 0.75).abs() <= 0.01, "{freq}");
    let expect = [0.75 * n as f64, 0.25 * n as f64];
    let chi2: f64 = counts
        .iter()
        .zip(expect)
        .map(|(&o, e)| (o as f64 - e).powi(2) / e)
        .sum();
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} p {p}");
}

#[test]
fn batches_are_pure_functions_of_step() {
    let mix = two_sources();
    let a = mix.sample_batch(16, 8, 7).unwrap();
    let b = mix.sample_batch(16, 8, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, mix.sample_batch(16, 8, 8).unwrap());
    for s in &a {
        assert!(validate_example(&s.obs, Some(&s.actions)).is_empty());
        assert_eq!(s.actions.dims, 32);
        assert_eq!(s.actions.live_dims(), s.tag.native_dof);
    }
}

#[test]
fn short_tails_repeat_the_last_action() {
    let d = oracle_dataset(&reach(), 1, 3).unwrap();
    let ep = &d.episodes[0];
    let c = d.chunk_at(0, ep.len() - 1, 5).unwrap();
    for r in c.rows() {
        assert_eq!(r, &ep.frames.last().unwrap().action[..]);
    }
}

#[test]
fn zero_weights_and_unknown_names_are_spec_errors() {
    let d = oracle_dataset(&reach(), 2, 0).unwrap();
    let mut spec = MixtureSpec::single(&d.name, "point", 0);
    spec.entries[0].weight = 0.0;
    assert!(matches!(Mixture::new(spec, vec![d.clone()]), Err(Error::Spec(_))));
    let spec = MixtureSpec::single("nope", "point", 0);
    assert!(matches!(Mixture::new(spec, vec![d.clone()]), Err(Error::Spec(_))));
    let spec = MixtureSpec::single(&d.name, "arm7", 0);
    assert!(matches!(Mixture::new(spec, vec![d]), Err(Error::Spec(_))));
}

#[test]
fn single_dataset_takes_every_draw() {
    let d = oracle_dataset(&reach(), 2, 0).unwrap();
    let mix = Mixture::new(MixtureSpec::single(&d.name, "point", 5), vec![d]).unwrap();
    assert!(mix.sample_batch(50, 4, 0).unwrap().iter().all(|s| s.dataset == 0));
}

#[test]
fn mixture_yaml_is_a_list_of_tuples() {
    let spec: MixtureSpec =
        serde_yaml::from_str("entries:\n  - [a, 0.75, point]\n  - [b, 0.25, arm7]\nseed: 3\n").unwrap();
    assert_eq!(spec.entries[1].robot_type, "arm7");
    assert_eq!(spec.probabilities().unwrap(), vec![0.75, 0.25]);
}

#[test]
fn captions_describe_the_scene() {
    let obs = caption_example(&reach(), 9).unwrap();
    assert!(obs.instruction.starts_with("goalrow"));
    assert!(obs.instruction.contains(" agentrow"));
}
