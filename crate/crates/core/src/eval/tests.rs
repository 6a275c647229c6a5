use super::*;
use crate::codec::pad_to_unified;
use proptest::prelude::*;

fn reach(emb: Embodiment) -> EnvSpec {
    EnvSpec::new(EnvKind::PointReach, emb)
}

fn pick(emb: Embodiment) -> EnvSpec {
    EnvSpec::new(EnvKind::PickPlace, emb)
}

fn env_with(spec: EnvSpec, seed: u64) -> ToyEnv {
    let task = TaskPlacement::enumerate(spec.kind, 1, seed)[0];
    ToyEnv::new(spec, task).unwrap()
}

fn table(emb: Embodiment) -> StatsTable {
    [(emb.name().to_string(), unit_statistics(emb))].into_iter().collect()
}

fn constant_chunk(emb: Embodiment, row: &[f64], k: usize) -> ActionChunk {
    let rows = vec![row.to_vec(); k];
    let mut c = ActionChunk::from_rows(&rows).unwrap();
    c.normalized = true;
    pad_to_unified(&c, &emb.tag()).unwrap()
}

#[test]
fn zero_actions_never_succeed() {
    for seed in 0..20 {
        let mut env = env_with(reach(Embodiment::Point), seed);
        env.reset(seed);
        while !env.done {
            env.step(&[0.0, 0.0, 1.0]).unwrap();
        }
        assert!(!env.success);
        assert_eq!(env.t, env.spec.max_steps);
    }
}

#[test]
fn step_after_done_is_a_protocol_error() {
    let mut env = env_with(reach(Embodiment::Point), 0);
    env.reset(0);
    while !env.done {
        env.step(&[0.0, 0.0, 1.0]).unwrap();
    }
    assert!(matches!(env.step(&[0.0, 0.0, 1.0]), Err(Error::Protocol(_))));
}

#[test]
fn success_ball_is_closed() {
    let spec = reach(Embodiment::Point);
    let eps = spec.success_epsilon;
    let mut env = ToyEnv::new(
        spec,
        TaskPlacement {
            goal: [2.0, 2.0],
            object: None,
        },
    )
    .unwrap();
    let s = env.spec.step_max;
    env.reset_to([2.0 - eps - s, 2.0]);
    let r = env.step(&[s, 0.0, 1.0]).unwrap();
    assert_eq!(env.state.pos, [2.0 - eps, 2.0]);
    assert!(r.success && r.done);
}

#[test]
fn actions_are_clipped_per_axis() {
    let mut env = env_with(reach(Embodiment::Point), 3);
    let s = env.spec.step_max;
    env.reset_to([0.0, 0.0]);
    env.step(&[5.0, s / 2.0, 1.0]).unwrap();
    assert_eq!(env.state.pos, [s, s / 2.0]);
}

#[test]
fn state_oracle_solves_every_reach_seed() {
    for emb in [Embodiment::Point, Embodiment::Arm7] {
        for seed in 0..200 {
            let mut env = env_with(reach(emb), seed);
            env.reset(seed);
            assert!(run_oracle(&mut env).unwrap(), "{} seed {seed}", emb.name());
        }
    }
}

#[test]
fn state_oracle_solves_pick_place() {
    for emb in [Embodiment::Point, Embodiment::Arm7] {
        for seed in 0..200 {
            let mut env = env_with(pick(emb), seed);
            env.reset(seed);
            assert!(run_oracle(&mut env).unwrap(), "{} seed {seed}", emb.name());
        }
    }
}

#[test]
fn pick_place_requires_release() {
    let mut env = ToyEnv::new(
        pick(Embodiment::Point),
        TaskPlacement {
            goal: [0.0, 0.25],
            object: Some([0.0, 0.0]),
        },
    )
    .unwrap();
    env.reset_to([0.0, 0.0]);
    env.step(&[0.0, 0.0, -1.0]).unwrap();
    assert!(env.state.holding);
    let r = env.step(&[0.0, 0.25, -1.0]).unwrap();
    assert_eq!(env.state.object, Some([0.0, 0.25]));
    assert!(!r.success);
    let r = env.step(&[0.0, 0.0, 1.0]).unwrap();
    assert!(r.success);
}

#[test]
fn renders_blobs_at_grid_positions() {
    let obs = canonical_observation();
    let img = &obs.views[VIEW];
    assert_eq!((img.height, img.width), (IMAGE_SIZE, IMAGE_SIZE));
    assert_eq!(img.pixel(8, 8), [0, 0, 255]);
    assert_eq!(img.pixel(56, 56), [255, 0, 0]);
    assert_eq!(img.pixel(32, 32), [0, 0, 0]);
    let scene = decode_scene(&obs).unwrap();
    assert_eq!(scene.agent, [0.0, 0.0]);
    assert_eq!(scene.goal, [3.0, 3.0]);
    assert!(scene.gripper_open && scene.object.is_none());
}

#[test]
fn ensemble_two_predictions() {
    let a = [0.0];
    let b = [1.0];
    let out = ensemble_actions(&[(0, &a[..]), (1, &b[..])], 0.1);
    let want = (-0.1f64).exp() / (1.0 + (-0.1f64).exp());
    assert!((out[0] - want).abs() < 1e-12);
    assert!((out[0] - 0.4750).abs() < 5e-5);
}

#[test]
fn ensemble_limits() {
    let a = [0.3, -0.2];
    let b = [0.9, 0.4];
    assert_eq!(ensemble_actions(&[(0, &a[..])], 0.1), a.to_vec());
    assert_eq!(ensemble_actions(&[(2, &b[..]), (0, &a[..])], f64::INFINITY), a.to_vec());
    let same = ensemble_actions(&[(0, &a[..]), (3, &a[..]), (5, &a[..])], 0.7);
    for (x, y) in same.iter().zip(a) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn sticky_examples() {
    let alt: Vec<f64> = (0..9).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    assert_eq!(sticky_gripper(&alt, 1), alt);
    assert_eq!(sticky_gripper(&alt, 2), vec![1.0; 9]);
    assert_eq!(
        sticky_gripper(&[1.0, 1.0, -1.0, -1.0, -1.0, 1.0], 3),
        vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0]
    );
}

proptest! {
    #[test]
    fn ensemble_is_a_convex_combination(
        rows in prop::collection::vec((0usize..8, -3.0f64..3.0), 1..8),
        m in 0.01f64..5.0,
    ) {
        let data: Vec<[f64; 1]> = rows.iter().map(|(_, v)| [*v]).collect();
        let covering: Vec<(usize, &[f64])> =
            rows.iter().zip(&data).map(|((a, _), d)| (*a, &d[..])).collect();
        let out = ensemble_actions(&covering, m)[0];
        let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out >= lo - 1e-12 && out <= hi + 1e-12);
    }

    #[test]
    fn sticky_flips_only_after_m_opposite(
        raw in prop::collection::vec(prop::bool::ANY, 1..40),
        m in 1u32..5,
    ) {
        let raw: Vec<f64> = raw.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect();
        let out = sticky_gripper(&raw, m);
        prop_assert_eq!(out[0], raw[0]);
        for i in 1..out.len() {
            if out[i] != out[i - 1] {
                let m = m as usize;
                prop_assert!(i + 1 >= m);
                prop_assert!(raw[i + 1 - m..=i].iter().all(|&r| r == out[i]));
            }
        }
    }
}

#[test]
fn pixel_oracle_through_full_adapter() {
    for spec in [
        reach(Embodiment::Point),
        reach(Embodiment::Arm7),
        pick(Embodiment::Point),
        pick(Embodiment::Arm7),
    ] {
        let emb = spec.embodiment;
        let mut oracle = PixelOracle::new(spec.clone(), 8, unit_statistics(emb));
        for seed in 0..30 {
            let mut env = env_with(spec.clone(), seed);
            let tr = run_episode(
                &mut oracle,
                &mut env,
                seed,
                &AdapterConfig::default(),
                Some(&unit_statistics(emb)),
            )
            .unwrap();
            assert!(tr.success, "{} seed {seed}", spec.label());
        }
    }
}

#[test]
fn pixel_oracle_survives_resize_and_short_horizon() {
    let spec = pick(Embodiment::Point);
    let mut oracle = PixelOracle::new(spec.clone(), 8, unit_statistics(Embodiment::Point));
    let adapter = AdapterConfig {
        resize_to: Some((48, 48)),
        open_loop_horizon: 2,
        ..AdapterConfig::default()
    };
    for seed in 0..20 {
        let mut env = env_with(spec.clone(), seed);
        let tr = run_episode(
            &mut oracle,
            &mut env,
            seed,
            &adapter,
            Some(&unit_statistics(Embodiment::Point)),
        )
        .unwrap();
        assert!(tr.success, "seed {seed}");
    }
}

#[test]
fn open_loop_horizon_is_irrelevant_for_time_consistent_predictions() {
    for emb in [Embodiment::Point, Embodiment::Arm7] {
        let mut row = vec![0.0; emb.native_dof()];
        // Step sizes that never land exactly on the success radius.
        row[0] = 0.0713;
        row[1] = 0.0391;
        row[emb.gripper_dim()] = 1.0;
        let mut source = ConstantSource(constant_chunk(emb, &row, 8));
        let stats = unit_statistics(emb);
        let run = |h: usize, ens: Ensemble, source: &mut ConstantSource| {
            let mut env = ToyEnv::new(
                reach(emb),
                TaskPlacement {
                    goal: [3.0, 3.0],
                    object: None,
                },
            )
            .unwrap();
            let adapter = AdapterConfig {
                open_loop_horizon: h,
                ensemble: ens,
                ..AdapterConfig::default()
            };
            run_episode(source, &mut env, 5, &adapter, Some(&stats)).unwrap()
        };
        let full = run(8, Ensemble::Off, &mut source);
        for ens in [Ensemble::Off, Ensemble::ExpWeighted(0.1)] {
            let single = run(1, ens, &mut source);
            assert_eq!(single.steps, full.steps);
            assert_eq!(single.queries, full.steps);
            for (a, b) in single.positions.iter().zip(&full.positions) {
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn stats_mismatch_fails_before_any_step() {
    let mut env = env_with(reach(Embodiment::Arm7), 0);
    let mut source = ConstantSource(constant_chunk(Embodiment::Point, &[0.0, 0.0, 1.0], 8));
    let err = run_episode(
        &mut source,
        &mut env,
        0,
        &AdapterConfig::default(),
        Some(&unit_statistics(Embodiment::Point)),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(env.t, 0);
}

#[test]
fn horizon_longer_than_chunk_is_rejected() {
    let mut env = env_with(reach(Embodiment::Point), 0);
    let mut source = ConstantSource(constant_chunk(Embodiment::Point, &[0.0, 0.0, 1.0], 4));
    let err = run_episode(
        &mut source,
        &mut env,
        0,
        &AdapterConfig::default(),
        Some(&unit_statistics(Embodiment::Point)),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn disabled_stages_pass_values_through() {
    let row = [0.5, -0.25, 0.3];
    let mut source = ConstantSource(constant_chunk(Embodiment::Point, &row, 8));
    let mut env = ToyEnv::new(
        reach(Embodiment::Point),
        TaskPlacement {
            goal: [3.0, 3.0],
            object: None,
        },
    )
    .unwrap();
    let mut adapter = AdapterConfig::passthrough(8);
    adapter.unnormalize = false;
    let tr = run_episode(&mut source, &mut env, 0, &adapter, None).unwrap();
    assert!(tr.actions.iter().all(|a| a == &row.to_vec()));

    // the latch alone only rewrites the gripper value
    adapter.sticky_gripper = Sticky::Latch(2);
    let tr = run_episode(&mut source, &mut env, 0, &adapter, None).unwrap();
    assert!(tr.actions.iter().all(|a| a == &vec![0.5, -0.25, 1.0]));
}

#[test]
fn protocol_arithmetic() {
    let spec = reach(Embodiment::Point);
    let mut oracle = PixelOracle::new(spec.clone(), 8, unit_statistics(Embodiment::Point));
    let suite = [SuiteEntry {
        env: spec,
        tasks: 10,
        episodes_per_task: 50,
    }];
    let rep = evaluate(
        &mut oracle,
        &suite,
        &AdapterConfig::default(),
        &table(Embodiment::Point),
        7,
    )
    .unwrap();
    assert_eq!(rep.total_trials(), 500);
    assert_eq!(rep.protocol.tasks * rep.protocol.episodes_per_task, 500);
    assert_eq!(rep.per_task[3].task_id, "point_reach/point/task03");
    assert_eq!(rep.mean_success_pct, 100.0);
    let again = evaluate(
        &mut oracle,
        &suite,
        &AdapterConfig::default(),
        &table(Embodiment::Point),
        7,
    )
    .unwrap();
    assert_eq!(rep.to_json(), again.to_json());
    let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(v["protocol"]["episodes_per_task"], 50);
    assert!(v["per_task"][0]["successes"].is_u64());
}

#[test]
fn mean_is_total_successes_over_trials() {
    let per_task = vec![
        TaskResult {
            task_id: "a".into(),
            successes: 3,
            trials: 4,
        },
        TaskResult {
            task_id: "b".into(),
            successes: 0,
            trials: 4,
        },
    ];
    let r = EvalReport::from_tasks(
        Protocol {
            tasks: 2,
            episodes_per_task: 4,
        },
        per_task,
    );
    assert_eq!(r.mean_success_pct, 37.5);
}

#[test]
fn oracle_ceiling_under_default_adapter() {
    for emb in [Embodiment::Point, Embodiment::Arm7] {
        let mut stats = StatsTable::new();
        stats.insert(emb.name().into(), unit_statistics(emb));
        for (spec, floor) in [(reach(emb), 100.0), (pick(emb), 95.0)] {
            let mut oracle = PixelOracle::new(spec.clone(), 8, unit_statistics(emb));
            let suite = [SuiteEntry {
                env: spec.clone(),
                tasks: 10,
                episodes_per_task: 10,
            }];
            let rep = evaluate(&mut oracle, &suite, &AdapterConfig::default(), &stats, 1).unwrap();
            assert!(
                rep.mean_success_pct >= floor,
                "{} scored {}",
                spec.label(),
                rep.mean_success_pct
            );
        }
    }
}

#[test]
fn empty_suite_and_uneven_episodes_are_rejected() {
    let mut source = ConstantSource(constant_chunk(Embodiment::Point, &[0.0, 0.0, 1.0], 8));
    let stats = table(Embodiment::Point);
    assert!(evaluate(&mut source, &[], &AdapterConfig::default(), &stats, 0).is_err());
    let e = |n| SuiteEntry {
        env: reach(Embodiment::Point),
        tasks: 1,
        episodes_per_task: n,
    };
    assert!(matches!(
        evaluate(&mut source, &[e(2), e(3)], &AdapterConfig::default(), &stats, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn adapter_yaml_shape() {
    let a: AdapterConfig = serde_yaml::from_str(
        "open_loop_horizon: 4\nensemble: !exp_weighted 0.5\nsticky_gripper: off\nresize_to: [32, 32]\n",
    )
    .unwrap();
    assert_eq!(a.open_loop_horizon, 4);
    assert_eq!(a.ensemble, Ensemble::ExpWeighted(0.5));
    assert_eq!(a.sticky_gripper, Sticky::Off);
    assert!(serde_yaml::from_str::<AdapterConfig>("bogus: 1\n").is_err());
    let bad = AdapterConfig {
        sticky_gripper: Sticky::Latch(0),
        ..AdapterConfig::default()
    };
    assert!(bad.validate().is_err());
}
