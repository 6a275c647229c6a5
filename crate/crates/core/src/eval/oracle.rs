//! Scripted controllers. The state oracle reads the simulator directly; the
//! pixel oracle recovers the scene from the rendered image and plans chunks
//! the same way a learned policy would be queried.

use super::env::{
    Embodiment, EnvKind, EnvSpec, EnvState, TaskPlacement, ToyEnv, GRIP_CLOSED, GRIP_OPEN, LATTICE,
    VIEW,
};
use super::ActionSource;
use crate::codec::{normalize, pad_to_unified};
use crate::error::{Error, Result};
use crate::types::{ActionChunk, DatasetStatistics, Observation};

const ARRIVE: f64 = 1e-9;
/// Close enough to switch phase; tolerates pixel-decoding error.
const AT: f64 = 0.125;

/// Step toward `to` whose larger component is at most `step`, so the
/// recorded delta is exactly the executed motion.
fn straight_line(from: [f64; 2], to: [f64; 2], step: f64) -> [f64; 2] {
    let d = [to[0] - from[0], to[1] - from[1]];
    let m = d[0].abs().max(d[1].abs());
    if m <= ARRIVE {
        return [0.0, 0.0];
    }
    let s = (step / m).min(1.0);
    [d[0] * s, d[1] * s]
}

fn near(a: [f64; 2], b: [f64; 2], eps: f64) -> bool {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= eps
}

/// Delta `(dx, dy, grip)` chosen by the scripted controller.
pub fn oracle_delta(spec: &EnvSpec, state: &EnvState, goal: [f64; 2]) -> (f64, f64, f64) {
    let step = spec.step_max;
    let (mv, grip) = match (spec.kind, state.object) {
        (EnvKind::PickPlace, Some(obj)) => {
            if state.holding {
                if near(state.pos, goal, AT) {
                    ([0.0, 0.0], GRIP_OPEN)
                } else {
                    (straight_line(state.pos, goal, step), GRIP_CLOSED)
                }
            } else if near(obj, goal, AT) {
                ([0.0, 0.0], GRIP_OPEN)
            } else if near(state.pos, obj, AT) {
                ([0.0, 0.0], GRIP_CLOSED)
            } else {
                (straight_line(state.pos, obj, step), GRIP_OPEN)
            }
        }
        _ => (straight_line(state.pos, goal, step), GRIP_OPEN),
    };
    (mv[0], mv[1], grip)
}

/// Native recorded (delta-convention) action row.
pub fn native_row(emb: Embodiment, delta: (f64, f64, f64)) -> Vec<f64> {
    let mut row = vec![0.0; emb.native_dof()];
    row[0] = delta.0;
    row[1] = delta.1;
    row[emb.gripper_dim()] = delta.2;
    row
}

/// Next recorded row for the env's current state.
pub fn oracle_row(env: &ToyEnv) -> Vec<f64> {
    native_row(
        env.spec.embodiment,
        oracle_delta(&env.spec, &env.state, env.task.goal),
    )
}

/// Rolls the oracle forward `k` steps on a copy of `env`; once the copy
/// terminates the last row is repeated. Rows use the delta convention.
pub fn oracle_chunk(env: &ToyEnv, k: usize) -> Result<Vec<Vec<f64>>> {
    let mut sim = env.clone();
    sim.done = false;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        if sim.done {
            let last = rows.last().cloned().unwrap_or_else(|| oracle_row(&sim));
            rows.push(last);
            continue;
        }
        let row = oracle_row(&sim);
        let cmd = sim.command_from_delta(&row);
        sim.step(&cmd)?;
        // the copy must not stop early on the step budget
        sim.done = sim.success;
        rows.push(row);
    }
    Ok(rows)
}

/// Drives `env` with the oracle until done. Returns success.
pub fn run_oracle(env: &mut ToyEnv) -> Result<bool> {
    while !env.done {
        let cmd = env.command_from_delta(&oracle_row(env));
        env.step(&cmd)?;
    }
    Ok(env.success)
}

/// Scene recovered from a rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedScene {
    pub goal: [f64; 2],
    pub object: Option<[f64; 2]>,
    pub agent: [f64; 2],
    pub gripper_open: bool,
}

/// Blob centroids per colour channel. Works on resized frames too.
pub fn decode_scene(obs: &Observation) -> Result<DecodedScene> {
    let img = obs
        .views
        .get(VIEW)
        .or_else(|| obs.views.values().next())
        .ok_or_else(|| Error::Validation("observation has no views".into()))?;
    let mut acc = [[0.0f64; 3]; 3];
    let mut agent_max = 0u8;
    for r in 0..img.height {
        for c in 0..img.width {
            let px = img.pixel(r, c);
            for ch in 0..3 {
                if px[ch] > 0 {
                    acc[ch][0] += r as f64;
                    acc[ch][1] += c as f64;
                    acc[ch][2] += 1.0;
                }
            }
            agent_max = agent_max.max(px[2]);
        }
    }
    let to_lattice = |a: [f64; 3], h: usize, w: usize| -> Option<[f64; 2]> {
        (a[2] > 0.0).then(|| {
            [
                a[0] / a[2] * LATTICE as f64 / h as f64 - 0.5,
                a[1] / a[2] * LATTICE as f64 / w as f64 - 0.5,
            ]
        })
    };
    let missing = |what: &str| Error::Validation(format!("no {what} blob in the frame"));
    Ok(DecodedScene {
        goal: to_lattice(acc[0], img.height, img.width).ok_or_else(|| missing("goal"))?,
        object: to_lattice(acc[1], img.height, img.width),
        agent: to_lattice(acc[2], img.height, img.width).ok_or_else(|| missing("agent"))?,
        gripper_open: agent_max > 192,
    })
}

/// Oracle that only sees pixels: decodes the scene, replans with the
/// scripted controller and answers with normalized unified chunks.
#[derive(Debug, Clone)]
pub struct PixelOracle {
    pub spec: EnvSpec,
    pub horizon: usize,
    pub stats: DatasetStatistics,
}

impl PixelOracle {
    pub fn new(spec: EnvSpec, horizon: usize, stats: DatasetStatistics) -> Self {
        PixelOracle { spec, horizon, stats }
    }

    fn env_for(&self, obs: &Observation) -> Result<ToyEnv> {
        let scene = decode_scene(obs)?;
        let kind = if scene.object.is_some() {
            EnvKind::PickPlace
        } else {
            EnvKind::PointReach
        };
        let mut spec = self.spec.clone();
        spec.kind = kind;
        let mut env = ToyEnv::new(
            spec,
            TaskPlacement {
                goal: scene.goal,
                object: scene.object,
            },
        )?;
        env.reset_to(scene.agent);
        let holding = match scene.object {
            Some(o) => !scene.gripper_open && near(o, scene.agent, 0.2),
            None => false,
        };
        env.state.gripper_open = scene.gripper_open;
        env.state.holding = holding;
        if holding {
            env.state.object = Some(scene.agent);
        }
        Ok(env)
    }
}

impl ActionSource for PixelOracle {
    fn query(&mut self, obs: &Observation, _seed: u64) -> Result<ActionChunk> {
        let env = self.env_for(obs)?;
        let rows = oracle_chunk(&env, self.horizon)?;
        let native = ActionChunk::from_rows(&rows)?;
        pad_to_unified(&normalize(&native, &self.stats)?, &self.spec.embodiment.tag())
    }
}
