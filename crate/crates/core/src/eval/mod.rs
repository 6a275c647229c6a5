//! Simulated benchmarks, the adapter pipeline between a policy and an
//! environment, and tasks × episodes success-rate aggregation.

mod adapter;
mod env;
mod oracle;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adapter::{ensemble_actions, sticky_gripper, AdapterConfig, Ensemble, GripperLatch, Sticky};
pub use env::{
    canonical_observation, Embodiment, EnvKind, EnvSpec, EnvState, StepResult, TaskPlacement, ToyEnv,
    GRIP_CLOSED, GRIP_OPEN, IMAGE_SIZE, LATTICE, VIEW,
};
pub use oracle::{
    decode_scene, native_row, oracle_chunk, oracle_delta, oracle_row, run_oracle, DecodedScene,
    PixelOracle,
};

use crate::codec::{delta_to_absolute, unnormalize, unpad_from_unified};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng;
use crate::types::{ActionChunk, ControlMode, DatasetStatistics, DimStats, Observation};

/// Anything that answers an observation with a normalized unified chunk:
/// an in-process policy, a remote server, a scripted controller.
pub trait ActionSource {
    fn query(&mut self, obs: &Observation, seed: u64) -> Result<ActionChunk>;

    /// Called at the start of every episode.
    fn reset(&mut self) -> Result<()> {
        Ok(())
    }
}

/// In-process policy.
pub struct PolicySource<'a>(pub &'a Policy);

impl ActionSource for PolicySource<'_> {
    fn query(&mut self, obs: &Observation, seed: u64) -> Result<ActionChunk> {
        Ok(self.0.predict(obs, seed)?.normalized_actions)
    }

    fn reset(&mut self) -> Result<()> {
        self.0.head().reset_cache();
        Ok(())
    }
}

/// Returns the same chunk for every query.
#[derive(Debug, Clone)]
pub struct ConstantSource(pub ActionChunk);

impl ActionSource for ConstantSource {
    fn query(&mut self, _obs: &Observation, _seed: u64) -> Result<ActionChunk> {
        Ok(self.0.clone())
    }
}

/// Statistics that make normalization the identity on `[−1, 1]`; inert
/// arm joints get zero spread.
pub fn unit_statistics(emb: Embodiment) -> DatasetStatistics {
    let unit = DimStats {
        q01: -1.0,
        q99: 1.0,
        mean: 0.0,
        std: 1.0,
        min: -1.0,
        max: 1.0,
    };
    let inert = DimStats {
        q01: 0.0,
        q99: 0.0,
        mean: 0.0,
        std: 0.0,
        min: 0.0,
        max: 0.0,
    };
    let dims = emb.native_dof();
    DatasetStatistics {
        dims,
        sample_count: 1,
        per_dim: (0..dims)
            .map(|i| if i < 2 || i == emb.gripper_dim() { unit } else { inert })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub success: bool,
    pub steps: usize,
    pub queries: usize,
    /// Commands sent to the environment.
    pub actions: Vec<Vec<f64>>,
    /// Agent position after every step.
    pub positions: Vec<[f64; 2]>,
}

fn prepare_chunk(
    raw: ActionChunk,
    env: &ToyEnv,
    obs: &Observation,
    adapter: &AdapterConfig,
    stats: Option<&DatasetStatistics>,
    convert: bool,
) -> Result<Vec<Vec<f64>>> {
    let emb = env.spec.embodiment;
    if raw.horizon < adapter.open_loop_horizon {
        return Err(Error::Config(format!(
            "open_loop_horizon {} exceeds the predicted chunk length {}",
            adapter.open_loop_horizon, raw.horizon
        )));
    }
    let mut chunk = unpad_from_unified(&raw, emb.native_dof())?;
    match (adapter.unnormalize, stats) {
        (true, Some(s)) => chunk = unnormalize(&chunk, s)?,
        (true, None) => return Err(Error::Config("unnormalize needs dataset statistics".into())),
        (false, _) => chunk.normalized = false,
    }
    if convert {
        let state = obs
            .state
            .as_ref()
            .ok_or_else(|| Error::Validation("delta conversion needs observation state".into()))?;
        chunk = delta_to_absolute(state, &chunk, &[emb.gripper_dim()])?;
    }
    Ok(chunk.rows().map(<[f64]>::to_vec).collect())
}

/// Runs one episode through the adapter pipeline: resize, query,
/// unpad + unnormalize, optional delta→absolute, then per step ensemble the
/// covering predictions and latch the gripper.
pub fn run_episode(
    source: &mut dyn ActionSource,
    env: &mut ToyEnv,
    episode_seed: u64,
    adapter: &AdapterConfig,
    stats: Option<&DatasetStatistics>,
) -> Result<EpisodeTrace> {
    adapter.validate()?;
    let emb = env.spec.embodiment;
    if adapter.unnormalize {
        let s = stats.ok_or_else(|| Error::Config("unnormalize needs dataset statistics".into()))?;
        if s.dims != emb.native_dof() || s.per_dim.len() != s.dims {
            return Err(Error::Config(format!(
                "statistics cover {} dims but {} has {}",
                s.dims,
                emb.name(),
                emb.native_dof()
            )));
        }
    }
    let convert = adapter
        .delta_to_absolute
        .unwrap_or(emb.command_mode() == ControlMode::Absolute);
    let h = adapter.open_loop_horizon;

    let mut obs = env.reset(episode_seed);
    source.reset()?;
    let mut history: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    let mut latch = match adapter.sticky_gripper {
        Sticky::Latch(m) => Some(GripperLatch::new(m)),
        Sticky::Off => None,
    };
    let mut trace = EpisodeTrace {
        success: false,
        steps: 0,
        queries: 0,
        actions: Vec::new(),
        positions: Vec::new(),
    };
    let mut t = 0;
    while !env.done {
        if t % h == 0 {
            let query_obs = match adapter.resize_to {
                Some((hh, ww)) => obs.resized(hh, ww),
                None => obs.clone(),
            };
            let seed = rng::mix(&[episode_seed, trace.queries as u64]);
            let raw = source.query(&query_obs, seed)?;
            history.push((t, prepare_chunk(raw, env, &obs, adapter, stats, convert)?));
            trace.queries += 1;
        }
        history.retain(|(q, rows)| t < q + rows.len());
        let covering: Vec<(usize, &[f64])> = history
            .iter()
            .map(|(q, rows)| (t - q, rows[t - q].as_slice()))
            .collect();
        let mut row = match adapter.ensemble {
            Ensemble::ExpWeighted(m) => ensemble_actions(&covering, m),
            Ensemble::Off => ensemble_actions(&covering, f64::INFINITY),
        };
        if let Some(l) = latch.as_mut() {
            let g = emb.gripper_dim();
            row[g] = l.apply(row[g]);
        }
        let res = env.step(&row)?;
        trace.actions.push(row);
        trace.positions.push(env.state.pos);
        obs = res.obs;
        t += 1;
    }
    trace.success = env.success;
    trace.steps = t;
    Ok(trace)
}

fn default_tasks() -> usize {
    10
}

fn default_episodes() -> usize {
    50
}

/// One benchmark in a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub env: EnvSpec,
    #[serde(default = "default_tasks")]
    pub tasks: usize,
    #[serde(default = "default_episodes")]
    pub episodes_per_task: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub tasks: usize,
    pub episodes_per_task: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub successes: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_task: Vec<TaskResult>,
    pub mean_success_pct: f64,
}

impl EvalReport {
    /// Aggregates per-task counts; the mean is total successes over total
    /// trials.
    pub fn from_tasks(protocol: Protocol, per_task: Vec<TaskResult>) -> Self {
        let succ: usize = per_task.iter().map(|t| t.successes).sum();
        let trials: usize = per_task.iter().map(|t| t.trials).sum();
        let mean_success_pct = if trials == 0 {
            0.0
        } else {
            succ as f64 * 100.0 / trials as f64
        };
        EvalReport {
            protocol,
            per_task,
            mean_success_pct,
        }
    }

    pub fn total_trials(&self) -> usize {
        self.per_task.iter().map(|t| t.trials).sum()
    }

    pub fn total_successes(&self) -> usize {
        self.per_task.iter().map(|t| t.successes).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Statistics per embodiment name.
pub type StatsTable = BTreeMap<String, DatasetStatistics>;

fn at(e: Error, ctx: &str) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        Error::Protocol(m) => Error::Protocol(format!("{ctx}: {m}")),
        Error::Prediction(m) => Error::Prediction(format!("{ctx}: {m}")),
        Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
        Error::Numerics(m) => Error::Numerics(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Runs every (entry, task, episode) of the suite. Task placements and
/// episode starts are derived from `seed`.
pub fn evaluate(
    source: &mut dyn ActionSource,
    suite: &[SuiteEntry],
    adapter: &AdapterConfig,
    stats: &StatsTable,
    seed: u64,
) -> Result<EvalReport> {
    let first = suite
        .first()
        .ok_or_else(|| Error::Config("evaluation suite is empty".into()))?;
    if suite.iter().any(|e| e.episodes_per_task != first.episodes_per_task) {
        return Err(Error::Config(
            "all suite entries must share episodes_per_task".into(),
        ));
    }
    let mut per_task = Vec::new();
    for (ei, entry) in suite.iter().enumerate() {
        let s = stats.get(entry.env.embodiment.name());
        let placements =
            TaskPlacement::enumerate(entry.env.kind, entry.tasks, rng::mix(&[seed, ei as u64]));
        for (ti, task) in placements.into_iter().enumerate() {
            let task_id = format!("{}/task{ti:02}", entry.env.label());
            let mut env = ToyEnv::new(entry.env.clone(), task)?;
            let mut successes = 0;
            for ep in 0..entry.episodes_per_task {
                let ep_seed = rng::mix(&[seed, ei as u64, ti as u64, ep as u64]);
                let tr = run_episode(source, &mut env, ep_seed, adapter, s)
                    .map_err(|e| at(e, &format!("{task_id} episode {ep}")))?;
                successes += tr.success as usize;
            }
            per_task.push(TaskResult {
                task_id,
                successes,
                trials: entry.episodes_per_task,
            });
        }
    }
    let protocol = Protocol {
        tasks: per_task.len(),
        episodes_per_task: first.episodes_per_task,
    };
    Ok(EvalReport::from_tasks(protocol, per_task))
}
