use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::{oracle_row, EnvSpec, TaskPlacement, ToyEnv, LATTICE};
use crate::rng;
use crate::types::Observation;

use super::store::{write_store, Episode, EpisodeStore, Frame, LoadedDataset};

/// Half-width of the start jitter, in lattice units.
pub const START_JITTER: f64 = 0.5;

/// Oracle rollout from a random placement. The start is jittered off the
/// lattice so recorded states also cover the near-miss positions a learned
/// policy drifts into. Episodes end at the step that succeeds; chunk tails
/// past the end repeat the final action.
pub fn oracle_episode(spec: &EnvSpec, seed: u64) -> Result<Episode> {
    let mut r = rng::keyed(&[seed, 0xDA7A]);
    let task = TaskPlacement::random(spec.kind, &mut r);
    let mut env = ToyEnv::new(spec.clone(), task)?;
    env.reset(rng::mix(&[seed, 1]));
    let hi = (LATTICE - 1) as f64;
    let mut start = env.state.pos;
    for v in start.iter_mut() {
        *v = (*v + r.gen_range(-START_JITTER..=START_JITTER)).clamp(0.0, hi);
    }
    let mut obs = env.reset_to(start);
    let mut frames = Vec::new();
    while !env.done {
        let row = oracle_row(&env);
        let cmd = env.command_from_delta(&row);
        let next = env.step(&cmd)?.obs;
        frames.push(Frame {
            obs: std::mem::replace(&mut obs, next),
            action: row,
        });
    }
    if !env.success {
        return Err(Error::Validation(format!(
            "oracle failed on {} seed {seed}",
            spec.label()
        )));
    }
    Ok(Episode { frames })
}

pub fn oracle_episodes(spec: &EnvSpec, n: usize, seed: u64) -> Result<Vec<Episode>> {
    (0..n as u64)
        .map(|i| oracle_episode(spec, rng::mix(&[seed, i])))
        .collect()
}

/// In-memory oracle dataset named after the env.
pub fn oracle_dataset(spec: &EnvSpec, n: usize, seed: u64) -> Result<LoadedDataset> {
    LoadedDataset::from_episodes(
        &spec.label(),
        spec.embodiment.tag(),
        oracle_episodes(spec, n, seed)?,
    )
}

pub fn generate_store(root: &Path, name: &str, spec: &EnvSpec, n: usize, seed: u64) -> Result<EpisodeStore> {
    let eps = oracle_episodes(spec, n, seed)?;
    write_store(root, name, &spec.embodiment.tag(), 10.0, &eps)
}

const NUMBERS: [&str; 4] = ["zero", "one", "two", "three"];

/// Words bind object, axis and value (`goalrow2`) so each one is
/// predictable from the image alone; a bag of plain words would not be.
fn place_words(what: &str, p: [f64; 2]) -> String {
    format!(
        "{what}row{} {what}col{}",
        NUMBERS[p[0] as usize], NUMBERS[p[1] as usize]
    )
}

/// Scene with a caption describing where the blobs are. This is the
/// auxiliary vision-language data: the caption is the target of the
/// language pathway.
pub fn caption_example(spec: &EnvSpec, seed: u64) -> Result<Observation> {
    let mut r = rng::keyed(&[seed, 0xCA9]);
    let task = TaskPlacement::random(spec.kind, &mut r);
    let mut env = ToyEnv::new(spec.clone(), task)?;
    let n = LATTICE * LATTICE;
    let a = r.gen_range(0..n);
    let agent = [(a / LATTICE) as f64, (a % LATTICE) as f64];
    let mut obs = env.reset_to(agent);
    let mut caption = vec![place_words("goal", task.goal), place_words("agent", agent)];
    if let Some(o) = task.object {
        caption.push(place_words("block", o));
    }
    obs.instruction = caption.join(" ");
    Ok(obs)
}

pub fn caption_dataset(spec: &EnvSpec, n: usize, seed: u64) -> Result<Vec<Observation>> {
    (0..n as u64)
        .map(|i| caption_example(spec, rng::mix(&[seed, i])))
        .collect()
}
