use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{normalize, pad_to_unified};
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{ActionChunk, EmbodimentTag, Observation};

use super::store::LoadedDataset;

/// `(dataset name, sampling weight, robot type)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(String, f64, String)", into = "(String, f64, String)")]
pub struct MixtureEntry {
    pub name: String,
    pub weight: f64,
    pub robot_type: String,
}

impl From<(String, f64, String)> for MixtureEntry {
    fn from((name, weight, robot_type): (String, f64, String)) -> Self {
        MixtureEntry {
            name,
            weight,
            robot_type,
        }
    }
}

impl From<MixtureEntry> for (String, f64, String) {
    fn from(e: MixtureEntry) -> Self {
        (e.name, e.weight, e.robot_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
    #[serde(default)]
    pub seed: u64,
}

impl MixtureSpec {
    pub fn single(name: &str, robot_type: &str, seed: u64) -> Self {
        MixtureSpec {
            entries: vec![MixtureEntry {
                name: name.into(),
                weight: 1.0,
                robot_type: robot_type.into(),
            }],
            seed,
        }
    }

    /// Normalized weights.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::Spec("mixture has no entries".into()));
        }
        if let Some(e) = self.entries.iter().find(|e| !(e.weight >= 0.0) || !e.weight.is_finite()) {
            return Err(Error::Spec(format!("weight of `{}` is {}", e.name, e.weight)));
        }
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        if total <= 0.0 {
            return Err(Error::Spec("all mixture weights are zero".into()));
        }
        Ok(self.entries.iter().map(|e| e.weight / total).collect())
    }
}

/// One draw: observation, padded normalized chunk and its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub dataset: usize,
    pub episode: usize,
    pub start: usize,
    pub obs: Observation,
    pub actions: ActionChunk,
    pub tag: EmbodimentTag,
    /// Next frame's observation (the last frame repeats itself).
    pub future: Observation,
}

/// Weighted sampler over in-memory datasets. Every draw is keyed by
/// `(seed, step, draw)` so batches do not depend on call order.
#[derive(Debug, Clone)]
pub struct Mixture {
    spec: MixtureSpec,
    cumulative: Vec<f64>,
    last_positive: usize,
    datasets: Vec<LoadedDataset>,
}

impl Mixture {
    /// Datasets are matched to entries by name; the robot type must agree.
    pub fn new(spec: MixtureSpec, mut pool: Vec<LoadedDataset>) -> Result<Self> {
        let probs = spec.probabilities()?;
        let mut datasets = Vec::with_capacity(spec.entries.len());
        for e in &spec.entries {
            let i = pool
                .iter()
                .position(|d| d.name == e.name)
                .ok_or_else(|| Error::Spec(format!("no dataset named `{}`", e.name)))?;
            let d = pool.swap_remove(i);
            if d.tag.name != e.robot_type {
                return Err(Error::Spec(format!(
                    "dataset `{}` holds `{}` episodes, mixture says `{}`",
                    e.name, d.tag.name, e.robot_type
                )));
            }
            if d.episodes.is_empty() {
                return Err(Error::EmptyDataset);
            }
            datasets.push(d);
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = probs.iter().rposition(|&p| p > 0.0).expect("some weight is positive");
        Ok(Mixture {
            spec,
            cumulative,
            last_positive,
            datasets,
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn datasets(&self) -> &[LoadedDataset] {
        &self.datasets
    }

    fn pick(&self, u: f64) -> usize {
        // zero-weight entries have an empty interval and are never chosen
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.last_positive)
    }

    /// Dataset index of draw `draw` at `step`.
    pub fn choose(&self, step: u64, draw: u64) -> usize {
        let u: f64 = rng::keyed(&[self.spec.seed, step, draw]).gen();
        self.pick(u)
    }

    pub fn draw(&self, step: u64, draw: u64, k: usize) -> Result<MixtureSample> {
        let mut r = rng::keyed(&[self.spec.seed, step, draw]);
        let u: f64 = r.gen();
        let di = self.pick(u);
        let d = &self.datasets[di];
        let episode = r.gen_range(0..d.episodes.len());
        let ep = &d.episodes[episode];
        let start = r.gen_range(0..ep.len());
        let native = d.chunk_at(episode, start, k)?;
        let actions = pad_to_unified(&normalize(&native, &d.stats)?, &d.tag)?;
        Ok(MixtureSample {
            dataset: di,
            episode,
            start,
            obs: ep.frames[start].obs.clone(),
            actions,
            tag: d.tag.clone(),
            future: ep.frames[(start + 1).min(ep.len() - 1)].obs.clone(),
        })
    }

    pub fn sample_batch(&self, batch_size: usize, k: usize, step: u64) -> Result<Vec<MixtureSample>> {
        (0..batch_size as u64)
            .map(|i| self.draw(step, i, k))
            .collect()
    }
}
