use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RootConfig;
use crate::error::{Error, Result};
use crate::eval::StatsTable;
use crate::nnet::{AdamW, ShapeRecord};
use crate::policy::{registry_compose, Policy};
use crate::types::DatasetStatistics;

pub const CONFIG_FILE: &str = "config.yaml";
pub const STATS_FILE: &str = "dataset_statistics.json";
/// Statistics of every dataset in the mixture, keyed by robot type.
pub const EMBODIMENT_STATS_FILE: &str = "embodiment_statistics.json";
pub const WEIGHTS_MANIFEST: &str = "weights.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const TRAINER_STATE: &str = "trainer_state.json";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: u64,
    pub backbone_id: String,
    pub head_id: String,
}

/// Location and step of a written package.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPackage {
    pub path: PathBuf,
    pub step: u64,
}

pub struct Checkpoint {
    pub policy: Policy,
    pub config: RootConfig,
    pub stats: DatasetStatistics,
    pub embodiment_stats: StatsTable,
    pub step: u64,
    pub optimizer: Option<AdamW>,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(p, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(name)).map_err(|e| Error::format(name, e))
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    String::from_utf8(read(dir, name)?).map_err(|e| Error::format(name, e))
}

/// Writes a complete package. `primary` becomes `dataset_statistics.json`.
pub fn save_checkpoint(
    policy: &Policy,
    config: &RootConfig,
    primary: &DatasetStatistics,
    embodiment_stats: &StatsTable,
    step: u64,
    optimizer: Option<&AdamW>,
    dir: &Path,
) -> Result<CheckpointPackage> {
    if policy.config() != &config.model {
        return Err(Error::Integrity(
            "policy does not match the model section of the config".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, CONFIG_FILE, config.to_yaml().as_bytes())?;
    write(dir, STATS_FILE, pretty(primary).as_bytes())?;
    write(dir, EMBODIMENT_STATS_FILE, pretty(embodiment_stats).as_bytes())?;
    write(dir, WEIGHTS_MANIFEST, pretty(&policy.params().manifest()).as_bytes())?;
    write(dir, WEIGHTS_FILE, &policy.params().to_le_bytes())?;
    if let Some((name, text)) = policy.head().state_file() {
        write(dir, name, text.as_bytes())?;
    }
    let state = TrainerState {
        step,
        backbone_id: config.model.backbone_id.clone(),
        head_id: config.model.head_id.clone(),
    };
    write(dir, TRAINER_STATE, pretty(&state).as_bytes())?;
    if let Some(opt) = optimizer {
        write(dir, OPTIMIZER_FILE, &opt.to_le_bytes())?;
    }
    Ok(CheckpointPackage {
        path: dir.to_path_buf(),
        step,
    })
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Rebuilds the policy from a package. Missing files are reported by name.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config = RootConfig::from_yaml(&read_text(dir, CONFIG_FILE)?)
        .map_err(|e| Error::format(CONFIG_FILE, e))?;
    let stats: DatasetStatistics =
        serde_json::from_str(&read_text(dir, STATS_FILE)?).map_err(|e| Error::format(STATS_FILE, e))?;
    stats.check()?;
    let embodiment_stats: StatsTable = match fs::read_to_string(dir.join(EMBODIMENT_STATS_FILE)) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| Error::format(EMBODIMENT_STATS_FILE, e))?,
        Err(_) => StatsTable::new(),
    };
    let manifest: Vec<ShapeRecord> = serde_json::from_str(&read_text(dir, WEIGHTS_MANIFEST)?)
        .map_err(|e| Error::format(WEIGHTS_MANIFEST, e))?;
    let weights = read(dir, WEIGHTS_FILE)?;
    let state: TrainerState = serde_json::from_str(&read_text(dir, TRAINER_STATE)?)
        .map_err(|e| Error::format(TRAINER_STATE, e))?;

    let mut policy = registry_compose(&config.model, config.seed)?;
    policy.params_mut().load_le_bytes(&manifest, &weights)?;
    if let Some((name, _)) = policy.head().state_file() {
        let text = read_text(dir, name)?;
        policy.head_mut().load_state(&text)?;
    }
    let optimizer = match fs::read(dir.join(OPTIMIZER_FILE)) {
        Ok(bytes) => {
            let mut opt = AdamW::new(policy.params(), config.trainer.weight_decay);
            opt.load_le_bytes(&bytes)?;
            Some(opt)
        }
        Err(_) => None,
    };
    Ok(Checkpoint {
        policy,
        config,
        stats,
        embodiment_stats,
        step: state.step,
        optimizer,
    })
}
