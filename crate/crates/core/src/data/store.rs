use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::compute_statistics;
use crate::error::{Error, Result};
use crate::types::{
    ActionChunk, ControlMode, DatasetStatistics, EmbodimentTag, ImageBuffer, Observation,
};

pub const MANIFEST: &str = "manifest.json";

/// `manifest.json` at the store root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub name: String,
    pub robot_type: String,
    pub native_dof: usize,
    pub control_mode: ControlMode,
    pub fps: f64,
    pub episode_count: usize,
}

impl StoreManifest {
    pub fn tag(&self) -> Result<EmbodimentTag> {
        EmbodimentTag::new(self.robot_type.clone(), self.native_dof, self.control_mode)
    }
}

/// One recorded step: what the robot saw and the native action it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub obs: Observation,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn actions(&self) -> Result<ActionChunk> {
        let rows: Vec<Vec<f64>> = self.frames.iter().map(|f| f.action.clone()).collect();
        ActionChunk::from_rows(&rows)
    }
}

#[derive(Serialize, Deserialize)]
struct WireImage {
    h: usize,
    w: usize,
    #[serde(with = "serde_bytes")]
    rgb: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct WireFrame {
    views: BTreeMap<String, WireImage>,
    instruction: String,
    state: Vec<f64>,
    action: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WireEpisode {
    frames: Vec<WireFrame>,
}

fn episode_path(root: &Path, i: usize) -> PathBuf {
    root.join("episodes").join(format!("ep_{i:06}.bin"))
}

fn encode_episode(ep: &Episode) -> Result<Vec<u8>> {
    let wire = WireEpisode {
        frames: ep
            .frames
            .iter()
            .map(|f| WireFrame {
                views: f
                    .obs
                    .views
                    .iter()
                    .map(|(k, v)| {
                        (
                            k.clone(),
                            WireImage {
                                h: v.height,
                                w: v.width,
                                rgb: v.pixels.clone(),
                            },
                        )
                    })
                    .collect(),
                instruction: f.obs.instruction.clone(),
                state: f.obs.state.clone().unwrap_or_default(),
                action: f.action.clone(),
            })
            .collect(),
    };
    rmp_serde::to_vec_named(&wire).map_err(|e| Error::format("episode", e))
}

fn decode_episode(bytes: &[u8], file: &str) -> Result<Episode> {
    let wire: WireEpisode = rmp_serde::from_slice(bytes).map_err(|e| Error::format(file, e))?;
    let frames = wire
        .frames
        .into_iter()
        .enumerate()
        .map(|(t, f)| {
            let views = f
                .views
                .into_iter()
                .map(|(k, v)| Ok((k, ImageBuffer::new(v.h, v.w, v.rgb)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok(Frame {
                obs: Observation {
                    views,
                    instruction: f.instruction,
                    state: (!f.state.is_empty()).then_some(f.state),
                    time_index: t as u64,
                    episode_meta: None,
                },
                action: f.action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode { frames })
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a complete store and opens it.
pub fn write_store(
    root: &Path,
    name: &str,
    tag: &EmbodimentTag,
    fps: f64,
    episodes: &[Episode],
) -> Result<EpisodeStore> {
    let dir = root.join("episodes");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, ep) in episodes.iter().enumerate() {
        check_episode(ep, tag.native_dof, i)?;
        let p = episode_path(root, i);
        fs::write(&p, encode_episode(ep)?).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = StoreManifest {
        name: name.to_string(),
        robot_type: tag.name.clone(),
        native_dof: tag.native_dof,
        control_mode: tag.control_mode,
        fps,
        episode_count: episodes.len(),
    };
    write_json(
        &root.join(MANIFEST),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    open_store(root)
}

fn check_episode(ep: &Episode, dof: usize, i: usize) -> Result<()> {
    if ep.is_empty() {
        return Err(Error::Integrity(format!("episode {i} is empty")));
    }
    if let Some(f) = ep.frames.iter().find(|f| f.action.len() != dof) {
        return Err(Error::Integrity(format!(
            "episode {i} has an action of width {} (expected {dof})",
            f.action.len()
        )));
    }
    Ok(())
}

/// Read-only handle on an on-disk store. Episodes are read on demand.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    root: PathBuf,
    manifest: StoreManifest,
    tag: EmbodimentTag,
}

/// Opens a store and checks the manifest against the episode files.
pub fn open_store(root: &Path) -> Result<EpisodeStore> {
    let mpath = root.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::format(MANIFEST, e))?;
    let manifest: StoreManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(MANIFEST, e))?;
    let tag = manifest.tag()?;
    let dir = root.join("episodes");
    let on_disk = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| {
                let n = e.file_name();
                let n = n.to_string_lossy();
                n.starts_with("ep_") && n.ends_with(".bin")
            })
            .count(),
        Err(_) => 0,
    };
    if on_disk != manifest.episode_count {
        return Err(Error::Integrity(format!(
            "manifest lists {} episodes but {} are on disk",
            manifest.episode_count, on_disk
        )));
    }
    Ok(EpisodeStore {
        root: root.to_path_buf(),
        manifest,
        tag,
    })
}

impl EpisodeStore {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn tag(&self) -> &EmbodimentTag {
        &self.tag
    }

    pub fn episode_count(&self) -> usize {
        self.manifest.episode_count
    }

    pub fn read_episode(&self, i: usize) -> Result<Episode> {
        if i >= self.episode_count() {
            return Err(Error::Integrity(format!(
                "episode {i} out of range ({} episodes)",
                self.episode_count()
            )));
        }
        let p = episode_path(&self.root, i);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let ep = decode_episode(&bytes, &format!("ep_{i:06}.bin"))?;
        check_episode(&ep, self.tag.native_dof, i)?;
        Ok(ep)
    }

    /// Reads every episode into memory and computes the statistics.
    pub fn load(&self) -> Result<LoadedDataset> {
        let episodes = (0..self.episode_count())
            .map(|i| self.read_episode(i))
            .collect::<Result<Vec<_>>>()?;
        let stats = statistics_of(&episodes, self.tag.native_dof)?;
        Ok(LoadedDataset {
            name: self.manifest.name.clone(),
            tag: self.tag.clone(),
            stats,
            episodes,
        })
    }
}

fn statistics_of(episodes: &[Episode], dims: usize) -> Result<DatasetStatistics> {
    let chunks = episodes
        .iter()
        .map(Episode::actions)
        .collect::<Result<Vec<_>>>()?;
    compute_statistics(&chunks, dims)
}

/// Native-dim action statistics over every frame of the store.
pub fn store_statistics(store: &EpisodeStore) -> Result<DatasetStatistics> {
    let episodes = (0..store.episode_count())
        .map(|i| store.read_episode(i))
        .collect::<Result<Vec<_>>>()?;
    statistics_of(&episodes, store.tag.native_dof)
}

/// A store held in memory, ready for sampling.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub tag: EmbodimentTag,
    pub stats: DatasetStatistics,
    pub episodes: Vec<Episode>,
}

impl LoadedDataset {
    pub fn from_episodes(name: &str, tag: EmbodimentTag, episodes: Vec<Episode>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, ep) in episodes.iter().enumerate() {
            check_episode(ep, tag.native_dof, i)?;
        }
        let stats = statistics_of(&episodes, tag.native_dof)?;
        Ok(LoadedDataset {
            name: name.to_string(),
            tag,
            stats,
            episodes,
        })
    }

    /// Native rows `start..start+k`, repeating the final action past the end.
    pub fn chunk_at(&self, episode: usize, start: usize, k: usize) -> Result<ActionChunk> {
        let ep = &self.episodes[episode];
        let last = ep.len() - 1;
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|j| ep.frames[(start + j).min(last)].action.clone())
            .collect();
        ActionChunk::from_rows(&rows)
    }
}
