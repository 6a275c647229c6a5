//! Episode stores, per-dataset statistics, the weighted mixture sampler
//! and synthetic oracle data.

mod mixture;
mod store;
mod synth;
#[cfg(test)]
mod tests;

pub use mixture::{Mixture, MixtureEntry, MixtureSample, MixtureSpec};
pub use store::{
    open_store, store_statistics, write_store, Episode, EpisodeStore, Frame, LoadedDataset,
    StoreManifest, MANIFEST,
};
pub use synth::{
    caption_dataset, caption_example, generate_store, oracle_dataset, oracle_episode,
    oracle_episodes,
};
