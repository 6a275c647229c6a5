//! Action-space transforms: statistics and (un)normalization, unified-width
//! padding, delta-to-absolute conversion and the discrete action tokenizer.

pub mod bpe;
pub mod dct;
pub mod fast;
mod stats;
mod transform;

pub use bpe::{bpe_decode, bpe_encode, bpe_train, Merge};
pub use fast::{fast_decode, fast_encode, FastCodec, FastCodecConfig, TokenSequence};
pub use stats::{compute_statistics, normalize, percentile, unnormalize};
pub use transform::{delta_to_absolute, pad_to_unified, unpad_from_unified};
