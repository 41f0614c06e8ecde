//! Seeded random streams.
//!
//! Every randomized stage draws from its own xoshiro256++ stream, derived from
//! the run seed and a fixed stream id. `seed_from_u64` expands the mixed seed
//! through SplitMix64, so neighbouring ids give unrelated streams.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StageRng = Xoshiro256PlusPlus;

pub const CORPUS_STREAM: u64 = 1;
pub const SPLIT_STREAM: u64 = 2;
pub const FINETUNE_STREAM: u64 = 3;
pub const SVM_STREAM: u64 = 4;
/// Layer `k` of the autoencoder stack uses `DBN_LAYER_STREAM + k`.
pub const DBN_LAYER_STREAM: u64 = 0x100;
/// Point `i` of a t-SNE layout uses `TSNE_POINT_STREAM + i`.
pub const TSNE_POINT_STREAM: u64 = 0x1_0000_0000;

const STREAM_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn stream_rng(seed: u64, stream: u64) -> StageRng {
    StageRng::seed_from_u64(seed ^ stream.wrapping_mul(STREAM_MIX))
}
