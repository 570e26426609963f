//! Murcko frameworks, scaffold identity keys, and scaffold- or ring-based splits.

mod key;
mod murcko;
mod split;

pub use key::{canonical_key, ScaffoldVocab, EMPTY_SCAFFOLD};
pub use murcko::murcko_scaffold;
pub use split::{
    default_ring_buckets, ring_split, ring_split_graphs, scaffold_keys, scaffold_split,
    scaffold_split_keys, validate_buckets, CountRange, RingBucket, SplitAssignment, SplitError,
};
