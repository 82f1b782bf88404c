use thiserror::Error;

use crate::range::Range;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RaskError {
    #[error("invalid range: left {left}, length {len}")]
    InvalidRange { left: u64, len: u64 },

    #[error("value {0:#x} is reserved or wider than the configured payload width")]
    InvalidValue(u128),

    #[error("leaf is full")]
    LeafFull,

    #[error("no secondary entry for indicator range {0:?}")]
    MissingSecondaryEntry(Range),

    #[error("leaf cannot be split: every boundary is identical")]
    Unsplittable,

    #[error("split left a leaf with {entries} entries over capacity {capacity}")]
    SplitOverflow { entries: usize, capacity: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
