//! Range-keyed in-memory index for block address translation.
//!
//! Each entry maps a whole block range to one value. Leaves are small
//! append-only logs searched newest first; garbage collection, splits and
//! merges keep them bounded while readers proceed without locks.

pub mod anchor;
pub mod error;
pub mod leaf;
pub mod log;
pub mod range;
pub mod secondary;
pub mod smo;
pub mod stats;
pub mod tree;
pub mod value;

pub use anchor::AnchorBackend;
pub use error::RaskError;
pub use leaf::Version;
pub use log::Entry;
pub use range::Range;
pub use secondary::{SecondaryEntry, SecondarySemantics, SecondaryTree};
pub use stats::StatsSnapshot;
pub use tree::{Config, LeafSnapshot, RaskIndex, Segment};
pub use value::{Extent, Resolved, Value, ValueFormat, ValueSemantics};
