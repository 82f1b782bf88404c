//! Opaque values, the two reserved sentinels, and the callback interface
//! that lets the index cut and glue user values.

use std::fmt;

use crate::error::RaskError;
use crate::range::Range;

/// Opaque fixed-width payload stored next to each range.
///
/// The index only interprets two bit patterns, [`ValueFormat::tombstone`]
/// and [`ValueFormat::indicator`]; everything else belongs to the user.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Value(pub u128);

impl Value {
    #[inline]
    pub const fn raw(self) -> u128 {
        self.0
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({:#x})", self.0)
    }
}

impl From<u128> for Value {
    fn from(v: u128) -> Self {
        Value(v)
    }
}

/// Payload width and the sentinels derived from it.
///
/// With width `w` bytes the indicator is all ones and the tombstone is all
/// ones minus one; regular values are everything below that.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueFormat {
    width: u8,
    mask: u128,
}

pub const DEFAULT_PAYLOAD_WIDTH: u8 = 10;

impl ValueFormat {
    pub fn new(width: u8) -> Result<Self, RaskError> {
        if !(1..=16).contains(&width) {
            return Err(RaskError::InvalidConfig(format!(
                "payload width {width} outside 1..=16 bytes"
            )));
        }
        let mask = if width == 16 {
            u128::MAX
        } else {
            (1u128 << (8 * width as u32)) - 1
        };
        Ok(ValueFormat { width, mask })
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    #[inline]
    pub fn indicator(&self) -> Value {
        Value(self.mask)
    }

    #[inline]
    pub fn tombstone(&self) -> Value {
        Value(self.mask - 1)
    }

    /// Largest payload a user may store.
    pub fn max_regular(&self) -> Value {
        Value(self.mask - 2)
    }

    #[inline]
    pub fn is_tombstone(&self, v: Value) -> bool {
        v == self.tombstone()
    }

    #[inline]
    pub fn is_indicator(&self, v: Value) -> bool {
        v == self.indicator()
    }

    /// Rejects sentinels and values wider than the payload.
    pub fn check_regular(&self, v: Value) -> Result<(), RaskError> {
        if v.0 > self.max_regular().0 {
            Err(RaskError::InvalidValue(v.0))
        } else {
            Ok(())
        }
    }
}

impl Default for ValueFormat {
    fn default() -> Self {
        ValueFormat::new(DEFAULT_PAYLOAD_WIDTH).expect("default width is valid")
    }
}

/// A value as seen by readers: the payload of the original write plus the
/// block offset of the returned range from that write's first block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Resolved {
    pub value: Value,
    pub offset: u64,
}

/// One piece of a `get` result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Extent {
    pub range: Range,
    pub value: Value,
    pub offset: u64,
}

/// User hooks for dividing and re-joining values when a stored range is cut
/// by a leaf boundary or glued back together by a merge.
///
/// The index never calls these with a tombstone.
pub trait ValueSemantics: Send + Sync {
    /// Value to store for `sub`, a piece of `original` that held `value`.
    /// `sub` is always contained in `original`.
    fn divide_value(&self, original: Range, value: Value, sub: Range) -> Value;

    /// Joins two adjacent entries when their values continue each other.
    /// `b` starts right after `a` ends. Returns `None` to decline.
    fn merge_range(&self, a: Range, va: Value, b: Range, vb: Value) -> Option<(Range, Value)>;

    /// Read-side division: what `sub` of the stored entry `(stored, value)`
    /// means to the caller. Must not mutate anything.
    fn resolve(&self, stored: Range, value: Value, sub: Range) -> Result<Resolved, RaskError>;

    /// The entry `(range, value)` is no longer stored anywhere in the index.
    fn discard(&self, _range: Range, _value: Value) {}
}
