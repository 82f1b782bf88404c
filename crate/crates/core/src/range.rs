//! Closed block ranges and the handful of set operations the index is built on.

use std::fmt;

use crate::error::RaskError;

/// A closed interval of block addresses `[left, right]`.
///
/// Stored as `(left, len)`; `right` is derived. `len` is at least one and
/// `left + len - 1` never overflows.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Range {
    left: u64,
    len: u32,
}

impl Range {
    pub fn new(left: u64, len: u32) -> Result<Self, RaskError> {
        if len == 0 {
            return Err(RaskError::InvalidRange { left, len: 0 });
        }
        if left.checked_add(len as u64 - 1).is_none() {
            return Err(RaskError::InvalidRange { left, len: len as u64 });
        }
        Ok(Range { left, len })
    }

    /// Builds `[left, right]` from inclusive bounds.
    pub fn between(left: u64, right: u64) -> Result<Self, RaskError> {
        if right < left {
            return Err(RaskError::InvalidRange { left, len: 0 });
        }
        let len = right - left + 1;
        match u32::try_from(len) {
            Ok(len) => Ok(Range { left, len }),
            Err(_) => Err(RaskError::InvalidRange { left, len }),
        }
    }

    /// Internal constructor for bounds already known to be valid.
    #[inline]
    pub(crate) fn span(left: u64, right: u64) -> Self {
        debug_assert!(left <= right);
        debug_assert!(right - left < u32::MAX as u64);
        Range {
            left,
            len: (right - left + 1) as u32,
        }
    }

    #[inline]
    pub fn left(&self) -> u64 {
        self.left
    }

    #[inline]
    pub fn len(&self) -> u32 {
        self.len
    }

    /// Always false; ranges hold at least one block.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn right(&self) -> u64 {
        self.left + (self.len as u64 - 1)
    }

    #[inline]
    pub fn contains(&self, block: u64) -> bool {
        self.left <= block && block <= self.right()
    }

    #[inline]
    pub fn overlaps(&self, other: &Range) -> bool {
        self.left <= other.right() && other.left <= self.right()
    }

    pub fn intersect(&self, other: &Range) -> Option<Range> {
        intersect(*self, *other)
    }
}

impl fmt::Debug for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.left, self.right())
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Overlap of `a` and `b`, if any.
pub fn intersect(a: Range, b: Range) -> Option<Range> {
    let left = a.left.max(b.left);
    let right = a.right().min(b.right());
    (left <= right).then(|| Range::span(left, right))
}

/// True when every block of `inner` lies in `outer`.
pub fn covers(outer: Range, inner: Range) -> bool {
    outer.left <= inner.left && inner.right() <= outer.right()
}

/// `target \ hole` as at most two disjoint ranges ordered by left bound.
pub fn subtract(target: Range, hole: Range) -> Subtraction {
    let mut out = Subtraction::default();
    if !target.overlaps(&hole) {
        out.push(target);
        return out;
    }
    if target.left < hole.left {
        out.push(Range::span(target.left, hole.left - 1));
    }
    if target.right() > hole.right() {
        out.push(Range::span(hole.right() + 1, target.right()));
    }
    out
}

/// Up to two ranges left over by [`subtract`].
#[derive(Clone, Copy, Default, PartialEq, Eq)]
pub struct Subtraction {
    parts: [Option<Range>; 2],
}

impl Subtraction {
    fn push(&mut self, r: Range) {
        if self.parts[0].is_none() {
            self.parts[0] = Some(r);
        } else {
            self.parts[1] = Some(r);
        }
    }

    pub fn len(&self) -> usize {
        self.parts.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.parts[0].is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = Range> + '_ {
        self.parts.iter().flatten().copied()
    }

    pub fn to_vec(&self) -> Vec<Range> {
        self.iter().collect()
    }
}

impl fmt::Debug for Subtraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
