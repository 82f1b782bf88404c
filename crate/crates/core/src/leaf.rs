//! Concurrent leaf: the log held in atomic arrays, a packed version word
//! for optimistic readers and a spin lock for writers.
//!
//! Readers never lock. They load the version, copy what they need, and load
//! it again; any structural change in between shows up as a different
//! version or the busy bit. Appends need no version change because an entry
//! becomes visible only when `count` is published.

use std::sync::atomic::{fence, AtomicBool, AtomicU32, AtomicU64, Ordering};

use crossbeam_epoch::{Atomic, Guard, Shared};
use crossbeam_utils::Backoff;

use crate::anchor::ListNode;
use crate::log::Entry;
use crate::range::Range;
use crate::value::Value;

const LIVE: u64 = 0x5241_534b_4c45_4146;
const DEAD: u64 = 0xdead_dead_dead_dead;

const FIELD_BITS: u32 = 16;
const FIELD_MASK: u64 = (1 << FIELD_BITS) - 1;
pub(crate) const BUSY: u64 = 1 << 62;
pub(crate) const DELETED: u64 = 1 << 63;

/// Which counter in the version word a modification bumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Change {
    Gc = 0,
    Split = 1,
    Merge = 2,
}

/// Decoded version word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Version(pub u64);

impl Version {
    pub fn gc(self) -> u64 {
        self.0 & FIELD_MASK
    }

    pub fn split(self) -> u64 {
        (self.0 >> FIELD_BITS) & FIELD_MASK
    }

    pub fn merge(self) -> u64 {
        (self.0 >> (2 * FIELD_BITS)) & FIELD_MASK
    }

    pub fn busy(self) -> bool {
        self.0 & BUSY != 0
    }

    pub fn deleted(self) -> bool {
        self.0 & DELETED != 0
    }

    /// True when only the GC counter differs.
    pub(crate) fn same_shape(self, other: Version) -> bool {
        (self.0 & !FIELD_MASK) == (other.0 & !FIELD_MASK)
    }
}

/// One log entry; the value is split into two words.
#[derive(Default)]
pub(crate) struct Slot {
    left: AtomicU64,
    lo: AtomicU64,
    hi: AtomicU64,
    len: AtomicU32,
}

pub(crate) struct Leaf {
    magic: AtomicU64,
    pub(crate) anchor: u64,
    slots: Box<[Slot]>,
    count: AtomicU32,
    pub(crate) n_frag: AtomicU32,
    version: AtomicU64,
    lock: AtomicBool,
    /// Nesting depth of open modification windows; touched only by the
    /// lock holder.
    depth: AtomicU32,
    pub(crate) next: Atomic<Leaf>,
    pub(crate) prev: Atomic<Leaf>,
}

impl Leaf {
    pub(crate) fn new(anchor: u64, capacity: usize) -> Leaf {
        Leaf {
            magic: AtomicU64::new(LIVE),
            anchor,
            slots: (0..capacity).map(|_| Slot::default()).collect(),
            count: AtomicU32::new(0),
            n_frag: AtomicU32::new(0),
            version: AtomicU64::new(0),
            lock: AtomicBool::new(false),
            depth: AtomicU32::new(0),
            next: Atomic::null(),
            prev: Atomic::null(),
        }
    }

    /// Fresh leaf holding `entries`, not yet reachable.
    pub(crate) fn with_entries(anchor: u64, capacity: usize, entries: &[Entry]) -> Leaf {
        let leaf = Leaf::new(anchor, capacity);
        leaf.store_entries(entries);
        leaf
    }

    pub(crate) fn capacity(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub(crate) fn check_alive(&self) {
        debug_assert_eq!(self.magic.load(Ordering::Relaxed), LIVE, "leaf used after free");
    }

    pub(crate) fn version(&self) -> Version {
        Version(self.version.load(Ordering::Acquire))
    }

    pub(crate) fn is_deleted(&self) -> bool {
        self.version().deleted()
    }

    pub(crate) fn len(&self) -> usize {
        self.count.load(Ordering::Acquire) as usize
    }

    #[inline]
    fn load_entry(&self, i: usize) -> Option<Entry> {
        let s = &self.slots[i];
        let left = s.left.load(Ordering::Relaxed);
        let len = s.len.load(Ordering::Relaxed);
        let v = (s.hi.load(Ordering::Relaxed) as u128) << 64 | s.lo.load(Ordering::Relaxed) as u128;
        // A torn read during a concurrent rewrite may not form a valid
        // range; the version check discards it anyway.
        Range::new(left, len).ok().map(|r| Entry::new(r, Value(v)))
    }

    #[inline]
    fn store_entry(&self, i: usize, e: &Entry) {
        let s = &self.slots[i];
        s.left.store(e.range.left(), Ordering::Relaxed);
        s.len.store(e.range.len(), Ordering::Relaxed);
        s.lo.store(e.value.0 as u64, Ordering::Relaxed);
        s.hi.store((e.value.0 >> 64) as u64, Ordering::Relaxed);
    }

    /// Copies the published entries into `out`. Returns false when a torn
    /// entry was seen; the caller must then fail version validation.
    pub(crate) fn read_entries(&self, out: &mut Vec<Entry>) -> bool {
        out.clear();
        let n = self.len().min(self.capacity());
        for i in 0..n {
            match self.load_entry(i) {
                Some(e) => out.push(e),
                None => return false,
            }
        }
        true
    }

    /// Entries as seen by the lock holder.
    pub(crate) fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::with_capacity(self.capacity() + 1);
        let ok = self.read_entries(&mut out);
        debug_assert!(ok);
        out
    }

    /// Whether some entry has exactly `r` as its range. Lock holder only.
    pub(crate) fn has_range(&self, r: Range) -> bool {
        (0..self.len()).any(|i| {
            let s = &self.slots[i];
            s.left.load(Ordering::Relaxed) == r.left() && s.len.load(Ordering::Relaxed) == r.len()
        })
    }

    /// Appends under the lock; publishes with a release store of `count`.
    pub(crate) fn append(&self, e: Entry) {
        let n = self.count.load(Ordering::Relaxed) as usize;
        assert!(n < self.capacity(), "append to full leaf");
        self.store_entry(n, &e);
        self.count.store(n as u32 + 1, Ordering::Release);
    }

    /// Overwrites the whole log. Only inside a modification window or on a
    /// leaf no one else can see.
    pub(crate) fn store_entries(&self, entries: &[Entry]) {
        assert!(entries.len() <= self.capacity());
        for (i, e) in entries.iter().enumerate() {
            self.store_entry(i, e);
        }
        self.count.store(entries.len() as u32, Ordering::Release);
    }

    pub(crate) fn lock(&self) {
        let backoff = Backoff::new();
        while self
            .lock
            .compare_exchange_weak(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            backoff.snooze();
        }
    }

    pub(crate) fn unlock(&self) {
        debug_assert!(self.lock.load(Ordering::Relaxed));
        self.lock.store(false, Ordering::Release);
    }

    /// Opens a modification window: bumps the counter for `change` and sets
    /// the busy bit. Windows nest.
    pub(crate) fn begin(&self, change: Change) {
        let shift = change as u32 * FIELD_BITS;
        let v = self.version.load(Ordering::Relaxed);
        let field = ((v >> shift) + 1) & FIELD_MASK;
        let v = (v & !(FIELD_MASK << shift)) | (field << shift) | BUSY;
        self.version.store(v, Ordering::Relaxed);
        fence(Ordering::Release);
        self.depth.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn end(&self) {
        if self.depth.fetch_sub(1, Ordering::Relaxed) == 1 {
            let v = self.version.load(Ordering::Relaxed);
            self.version.store(v & !BUSY, Ordering::Release);
        }
    }

    /// Marks the leaf unlinked. Must be inside a window.
    pub(crate) fn mark_deleted(&self) {
        let v = self.version.load(Ordering::Relaxed);
        self.version.store(v | DELETED, Ordering::Relaxed);
    }

    pub(crate) fn next<'g>(&self, guard: &'g Guard) -> Option<&'g Leaf> {
        let p = self.next.load(Ordering::Acquire, guard);
        // SAFETY: leaves are only freed through the epoch collector after
        // being unlinked, and `guard` pins the current epoch.
        unsafe { p.as_ref() }
    }

    pub(crate) fn next_shared<'g>(&self, guard: &'g Guard) -> Shared<'g, Leaf> {
        self.next.load(Ordering::Acquire, guard)
    }

    /// Last block this leaf owns.
    pub(crate) fn upper(&self, guard: &Guard, key_max: u64) -> u64 {
        self.next(guard).map_or(key_max, |n| n.anchor - 1)
    }
}

impl Drop for Leaf {
    fn drop(&mut self) {
        self.magic.store(DEAD, Ordering::Relaxed);
    }
}

/// Validates an optimistic read that started at version `v1`; on failure
/// returns the version now in place.
#[inline]
pub(crate) fn validate(leaf: &Leaf, v1: Version) -> Result<(), Version> {
    fence(Ordering::Acquire);
    let v2 = Version(leaf.version.load(Ordering::Relaxed));
    if v2 == v1 {
        Ok(())
    } else {
        Err(v2)
    }
}

/// A pinned reference to a leaf used for list traversal.
#[derive(Clone, Copy)]
pub(crate) struct LeafRef<'g> {
    pub(crate) leaf: &'g Leaf,
    pub(crate) guard: &'g Guard,
}

impl ListNode for LeafRef<'_> {
    fn anchor(&self) -> u64 {
        self.leaf.anchor
    }

    fn next(&self) -> Option<Self> {
        self.leaf.next(self.guard).map(|leaf| LeafRef {
            leaf,
            guard: self.guard,
        })
    }

    fn is_deleted(&self) -> bool {
        self.leaf.is_deleted()
    }
}
