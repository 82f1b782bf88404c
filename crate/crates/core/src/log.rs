//! Log-structured leaf contents and the algorithms that run over them:
//! ablation-based search, lightweight GC and normal GC.
//!
//! Everything here works on a plain slice of [`Entry`] ordered oldest to
//! newest. The concurrent leaf copies its arrays into such a slice under
//! the appropriate lock or version check and writes survivors back.

use crate::error::RaskError;
use crate::range::{intersect, Range};
use crate::value::{Value, ValueFormat};

/// One range/value pair in a leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Entry {
    pub range: Range,
    pub value: Value,
}

impl Entry {
    pub fn new(range: Range, value: Value) -> Self {
        Entry { range, value }
    }
}

/// Sorted, pairwise-disjoint subranges of a search target that no entry
/// has answered yet.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnfoundList {
    ranges: Vec<Range>,
}

impl UnfoundList {
    pub fn new(target: Range) -> Self {
        UnfoundList { ranges: vec![target] }
    }

    /// Restarts the list at `target`, keeping its allocation.
    pub fn reset(&mut self, target: Range) {
        self.ranges.clear();
        self.ranges.push(target);
    }

    pub fn from_sorted(ranges: Vec<Range>) -> Self {
        debug_assert!(ranges.windows(2).all(|w| w[0].right() < w[1].left()));
        UnfoundList { ranges }
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn as_slice(&self) -> &[Range] {
        &self.ranges
    }

    /// Removes the parts of the list overlapping `r`, calling `hit` with
    /// each removed intersection in ascending order.
    fn ablate(&mut self, r: Range, mut hit: impl FnMut(Range)) {
        // First subrange that could overlap: linear scan, bounded by the
        // number of entries processed so far.
        let Some(start) = self.ranges.iter().position(|u| u.right() >= r.left()) else {
            return;
        };
        let mut end = start;
        while end < self.ranges.len() && self.ranges[end].left() <= r.right() {
            end += 1;
        }
        if start == end {
            return;
        }
        let first = self.ranges[start];
        let last = self.ranges[end - 1];
        for u in &self.ranges[start..end] {
            if let Some(i) = intersect(*u, r) {
                hit(i);
            }
        }
        let mut rest: [Option<Range>; 2] = [None, None];
        if first.left() < r.left() {
            rest[0] = Some(Range::span(first.left(), r.left() - 1));
        }
        if last.right() > r.right() {
            rest[1] = Some(Range::span(r.right() + 1, last.right()));
        }
        let mut at = start;
        for piece in rest.into_iter().flatten() {
            if at < end {
                self.ranges[at] = piece;
            } else {
                self.ranges.insert(at, piece);
            }
            at += 1;
        }
        if at < end {
            self.ranges.drain(at..end);
        }
    }
}

/// A matched piece of the search target and the entry that supplied it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hit {
    pub sub: Range,
    /// Index of the supplying entry in the searched slice.
    pub entry: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchOutcome {
    pub hits: Vec<Hit>,
    /// Entries inspected before the unfound list emptied or the log ran out.
    pub examined: usize,
}

/// Scans `entries` newest to oldest, moving every intersection with
/// `unfound` into the hit list. Stops as soon as `unfound` is empty.
pub fn ablation_search(entries: &[Entry], unfound: &mut UnfoundList) -> SearchOutcome {
    let mut out = SearchOutcome::default();
    out.examined = ablation_search_into(entries, unfound, &mut out.hits);
    out
}

/// [`ablation_search`] appending to a caller-owned hit buffer; returns the
/// number of entries examined.
pub fn ablation_search_into(entries: &[Entry], unfound: &mut UnfoundList, hits: &mut Vec<Hit>) -> usize {
    let mut examined = 0;
    for (idx, e) in entries.iter().enumerate().rev() {
        if unfound.is_empty() {
            break;
        }
        examined += 1;
        unfound.ablate(e.range, |sub| hits.push(Hit { sub, entry: idx }));
    }
    examined
}

/// A disjoint piece of the running union built by normal GC, with the
/// number of leaf entries folded into it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Component {
    pub left: u64,
    pub right: u64,
    pub entries: u32,
}

/// Running union of processed ranges, kept as sorted disjoint components.
/// Touching components stay separate so each boundary remains a split
/// candidate; coverage checks look across them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NonOverlapList {
    parts: Vec<Component>,
}

impl NonOverlapList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Union of `entries`, counting each one.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = &'a Entry>) -> Self {
        let mut list = NonOverlapList::new();
        for e in entries {
            list.fold(e.range, true);
        }
        list
    }

    pub fn components(&self) -> &[Component] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Total number of counted entries.
    pub fn entry_count(&self) -> u32 {
        self.parts.iter().map(|c| c.entries).sum()
    }

    fn component_at(&self, block: u64) -> Option<usize> {
        let idx = self.parts.partition_point(|c| c.left <= block);
        (idx > 0 && self.parts[idx - 1].right >= block).then(|| idx - 1)
    }

    /// True when the union contains every block of `r`.
    pub fn covers(&self, r: Range) -> bool {
        let Some(mut i) = self.component_at(r.left()) else {
            return false;
        };
        while self.parts[i].right < r.right() {
            match self.parts.get(i + 1) {
                Some(next) if next.left == self.parts[i].right + 1 => i += 1,
                _ => return false,
            }
        }
        true
    }

    /// Unites `r` with every component it overlaps.
    pub fn fold(&mut self, r: Range, counted: bool) {
        let start = self.parts.partition_point(|c| c.right < r.left());
        self.fold_from(start, r, counted);
    }

    /// Returns true if the union already covers `r`; otherwise folds `r`
    /// in as a counted entry.
    fn cover_or_fold(&mut self, r: Range) -> bool {
        let start = self.parts.partition_point(|c| c.right < r.left());
        if start < self.parts.len() && self.parts[start].left <= r.left() {
            let mut i = start;
            loop {
                if self.parts[i].right >= r.right() {
                    return true;
                }
                match self.parts.get(i + 1) {
                    Some(next) if next.left == self.parts[i].right + 1 => i += 1,
                    _ => break,
                }
            }
        }
        self.fold_from(start, r, true);
        false
    }

    fn fold_from(&mut self, start: usize, r: Range, counted: bool) {
        let mut end = start;
        while end < self.parts.len() && self.parts[end].left <= r.right() {
            end += 1;
        }
        if start == end {
            let c = Component {
                left: r.left(),
                right: r.right(),
                entries: counted as u32,
            };
            self.parts.insert(start, c);
            return;
        }
        let right = self.parts[end - 1].right.max(r.right());
        let extra: u32 = self.parts[start + 1..end].iter().map(|c| c.entries).sum();
        let c = &mut self.parts[start];
        c.left = c.left.min(r.left());
        c.right = right;
        c.entries += extra + counted as u32;
        self.parts.drain(start + 1..end);
    }

    /// Stops counting an entry previously folded with `counted = true`.
    pub fn uncount(&mut self, r: Range) {
        if let Some(i) = self.component_at(r.left()) {
            self.parts[i].entries = self.parts[i].entries.saturating_sub(1);
        }
    }

    /// `(left bound, entries strictly left of it)` for every component but
    /// the first. These are the split candidates.
    pub fn candidates(&self) -> Vec<(u64, u32)> {
        let mut before = 0u32;
        let mut out = Vec::with_capacity(self.parts.len().saturating_sub(1));
        for (i, c) in self.parts.iter().enumerate() {
            if i > 0 {
                out.push((c.left, before));
            }
            before += c.entries;
        }
        out
    }
}

/// Left bound -> largest right bound seen. Leaves are small enough that a
/// linear scan beats both hashing and keeping the keys sorted.
#[derive(Debug, Default)]
pub struct LtMap {
    items: Vec<(u64, u64)>,
}

impl LtMap {
    pub fn with_entries(entries: usize) -> Self {
        LtMap {
            items: Vec::with_capacity(entries),
        }
    }

    fn find(&self, key: u64) -> Option<usize> {
        self.items.iter().position(|&(k, _)| k == key)
    }

    pub fn get(&self, key: u64) -> Option<u64> {
        self.find(key).map(|i| self.items[i].1)
    }

    /// Records `right` for `key` if it beats the stored bound.
    pub fn raise(&mut self, key: u64, right: u64) {
        match self.find(key) {
            Some(i) => self.items[i].1 = self.items[i].1.max(right),
            None => self.items.push((key, right)),
        }
    }
}

/// Marks entries covered by a newer entry with the same left bound.
pub fn lightweight_gc(entries: &[Entry]) -> Vec<bool> {
    let mut removed = Vec::new();
    lightweight_gc_into(entries, &mut removed, &mut LtMap::with_entries(entries.len()));
    removed
}

/// [`lightweight_gc`] into caller-owned buffers. Returns whether anything
/// was marked.
pub fn lightweight_gc_into(entries: &[Entry], removed: &mut Vec<bool>, lt: &mut LtMap) -> bool {
    removed.clear();
    removed.resize(entries.len(), false);
    lt.items.clear();
    let mut any = false;
    for (i, e) in entries.iter().enumerate().rev() {
        match lt.find(e.range.left()) {
            Some(j) if e.range.right() <= lt.items[j].1 => {
                removed[i] = true;
                any = true;
            }
            Some(j) => lt.items[j].1 = e.range.right(),
            None => lt.items.push((e.range.left(), e.range.right())),
        }
    }
    any
}

/// Marks every entry covered by the union of newer entries, then every
/// tombstone that no longer hides an older surviving value.
///
/// Returns the removal mask and the union of all processed ranges with
/// per-component counts of surviving entries.
pub fn normal_gc(entries: &[Entry], tombstone: Value) -> (Vec<bool>, NonOverlapList) {
    let mut removed = Vec::new();
    let mut union = NonOverlapList {
        parts: Vec::with_capacity(entries.len()),
    };
    normal_gc_into(entries, tombstone, &mut removed, &mut union);
    (removed, union)
}

/// [`normal_gc`] into caller-owned buffers. Returns whether anything was
/// marked.
pub fn normal_gc_into(
    entries: &[Entry],
    tombstone: Value,
    removed: &mut Vec<bool>,
    union: &mut NonOverlapList,
) -> bool {
    removed.clear();
    removed.resize(entries.len(), false);
    union.parts.clear();
    let mut any = false;
    for (i, e) in entries.iter().enumerate().rev() {
        if union.cover_or_fold(e.range) {
            removed[i] = true;
            any = true;
        }
    }
    // A tombstone only matters while an older live value sits under it.
    for (i, e) in entries.iter().enumerate() {
        if removed[i] || e.value != tombstone {
            continue;
        }
        let shadows = entries[..i]
            .iter()
            .zip(&removed[..i])
            .any(|(o, gone)| !gone && o.value != tombstone && o.range.overlaps(&e.range));
        if !shadows {
            removed[i] = true;
            any = true;
            union.uncount(e.range);
        }
    }
    any
}

/// Drops marked entries, keeping survivors in their original order.
/// Returns the dropped entries.
pub fn compact(entries: &mut Vec<Entry>, removed: &[bool]) -> Vec<Entry> {
    let mut dropped = Vec::new();
    compact_into(entries, removed, &mut dropped);
    dropped
}

/// [`compact`] appending the dropped entries to `dropped`.
pub fn compact_into(entries: &mut Vec<Entry>, removed: &[bool], dropped: &mut Vec<Entry>) {
    debug_assert_eq!(entries.len(), removed.len());
    let mut keep = 0;
    for i in 0..entries.len() {
        if removed[i] {
            dropped.push(entries[i]);
        } else {
            entries[keep] = entries[i];
            keep += 1;
        }
    }
    entries.truncate(keep);
}

/// Which GC stage freed space, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcStage {
    Lightweight,
    Normal,
}

/// Result of a two-stage GC pass.
#[derive(Clone, Debug)]
pub struct GcReport {
    pub reclaimed: usize,
    pub stage: GcStage,
    /// Union from the normal stage, when it ran.
    pub union: Option<NonOverlapList>,
    pub dropped: Vec<Entry>,
}

/// Lightweight GC first; normal GC only when the first stage frees nothing.
pub fn two_stage_gc(entries: &mut Vec<Entry>, tombstone: Value) -> GcReport {
    let light = lightweight_gc(entries);
    if light.iter().any(|&r| r) {
        let dropped = compact(entries, &light);
        return GcReport {
            reclaimed: dropped.len(),
            stage: GcStage::Lightweight,
            union: None,
            dropped,
        };
    }
    let (removed, union) = normal_gc(entries, tombstone);
    let dropped = compact(entries, &removed);
    GcReport {
        reclaimed: dropped.len(),
        stage: GcStage::Normal,
        union: Some(union),
        dropped,
    }
}

/// Single-threaded log-structured leaf: a bounded append-only log plus the
/// GC and search entry points. The concurrent index keeps the same data in
/// atomic arrays; this type is the reference form used by tests and tools.
#[derive(Clone, Debug)]
pub struct LeafLog {
    capacity: usize,
    format: ValueFormat,
    entries: Vec<Entry>,
}

impl LeafLog {
    pub fn new(capacity: usize, format: ValueFormat) -> Self {
        LeafLog {
            capacity,
            format,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn append(&mut self, range: Range, value: Value) -> Result<(), RaskError> {
        if self.is_full() {
            return Err(RaskError::LeafFull);
        }
        self.entries.push(Entry { range, value });
        Ok(())
    }

    pub fn search(&self, target: Range) -> (SearchOutcome, UnfoundList) {
        let mut unfound = UnfoundList::new(target);
        let out = ablation_search(&self.entries, &mut unfound);
        (out, unfound)
    }

    pub fn lightweight_gc(&mut self) -> usize {
        let removed = lightweight_gc(&self.entries);
        compact(&mut self.entries, &removed).len()
    }

    pub fn normal_gc(&mut self) -> (usize, NonOverlapList) {
        let (removed, union) = normal_gc(&self.entries, self.format.tombstone());
        (compact(&mut self.entries, &removed).len(), union)
    }

    pub fn two_stage_gc(&mut self) -> GcReport {
        two_stage_gc(&mut self.entries, self.format.tombstone())
    }
}
