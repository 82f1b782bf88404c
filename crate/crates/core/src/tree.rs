//! The concurrent range index: a linked list of log-structured leaves
//! located through the anchor index.

use std::cell::RefCell;
use std::collections::HashSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crossbeam_epoch::{self as epoch, Guard, Shared};
use crossbeam_utils::Backoff;
use parking_lot::RwLock;

use crate::anchor::{correct, AnchorBackend, AnchorMap};
use crate::error::RaskError;
use crate::leaf::{validate, Change, Leaf, LeafRef, Slot, Version};
use crate::log::{
    ablation_search_into, compact, compact_into, lightweight_gc_into, normal_gc, normal_gc_into, Entry, Hit, LtMap,
    NonOverlapList, UnfoundList,
};
use crate::range::Range;
use crate::secondary::{SecondarySemantics, SecondaryTree};
use crate::smo::{coalesce, layout_split, select_split_point, SplitLayout, SplitPlan};
use crate::stats::{Stats, StatsSnapshot};
use crate::value::{Extent, Value, ValueFormat, ValueSemantics, DEFAULT_PAYLOAD_WIDTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Config {
    /// Entries per leaf.
    pub capacity: usize,
    /// A leaf is considered for merging once it has taken more than this
    /// many fragment insertions.
    pub merge_threshold: u32,
    /// Payload width in bytes.
    pub payload_width: u8,
    pub backend: AnchorBackend,
    /// Largest addressable block.
    pub key_max: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            capacity: 16,
            merge_threshold: 4,
            payload_width: DEFAULT_PAYLOAD_WIDTH,
            backend: AnchorBackend::Trie,
            key_max: u64::MAX,
        }
    }
}

impl Config {
    pub fn with_capacity(capacity: usize) -> Self {
        Config {
            capacity,
            merge_threshold: (capacity / 4) as u32,
            ..Config::default()
        }
    }

    fn validate(&self) -> Result<ValueFormat, RaskError> {
        if self.capacity < 2 || self.capacity > u16::MAX as usize {
            return Err(RaskError::InvalidConfig(format!(
                "capacity {} outside 2..=65535",
                self.capacity
            )));
        }
        ValueFormat::new(self.payload_width)
    }
}

#[derive(Default)]
struct ReadScratch {
    buf: Vec<Entry>,
    unfound: UnfoundList,
    hits: Vec<Hit>,
    extents: Vec<Extent>,
}

#[derive(Default)]
struct GcScratch {
    entries: Vec<Entry>,
    removed: Vec<bool>,
    lt: LtMap,
    union: NonOverlapList,
    dropped: Vec<Entry>,
}

thread_local! {
    static SCRATCH: RefCell<ReadScratch> = RefCell::default();
    static GC_SCRATCH: RefCell<GcScratch> = RefCell::default();
}

/// One leaf's contribution to a read.
#[doc(hidden)]
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub anchor: u64,
    pub upper: u64,
    pub extents: Vec<Extent>,
    pub examined: usize,
}

/// Contents of one leaf at a quiescent moment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafSnapshot {
    pub anchor: u64,
    pub upper: u64,
    pub entries: Vec<Entry>,
    pub fragments: u32,
    pub version: Version,
}

/// Concurrent ordered index keyed by block ranges.
pub struct RaskIndex<S: ValueSemantics = SecondarySemantics> {
    config: Config,
    format: ValueFormat,
    semantics: S,
    head: *mut Leaf,
    anchors: RwLock<Box<dyn AnchorMap>>,
    stats: Arc<Stats>,
}

// SAFETY: `head` is owned by the index and only shared through the same
// epoch-protected protocol as every other leaf.
unsafe impl<S: ValueSemantics> Send for RaskIndex<S> {}
unsafe impl<S: ValueSemantics> Sync for RaskIndex<S> {}

struct SendPtr(*mut Leaf);
// SAFETY: leaves are Send; the pointer is only dereferenced by the
// collector once no thread can reach it.
unsafe impl Send for SendPtr {}

impl RaskIndex<SecondarySemantics> {
    /// Index with default semantics backed by the process-wide secondary
    /// tree.
    pub fn new(config: Config) -> Result<Self, RaskError> {
        let format = config.validate()?;
        Self::with_semantics(config, SecondarySemantics::new(SecondaryTree::global(), format))
    }

    /// Secondary records owned by this index that no stored entry refers
    /// to. Expects no concurrent writers.
    pub fn orphaned_secondary_entries(&self) -> Vec<Range> {
        let live = self.indicator_ranges();
        self.semantics
            .tree()
            .ranges(self.semantics.id())
            .into_iter()
            .filter(|r| !live.contains(r))
            .collect()
    }

    /// Indicator entries whose secondary record is missing.
    pub fn dangling_indicators(&self) -> Vec<Range> {
        let tree = self.semantics.tree();
        let mut out: Vec<Range> = self
            .indicator_ranges()
            .into_iter()
            .filter(|r| tree.get(self.semantics.id(), *r).is_none())
            .collect();
        out.sort();
        out
    }

    pub fn secondary_entries(&self) -> usize {
        self.semantics.tree().len_for(self.semantics.id())
    }

    fn indicator_ranges(&self) -> HashSet<Range> {
        let ind = self.format.indicator();
        self.leaves()
            .into_iter()
            .flat_map(|l| l.entries)
            .filter(|e| e.value == ind)
            .map(|e| e.range)
            .collect()
    }
}

impl<S: ValueSemantics> RaskIndex<S> {
    pub fn with_semantics(config: Config, semantics: S) -> Result<Self, RaskError> {
        let format = config.validate()?;
        let head = Box::into_raw(Box::new(Leaf::new(0, config.capacity)));
        let mut anchors = config.backend.build();
        anchors.insert(0, head as usize);
        Ok(RaskIndex {
            config,
            format,
            semantics,
            head,
            anchors: RwLock::new(anchors),
            stats: Arc::new(Stats::default()),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn format(&self) -> ValueFormat {
        self.format
    }

    pub fn semantics(&self) -> &S {
        &self.semantics
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn reset_stats(&self) {
        self.stats.reset();
    }

    #[doc(hidden)]
    pub fn pin(&self) -> Guard {
        epoch::pin()
    }

    /// Pushes retired leaves through the collector until nothing more is
    /// freed.
    pub fn reclaim_epochs(&self) {
        for _ in 0..256 {
            let guard = epoch::pin();
            guard.flush();
        }
    }

    pub fn put(&self, range: Range, value: Value) -> Result<(), RaskError> {
        self.format.check_regular(value)?;
        self.check_bounds(range)?;
        Stats::add(&self.stats.puts, 1);
        self.write(range, value, false);
        Ok(())
    }

    pub fn delete(&self, range: Range) -> Result<(), RaskError> {
        self.check_bounds(range)?;
        Stats::add(&self.stats.deletes, 1);
        self.write(range, self.format.tombstone(), true);
        Ok(())
    }

    /// Live pieces of `range`, ordered by left bound. Each leaf is read at
    /// a single consistent moment.
    pub fn get(&self, range: Range) -> Result<Vec<Extent>, RaskError> {
        self.check_bounds(range)?;
        Stats::add(&self.stats.gets, 1);
        let guard = epoch::pin();
        let mut out = Vec::new();
        self.read_segments(range, &guard, |_, _, extents, _| {
            let from = out.len();
            out.extend_from_slice(extents);
            out[from..].sort_unstable_by_key(|e| e.range.left());
        })?;
        Ok(out)
    }

    #[doc(hidden)]
    pub fn get_segments(&self, range: Range) -> Result<Vec<Segment>, RaskError> {
        self.check_bounds(range)?;
        let guard = epoch::pin();
        let mut out = Vec::new();
        self.read_segments(range, &guard, |anchor, upper, extents, examined| {
            out.push(Segment {
                anchor,
                upper,
                extents: extents.to_vec(),
                examined,
            })
        })?;
        Ok(out)
    }

    fn check_bounds(&self, range: Range) -> Result<(), RaskError> {
        if range.right() > self.config.key_max {
            return Err(RaskError::InvalidRange {
                left: range.left(),
                len: range.len() as u64,
            });
        }
        Ok(())
    }

    fn leaf_at<'g>(&self, block: u64, guard: &'g Guard) -> &'g Leaf {
        let backoff = Backoff::new();
        loop {
            let (_, ptr) = self.anchors.read().floor(block).expect("anchor 0 is always present");
            // SAFETY: a leaf leaves the anchor index before it is retired,
            // and `guard` was pinned before this lookup.
            let leaf = unsafe { &*(ptr as *const Leaf) };
            leaf.check_alive();
            if let Some(found) = correct(LeafRef { leaf, guard }, block) {
                return found.leaf;
            }
            backoff.snooze();
        }
    }

    /// Calls `f(anchor, upper, extents, examined)` for each leaf the
    /// target touches, left to right.
    fn read_segments(
        &self,
        target: Range,
        guard: &Guard,
        f: impl FnMut(u64, u64, &[Extent], usize),
    ) -> Result<(), RaskError> {
        SCRATCH.with(|cell| match cell.try_borrow_mut() {
            Ok(mut scratch) => self.read_segments_with(target, guard, &mut scratch, f),
            // Value semantics may read from inside a read.
            Err(_) => self.read_segments_with(target, guard, &mut ReadScratch::default(), f),
        })
    }

    fn read_segments_with(
        &self,
        target: Range,
        guard: &Guard,
        scratch: &mut ReadScratch,
        mut f: impl FnMut(u64, u64, &[Extent], usize),
    ) -> Result<(), RaskError> {
        let tombstone = self.format.tombstone();
        let mut cur = target.left();
        let mut leaf = self.leaf_at(cur, guard);
        let ReadScratch {
            buf,
            unfound,
            hits,
            extents,
        } = scratch;
        loop {
            let backoff = Backoff::new();
            let found = loop {
                let v1 = leaf.version();
                if v1.busy() {
                    backoff.snooze();
                    continue;
                }
                if v1.deleted() {
                    break None;
                }
                let whole = leaf.read_entries(buf);
                let next = leaf.next(guard);
                let upper = next.map_or(self.config.key_max, |n| n.anchor - 1);
                if !whole || leaf.anchor > cur || upper < cur {
                    match validate(leaf, v1) {
                        Err(v2) if v2.same_shape(v1) => continue,
                        _ => break None,
                    }
                }
                let clip = Range::span(cur, target.right().min(upper));
                unfound.reset(clip);
                hits.clear();
                extents.clear();
                let examined = ablation_search_into(buf, unfound, hits);
                let mut failure = None;
                for hit in hits.iter() {
                    let e = buf[hit.entry];
                    if e.value == tombstone {
                        continue;
                    }
                    match self.semantics.resolve(e.range, e.value, hit.sub) {
                        Ok(res) => extents.push(Extent {
                            range: hit.sub,
                            value: res.value,
                            offset: res.offset,
                        }),
                        Err(err) => {
                            failure = Some(err);
                            break;
                        }
                    }
                }
                match validate(leaf, v1) {
                    Ok(()) => {
                        if let Some(err) = failure {
                            return Err(err);
                        }
                        Stats::add(&self.stats.leaf_visits, 1);
                        Stats::add(&self.stats.entries_examined, examined as u64);
                        break Some((upper, next, examined));
                    }
                    Err(v2) => {
                        Stats::add(&self.stats.read_retries, 1);
                        if !v2.same_shape(v1) {
                            break None;
                        }
                    }
                }
            };
            match found {
                None => leaf = self.leaf_at(cur, guard),
                Some((upper, next, examined)) => {
                    f(leaf.anchor, upper, extents, examined);
                    if upper >= target.right() {
                        return Ok(());
                    }
                    cur = upper + 1;
                    leaf = match next {
                        Some(n) => n,
                        None => self.leaf_at(cur, guard),
                    };
                }
            }
        }
    }

    /// Locks every leaf that `range` touches, left to right. Returns the
    /// leaves with the last block each owned at locking time.
    fn lock_group<'g>(&self, range: Range, guard: &'g Guard) -> Vec<(&'g Leaf, u64)> {
        let backoff = Backoff::new();
        let first = loop {
            let leaf = self.leaf_at(range.left(), guard);
            leaf.lock();
            let owns = !leaf.is_deleted() && leaf.next(guard).is_none_or(|n| n.anchor > range.left());
            if owns {
                break leaf;
            }
            leaf.unlock();
            backoff.snooze();
        };
        let mut out: Vec<(&'g Leaf, u64)> = Vec::with_capacity(2);
        let mut last = first;
        loop {
            match last.next(guard) {
                Some(n) if n.anchor <= range.right() => {
                    n.lock();
                    debug_assert!(!n.is_deleted());
                    out.push((last, n.anchor - 1));
                    last = n;
                }
                _ => break,
            }
        }
        out.push((last, last.upper(guard, self.config.key_max)));
        out
    }

    fn write(&self, range: Range, value: Value, tomb: bool) {
        let guard = epoch::pin();
        let group = self.lock_group(range, &guard);
        let mut candidates: Vec<*const Leaf> = Vec::new();
        for &(leaf, upper) in &group {
            let piece = Range::span(range.left().max(leaf.anchor), range.right().min(upper));
            self.insert_piece(leaf, upper, range, piece, value, tomb, &guard, &mut candidates);
        }
        for &(leaf, _) in &group {
            leaf.unlock();
        }
        candidates.dedup();
        for c in candidates {
            // SAFETY: collected under this write's guard, still pinned.
            self.maybe_merge(unsafe { &*c }, &guard);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn insert_piece(
        &self,
        leaf: &Leaf,
        upper: u64,
        whole: Range,
        piece: Range,
        value: Value,
        tomb: bool,
        guard: &Guard,
        candidates: &mut Vec<*const Leaf>,
    ) {
        let fragment = tomb || piece.left() != whole.left();
        if fragment {
            let n = leaf.n_frag.fetch_add(1, Ordering::Relaxed) + 1;
            Stats::add(&self.stats.fragment_insertions, 1);
            if n > self.config.merge_threshold {
                candidates.push(leaf);
            }
        }
        // A piece with the same range as a stored entry replaces that
        // entry's secondary record; readers must not see the gap.
        let overwrite = !tomb && piece != whole && leaf.has_range(piece);
        if overwrite {
            leaf.begin(Change::Gc);
        }
        let v = if tomb {
            self.format.tombstone()
        } else if piece == whole {
            value
        } else {
            self.semantics.divide_value(whole, value, piece)
        };
        self.insert_entry(leaf, upper, Entry::new(piece, v), guard, candidates);
        if overwrite {
            leaf.end();
        }
    }

    fn insert_entry(&self, leaf: &Leaf, upper: u64, pending: Entry, guard: &Guard, candidates: &mut Vec<*const Leaf>) {
        let cap = self.config.capacity;
        if leaf.len() < cap {
            leaf.append(pending);
            return;
        }
        GC_SCRATCH.with(|cell| match cell.try_borrow_mut() {
            Ok(mut scratch) => self.collect_or_split(leaf, upper, pending, guard, candidates, &mut scratch),
            Err(_) => self.collect_or_split(leaf, upper, pending, guard, candidates, &mut GcScratch::default()),
        })
    }

    fn collect_or_split(
        &self,
        leaf: &Leaf,
        upper: u64,
        pending: Entry,
        guard: &Guard,
        candidates: &mut Vec<*const Leaf>,
        scratch: &mut GcScratch,
    ) {
        let cap = self.config.capacity;
        let tombstone = self.format.tombstone();
        Stats::add(&self.stats.gc_invocations, 1);
        Stats::add(&self.stats.lightweight_runs, 1);
        let GcScratch {
            entries,
            removed,
            lt,
            union,
            dropped,
        } = scratch;
        leaf.read_entries(entries);
        entries.push(pending);
        let mut any = lightweight_gc_into(entries, removed, lt);
        if any {
            Stats::add(&self.stats.lightweight_effective, 1);
        } else {
            Stats::add(&self.stats.normal_runs, 1);
            any = normal_gc_into(entries, tombstone, removed, union);
        }
        if any {
            if removed[..cap].contains(&true) {
                leaf.begin(Change::Gc);
                dropped.clear();
                compact_into(entries, removed, dropped);
                leaf.store_entries(entries);
                leaf.end();
                Stats::add(&self.stats.entries_reclaimed, dropped.len() as u64);
                self.discard(dropped, entries);
            }
            return;
        }
        let (entries, union) = (&*entries, &*union);

        let plan = select_split_point(entries, union, leaf.anchor, upper)
            .expect("entries that survive GC have distinct boundaries");
        let layout = layout_split(entries, &plan, leaf.anchor, upper, cap, tombstone)
            .expect("a full leaf plus one entry always splits");
        Stats::add(&self.stats.splits, 1);
        if !layout.divided {
            Stats::add(&self.stats.splits_without_division, 1);
        }
        Stats::add(&self.stats.second_splits, layout.second_splits as u64);
        Stats::add(&self.stats.extra_splits, layout.extra_splits as u64);
        Stats::add(&self.stats.split_imbalance_sum, layout.imbalance as u64);

        leaf.begin(Change::Split);
        let (fresh, dropped, survivors) = self.apply_layout(leaf, entries, layout, None, guard, false);
        leaf.end();
        self.discard(&dropped, &survivors);
        for p in fresh {
            // SAFETY: just linked; protected by `guard`.
            if unsafe { &*p }.n_frag.load(Ordering::Relaxed) > self.config.merge_threshold {
                candidates.push(p);
            }
        }
    }

    /// Writes `layout` over `left` (and `absorbed`, its right neighbor,
    /// when re-splitting after a merge). Callers hold the locks and have
    /// opened windows on both. Returns new leaves, source entries that are
    /// no longer stored, and all stored entries.
    fn apply_layout(
        &self,
        left: &Leaf,
        source: &[Entry],
        layout: SplitLayout,
        absorbed: Option<&Leaf>,
        guard: &Guard,
        reset_fragments: bool,
    ) -> (Vec<*const Leaf>, Vec<Entry>, Vec<Entry>) {
        let tombstone = self.format.tombstone();
        let cap = self.config.capacity;
        let mut kept = vec![false; source.len()];
        let mut parts: Vec<(u64, Vec<Entry>, u32)> = Vec::with_capacity(layout.parts.len());
        for part in &layout.parts {
            let mut entries = Vec::with_capacity(part.entries.len());
            let mut frags = 0;
            for p in &part.entries {
                let src = source[p.origin];
                let v = if p.range == src.range {
                    kept[p.origin] = true;
                    src.value
                } else if src.value == tombstone {
                    tombstone
                } else {
                    self.semantics.divide_value(src.range, src.value, p.range)
                };
                if p.range.left() != src.range.left() {
                    frags += 1;
                }
                entries.push(Entry::new(p.range, v));
            }
            parts.push((part.anchor, entries, frags));
        }

        let old_next: Shared<'_, Leaf> = match absorbed {
            Some(r) => r.next_shared(guard),
            None => left.next_shared(guard),
        };
        let fresh: Vec<*mut Leaf> = parts[1..]
            .iter()
            .map(|(anchor, entries, frags)| {
                let leaf = Leaf::with_entries(*anchor, cap, entries);
                leaf.n_frag.store(*frags, Ordering::Relaxed);
                Box::into_raw(Box::new(leaf))
            })
            .collect();
        for (i, &p) in fresh.iter().enumerate() {
            // SAFETY: freshly allocated and not yet shared.
            let leaf = unsafe { &*p };
            let prev = if i == 0 {
                left as *const Leaf
            } else {
                fresh[i - 1] as *const Leaf
            };
            leaf.prev.store(Shared::from(prev), Ordering::Relaxed);
            let next = match fresh.get(i + 1) {
                Some(&n) => Shared::from(n as *const Leaf),
                None => old_next,
            };
            leaf.next.store(next, Ordering::Relaxed);
        }
        let last: *const Leaf = fresh.last().map_or(left as *const Leaf, |&p| p as *const Leaf);
        // SAFETY: the old successor is protected by `guard`.
        if let Some(n) = unsafe { old_next.as_ref() } {
            n.prev.store(Shared::from(last), Ordering::Release);
        }

        left.store_entries(&parts[0].1);
        if reset_fragments {
            left.n_frag.store(parts[0].2, Ordering::Relaxed);
        }
        let first_next = fresh.first().map_or(old_next, |&p| Shared::from(p as *const Leaf));
        left.next.store(first_next, Ordering::Release);
        if let Some(r) = absorbed {
            r.mark_deleted();
        }
        {
            let mut map = self.anchors.write();
            if let Some(r) = absorbed {
                map.remove(r.anchor);
            }
            for &p in &fresh {
                // SAFETY: as above.
                map.insert(unsafe { &*p }.anchor, p as usize);
            }
        }

        let survivors: Vec<Entry> = parts.into_iter().flat_map(|(_, e, _)| e).collect();
        let dropped: Vec<Entry> = source.iter().zip(&kept).filter(|(_, &k)| !k).map(|(e, _)| *e).collect();
        (
            fresh.into_iter().map(|p| p as *const Leaf).collect(),
            dropped,
            survivors,
        )
    }

    /// Tells the semantics about entries that left the index, skipping any
    /// identical entry that is still stored.
    fn discard(&self, dropped: &[Entry], survivors: &[Entry]) {
        let tombstone = self.format.tombstone();
        for (i, e) in dropped.iter().enumerate() {
            if e.value == tombstone || survivors.contains(e) || dropped[..i].contains(e) {
                continue;
            }
            self.semantics.discard(e.range, e.value);
        }
    }

    fn retire(&self, leaf: &Leaf, guard: &Guard) {
        Stats::add(&self.stats.leaves_retired, 1);
        let stats = Arc::clone(&self.stats);
        let p = SendPtr(leaf as *const Leaf as *mut Leaf);
        // SAFETY: the leaf is unlinked from the list and the anchor index,
        // so only threads pinned before now can still reach it.
        unsafe {
            guard.defer_unchecked(move || {
                let p = p;
                drop(Box::from_raw(p.0));
                Stats::add(&stats.leaves_freed, 1);
            });
        }
    }

    fn maybe_merge(&self, right: &Leaf, guard: &Guard) {
        let threshold = self.config.merge_threshold;
        if right.n_frag.load(Ordering::Relaxed) <= threshold {
            return;
        }
        if right.anchor == 0 {
            right.lock();
            right.n_frag.store(0, Ordering::Relaxed);
            right.unlock();
            return;
        }
        for _ in 0..16 {
            if right.is_deleted() {
                return;
            }
            let left = self.leaf_at(right.anchor - 1, guard);
            left.lock();
            let adjacent = !left.is_deleted() && left.next(guard).is_some_and(|n| std::ptr::eq(n, right));
            if !adjacent {
                left.unlock();
                continue;
            }
            right.lock();
            if !right.is_deleted() && right.n_frag.load(Ordering::Relaxed) > threshold {
                self.merge_pair(left, right, guard);
            }
            right.unlock();
            left.unlock();
            return;
        }
    }

    fn merge_pair(&self, left: &Leaf, right: &Leaf, guard: &Guard) {
        let tombstone = self.format.tombstone();
        let cap = self.config.capacity;
        let upper = right.upper(guard, self.config.key_max);
        left.begin(Change::Merge);
        right.begin(Change::Merge);

        let mut dropped = Vec::new();
        let mut le = left.entries();
        let (removed, _) = normal_gc(&le, tombstone);
        dropped.extend(compact(&mut le, &removed));
        let mut re = right.entries();
        let (removed, _) = normal_gc(&re, tombstone);
        dropped.extend(compact(&mut re, &removed));

        let (merged, _) = coalesce(&le, &re, right.anchor, tombstone, |a, b| {
            self.semantics
                .merge_range(a.range, a.value, b.range, b.value)
                .map(|(r, v)| Entry::new(r, v))
        });

        if merged.len() <= cap {
            left.store_entries(&merged);
            let next = right.next_shared(guard);
            // SAFETY: protected by `guard`.
            if let Some(n) = unsafe { next.as_ref() } {
                n.prev.store(Shared::from(left as *const Leaf), Ordering::Release);
            }
            left.next.store(next, Ordering::Release);
            right.mark_deleted();
            self.anchors.write().remove(right.anchor);
            left.n_frag.store(0, Ordering::Relaxed);
            right.end();
            left.end();
            self.retire(right, guard);
            Stats::add(&self.stats.merges, 1);
            self.discard(&dropped, &merged);
            return;
        }

        let mut merged = merged;
        let (removed, union) = normal_gc(&merged, tombstone);
        dropped.extend(compact(&mut merged, &removed));
        let fallback = SplitPlan {
            split_point: right.anchor,
            candidates: Vec::new(),
            scores: Vec::new(),
            boundaries: Vec::new(),
            p_lmax: 0,
            p_rmin: 0,
            from_union: false,
        };
        let layout = select_split_point(&merged, &union, left.anchor, upper)
            .and_then(|plan| layout_split(&merged, &plan, left.anchor, upper, cap, tombstone))
            .or_else(|_| layout_split(&merged, &fallback, left.anchor, upper, cap, tombstone))
            .expect("cutting at the old boundary always fits");
        let (_, lost, survivors) = self.apply_layout(left, &merged, layout, Some(right), guard, true);
        right.end();
        left.end();
        self.retire(right, guard);
        Stats::add(&self.stats.resplits, 1);
        dropped.extend(lost);
        self.discard(&dropped, &survivors);
    }

    /// Runs normal GC on every leaf.
    pub fn force_gc(&self) {
        let tombstone = self.format.tombstone();
        let guard = epoch::pin();
        let mut leaf = self.leaf_at(0, &guard);
        loop {
            leaf.lock();
            if leaf.is_deleted() {
                let anchor = leaf.anchor;
                leaf.unlock();
                leaf = self.leaf_at(anchor, &guard);
                continue;
            }
            let mut entries = leaf.entries();
            let (removed, _) = normal_gc(&entries, tombstone);
            if removed.contains(&true) {
                leaf.begin(Change::Gc);
                let dropped = compact(&mut entries, &removed);
                leaf.store_entries(&entries);
                leaf.end();
                Stats::add(&self.stats.entries_reclaimed, dropped.len() as u64);
                self.discard(&dropped, &entries);
            }
            let next = leaf.next(&guard);
            leaf.unlock();
            match next {
                Some(n) => leaf = n,
                None => return,
            }
        }
    }

    /// Every leaf, left to right, each copied under its lock.
    pub fn leaves(&self) -> Vec<LeafSnapshot> {
        let guard = epoch::pin();
        let mut out = Vec::new();
        let mut leaf = self.leaf_at(0, &guard);
        loop {
            leaf.lock();
            if leaf.is_deleted() {
                let anchor = leaf.anchor;
                leaf.unlock();
                leaf = self.leaf_at(anchor, &guard);
                continue;
            }
            let next = leaf.next(&guard);
            out.push(LeafSnapshot {
                anchor: leaf.anchor,
                upper: next.map_or(self.config.key_max, |n| n.anchor - 1),
                entries: leaf.entries(),
                fragments: leaf.n_frag.load(Ordering::Relaxed),
                version: leaf.version(),
            });
            leaf.unlock();
            match next {
                Some(n) => leaf = n,
                None => return out,
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.anchors.read().len()
    }

    pub fn entry_count(&self) -> usize {
        self.leaves().iter().map(|l| l.entries.len()).sum()
    }

    /// Bytes held by leaves and the anchor index.
    pub fn memory_bytes(&self) -> usize {
        let per_leaf = std::mem::size_of::<Leaf>() + self.config.capacity * std::mem::size_of::<Slot>();
        self.leaf_count() * per_leaf + self.anchors.read().memory_bytes()
    }

    /// Structural checks for tests. Expects no concurrent writers.
    pub fn check_invariants(&self) -> Result<(), String> {
        let guard = epoch::pin();
        let map = self.anchors.read();
        let keys = map.keys();
        // SAFETY: `head` lives as long as the index.
        let mut leaf = unsafe { &*self.head };
        let mut anchors = Vec::new();
        let mut prev: *const Leaf = std::ptr::null();
        loop {
            leaf.check_alive();
            let v = leaf.version();
            if v.deleted() || v.busy() {
                return Err(format!("leaf {} has version {:#x}", leaf.anchor, v.0));
            }
            if map.get(leaf.anchor) != Some(leaf as *const Leaf as usize) {
                return Err(format!("anchor {} does not map to its leaf", leaf.anchor));
            }
            let back = leaf.prev.load(Ordering::Acquire, &guard).as_raw();
            if !prev.is_null() && back != prev {
                return Err(format!("leaf {} has a stale back link", leaf.anchor));
            }
            let upper = leaf.upper(&guard, self.config.key_max);
            let entries = leaf.entries();
            if entries.len() > self.config.capacity {
                return Err(format!("leaf {} holds {} entries", leaf.anchor, entries.len()));
            }
            for e in &entries {
                if e.range.left() < leaf.anchor || e.range.right() > upper {
                    return Err(format!("{:?} outside leaf [{}, {}]", e.range, leaf.anchor, upper));
                }
            }
            if anchors.last().is_some_and(|&a| a >= leaf.anchor) {
                return Err(format!("anchors out of order at {}", leaf.anchor));
            }
            anchors.push(leaf.anchor);
            prev = leaf;
            match leaf.next(&guard) {
                Some(n) => leaf = n,
                None => break,
            }
        }
        if anchors != keys {
            return Err(format!(
                "anchor index has {} keys, list has {}",
                keys.len(),
                anchors.len()
            ));
        }
        Ok(())
    }
}

impl<S: ValueSemantics> Drop for RaskIndex<S> {
    fn drop(&mut self) {
        // SAFETY: `&mut self` rules out other users; unlinked leaves belong
        // to the collector and are not reachable from `head`.
        unsafe {
            let guard = epoch::unprotected();
            let mut p = self.head;
            while !p.is_null() {
                let next = (*p).next.load(Ordering::Relaxed, guard).as_raw() as *mut Leaf;
                drop(Box::from_raw(p));
                p = next;
            }
        }
    }
}

impl<S: ValueSemantics> std::fmt::Debug for RaskIndex<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RaskIndex")
            .field("config", &self.config)
            .field("leaves", &self.leaf_count())
            .finish()
    }
}
