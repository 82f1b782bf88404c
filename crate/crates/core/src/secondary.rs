//! Shared side table that keeps divided values resolvable.
//!
//! When an entry is cut, every piece but the first stores the indicator
//! value and the table records `(original value, offset of the piece)`
//! under the piece's range. Records are keyed by index id as well, so one
//! table can serve many indexes.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, OnceLock};

use parking_lot::RwLock;
use rustc_hash::FxHashMap;

use crate::error::RaskError;
use crate::range::Range;
use crate::value::{Resolved, Value, ValueFormat, ValueSemantics};

/// What a divided piece stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecondaryEntry {
    pub value: Value,
    pub offset: u64,
}

type Key = (u32, u64, u32);

fn key(id: u32, r: Range) -> Key {
    (id, r.left(), r.len())
}

const SHARDS: usize = 64;

type Shard = RwLock<FxHashMap<Key, SecondaryEntry>>;

#[derive(Debug)]
pub struct SecondaryTree {
    shards: Box<[Shard]>,
    next_id: AtomicU32,
}

impl Default for SecondaryTree {
    fn default() -> Self {
        SecondaryTree {
            shards: (0..SHARDS).map(|_| RwLock::default()).collect(),
            next_id: AtomicU32::new(0),
        }
    }
}

impl SecondaryTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide table used by indexes built with default semantics.
    pub fn global() -> Arc<SecondaryTree> {
        static GLOBAL: OnceLock<Arc<SecondaryTree>> = OnceLock::new();
        GLOBAL.get_or_init(|| Arc::new(SecondaryTree::new())).clone()
    }

    /// A fresh index id.
    pub fn register(&self) -> u32 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn shard(&self, k: &Key) -> &Shard {
        let h = (k.1 ^ (k.0 as u64) << 40).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        &self.shards[(h >> 58) as usize]
    }

    pub fn get(&self, id: u32, r: Range) -> Option<SecondaryEntry> {
        let k = key(id, r);
        self.shard(&k).read().get(&k).copied()
    }

    pub fn insert(&self, id: u32, r: Range, e: SecondaryEntry) -> Option<SecondaryEntry> {
        let k = key(id, r);
        self.shard(&k).write().insert(k, e)
    }

    pub fn remove(&self, id: u32, r: Range) -> Option<SecondaryEntry> {
        let k = key(id, r);
        self.shard(&k).write().remove(&k)
    }

    fn rekey(&self, id: u32, from: Range, to: Range) {
        if let Some(e) = self.remove(id, from) {
            self.insert(id, to, e);
        }
    }

    /// Ranges with a record for `id`, ascending.
    pub fn ranges(&self, id: u32) -> Vec<Range> {
        let mut out: Vec<Range> = self
            .shards
            .iter()
            .flat_map(|s| {
                s.read()
                    .keys()
                    .filter(|k| k.0 == id)
                    .map(|&(_, left, len)| Range::new(left, len).expect("stored ranges are valid"))
                    .collect::<Vec<_>>()
            })
            .collect();
        out.sort_unstable_by_key(|r| (r.left(), r.len()));
        out
    }

    pub fn len_for(&self, id: u32) -> usize {
        self.shards
            .iter()
            .map(|s| s.read().keys().filter(|k| k.0 == id).count())
            .sum()
    }

    /// Drops every record of `id`.
    pub fn clear(&self, id: u32) {
        for s in self.shards.iter() {
            s.write().retain(|&(owner, _, _), _| owner != id);
        }
    }
}

/// Default value semantics: a value names a contiguous run that starts at
/// the first block of the write, so a piece is the same value at an offset.
#[derive(Debug)]
pub struct SecondarySemantics {
    id: u32,
    format: ValueFormat,
    tree: Arc<SecondaryTree>,
}

impl SecondarySemantics {
    pub fn new(tree: Arc<SecondaryTree>, format: ValueFormat) -> Self {
        let id = tree.register();
        SecondarySemantics { id, format, tree }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn tree(&self) -> &Arc<SecondaryTree> {
        &self.tree
    }

    fn logical(&self, r: Range, v: Value) -> Option<SecondaryEntry> {
        if self.format.is_indicator(v) {
            self.tree.get(self.id, r)
        } else {
            Some(SecondaryEntry { value: v, offset: 0 })
        }
    }
}

impl Drop for SecondarySemantics {
    fn drop(&mut self) {
        self.tree.clear(self.id);
    }
}

impl ValueSemantics for SecondarySemantics {
    fn divide_value(&self, original: Range, value: Value, sub: Range) -> Value {
        debug_assert!(crate::range::covers(original, sub));
        let delta = sub.left() - original.left();
        if !self.format.is_indicator(value) && delta == 0 {
            return value;
        }
        let Some(base) = self.logical(original, value) else {
            debug_assert!(false, "indicator entry {original:?} has no record");
            return self.format.indicator();
        };
        self.tree.insert(
            self.id,
            sub,
            SecondaryEntry {
                value: base.value,
                offset: base.offset + delta,
            },
        );
        self.format.indicator()
    }

    fn merge_range(&self, a: Range, va: Value, b: Range, vb: Value) -> Option<(Range, Value)> {
        if a.right().checked_add(1) != Some(b.left()) {
            return None;
        }
        let la = self.logical(a, va)?;
        let lb = self.logical(b, vb)?;
        if la.value != lb.value || lb.offset != la.offset + a.len() as u64 {
            return None;
        }
        let union = Range::new(a.left(), a.len().checked_add(b.len())?).ok()?;
        if self.format.is_indicator(vb) {
            self.tree.remove(self.id, b);
        }
        if self.format.is_indicator(va) {
            self.tree.rekey(self.id, a, union);
        }
        Some((union, va))
    }

    fn resolve(&self, stored: Range, value: Value, sub: Range) -> Result<Resolved, RaskError> {
        let base = self
            .logical(stored, value)
            .ok_or(RaskError::MissingSecondaryEntry(stored))?;
        Ok(Resolved {
            value: base.value,
            offset: base.offset + (sub.left() - stored.left()),
        })
    }

    fn discard(&self, range: Range, value: Value) {
        if self.format.is_indicator(value) {
            self.tree.remove(self.id, range);
        }
    }
}
