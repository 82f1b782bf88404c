//! Lazy point-index baseline.
//!
//! An ordered map keyed by `(left, seq)`. A write inserts its range with a
//! fresh sequence number and removes only the entries it fully covers; a
//! read collects every intersecting entry and keeps, block by block, the
//! one with the highest sequence number.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::mem::size_of;
use std::sync::RwLock;

use rask_oracle::Run;

#[derive(Clone, Copy, Debug)]
struct Stored {
    len: u32,
    value: u128,
    tombstone: bool,
}

#[derive(Default, Debug)]
struct Inner {
    map: BTreeMap<(u64, u64), Stored>,
    seq: u64,
    max_len: u32,
}

#[derive(Default, Debug)]
pub struct LazyBaseline {
    inner: RwLock<Inner>,
}

impl Inner {
    fn insert(&mut self, left: u64, len: u32, value: u128, tombstone: bool) {
        assert!(len >= 1, "empty range");
        let right = left + (len as u64 - 1);
        let covered: Vec<(u64, u64)> = self
            .map
            .range((left, 0)..=(right, u64::MAX))
            .filter(|(&(l, _), s)| l + (s.len as u64 - 1) <= right)
            .map(|(&k, _)| k)
            .collect();
        for k in covered {
            self.map.remove(&k);
        }
        self.seq += 1;
        self.map.insert((left, self.seq), Stored { len, value, tombstone });
        self.max_len = self.max_len.max(len);
    }

    fn get(&self, left: u64, len: u32) -> Vec<Run> {
        let right = left + (len as u64 - 1);
        let from = left.saturating_sub(self.max_len.saturating_sub(1) as u64);
        let mut hits: Vec<(u64, u64, Stored)> = self
            .map
            .range((from, 0)..=(right, u64::MAX))
            .filter(|(&(l, _), s)| l + (s.len as u64 - 1) >= left)
            .map(|(&(l, seq), &s)| (seq, l, s))
            .collect();
        hits.sort_unstable_by_key(|h| Reverse(h.0));

        let mut unfound = vec![(left, right)];
        let mut out = Vec::new();
        for (_, l, s) in hits {
            if unfound.is_empty() {
                break;
            }
            let r = l + (s.len as u64 - 1);
            let mut rest = Vec::with_capacity(unfound.len() + 1);
            for &(a, b) in &unfound {
                if b < l || a > r {
                    rest.push((a, b));
                    continue;
                }
                let (x, y) = (a.max(l), b.min(r));
                if !s.tombstone {
                    out.push(Run {
                        left: x,
                        len: y - x + 1,
                        value: s.value,
                        offset: x - l,
                    });
                }
                if a < x {
                    rest.push((a, x - 1));
                }
                if y < b {
                    rest.push((y + 1, b));
                }
            }
            unfound = rest;
        }
        out.sort_unstable_by_key(|r| r.left);
        out
    }
}

impl LazyBaseline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, left: u64, len: u32, value: u128) {
        self.inner
            .write()
            .expect("baseline lock")
            .insert(left, len, value, false);
    }

    pub fn delete(&self, left: u64, len: u32) {
        self.inner.write().expect("baseline lock").insert(left, len, 0, true);
    }

    /// Disjoint pieces of `[left, left+len)` in ascending order.
    pub fn get(&self, left: u64, len: u32) -> Vec<Run> {
        self.inner.read().expect("baseline lock").get(left, len)
    }

    pub fn entry_count(&self) -> usize {
        self.inner.read().expect("baseline lock").map.len()
    }

    /// Estimated bytes of B-tree nodes, assuming nodes of eleven slots
    /// filled to about three quarters.
    pub fn memory_bytes(&self) -> usize {
        const SLOTS: usize = 11;
        const HEADER: usize = 16;
        let slot = size_of::<(u64, u64)>() + size_of::<Stored>();
        self.entry_count().div_ceil(8) * (SLOTS * slot + HEADER)
    }
}
