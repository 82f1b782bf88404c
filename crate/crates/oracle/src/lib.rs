//! Brute-force reference for range-keyed maps.
//!
//! [`FlatRangeMap`] stores one cell per block address and answers every
//! query by walking blocks one at a time. It is slow on purpose: it shares
//! no code with the index it checks, so agreement between the two is
//! meaningful.
//!
//! Values are plain `u128` tokens and ranges are `(left, len)` pairs so the
//! crate does not depend on the index it is used to test.

use std::collections::HashMap;

/// Latest write covering one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cell {
    origin_left: u64,
    origin_len: u32,
    value: u128,
    seq: u64,
}

/// A maximal run of blocks that share a value and continue each other's
/// offsets within the original write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Run {
    pub left: u64,
    pub len: u64,
    pub value: u128,
    /// Offset of `left` from the start of the write that produced it.
    pub offset: u64,
}

impl Run {
    pub fn right(&self) -> u64 {
        self.left + self.len - 1
    }
}

/// Per-block latest-writer map.
#[derive(Default, Debug, Clone)]
pub struct FlatRangeMap {
    cells: HashMap<u64, Cell>,
    seq: u64,
}

impl FlatRangeMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, left: u64, len: u32, value: u128) {
        assert!(len >= 1, "empty range");
        self.seq += 1;
        let cell = Cell {
            origin_left: left,
            origin_len: len,
            value,
            seq: self.seq,
        };
        for block in left..=left + (len as u64 - 1) {
            self.cells.insert(block, cell);
        }
    }

    pub fn delete(&mut self, left: u64, len: u32) {
        assert!(len >= 1, "empty range");
        self.seq += 1;
        for block in left..=left + (len as u64 - 1) {
            self.cells.remove(&block);
        }
    }

    /// Value and offset stored for a single block.
    pub fn block(&self, block: u64) -> Option<(u128, u64)> {
        self.cells.get(&block).map(|c| (c.value, block - c.origin_left))
    }

    /// Runs over `[left, left + len)`, coalescing adjacent blocks with the
    /// same value and contiguous offsets.
    pub fn get(&self, left: u64, len: u32) -> Vec<Run> {
        let mut out: Vec<Run> = Vec::new();
        for block in left..=left + (len as u64 - 1) {
            let Some((value, offset)) = self.block(block) else {
                continue;
            };
            push_block(&mut out, block, value, offset);
        }
        out
    }

    /// Same as [`get`](Self::get) but runs also split where the origin
    /// write changes, even when values and offsets happen to line up.
    pub fn get_by_origin(&self, left: u64, len: u32) -> Vec<(Run, (u64, u32))> {
        let mut out: Vec<(Run, (u64, u32))> = Vec::new();
        for block in left..=left + (len as u64 - 1) {
            let Some(c) = self.cells.get(&block) else {
                continue;
            };
            let offset = block - c.origin_left;
            let origin = (c.origin_left, c.origin_len);
            if let Some((last, last_origin)) = out.last_mut() {
                if *last_origin == origin && last.right() + 1 == block {
                    last.len += 1;
                    continue;
                }
            }
            out.push((
                Run {
                    left: block,
                    len: 1,
                    value: c.value,
                    offset,
                },
                origin,
            ));
        }
        out
    }

    /// Number of blocks currently holding a value.
    pub fn live_blocks(&self) -> usize {
        self.cells.len()
    }
}

/// Canonicalizes an arbitrary list of `(left, len, value, offset)` pieces
/// into the same run form [`FlatRangeMap::get`] produces. Pieces must be
/// pairwise disjoint.
pub fn canonical_runs<I>(pieces: I) -> Vec<Run>
where
    I: IntoIterator<Item = Run>,
{
    let mut pieces: Vec<Run> = pieces.into_iter().collect();
    pieces.sort_by_key(|r| r.left);
    let mut out: Vec<Run> = Vec::with_capacity(pieces.len());
    for p in pieces {
        if let Some(last) = out.last_mut() {
            assert!(p.left > last.right(), "overlapping pieces {last:?} {p:?}");
            if last.right() + 1 == p.left && last.value == p.value && last.offset + last.len == p.offset {
                last.len += p.len;
                continue;
            }
        }
        out.push(p);
    }
    out
}

/// Returns the first block at which two run lists disagree.
pub fn first_divergence(a: &[Run], b: &[Run]) -> Option<u64> {
    let expand = |runs: &[Run]| -> Vec<(u64, u128, u64)> {
        runs.iter()
            .flat_map(|r| (0..r.len).map(move |i| (r.left + i, r.value, r.offset + i)))
            .collect()
    };
    let (ea, eb) = (expand(a), expand(b));
    for (x, y) in ea.iter().zip(eb.iter()) {
        if x != y {
            return Some(x.0.min(y.0));
        }
    }
    match ea.len().cmp(&eb.len()) {
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Less => Some(eb[ea.len()].0),
        std::cmp::Ordering::Greater => Some(ea[eb.len()].0),
    }
}

fn push_block(out: &mut Vec<Run>, block: u64, value: u128, offset: u64) {
    if let Some(last) = out.last_mut() {
        if last.right() + 1 == block && last.value == value && last.offset + last.len == offset {
            last.len += 1;
            return;
        }
    }
    out.push(Run {
        left: block,
        len: 1,
        value,
        offset,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newer_write_shadows_middle() {
        let mut m = FlatRangeMap::new();
        m.put(1, 5, 10);
        m.put(2, 3, 20);
        let runs = m.get(1, 5);
        assert_eq!(
            runs,
            vec![
                Run {
                    left: 1,
                    len: 1,
                    value: 10,
                    offset: 0
                },
                Run {
                    left: 2,
                    len: 3,
                    value: 20,
                    offset: 0
                },
                Run {
                    left: 5,
                    len: 1,
                    value: 10,
                    offset: 4
                },
            ]
        );
    }

    #[test]
    fn empty_map_returns_nothing() {
        assert!(FlatRangeMap::new().get(0, 100).is_empty());
    }

    #[test]
    fn covering_write_replaces_everything() {
        let mut m = FlatRangeMap::new();
        m.put(2, 3, 7);
        m.put(1, 5, 9);
        assert_eq!(
            m.get(1, 5),
            vec![Run {
                left: 1,
                len: 5,
                value: 9,
                offset: 0
            }]
        );
    }

    #[test]
    fn delete_punches_hole() {
        let mut m = FlatRangeMap::new();
        m.put(1, 10, 3);
        m.delete(4, 3);
        assert_eq!(
            m.get(1, 10),
            vec![
                Run {
                    left: 1,
                    len: 3,
                    value: 3,
                    offset: 0
                },
                Run {
                    left: 7,
                    len: 4,
                    value: 3,
                    offset: 6
                },
            ]
        );
    }

    #[test]
    fn canonical_runs_merges_continuations() {
        let runs = canonical_runs([
            Run {
                left: 10,
                len: 2,
                value: 1,
                offset: 5,
            },
            Run {
                left: 5,
                len: 5,
                value: 1,
                offset: 0,
            },
            Run {
                left: 12,
                len: 1,
                value: 2,
                offset: 0,
            },
        ]);
        assert_eq!(
            runs,
            vec![
                Run {
                    left: 5,
                    len: 7,
                    value: 1,
                    offset: 0
                },
                Run {
                    left: 12,
                    len: 1,
                    value: 2,
                    offset: 0
                },
            ]
        );
    }

    #[test]
    fn divergence_points_at_block() {
        let a = [Run {
            left: 0,
            len: 4,
            value: 1,
            offset: 0,
        }];
        let b = [
            Run {
                left: 0,
                len: 2,
                value: 1,
                offset: 0,
            },
            Run {
                left: 2,
                len: 2,
                value: 2,
                offset: 0,
            },
        ];
        assert_eq!(first_divergence(&a, &b), Some(2));
        assert_eq!(first_divergence(&a, &a), None);
    }
}
