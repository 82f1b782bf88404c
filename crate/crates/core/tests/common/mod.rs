#![allow(dead_code)]

use rask::{AnchorBackend, Config, Extent, Range, RaskIndex};
use rask_oracle::{canonical_runs, first_divergence, FlatRangeMap, Run};

pub fn runs(extents: &[Extent]) -> Vec<Run> {
    canonical_runs(extents.iter().map(|e| Run {
        left: e.range.left(),
        len: e.range.len() as u64,
        value: e.value.0,
        offset: e.offset,
    }))
}

/// Compares one read against the oracle, panicking with the first
/// diverging block.
pub fn assert_read(index: &RaskIndex, oracle: &FlatRangeMap, target: Range) {
    let got = runs(&index.get(target).expect("read succeeds"));
    let want = oracle.get(target.left(), target.len());
    if let Some(block) = first_divergence(&got, &want) {
        panic!(
            "divergence at block {block} reading {target:?}\n rask:   {:?}\n oracle: {:?}",
            got.iter().filter(|r| r.right() >= block).take(3).collect::<Vec<_>>(),
            want.iter().filter(|r| r.right() >= block).take(3).collect::<Vec<_>>(),
        );
    }
}

pub fn config(capacity: usize, backend: AnchorBackend) -> Config {
    Config {
        backend,
        ..Config::with_capacity(capacity)
    }
}

/// Reads the whole written space in chunks.
pub fn assert_all(index: &RaskIndex, oracle: &FlatRangeMap, space: u64) {
    let chunk = 1u64 << 12;
    let mut left = 0;
    while left < space {
        let len = chunk.min(space - left);
        assert_read(index, oracle, Range::new(left, len as u32).unwrap());
        left += len;
    }
}
