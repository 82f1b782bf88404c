mod common;

use common::{assert_all, assert_read, config};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rask::{AnchorBackend, Range, RaskIndex, Value};
use rask_oracle::FlatRangeMap;

#[derive(Clone, Debug)]
enum Op {
    Put(u64, u32, u128),
    Delete(u64, u32),
    Get(u64, u32),
}

fn op(space: u64, max_len: u32) -> impl Strategy<Value = Op> {
    let range = (0..space, 1..=max_len);
    prop_oneof![
        6 => (range.clone(), 0u128..1_000_000).prop_map(|((l, n), v)| Op::Put(l, n, v)),
        1 => range.clone().prop_map(|(l, n)| Op::Delete(l, n)),
        3 => range.prop_map(|(l, n)| Op::Get(l, n)),
    ]
}

fn replay(ops: &[Op], capacity: usize, backend: AnchorBackend, space: u64) {
    let index = RaskIndex::new(config(capacity, backend)).unwrap();
    let mut oracle = FlatRangeMap::new();
    for op in ops {
        match *op {
            Op::Put(l, n, v) => {
                index.put(Range::new(l, n).unwrap(), Value(v)).unwrap();
                oracle.put(l, n, v);
            }
            Op::Delete(l, n) => {
                index.delete(Range::new(l, n).unwrap()).unwrap();
                oracle.delete(l, n);
            }
            Op::Get(l, n) => assert_read(&index, &oracle, Range::new(l, n).unwrap()),
        }
    }
    index.check_invariants().unwrap();
    assert_all(&index, &oracle, space + 64);
    assert!(index.dangling_indicators().is_empty());
    index.force_gc();
    assert_all(&index, &oracle, space + 64);
    assert_eq!(index.orphaned_secondary_entries(), Vec::<Range>::new());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn small_leaves_match_oracle(ops in proptest::collection::vec(op(256, 24), 1..400)) {
        replay(&ops, 4, AnchorBackend::Trie, 256);
    }

    #[test]
    fn default_leaves_match_oracle(ops in proptest::collection::vec(op(2048, 64), 1..600)) {
        replay(&ops, 16, AnchorBackend::Ordered, 2048);
    }
}

#[test]
fn seeded_long_run_both_backends() {
    for backend in [AnchorBackend::Trie, AnchorBackend::Ordered] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let space = 1u64 << 14;
        let index = RaskIndex::new(config(16, backend)).unwrap();
        let mut oracle = FlatRangeMap::new();
        for i in 0..60_000u128 {
            let l = rng.gen_range(0..space);
            let n = rng.gen_range(1..=128);
            match rng.gen_range(0..10) {
                0 => {
                    index.delete(Range::new(l, n).unwrap()).unwrap();
                    oracle.delete(l, n);
                }
                1..=3 => assert_read(&index, &oracle, Range::new(l, n).unwrap()),
                _ => {
                    index.put(Range::new(l, n).unwrap(), Value(i)).unwrap();
                    oracle.put(l, n, i);
                }
            }
        }
        index.check_invariants().unwrap();
        assert_all(&index, &oracle, space + 128);
        let stats = index.stats();
        assert!(stats.splits > 0 && stats.merges + stats.resplits > 0, "{stats:?}");
        index.force_gc();
        assert!(index.orphaned_secondary_entries().is_empty());
        assert!(index.dangling_indicators().is_empty());
    }
}

#[test]
fn boundary_keys() {
    let index = RaskIndex::new(config(4, AnchorBackend::Trie)).unwrap();
    let mut oracle = FlatRangeMap::new();
    let top = u64::MAX - 99;
    for i in 0..40u64 {
        let l = top + (i * 7) % 90;
        let n = (1 + i % 10) as u32;
        index.put(Range::new(l, n).unwrap(), Value(i as u128)).unwrap();
        oracle.put(l, n, i as u128);
        index
            .put(Range::new(i * 3, n).unwrap(), Value(1000 + i as u128))
            .unwrap();
        oracle.put(i * 3, n, 1000 + i as u128);
    }
    assert_read(&index, &oracle, Range::between(top, u64::MAX).unwrap());
    assert_read(&index, &oracle, Range::between(0, 200).unwrap());
    index.check_invariants().unwrap();
}

#[test]
fn rejects_bad_input() {
    let index = RaskIndex::new(rask::Config {
        key_max: 1000,
        ..rask::Config::default()
    })
    .unwrap();
    let fmt = index.format();
    assert!(index.put(Range::new(0, 4).unwrap(), fmt.tombstone()).is_err());
    assert!(index.put(Range::new(0, 4).unwrap(), fmt.indicator()).is_err());
    assert!(index.put(Range::new(999, 4).unwrap(), Value(1)).is_err());
    assert!(index.get(Range::new(999, 4).unwrap()).is_err());
    assert!(RaskIndex::new(rask::Config::with_capacity(1)).is_err());
}
