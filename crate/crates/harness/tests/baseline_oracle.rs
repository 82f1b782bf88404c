use proptest::prelude::*;
use rask_harness::LazyBaseline;
use rask_oracle::{canonical_runs, first_divergence, FlatRangeMap};

#[derive(Clone, Debug)]
enum Op {
    Put(u64, u32),
    Delete(u64, u32),
    Get(u64, u32),
}

fn op() -> impl Strategy<Value = Op> {
    (0..3u8, 0u64..512, 1u32..48).prop_map(|(k, l, n)| match k {
        0 => Op::Put(l, n),
        1 => Op::Delete(l, n),
        _ => Op::Get(l, n),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lazy_baseline_matches_oracle(ops in proptest::collection::vec(op(), 1..300)) {
        let lazy = LazyBaseline::new();
        let mut oracle = FlatRangeMap::new();
        for (i, op) in ops.iter().enumerate() {
            match *op {
                Op::Put(l, n) => {
                    lazy.put(l, n, i as u128);
                    oracle.put(l, n, i as u128);
                }
                Op::Delete(l, n) => {
                    lazy.delete(l, n);
                    oracle.delete(l, n);
                }
                Op::Get(l, n) => {
                    let got = canonical_runs(lazy.get(l, n));
                    let want = oracle.get(l, n);
                    prop_assert_eq!(first_divergence(&got, &want), None, "op {}", i);
                }
            }
        }
        let got = canonical_runs(lazy.get(0, 600));
        prop_assert_eq!(first_divergence(&got, &oracle.get(0, 600)), None);
    }
}
