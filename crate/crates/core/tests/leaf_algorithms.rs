use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rask::log::{ablation_search, lightweight_gc, normal_gc, Entry, NonOverlapList, UnfoundList};
use rask::smo::{layout_split, select_split_point};
use rask::{Range, Value, ValueFormat};

fn tomb() -> Value {
    ValueFormat::default().tombstone()
}

/// Newest entry index covering each block of `[lo, hi]`.
fn latest(entries: &[Entry], lo: u64, hi: u64) -> Vec<Option<usize>> {
    (lo..=hi)
        .map(|b| entries.iter().rposition(|e| e.range.contains(b)))
        .collect()
}

fn arb_leaf(space: u64, max_len: u32, n: usize) -> impl Strategy<Value = Vec<Entry>> {
    proptest::collection::vec((0..space, 1..=max_len), 1..=n).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (l, len))| Entry::new(Range::new(l, len).unwrap(), Value(i as u128)))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn search_matches_blockwise(entries in arb_leaf(64, 16, 16), l in 0u64..64, len in 1u32..32) {
        let target = Range::new(l, len).unwrap();
        let mut unfound = UnfoundList::new(target);
        let out = ablation_search(&entries, &mut unfound);
        let want = latest(&entries, target.left(), target.right());
        for (i, b) in (target.left()..=target.right()).enumerate() {
            let hits: Vec<_> = out.hits.iter().filter(|h| h.sub.contains(b)).collect();
            let missing = unfound.as_slice().iter().any(|u| u.contains(b));
            match want[i] {
                Some(idx) => {
                    prop_assert_eq!(hits.len(), 1);
                    prop_assert_eq!(hits[0].entry, idx);
                    prop_assert!(!missing);
                }
                None => {
                    prop_assert!(hits.is_empty());
                    prop_assert!(missing);
                }
            }
        }
    }

    #[test]
    fn gc_is_sound_and_complete(entries in arb_leaf(64, 16, 16)) {
        let light = lightweight_gc(&entries);
        let (normal, _) = normal_gc(&entries, tomb());
        for i in 0..entries.len() {
            prop_assert!(!light[i] || normal[i]);
        }
        let survivors: Vec<Entry> = entries.iter().zip(&normal).filter(|(_, &r)| !r).map(|(e, _)| *e).collect();
        prop_assert_eq!(latest(&entries, 0, 80).iter().map(|o| o.map(|i| entries[i])).collect::<Vec<_>>(),
                        latest(&survivors, 0, 80).iter().map(|o| o.map(|i| survivors[i])).collect::<Vec<_>>());
        for (i, e) in survivors.iter().enumerate() {
            let covered = (e.range.left()..=e.range.right())
                .all(|b| survivors[i + 1..].iter().any(|n| n.range.contains(b)));
            prop_assert!(!covered, "{:?} survives under newer entries", e);
        }
    }
}

#[test]
fn split_theorem_fuzz() {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut second = 0;
    let mut checked = 0;
    let mut attempts = 0usize;
    while checked < 100_000 {
        attempts += 1;
        let space = [64u64, 256, 4096][attempts % 3];
        let max_len = [8u32, 32, 128][(attempts / 3) % 3];
        let entries: Vec<Entry> = (0..=n)
            .map(|i| {
                let l = rng.gen_range(0..space);
                Entry::new(Range::new(l, rng.gen_range(1..=max_len)).unwrap(), Value(i as u128))
            })
            .collect();
        // Only leaves that GC cannot shrink reach the splitter.
        let (removed, union) = normal_gc(&entries, tomb());
        if removed.contains(&true) {
            continue;
        }
        checked += 1;
        let plan = select_split_point(&entries, &union, 0, u64::MAX).unwrap();
        let layout = layout_split(&entries, &plan, 0, u64::MAX, n, tomb()).unwrap();
        assert_eq!(layout.extra_splits, 0, "{entries:?}");
        assert!(layout.second_splits <= 1);
        if plan.p_lmax > plan.p_rmin {
            assert_eq!(layout.second_splits, 0, "{entries:?}");
        }
        second += layout.second_splits;
        for part in &layout.parts {
            assert!(part.entries.len() <= n);
            for p in &part.entries {
                assert!(p.range.left() >= part.anchor && p.range.right() <= part.upper);
            }
        }
        // Every block keeps its newest writer.
        let union_all = NonOverlapList::from_entries(&entries);
        for c in union_all.components() {
            for b in c.left..=c.right {
                let want = entries.iter().rposition(|e| e.range.contains(b)).unwrap();
                let part = layout.parts.iter().find(|p| p.anchor <= b && b <= p.upper).unwrap();
                let got = part.entries.iter().rev().find(|p| p.range.contains(b)).unwrap().origin;
                assert_eq!(got, want);
            }
        }
    }
    assert!(second < checked);
}
