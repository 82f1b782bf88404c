//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rask::log::{lightweight_gc, normal_gc, Entry};
use rask::smo::{layout_split, select_split_point};
use rask::{Config, Range, RaskIndex, StatsSnapshot, Value, ValueFormat};
use rask_harness::{
    compare, generate, replay, BenchOptions, LazyBaseline, RaskTarget, ReplayOptions, WorkloadInfo, WorkloadSpec,
};
use rask_oracle::{canonical_runs, first_divergence, FlatRangeMap, Run};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)*));
        }
    };
}

fn runs(index: &RaskIndex, r: Range) -> Vec<Run> {
    canonical_runs(index.get(r).expect("read succeeds").into_iter().map(|e| Run {
        left: e.range.left(),
        len: e.range.len() as u64,
        value: e.value.0,
        offset: e.offset,
    }))
}

fn spec(s: &str) -> WorkloadSpec {
    s.parse().expect("valid workload spec")
}

fn tomb() -> Value {
    ValueFormat::default().tombstone()
}

fn oracle_equivalence(kept: &mut Vec<RaskIndex>) -> Outcome {
    const OPS: usize = 1_000_000;
    const SPACE: u64 = 1 << 20;
    let start = Instant::now();
    let mut reads = 0u64;
    for seed in [1u64, 2, 3] {
        let index = RaskIndex::new(Config::default()).map_err(|e| e.to_string())?;
        let mut oracle = FlatRangeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..OPS {
            let len = rng.gen_range(1..=128u32);
            let left = rng.gen_range(0..=SPACE - len as u64);
            let r = Range::new(left, len).unwrap();
            match rng.gen_range(0..20) {
                0..=8 => {
                    index.put(r, Value(i as u128 + 1)).map_err(|e| e.to_string())?;
                    oracle.put(left, len, i as u128 + 1);
                }
                9..=10 => {
                    index.delete(r).map_err(|e| e.to_string())?;
                    oracle.delete(left, len);
                }
                _ => {
                    reads += 1;
                    let got = runs(&index, r);
                    let want = oracle.get(left, len);
                    if let Some(block) = first_divergence(&got, &want) {
                        return Err(format!("seed {seed} op {i}: block {block} differs reading {r:?}"));
                    }
                }
            }
        }
        index.check_invariants()?;
        kept.push(index);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "exact, but took {secs:.1}s");
    Ok(format!("3 seeds x {OPS} ops, {reads} reads exact, {secs:.1}s"))
}

fn random_leaf(rng: &mut ChaCha8Rng, n: usize) -> Vec<Entry> {
    let space = [32u64, 128, 1024][rng.gen_range(0..3)];
    let max_len = [4u32, 16, 64][rng.gen_range(0..3)];
    (0..n)
        .map(|i| {
            let l = rng.gen_range(0..space);
            let v = if rng.gen_bool(0.1) { tomb() } else { Value(i as u128) };
            Entry::new(Range::new(l, rng.gen_range(1..=max_len)).unwrap(), v)
        })
        .collect()
}

/// Newest live value per block over `[lo, hi]`, tombstones read as absent.
fn visible(entries: &[Entry], lo: u64, hi: u64) -> Vec<Option<Entry>> {
    (lo..=hi)
        .map(|b| {
            entries
                .iter()
                .rev()
                .find(|e| e.range.contains(b))
                .filter(|e| e.value != tomb())
                .copied()
        })
        .collect()
}

fn gc_completeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut removed_total = 0;
    for case in 0..10_000 {
        let entries = random_leaf(&mut rng, 16);
        let light = lightweight_gc(&entries);
        let (normal, _) = normal_gc(&entries, tomb());
        for i in 0..entries.len() {
            ensure!(
                !light[i] || normal[i],
                "case {case}: lightweight removed entry {i} that normal kept"
            );
        }
        let survivors: Vec<Entry> = entries
            .iter()
            .zip(&normal)
            .filter(|(_, &r)| !r)
            .map(|(e, _)| *e)
            .collect();
        removed_total += entries.len() - survivors.len();
        let hi = entries.iter().map(|e| e.range.right()).max().unwrap();
        ensure!(
            visible(&entries, 0, hi) == visible(&survivors, 0, hi),
            "case {case}: reads changed"
        );
        for (i, e) in survivors.iter().enumerate() {
            let covered =
                (e.range.left()..=e.range.right()).all(|b| survivors[i + 1..].iter().any(|n| n.range.contains(b)));
            ensure!(!covered, "case {case}: {e:?} survives under newer entries");
        }
    }
    Ok(format!("10000 leaves, {removed_total} entries removed"))
}

/// Entries that all contain one block, each older one sticking out of the
/// union of newer ones on at least one side so that GC keeps it.
fn stacked_leaf(rng: &mut ChaCha8Rng, n: usize) -> Vec<Entry> {
    let center = 1u64 << 20;
    let (mut lo, mut hi) = (center, center);
    let mut out: Vec<Entry> = (0..n)
        .map(|_| {
            let (l, r) = match rng.gen_range(0..3) {
                0 => {
                    lo -= rng.gen_range(1..4);
                    (lo, rng.gen_range(center..=hi))
                }
                1 => {
                    hi += rng.gen_range(1..4);
                    (rng.gen_range(lo..=center), hi)
                }
                _ => {
                    lo -= rng.gen_range(1..4);
                    hi += rng.gen_range(1..4);
                    (lo, hi)
                }
            };
            Range::between(l, r).unwrap()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .enumerate()
        .map(|(i, r)| Entry::new(r, Value(i as u128)))
        .collect();
    // Some unrelated entries to the side keep the union from being a
    // single component.
    if rng.gen_bool(0.3) {
        let k = rng.gen_range(1..n / 2);
        for (i, e) in out.iter_mut().take(k).enumerate() {
            let l = center + 1000 + 10 * i as u64;
            *e = Entry::new(Range::new(l, rng.gen_range(1..8)).unwrap(), e.value);
        }
    }
    out
}

fn split_theorem() -> Outcome {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut second, mut disjoint) = (0, 0, 0);
    while checked < 100_000 {
        let entries = if checked % 2 == 0 {
            random_leaf(&mut rng, n + 1)
        } else {
            stacked_leaf(&mut rng, n + 1)
        };
        let (removed, union) = normal_gc(&entries, tomb());
        if removed.contains(&true) {
            continue;
        }
        checked += 1;
        let plan = select_split_point(&entries, &union, 0, u64::MAX).map_err(|e| e.to_string())?;
        let layout = layout_split(&entries, &plan, 0, u64::MAX, n, tomb()).map_err(|e| e.to_string())?;
        let overflow = layout.parts.iter().any(|p| p.entries.len() > n);
        ensure!(
            !overflow && layout.extra_splits == 0,
            "overflow after second split: {entries:?}"
        );
        if plan.p_lmax > plan.p_rmin {
            disjoint += 1;
            ensure!(
                layout.second_splits == 0,
                "second split with P_lmax > P_rmin: {entries:?}"
            );
        }
        ensure!(
            layout.second_splits <= 1,
            "{} second splits: {entries:?}",
            layout.second_splits
        );
        second += layout.second_splits;
    }
    Ok(format!(
        "{checked} cases ({disjoint} with P_lmax > P_rmin), {second} second splits, no overflow"
    ))
}

fn write_only(s: &str) -> Result<(RaskIndex, StatsSnapshot, u64), String> {
    let records = generate(&spec(s)).map_err(|e| e.to_string())?;
    let index = RaskIndex::new(Config::default()).map_err(|e| e.to_string())?;
    for (i, r) in records.iter().enumerate() {
        index
            .put(Range::new(r.lba, r.length).unwrap(), Value(i as u128 + 1))
            .map_err(|e| e.to_string())?;
    }
    let stats = index.stats();
    Ok((index, stats, records.len() as u64))
}

const UNIFORM: &str = "ops=1000000,write=1,len=uniform:4-64,space=4294967296,seed=4";

fn split_quality() -> Outcome {
    let (_, s, _) = write_only(UNIFORM)?;
    ensure!(s.splits > 0, "no splits");
    let clean = s.splits_without_division as f64 / s.splits as f64;
    let second = s.second_splits as f64 / s.splits as f64;
    let imbalance = s.split_imbalance_sum as f64 / s.splits as f64;
    let line = format!(
        "{} splits: {:.1}% divide nothing, {:.3}% second splits, mean imbalance {imbalance:.2}",
        s.splits,
        clean * 100.0,
        second * 100.0
    );
    ensure!(clean >= 0.70 && second < 0.001 && imbalance < 4.0, "{line}");
    Ok(line)
}

fn entry_compression() -> Outcome {
    let (index, _, writes) = write_only("ops=100000,write=1,len=16,space=1600000,layout=sequential,seed=5")?;
    let entries = index.entry_count() as f64;
    let ratio = entries / writes as f64;
    let line = format!("{entries} entries for {writes} writes: {ratio:.3}x (per-block index: 16x)");
    ensure!(ratio <= 1.5, "{line}");
    Ok(line)
}

fn gc_frequency() -> Outcome {
    let (_, s, writes) = write_only(UNIFORM)?;
    let rate = s.gc_invocations as f64 / writes as f64;
    let line = format!(
        "{} GC invocations for {writes} writes: {:.2}%",
        s.gc_invocations,
        rate * 100.0
    );
    ensure!(rate < 0.10, "{line}");
    Ok(line)
}

const CELL: u64 = 64;
const CELLS_PER_THREAD: u64 = 64;

fn encode(t: u64, seq: u64, left: u64) -> u128 {
    ((t as u128) << 56) | ((seq as u128) << 32) | left as u128
}

fn decode(v: Value) -> (u64, u64, u64) {
    (
        (v.0 >> 56) as u64,
        (v.0 >> 32) as u64 & 0xff_ffff,
        v.0 as u64 & 0xffff_ffff,
    )
}

/// Threads own interleaved 64-block cells, so leaves and structural changes
/// are shared while every block has one writer whose program order is the
/// linearization. Cell `t` is written only whole.
fn stress(threads: u64, ops: u64) -> Outcome {
    let start = Instant::now();
    let index = Arc::new(RaskIndex::new(Config::default()).map_err(|e| e.to_string())?);
    let space = threads * CELLS_PER_THREAD * CELL;
    let barrier = Arc::new(Barrier::new(threads as usize));
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let index = Arc::clone(&index);
            let barrier = Arc::clone(&barrier);
            thread::spawn(move || -> Result<(FlatRangeMap, u64), String> {
                let mut rng = ChaCha8Rng::seed_from_u64(70 + t);
                let mut oracle = FlatRangeMap::new();
                let mut seen: HashMap<u64, u64> = HashMap::new();
                let mut reads = 0;
                barrier.wait();
                for seq in 1..=ops {
                    match rng.gen_range(0..20) {
                        0..=1 => {
                            let r = Range::new(t * CELL, CELL as u32).unwrap();
                            index.put(r, Value(encode(t, seq, r.left()))).unwrap();
                            oracle.put(r.left(), r.len(), encode(t, seq, r.left()));
                        }
                        2..=9 => {
                            let cell = (rng.gen_range(1..CELLS_PER_THREAD) * threads + t) * CELL;
                            let off = rng.gen_range(0..CELL);
                            let len = rng.gen_range(1..=CELL - off) as u32;
                            let r = Range::new(cell + off, len).unwrap();
                            if rng.gen_bool(0.9) {
                                index.put(r, Value(encode(t, seq, r.left()))).unwrap();
                                oracle.put(r.left(), len, encode(t, seq, r.left()));
                            } else {
                                index.delete(r).unwrap();
                                oracle.delete(r.left(), len);
                            }
                        }
                        _ => {
                            reads += 1;
                            let len = rng.gen_range(1..=256u32);
                            let r = Range::new(rng.gen_range(0..space - len as u64), len).unwrap();
                            for seg in index.get_segments(r).unwrap() {
                                let mut whole: HashMap<u64, u64> = HashMap::new();
                                for e in &seg.extents {
                                    let (w, s, left) = decode(e.value);
                                    if left + e.offset != e.range.left() {
                                        return Err(format!("offset mismatch in {e:?}"));
                                    }
                                    if (e.range.left() / CELL) % threads != w {
                                        return Err(format!("block {} shows a write by thread {w}", e.range.left()));
                                    }
                                    for b in e.range.left()..=e.range.right() {
                                        let prev = seen.entry(b).or_insert(0);
                                        if s < *prev {
                                            return Err(format!("block {b} went back from {prev} to {s}"));
                                        }
                                        *prev = s;
                                    }
                                    if e.range.left() / CELL < threads {
                                        let cell = e.range.left() / CELL;
                                        if *whole.entry(cell).or_insert(s) != s {
                                            return Err(format!("torn whole-cell write in cell {cell}"));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((oracle, reads))
            })
        })
        .collect();
    let mut oracles = Vec::new();
    let mut reads = 0;
    for h in handles {
        let (oracle, r) = h.join().map_err(|_| "worker panicked".to_string())??;
        oracles.push(oracle);
        reads += r;
    }
    for cell in 0..threads * CELLS_PER_THREAD {
        let r = Range::new(cell * CELL, CELL as u32).unwrap();
        let want = oracles[(cell % threads) as usize].get(r.left(), r.len());
        if let Some(block) = first_divergence(&runs(&index, r), &want) {
            return Err(format!("lost update at block {block}"));
        }
    }
    index.check_invariants()?;
    let stats = index.stats();
    ensure!(
        stats.splits > 0 && stats.merges + stats.resplits > 0,
        "no structural changes: {stats:?}"
    );
    index.force_gc();
    ensure!(
        index.orphaned_secondary_entries().is_empty(),
        "orphaned secondary records"
    );
    Ok(format!(
        "{threads} threads x {ops} ops, {reads} reads, {} splits, {} merges, {:.1}s",
        stats.splits,
        stats.merges,
        start.elapsed().as_secs_f64()
    ))
}

const CHILD_ENV: &str = "RASK_ACCEPTANCE_CHILD";

fn valgrind_available() -> bool {
    Command::new("valgrind")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

fn concurrency() -> Outcome {
    let start = Instant::now();
    let line = stress(8, 100_000)?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "{line}; over 120s");
    if !valgrind_available() {
        return Ok(format!("{line}; valgrind not found, memory check skipped"));
    }
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let out = Command::new("valgrind")
        .args(["--quiet", "--error-exitcode=99", "--leak-check=no"])
        .arg(&exe)
        .args(["--exact", "stress_under_memcheck", "--nocapture", "--test-threads=1"])
        .env(CHILD_ENV, "1")
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure!(
        out.status.success(),
        "{line}; memcheck run failed ({}): {}",
        out.status,
        stderr.lines().take(20).collect::<Vec<_>>().join("\n")
    );
    Ok(format!("{line}; memcheck clean on 8 x 2000 ops"))
}

#[test]
fn stress_under_memcheck() {
    if std::env::var_os(CHILD_ENV).is_none() {
        return;
    }
    stress(8, 2_000).unwrap();
}

fn early_termination() -> Outcome {
    let index = RaskIndex::new(Config::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut segments, mut multi_leaf) = (0, 0);
    for i in 0..100_000u64 {
        let len = rng.gen_range(1..=64u32);
        let r = Range::new(rng.gen_range(0..1u64 << 16), len).unwrap();
        index.put(r, Value(i as u128 + 1)).map_err(|e| e.to_string())?;
        let segs = index.get_segments(r).map_err(|e| e.to_string())?;
        multi_leaf += (segs.len() > 1) as u64;
        for s in segs {
            segments += 1;
            ensure!(
                s.examined == 1,
                "read of {r:?} examined {} entries in leaf {}",
                s.examined,
                s.anchor
            );
        }
    }
    Ok(format!(
        "{segments} leaf reads ({multi_leaf} spanning leaves) each examined 1 entry"
    ))
}

fn harness_agreement() -> Outcome {
    let s = spec("ops=100000,write=0.6,delete=0.05,len=uniform:1-64,space=262144,seed=9");
    let records = generate(&s).map_err(|e| e.to_string())?;
    let run = || {
        compare(
            WorkloadInfo::new("synthetic", s.to_string(), &records, 1),
            &records,
            BenchOptions::default(),
        )
        .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    let counters = |r: &rask_harness::Report| {
        let m = r.system("rask").expect("rask metrics");
        (m.counters.map(StatsSnapshot::structural), m.read_checksum, m.entries)
    };
    ensure!(counters(&a) == counters(&b), "counters differ between identical runs");
    let eq = a.equivalence.as_ref().expect("equivalence ran");
    ensure!(
        eq.equivalent,
        "rask and lazy baseline diverge: {:?}",
        eq.first_divergence
    );
    ensure!(
        a.system("rask").unwrap().read_checksum == a.system("lazy-btree").unwrap().read_checksum,
        "read checksums differ"
    );

    let mut lines = vec![format!("deterministic, {} reads equivalent", eq.checked_reads)];
    let mut ok = true;
    for w in [
        "ops=1000000,write=0.7,len=uniform:4-64,space=1048576,skew=uniform,seed=1",
        "ops=1000000,write=0.7,len=uniform:4-64,space=1048576,skew=zipf:0.99,seed=1",
        "ops=1000000,write=0.7,len=uniform:8-32,space=16777216,skew=uniform,seed=1",
    ] {
        let records = generate(&spec(w)).map_err(|e| e.to_string())?;
        let mean = records.iter().map(|r| r.length as f64).sum::<f64>() / records.len() as f64;
        let (mut rask, mut lazy) = (0f64, 0f64);
        // Best of five alternating runs.
        for _ in 0..5 {
            let t = RaskTarget::new(Config::default()).map_err(|e| e.to_string())?;
            rask = rask.max(
                replay(&t, &records, ReplayOptions::default())
                    .map_err(|e| e.to_string())?
                    .throughput_ops_per_sec,
            );
            drop(t);
            let l = LazyBaseline::new();
            lazy = lazy.max(
                replay(&l, &records, ReplayOptions::default())
                    .map_err(|e| e.to_string())?
                    .throughput_ops_per_sec,
            );
        }
        ok &= mean >= 10.0 && rask >= lazy;
        lines.push(format!(
            "[{w}] mean len {mean:.1}: rask {:.0} vs lazy {:.0} ops/s",
            rask, lazy
        ));
    }
    let line = lines.join("; ");
    ensure!(ok, "{line}");
    Ok(line)
}

fn secondary_hygiene(kept: &[RaskIndex]) -> Outcome {
    ensure!(!kept.is_empty(), "criterion 1 produced no index");
    let mut records = 0;
    for index in kept {
        index.force_gc();
        let orphans = index.orphaned_secondary_entries();
        ensure!(
            orphans.is_empty(),
            "{} orphaned records, first {:?}",
            orphans.len(),
            orphans[0]
        );
        ensure!(
            index.dangling_indicators().is_empty(),
            "indicator entries without records"
        );
        records += index.secondary_entries();
    }
    Ok(format!(
        "0 orphans across {} indexes ({records} live records)",
        kept.len()
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let mut kept = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("oracle equivalence", guarded(|| oracle_equivalence(&mut kept))),
        ("GC completeness and soundness", guarded(gc_completeness)),
        ("split theorem", guarded(split_theorem)),
        ("split quality", guarded(split_quality)),
        ("entry-count compression", guarded(entry_compression)),
        ("GC frequency", guarded(gc_frequency)),
        ("concurrency stress", guarded(concurrency)),
        ("early termination", guarded(early_termination)),
        ("determinism and baseline agreement", guarded(harness_agreement)),
        ("secondary-map hygiene", guarded(|| secondary_hygiene(&kept))),
    ];
    println!();
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
