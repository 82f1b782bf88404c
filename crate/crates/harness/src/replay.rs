//! Replaying records against an index and collecting metrics.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::time::Instant;

use log::{debug, info};
use rask::{AnchorBackend, Config, Range, RaskIndex, StatsSnapshot, Value};
use rask_oracle::{canonical_runs, first_divergence, Run};
use serde::{Deserialize, Serialize};

use crate::baseline::LazyBaseline;
use crate::error::HarnessError;
use crate::histogram::{Histogram, LatencySummary};
use crate::trace::{OpKind, TraceRecord};

/// Bytes charged per side-table record: key, value and map overhead.
const SECONDARY_RECORD_BYTES: usize = 64;

/// Something records can be replayed against.
pub trait Target: Sync {
    fn name(&self) -> &str;
    fn put(&self, left: u64, len: u32, value: u128) -> Result<(), HarnessError>;
    fn delete(&self, left: u64, len: u32) -> Result<(), HarnessError>;
    /// Pieces of the range in any order; they need not be coalesced.
    fn get(&self, left: u64, len: u32) -> Result<Vec<Run>, HarnessError>;
    fn entry_count(&self) -> usize;
    fn memory_bytes(&self) -> usize;
    fn counters(&self) -> Option<StatsSnapshot> {
        None
    }
}

pub struct RaskTarget {
    pub index: RaskIndex,
}

impl RaskTarget {
    pub fn new(config: Config) -> Result<Self, HarnessError> {
        Ok(RaskTarget {
            index: RaskIndex::new(config)?,
        })
    }
}

impl Target for RaskTarget {
    fn name(&self) -> &str {
        "rask"
    }

    fn put(&self, left: u64, len: u32, value: u128) -> Result<(), HarnessError> {
        Ok(self.index.put(Range::new(left, len)?, Value(value))?)
    }

    fn delete(&self, left: u64, len: u32) -> Result<(), HarnessError> {
        Ok(self.index.delete(Range::new(left, len)?)?)
    }

    fn get(&self, left: u64, len: u32) -> Result<Vec<Run>, HarnessError> {
        Ok(self
            .index
            .get(Range::new(left, len)?)?
            .into_iter()
            .map(|e| Run {
                left: e.range.left(),
                len: e.range.len() as u64,
                value: e.value.0,
                offset: e.offset,
            })
            .collect())
    }

    fn entry_count(&self) -> usize {
        self.index.entry_count()
    }

    fn memory_bytes(&self) -> usize {
        self.index.memory_bytes() + self.index.secondary_entries() * SECONDARY_RECORD_BYTES
    }

    fn counters(&self) -> Option<StatsSnapshot> {
        Some(self.index.stats())
    }
}

impl Target for LazyBaseline {
    fn name(&self) -> &str {
        "lazy-btree"
    }

    fn put(&self, left: u64, len: u32, value: u128) -> Result<(), HarnessError> {
        LazyBaseline::put(self, left, len, value);
        Ok(())
    }

    fn delete(&self, left: u64, len: u32) -> Result<(), HarnessError> {
        LazyBaseline::delete(self, left, len);
        Ok(())
    }

    fn get(&self, left: u64, len: u32) -> Result<Vec<Run>, HarnessError> {
        Ok(LazyBaseline::get(self, left, len))
    }

    fn entry_count(&self) -> usize {
        LazyBaseline::entry_count(self)
    }

    fn memory_bytes(&self) -> usize {
        LazyBaseline::memory_bytes(self)
    }
}

/// Value written by record `i`: deterministic and unique per write.
pub fn value_for(i: usize) -> u128 {
    i as u128 + 1
}

fn digest(runs: &[Run]) -> u64 {
    let mut h = DefaultHasher::new();
    runs.hash(&mut h);
    h.finish()
}

fn apply(target: &dyn Target, i: usize, r: &TraceRecord) -> Result<Option<Vec<Run>>, HarnessError> {
    match r.op {
        OpKind::Write => target.put(r.lba, r.length, value_for(i)).map(|_| None),
        OpKind::Delete => target.delete(r.lba, r.length).map(|_| None),
        OpKind::Read => target.get(r.lba, r.length).map(Some),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub reads: u64,
    pub writes: u64,
    pub deletes: u64,
}

impl OpCounts {
    fn add(&mut self, op: OpKind) {
        match op {
            OpKind::Read => self.reads += 1,
            OpKind::Write => self.writes += 1,
            OpKind::Delete => self.deletes += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.reads + self.writes + self.deletes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub name: String,
    pub ops: OpCounts,
    pub wall_secs: f64,
    /// Time spent inside index calls, summed over threads.
    pub busy_secs: f64,
    pub throughput_ops_per_sec: f64,
    pub latency_ns: LatencySummary,
    pub entries: usize,
    pub memory_bytes: usize,
    /// Order-independent hash of every read result.
    pub read_checksum: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counters: Option<StatsSnapshot>,
}

#[derive(Clone, Copy, Debug)]
pub struct ReplayOptions {
    pub threads: usize,
    /// Records replayed untimed before measurement starts.
    pub warmup: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { threads: 1, warmup: 0 }
    }
}

struct Partial {
    hist: Histogram,
    ops: OpCounts,
    checksum: u64,
}

fn run_slice(target: &dyn Target, records: &[TraceRecord], start: usize, step: usize) -> Result<Partial, HarnessError> {
    let mut p = Partial {
        hist: Histogram::new(),
        ops: OpCounts::default(),
        checksum: 0,
    };
    let mut i = start;
    while i < records.len() {
        let r = &records[i];
        let t = Instant::now();
        let out = apply(target, i, r)?;
        p.hist.record(t.elapsed().as_nanos() as u64);
        p.ops.add(r.op);
        if let Some(runs) = out {
            p.checksum ^= digest(&canonical_runs(runs)).wrapping_mul(i as u64 | 1);
        }
        i += step;
    }
    Ok(p)
}

/// Replays `records` in order, or round-robin over `threads` workers each
/// keeping its share in the original order.
pub fn replay(
    target: &dyn Target,
    records: &[TraceRecord],
    opts: ReplayOptions,
) -> Result<SystemMetrics, HarnessError> {
    let threads = opts.threads.max(1);
    let warm = opts.warmup.min(records.len());
    for (i, r) in records[..warm].iter().enumerate() {
        apply(target, i, r)?;
    }
    let base = target.counters();
    info!(
        "replaying {} records into {} on {threads} thread(s)",
        records.len() - warm,
        target.name()
    );

    let wall = Instant::now();
    let parts: Vec<Partial> = if threads == 1 {
        vec![run_slice(target, records, warm, 1)?]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| s.spawn(move || run_slice(target, records, warm + t, threads)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("replay worker panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?
    };
    let wall_secs = wall.elapsed().as_secs_f64();

    let mut hist = Histogram::new();
    let mut ops = OpCounts::default();
    let mut checksum = 0;
    for p in &parts {
        hist.merge(&p.hist);
        ops.reads += p.ops.reads;
        ops.writes += p.ops.writes;
        ops.deletes += p.ops.deletes;
        checksum ^= p.checksum;
    }
    let busy_secs = hist.sum_ns() as f64 / 1e9;
    let throughput = if busy_secs > 0.0 {
        ops.total() as f64 * threads as f64 / busy_secs
    } else {
        0.0
    };
    let counters = target.counters().map(|c| match base {
        Some(b) if warm > 0 => subtract(c, b),
        _ => c,
    });
    let m = SystemMetrics {
        name: target.name().to_string(),
        ops,
        wall_secs,
        busy_secs,
        throughput_ops_per_sec: throughput,
        latency_ns: hist.summary(),
        entries: target.entry_count(),
        memory_bytes: target.memory_bytes(),
        read_checksum: checksum,
        counters,
    };
    debug!("{m:?}");
    Ok(m)
}

fn subtract(a: StatsSnapshot, b: StatsSnapshot) -> StatsSnapshot {
    let a = serde_json::to_value(a).expect("snapshot serializes");
    let b = serde_json::to_value(b).expect("snapshot serializes");
    let mut out = serde_json::Map::new();
    for (k, v) in a.as_object().expect("object") {
        let x = v.as_u64().unwrap_or(0);
        let y = b.get(k).and_then(|v| v.as_u64()).unwrap_or(0);
        out.insert(k.clone(), x.saturating_sub(y).into());
    }
    serde_json::from_value(out.into()).expect("snapshot deserializes")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// Index of the record whose read disagreed.
    pub op: usize,
    /// Ordinal of that read among all reads.
    pub read: usize,
    pub block: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equivalence {
    pub checked_reads: u64,
    pub equivalent: bool,
    pub first_divergence: Option<Divergence>,
}

/// Replays into `a` and `b` in lockstep and compares every `sample`-th
/// read block by block. Stops at the first disagreement.
pub fn check_equivalence(
    a: &dyn Target,
    b: &dyn Target,
    records: &[TraceRecord],
    sample: usize,
) -> Result<Equivalence, HarnessError> {
    let sample = sample.max(1);
    let mut reads = 0usize;
    let mut checked = 0;
    for (i, r) in records.iter().enumerate() {
        if r.op != OpKind::Read {
            apply(a, i, r)?;
            apply(b, i, r)?;
            continue;
        }
        reads += 1;
        if !(reads - 1).is_multiple_of(sample) {
            continue;
        }
        checked += 1;
        let x = canonical_runs(a.get(r.lba, r.length)?);
        let y = canonical_runs(b.get(r.lba, r.length)?);
        if let Some(block) = first_divergence(&x, &y) {
            return Ok(Equivalence {
                checked_reads: checked,
                equivalent: false,
                first_divergence: Some(Divergence {
                    op: i,
                    read: reads - 1,
                    block,
                }),
            });
        }
    }
    Ok(Equivalence {
        checked_reads: checked,
        equivalent: true,
        first_divergence: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadInfo {
    pub source: String,
    pub description: String,
    pub records: usize,
    pub mean_length: f64,
    pub threads: usize,
}

impl WorkloadInfo {
    pub fn new(source: &str, description: String, records: &[TraceRecord], threads: usize) -> Self {
        let mean_length = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.length as f64).sum::<f64>() / records.len() as f64
        };
        WorkloadInfo {
            source: source.to_string(),
            description,
            records: records.len(),
            mean_length,
            threads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub workload: WorkloadInfo,
    pub config: Config,
    pub systems: Vec<SystemMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub equivalence: Option<Equivalence>,
}

impl Report {
    pub fn verdict(&self) -> Result<(), HarnessError> {
        match self.equivalence.as_ref().and_then(|e| e.first_divergence) {
            Some(d) => Err(HarnessError::EquivalenceViolation {
                op: d.op,
                read: d.read,
                block: d.block,
            }),
            None => Ok(()),
        }
    }

    pub fn system(&self, name: &str) -> Option<&SystemMetrics> {
        self.systems.iter().find(|s| s.name == name)
    }

    /// Aligned table, one row per system.
    pub fn table(&self) -> String {
        let header = [
            "system", "ops", "ops/s", "mean ns", "p50", "p99", "p99.9", "p99.99", "entries", "bytes",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for s in &self.systems {
            let l = &s.latency_ns;
            rows.push(vec![
                s.name.clone(),
                s.ops.total().to_string(),
                format!("{:.0}", s.throughput_ops_per_sec),
                format!("{:.0}", l.mean),
                l.p50.to_string(),
                l.p99.to_string(),
                l.p999.to_string(),
                l.p9999.to_string(),
                s.entries.to_string(),
                s.memory_bytes.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        if let Some(c) = self.system("rask").and_then(|s| s.counters) {
            out.push_str(&format!(
                "rask: gc {} (lightweight {}, normal {}), splits {} ({} without division, {} second), merges {}, resplits {}\n",
                c.gc_invocations,
                c.lightweight_runs,
                c.normal_runs,
                c.splits,
                c.splits_without_division,
                c.second_splits,
                c.merges,
                c.resplits
            ));
        }
        if let Some(e) = &self.equivalence {
            match e.first_divergence {
                None => out.push_str(&format!("equivalent over {} reads\n", e.checked_reads)),
                Some(d) => out.push_str(&format!("DIVERGED at block {} (op {})\n", d.block, d.op)),
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "system",
            "ops",
            "throughput_ops_per_sec",
            "mean_ns",
            "p50_ns",
            "p99_ns",
            "p999_ns",
            "p9999_ns",
            "max_ns",
            "entries",
            "memory_bytes",
            "gc_invocations",
            "splits",
            "merges",
        ])?;
        for s in &self.systems {
            let l = &s.latency_ns;
            let c = s.counters.unwrap_or_default();
            w.write_record([
                s.name.clone(),
                s.ops.total().to_string(),
                format!("{:.1}", s.throughput_ops_per_sec),
                format!("{:.1}", l.mean),
                l.p50.to_string(),
                l.p99.to_string(),
                l.p999.to_string(),
                l.p9999.to_string(),
                l.max.to_string(),
                s.entries.to_string(),
                s.memory_bytes.to_string(),
                c.gc_invocations.to_string(),
                c.splits.to_string(),
                c.merges.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    None,
    LazyBtree,
}

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    pub config: Config,
    pub replay: ReplayOptions,
    pub baseline: Baseline,
    /// Check every n-th read against the baseline; zero disables.
    pub verify_every: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            config: Config::default(),
            replay: ReplayOptions::default(),
            baseline: Baseline::LazyBtree,
            verify_every: 1,
        }
    }
}

/// Replays `records` into rask and, if requested, the baseline, each on a
/// fresh instance; then checks read equivalence on another fresh pair.
pub fn compare(workload: WorkloadInfo, records: &[TraceRecord], opts: BenchOptions) -> Result<Report, HarnessError> {
    let mut systems = Vec::new();
    {
        let rask = RaskTarget::new(opts.config)?;
        systems.push(replay(&rask, records, opts.replay)?);
    }
    let mut equivalence = None;
    if opts.baseline == Baseline::LazyBtree {
        let lazy = LazyBaseline::new();
        systems.push(replay(&lazy, records, opts.replay)?);
        if opts.verify_every > 0 {
            let rask = RaskTarget::new(opts.config)?;
            let lazy = LazyBaseline::new();
            equivalence = Some(check_equivalence(&rask, &lazy, records, opts.verify_every)?);
        }
    }
    Ok(Report {
        workload,
        config: opts.config,
        systems,
        equivalence,
    })
}

pub fn backend_name(b: AnchorBackend) -> &'static str {
    match b {
        AnchorBackend::Trie => "art",
        AnchorBackend::Ordered => "btree",
    }
}
