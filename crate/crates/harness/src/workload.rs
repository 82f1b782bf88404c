//! Synthetic workloads.
//!
//! A spec is a comma-separated `key=value` list:
//!
//! ```text
//! ops=100000,write=0.7,delete=0.05,len=uniform:4-64,space=1048576,skew=zipf:0.99,seed=7
//! ```
//!
//! `len` is `N`, `fixed:N`, `uniform:A-B` or `zipf:A-B:THETA`; `skew` is
//! `uniform` or `zipf:THETA`. Whatever is not a write or delete is a read.
//! `layout=sequential` lays writes end to end instead of drawing addresses.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::trace::{OpKind, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LengthDist {
    Fixed { len: u32 },
    Uniform { min: u32, max: u32 },
    Zipf { min: u32, max: u32, theta: f64 },
}

impl LengthDist {
    pub fn max(&self) -> u32 {
        match *self {
            LengthDist::Fixed { len } => len,
            LengthDist::Uniform { max, .. } | LengthDist::Zipf { max, .. } => max,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            LengthDist::Fixed { len } => len as f64,
            LengthDist::Uniform { min, max } => (min as f64 + max as f64) / 2.0,
            LengthDist::Zipf { min, max, theta } => {
                let n = (max - min + 1) as usize;
                let w: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-theta)).collect();
                let total: f64 = w.iter().sum();
                w.iter()
                    .enumerate()
                    .map(|(k, w)| (min as f64 + k as f64) * w)
                    .sum::<f64>()
                    / total
            }
        }
    }
}

impl fmt::Display for LengthDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LengthDist::Fixed { len } => write!(f, "fixed:{len}"),
            LengthDist::Uniform { min, max } => write!(f, "uniform:{min}-{max}"),
            LengthDist::Zipf { min, max, theta } => write!(f, "zipf:{min}-{max}:{theta}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Skew {
    Uniform,
    Zipf { theta: f64 },
}

impl fmt::Display for Skew {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Skew::Uniform => f.write_str("uniform"),
            Skew::Zipf { theta } => write!(f, "zipf:{theta}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Random,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub ops: u64,
    pub write_ratio: f64,
    pub delete_ratio: f64,
    pub lengths: LengthDist,
    pub key_space: u64,
    pub skew: Skew,
    pub layout: Layout,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            ops: 100_000,
            write_ratio: 0.7,
            delete_ratio: 0.0,
            lengths: LengthDist::Uniform { min: 4, max: 64 },
            key_space: 1 << 20,
            skew: Skew::Uniform,
            layout: Layout::Random,
            seed: 0,
        }
    }
}

fn spec_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Spec(msg.into())
}

fn num<T: FromStr>(key: &str, s: &str) -> Result<T, HarnessError> {
    s.trim()
        .parse()
        .map_err(|_| spec_err(format!("{key}: cannot parse {s:?}")))
}

fn parse_span(key: &str, s: &str) -> Result<(u32, u32), HarnessError> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| spec_err(format!("{key}: expected A-B, got {s:?}")))?;
    Ok((num(key, a)?, num(key, b)?))
}

impl FromStr for LengthDist {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        match (head, rest.as_slice()) {
            ("fixed", [n]) => Ok(LengthDist::Fixed { len: num("len", n)? }),
            ("uniform", [span]) => {
                let (min, max) = parse_span("len", span)?;
                Ok(LengthDist::Uniform { min, max })
            }
            ("zipf", [span, theta]) => {
                let (min, max) = parse_span("len", span)?;
                Ok(LengthDist::Zipf {
                    min,
                    max,
                    theta: num("len", theta)?,
                })
            }
            (n, []) => Ok(LengthDist::Fixed { len: num("len", n)? }),
            _ => Err(spec_err(format!("len: unknown distribution {s:?}"))),
        }
    }
}

impl FromStr for Skew {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.split_once(':') {
            None if s == "uniform" => Ok(Skew::Uniform),
            Some(("zipf", theta)) => Ok(Skew::Zipf {
                theta: num("skew", theta)?,
            }),
            _ => Err(spec_err(format!("skew: expected uniform or zipf:THETA, got {s:?}"))),
        }
    }
}

impl FromStr for WorkloadSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let mut spec = WorkloadSpec::default();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| spec_err(format!("expected key=value, got {item:?}")))?;
            match k.trim() {
                "ops" => spec.ops = num(k, v)?,
                "write" | "writes" => spec.write_ratio = num(k, v)?,
                "delete" | "deletes" => spec.delete_ratio = num(k, v)?,
                "len" | "length" => spec.lengths = v.trim().parse()?,
                "space" | "keyspace" => spec.key_space = num(k, v)?,
                "skew" => spec.skew = v.trim().parse()?,
                "seed" => spec.seed = num(k, v)?,
                "layout" => {
                    spec.layout = match v.trim() {
                        "random" => Layout::Random,
                        "sequential" => Layout::Sequential,
                        other => return Err(spec_err(format!("layout: unknown {other:?}"))),
                    }
                }
                other => return Err(spec_err(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for WorkloadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ops={},write={},delete={},len={},space={},skew={},seed={}",
            self.ops, self.write_ratio, self.delete_ratio, self.lengths, self.key_space, self.skew, self.seed
        )?;
        if self.layout == Layout::Sequential {
            f.write_str(",layout=sequential")?;
        }
        Ok(())
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let ratio = |r: f64| (0.0..=1.0).contains(&r);
        if !ratio(self.write_ratio) || !ratio(self.delete_ratio) || self.write_ratio + self.delete_ratio > 1.0 + 1e-9 {
            return Err(spec_err(
                "write and delete ratios must lie in [0,1] and sum to at most 1",
            ));
        }
        let (min, max) = match self.lengths {
            LengthDist::Fixed { len } => (len, len),
            LengthDist::Uniform { min, max } => (min, max),
            LengthDist::Zipf { min, max, theta } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return Err(spec_err("len: zipf theta must be positive"));
                }
                (min, max)
            }
        };
        if min == 0 || min > max {
            return Err(spec_err(format!("len: bad bounds {min}..{max}")));
        }
        if self.key_space < max as u64 {
            return Err(spec_err(format!(
                "space {} is smaller than the longest range {max}",
                self.key_space
            )));
        }
        if let Skew::Zipf { theta } = self.skew {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(spec_err("skew: zipf theta must be positive"));
            }
        }
        Ok(())
    }

    /// Records in order; deterministic for a given spec.
    pub fn generate(&self) -> Result<Generator, HarnessError> {
        self.validate()?;
        let lengths = match self.lengths {
            LengthDist::Zipf { min, max, theta } => Some(zipf(max - min + 1, theta)?),
            _ => None,
        };
        let addresses = match self.skew {
            Skew::Zipf { theta } => Some(zipf_u64(self.key_space, theta)?),
            Skew::Uniform => None,
        };
        Ok(Generator {
            spec: *self,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            lengths,
            addresses,
            emitted: 0,
            cursor: 0,
        })
    }
}

fn zipf(n: u32, theta: f64) -> Result<Zipf<f64>, HarnessError> {
    zipf_u64(n as u64, theta)
}

fn zipf_u64(n: u64, theta: f64) -> Result<Zipf<f64>, HarnessError> {
    Zipf::new(n, theta).map_err(|e| spec_err(format!("zipf: {e}")))
}

pub struct Generator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    lengths: Option<Zipf<f64>>,
    addresses: Option<Zipf<f64>>,
    emitted: u64,
    cursor: u64,
}

impl Generator {
    fn length(&mut self) -> u32 {
        match self.spec.lengths {
            LengthDist::Fixed { len } => len,
            LengthDist::Uniform { min, max } => self.rng.gen_range(min..=max),
            LengthDist::Zipf { min, .. } => {
                let z = self.lengths.as_ref().expect("built with the spec");
                min + z.sample(&mut self.rng) as u32 - 1
            }
        }
    }

    fn address(&mut self, op: OpKind, len: u32) -> u64 {
        let top = self.spec.key_space - len as u64;
        if self.spec.layout == Layout::Sequential && op == OpKind::Write {
            if self.cursor > top {
                self.cursor = 0;
            }
            let lba = self.cursor;
            self.cursor += len as u64;
            return lba;
        }
        match &self.addresses {
            None => self.rng.gen_range(0..=top),
            Some(z) => (z.sample(&mut self.rng) as u64 - 1).min(top),
        }
    }
}

impl Iterator for Generator {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        if self.emitted == self.spec.ops {
            return None;
        }
        let roll: f64 = self.rng.gen();
        let op = if roll < self.spec.write_ratio {
            OpKind::Write
        } else if roll < self.spec.write_ratio + self.spec.delete_ratio {
            OpKind::Delete
        } else {
            OpKind::Read
        };
        let length = self.length();
        let lba = self.address(op, length);
        let rec = TraceRecord {
            timestamp: self.emitted,
            lba,
            length,
            op,
        };
        self.emitted += 1;
        Some(rec)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.ops - self.emitted) as usize;
        (left, Some(left))
    }
}

pub fn generate(spec: &WorkloadSpec) -> Result<Vec<TraceRecord>, HarnessError> {
    Ok(spec.generate()?.collect())
}
