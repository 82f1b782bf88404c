//! Block I/O traces in CSV form.
//!
//! The default column order is `timestamp,lba,length,op`. A header line is
//! optional: a first row whose address field is not a number is skipped,
//! and if it names all four columns it also fixes their positions.

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
    Delete,
}

impl OpKind {
    pub fn code(self) -> &'static str {
        match self {
            OpKind::Read => "R",
            OpKind::Write => "W",
            OpKind::Delete => "D",
        }
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "read" => Ok(OpKind::Read),
            "w" | "write" => Ok(OpKind::Write),
            "d" | "delete" | "t" | "trim" | "discard" => Ok(OpKind::Delete),
            _ => Err(format!("unknown op {s:?}")),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One I/O request. `timestamp` is carried through but ignored on replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp: u64,
    pub lba: u64,
    pub length: u32,
    pub op: OpKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Field {
    Timestamp,
    Lba,
    Length,
    Op,
}

impl Field {
    fn from_name(name: &str) -> Option<Field> {
        match name.trim().to_ascii_lowercase().as_str() {
            "timestamp" | "time" | "ts" => Some(Field::Timestamp),
            "lba" | "offset" | "address" | "addr" => Some(Field::Lba),
            "length" | "len" | "size" => Some(Field::Length),
            "op" | "opcode" | "type" | "rw" => Some(Field::Op),
            _ => None,
        }
    }
}

/// Column positions plus an optional byte-to-block conversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Columns {
    timestamp: Option<usize>,
    lba: usize,
    length: usize,
    op: usize,
    block_size: Option<u64>,
}

impl Default for Columns {
    fn default() -> Self {
        Columns {
            timestamp: Some(0),
            lba: 1,
            length: 2,
            op: 3,
            block_size: None,
        }
    }
}

impl Columns {
    /// Parses a comma-separated list naming each CSV column in order, for
    /// example `device,op,lba,length,timestamp`. Unrecognized names mark
    /// columns to ignore; `lba`, `length` and `op` are required.
    pub fn parse(list: &str) -> Result<Columns, HarnessError> {
        let mut found = [None; 4];
        for (i, name) in list.split(',').enumerate() {
            if let Some(f) = Field::from_name(name) {
                let slot = &mut found[f as usize];
                if slot.is_some() {
                    return Err(HarnessError::Columns(format!("{} named twice", name.trim())));
                }
                *slot = Some(i);
            }
        }
        let need = |f: Field, n: &str| found[f as usize].ok_or_else(|| HarnessError::Columns(format!("missing {n}")));
        Ok(Columns {
            timestamp: found[Field::Timestamp as usize],
            lba: need(Field::Lba, "lba")?,
            length: need(Field::Length, "length")?,
            op: need(Field::Op, "op")?,
            block_size: None,
        })
    }

    /// Treats `lba` and `length` as byte counts and converts them to blocks
    /// of `size` bytes, widening partial blocks.
    pub fn with_block_size(mut self, size: u64) -> Self {
        self.block_size = Some(size).filter(|&s| s > 1);
        self
    }

    fn from_header(row: &csv::StringRecord) -> Option<Columns> {
        let names: Vec<&str> = row.iter().collect();
        Columns::parse(&names.join(",")).ok()
    }
}

/// Streaming CSV trace reader.
pub struct TraceReader<R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    columns: Columns,
    explicit: bool,
    first: bool,
}

impl<R: Read> TraceReader<R> {
    /// `columns` of `None` means the default order, which a header row may
    /// override.
    pub fn new(input: R, columns: Option<Columns>) -> Self {
        let rows = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(input)
            .into_records();
        TraceReader {
            rows,
            explicit: columns.is_some(),
            columns: columns.unwrap_or_default(),
            first: true,
        }
    }

    fn convert(&self, row: &csv::StringRecord, line: u64) -> Result<TraceRecord, HarnessError> {
        let err = |msg: String| HarnessError::Parse { line, msg };
        let field = |i: usize, name: &str| row.get(i).ok_or_else(|| err(format!("missing {name} column {i}")));
        let int = |i: usize, name: &str| -> Result<u64, HarnessError> {
            let s = field(i, name)?;
            s.parse::<u64>().map_err(|_| err(format!("bad {name} {s:?}")))
        };
        let timestamp = match self.columns.timestamp {
            Some(i) => {
                let s = field(i, "timestamp")?;
                // Some traces use fractional seconds.
                s.parse::<u64>()
                    .or_else(|_| s.parse::<f64>().map(|f| f as u64))
                    .map_err(|_| err(format!("bad timestamp {s:?}")))?
            }
            None => 0,
        };
        let mut lba = int(self.columns.lba, "lba")?;
        let mut length = int(self.columns.length, "length")?;
        if length == 0 {
            return Err(err("length is zero".into()));
        }
        if let Some(bs) = self.columns.block_size {
            let end = lba
                .checked_add(length)
                .ok_or_else(|| err("byte range overflows".into()))?;
            lba /= bs;
            length = end.div_ceil(bs) - lba;
        }
        let length = u32::try_from(length).map_err(|_| err(format!("length {length} too large")))?;
        if lba.checked_add(length as u64 - 1).is_none() {
            return Err(err("range runs past the address space".into()));
        }
        let op = field(self.columns.op, "op")?.parse().map_err(err)?;
        Ok(TraceRecord {
            timestamp,
            lba,
            length,
            op,
        })
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord, HarnessError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let row = match self.rows.next()? {
                Ok(row) => row,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Some(Err(HarnessError::Parse {
                        line,
                        msg: e.to_string(),
                    }));
                }
            };
            let line = row.position().map_or(0, |p| p.line());
            if row.iter().all(str::is_empty) {
                continue;
            }
            if std::mem::take(&mut self.first) {
                let lba = row.get(self.columns.lba).unwrap_or("");
                if lba.parse::<u64>().is_err() {
                    if !self.explicit {
                        if let Some(c) = Columns::from_header(&row) {
                            self.columns = Columns {
                                block_size: self.columns.block_size,
                                ..c
                            };
                        }
                    }
                    continue;
                }
            }
            return Some(self.convert(&row, line));
        }
    }
}

pub fn parse_trace(path: &Path, columns: Option<Columns>) -> Result<Vec<TraceRecord>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    TraceReader::new(io::BufReader::new(file), columns).collect()
}

/// Writes records in the default column order with a header.
pub fn write_trace<W: Write>(out: W, records: &[TraceRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "lba", "length", "op"])?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.lba.to_string(),
            r.length.to_string(),
            r.op.code().to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io("<output>", e))?;
    Ok(())
}
