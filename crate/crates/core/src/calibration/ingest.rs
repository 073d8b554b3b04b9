//! Order book snapshot files.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::grid::TickGrid;
use crate::microsim::{EventRecord, LobState, PathObserver};

/// Price levels and sizes on both sides of the book at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub timestamp: f64,
    pub bid_prices: Vec<f64>,
    pub bid_sizes: Vec<f64>,
    pub ask_prices: Vec<f64>,
    pub ask_sizes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingField,
    ParseError,
    NonFinite,
    NegativeSize,
    BidsNotDecreasing,
    AsksNotIncreasing,
    CrossedBook,
    NonMonotonicTimestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the file, header included.
    pub line: usize,
    pub reason: RejectReason,
    pub detail: String,
}

impl BookSnapshot {
    pub fn levels(&self) -> usize {
        self.bid_prices.len()
    }

    pub fn best_bid(&self) -> f64 {
        self.bid_prices[0]
    }

    pub fn best_ask(&self) -> f64 {
        self.ask_prices[0]
    }

    pub fn validate(&self) -> std::result::Result<(), (RejectReason, String)> {
        let all = [
            &self.bid_prices,
            &self.bid_sizes,
            &self.ask_prices,
            &self.ask_sizes,
        ];
        if !self.timestamp.is_finite() || all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err((RejectReason::NonFinite, "non-finite value".into()));
        }
        if let Some(s) = self
            .bid_sizes
            .iter()
            .chain(&self.ask_sizes)
            .find(|s| **s < 0.0)
        {
            return Err((RejectReason::NegativeSize, format!("size {s}")));
        }
        if self.bid_prices.windows(2).any(|w| w[1] >= w[0]) {
            return Err((
                RejectReason::BidsNotDecreasing,
                "bid prices must strictly decrease".into(),
            ));
        }
        if self.ask_prices.windows(2).any(|w| w[1] <= w[0]) {
            return Err((
                RejectReason::AsksNotIncreasing,
                "ask prices must strictly increase".into(),
            ));
        }
        if self.best_bid() >= self.best_ask() {
            return Err((
                RejectReason::CrossedBook,
                format!(
                    "best bid {} >= best ask {}",
                    self.best_bid(),
                    self.best_ask()
                ),
            ));
        }
        Ok(())
    }

    /// Sizes and prices of one side.
    pub fn side(&self, side: Side) -> (&[f64], &[f64]) {
        match side {
            Side::Bid => (&self.bid_prices, &self.bid_sizes),
            Side::Ask => (&self.ask_prices, &self.ask_sizes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl std::str::FromStr for Side {
    type Err = LobError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bid" => Ok(Side::Bid),
            "ask" => Ok(Side::Ask),
            other => Err(LobError::Config(format!("unknown side '{other}'"))),
        }
    }
}

/// Column naming: `<prefix><level>` with levels numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub bid_price: String,
    pub bid_size: String,
    pub ask_price: String,
    pub ask_size: String,
    pub levels: usize,
    /// Largest tolerated fraction of rejected rows.
    pub max_reject_fraction: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "ts".into(),
            bid_price: "bp".into(),
            bid_size: "bs".into(),
            ask_price: "ap".into(),
            ask_size: "as".into(),
            levels: 10,
            max_reject_fraction: 0.01,
        }
    }
}

impl CsvSchema {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec![self.timestamp.clone()];
        for p in [
            &self.bid_price,
            &self.bid_size,
            &self.ask_price,
            &self.ask_size,
        ] {
            h.extend((1..=self.levels).map(|i| format!("{p}{i}")));
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub snapshots: Vec<BookSnapshot>,
    pub rejects: Vec<Reject>,
    /// Rows replaced by a later row with the same timestamp.
    pub duplicates_replaced: usize,
    pub rows_read: usize,
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| LobError::Config(format!("column '{name}' missing from header")))
    };
    let ts_col = col(&schema.timestamp)?;
    let level_cols = |prefix: &str| -> Result<Vec<usize>> {
        (1..=schema.levels)
            .map(|i| col(&format!("{prefix}{i}")))
            .collect()
    };
    let cols = [
        level_cols(&schema.bid_price)?,
        level_cols(&schema.bid_size)?,
        level_cols(&schema.ask_price)?,
        level_cols(&schema.ask_size)?,
    ];
    let mut snapshots: Vec<BookSnapshot> = Vec::new();
    let mut rejects = Vec::new();
    let mut duplicates = 0;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        rows += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    line,
                    reason: RejectReason::ParseError,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| -> std::result::Result<f64, (RejectReason, String)> {
            let s = rec
                .get(c)
                .ok_or((RejectReason::MissingField, format!("column {c}")))?;
            s.trim()
                .parse::<f64>()
                .map_err(|e| (RejectReason::ParseError, format!("'{s}': {e}")))
        };
        let parsed = (|| {
            let ts = field(ts_col)?;
            let mut v: Vec<Vec<f64>> = Vec::with_capacity(4);
            for c in &cols {
                v.push(
                    c.iter()
                        .map(|c| field(*c))
                        .collect::<std::result::Result<_, _>>()?,
                );
            }
            let snap = BookSnapshot {
                timestamp: ts,
                ask_sizes: v.pop().unwrap(),
                ask_prices: v.pop().unwrap(),
                bid_sizes: v.pop().unwrap(),
                bid_prices: v.pop().unwrap(),
            };
            snap.validate()?;
            Ok(snap)
        })();
        match parsed {
            Ok(snap) => match snapshots.last() {
                Some(last) if snap.timestamp == last.timestamp => {
                    *snapshots.last_mut().unwrap() = snap;
                    duplicates += 1;
                }
                Some(last) if snap.timestamp < last.timestamp => rejects.push(Reject {
                    line,
                    reason: RejectReason::NonMonotonicTimestamp,
                    detail: format!("{} after {}", snap.timestamp, last.timestamp),
                }),
                _ => snapshots.push(snap),
            },
            Err((reason, detail)) => rejects.push(Reject {
                line,
                reason,
                detail,
            }),
        }
    }
    if rows > 0 && rejects.len() as f64 > schema.max_reject_fraction * rows as f64 {
        return Err(LobError::TooManyRejects {
            rejected: rejects.len(),
            total: rows,
        });
    }
    Ok(IngestReport {
        snapshots,
        rejects,
        duplicates_replaced: duplicates,
        rows_read: rows,
    })
}

/// Writes snapshots with the schema's header; floats use the shortest
/// representation that parses back to the same value.
pub fn write_snapshots_csv<W: Write>(
    snapshots: &[BookSnapshot],
    schema: &CsvSchema,
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(schema.header())?;
    for s in snapshots {
        if s.levels() != schema.levels {
            return Err(LobError::InvalidParameter(format!(
                "snapshot has {} levels, schema {}",
                s.levels(),
                schema.levels
            )));
        }
        let mut row = vec![format!("{}", s.timestamp)];
        for v in [&s.bid_prices, &s.bid_sizes, &s.ask_prices, &s.ask_sizes] {
            row.extend(v.iter().map(|x| format!("{x}")));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Snapshot of a simulated book. Bid level `i` is the visible cell `i` ticks
/// below the best bid; the ask side is filled from the shadow book so the
/// snapshot is a valid two-sided book.
pub fn snapshot_from_state(
    state: &LobState,
    grid: &TickGrid,
    levels: usize,
    timestamp: f64,
) -> BookSnapshot {
    let d = grid.delta();
    let v = state.u.values();
    let top = grid.top_cell();
    let shadow = grid.first_shadow_cell();
    let bid_sizes = (0..levels)
        .map(|i| top.checked_sub(i).map_or(0.0, |j| v[j] * d))
        .collect();
    let ask_sizes = (0..levels)
        .map(|i| v.get(shadow + i).map_or(0.0, |x| x * d))
        .collect();
    BookSnapshot {
        timestamp,
        bid_prices: (0..levels).map(|i| state.b - i as f64 * d).collect(),
        bid_sizes,
        ask_prices: (0..levels).map(|i| state.b + (i + 1) as f64 * d).collect(),
        ask_sizes,
    }
}

/// Records a snapshot every `stride` events; event `k` is second `k`.
pub struct BookWriter {
    grid: TickGrid,
    levels: usize,
    stride: usize,
    pub snapshots: Vec<BookSnapshot>,
}

impl BookWriter {
    pub fn new(grid: TickGrid, levels: usize, stride: usize) -> Self {
        Self {
            grid,
            levels,
            stride: stride.max(1),
            snapshots: Vec::new(),
        }
    }
}

impl PathObserver for BookWriter {
    fn observe(&mut self, k: usize, state: &LobState, _: Option<&EventRecord>) -> Result<()> {
        if k.is_multiple_of(self.stride) {
            self.snapshots.push(snapshot_from_state(
                state,
                &self.grid,
                self.levels,
                k as f64,
            ));
        }
        Ok(())
    }
}
