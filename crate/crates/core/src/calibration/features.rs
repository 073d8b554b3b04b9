//! Per-second regression targets.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::microsim::LobPath;

use super::ingest::{BookSnapshot, Side};

/// Per-second observations of one side of the book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSeries {
    pub timestamps: Vec<f64>,
    pub best: Vec<f64>,
    /// Size at the best price.
    pub top: Vec<f64>,
    /// Total size on the side.
    pub total: Vec<f64>,
}

impl SideSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Total volume is the sum over the recorded levels.
    pub fn from_snapshots(snapshots: &[BookSnapshot], side: Side) -> Self {
        let mut s = Self {
            timestamps: Vec::with_capacity(snapshots.len()),
            best: Vec::with_capacity(snapshots.len()),
            top: Vec::with_capacity(snapshots.len()),
            total: Vec::with_capacity(snapshots.len()),
        };
        for snap in snapshots {
            let (prices, sizes) = snap.side(side);
            s.timestamps.push(snap.timestamp);
            s.best.push(prices[0]);
            s.top.push(sizes[0]);
            s.total.push(sizes.iter().sum());
        }
        s
    }

    /// One observation per event of a simulated path, with the model's total
    /// visible volume and top-cell size.
    pub fn from_path(path: &LobPath) -> Self {
        let d = path.config.delta;
        Self {
            timestamps: (0..path.b.len()).map(|k| k as f64).collect(),
            best: path.b.clone(),
            top: path.top.iter().map(|u| u * d).collect(),
            total: path.y.clone(),
        }
    }
}

/// How seconds with a price move enter the moment regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentConvention {
    /// Targets are `1{stable} x` over all seconds; estimates the unconditional
    /// per-step moments the model is written in.
    #[default]
    ZeroMoved,
    /// Moved seconds are dropped; estimates moments conditional on no move.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub tick: f64,
    /// Model time per second.
    pub dt: f64,
    pub convention: MomentConvention,
    /// Total volume at the start of each second (the regressor).
    pub y: Vec<f64>,
    /// `|dB| / tick`.
    pub price_change: Vec<u32>,
    pub moved: Vec<bool>,
    /// `dY`, `d top` over the second.
    pub net_flow: Vec<f64>,
    pub top_flow: Vec<f64>,
    /// Seconds that follow a gap in the timestamps.
    pub gaps: Vec<usize>,
    /// Price changes that were not within 1e-6 of a whole number of ticks.
    pub off_tick: usize,
}

/// A regression target with its regressor values.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub y: Vec<f64>,
    pub values: Vec<f64>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn moment_target(&self, f: impl Fn(usize) -> f64) -> Target {
        let mut t = Target {
            y: Vec::with_capacity(self.len()),
            values: Vec::with_capacity(self.len()),
        };
        for i in 0..self.len() {
            match (self.moved[i], self.convention) {
                (true, MomentConvention::Exclude) => continue,
                (true, MomentConvention::ZeroMoved) => {
                    t.y.push(self.y[i]);
                    t.values.push(0.0);
                }
                (false, _) => {
                    t.y.push(self.y[i]);
                    t.values.push(f(i));
                }
            }
        }
        t
    }

    /// `1{best price moved}`.
    pub fn activity(&self) -> Target {
        Target {
            y: self.y.clone(),
            values: self
                .moved
                .iter()
                .map(|m| if *m { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Top-of-book placement intensity per price unit and unit time.
    pub fn top_target(&self) -> Target {
        self.moment_target(|i| self.top_flow[i] / (self.tick * self.dt))
    }

    pub fn flow_target(&self) -> Target {
        self.moment_target(|i| self.net_flow[i] / self.dt)
    }

    pub fn squared_flow_target(&self) -> Target {
        self.moment_target(|i| (self.net_flow[i] / self.dt).powi(2))
    }
}

/// Differences between consecutive observations; `dt` is the model time of
/// one second.
pub fn build_features(
    series: &SideSeries,
    tick: f64,
    dt: f64,
    convention: MomentConvention,
) -> Result<FeatureSeries> {
    if series.len() < 2 {
        return Err(LobError::InsufficientData(format!(
            "need at least 2 snapshots, got {}",
            series.len()
        )));
    }
    if !(tick > 0.0 && dt > 0.0) {
        return Err(LobError::InvalidParameter(format!(
            "need tick > 0 and dt > 0; got {tick}, {dt}"
        )));
    }
    let n = series.len() - 1;
    let mut f = FeatureSeries {
        tick,
        dt,
        convention,
        y: Vec::with_capacity(n),
        price_change: Vec::with_capacity(n),
        moved: Vec::with_capacity(n),
        net_flow: Vec::with_capacity(n),
        top_flow: Vec::with_capacity(n),
        gaps: Vec::new(),
        off_tick: 0,
    };
    for i in 0..n {
        let ticks = (series.best[i + 1] - series.best[i]).abs() / tick;
        let rounded = ticks.round();
        if (ticks - rounded).abs() > 1e-6 {
            f.off_tick += 1;
        }
        if series.timestamps[i + 1] - series.timestamps[i] > 1.0 + 1e-9 {
            f.gaps.push(i);
        }
        f.y.push(series.total[i]);
        f.price_change.push(rounded as u32);
        f.moved.push(rounded >= 1.0);
        f.net_flow.push(series.total[i + 1] - series.total[i]);
        f.top_flow.push(series.top[i + 1] - series.top[i]);
    }
    if f.off_tick > 0 {
        warn!(
            "{} price changes are not multiples of the tick {tick}; rounded",
            f.off_tick
        );
    }
    if !f.gaps.is_empty() {
        warn!("{} gaps in the 1-second grid", f.gaps.len());
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(best: &[f64], total: &[f64]) -> SideSeries {
        SideSeries {
            timestamps: (0..best.len()).map(|i| i as f64).collect(),
            best: best.to_vec(),
            top: total.iter().map(|t| t / 10.0).collect(),
            total: total.to_vec(),
        }
    }

    #[test]
    fn constant_book_has_zero_proxies() {
        let s = series(&[10.0; 5], &[100.0; 5]);
        let f = build_features(&s, 0.01, 1.0, MomentConvention::ZeroMoved).unwrap();
        assert!(f.activity().values.iter().all(|v| *v == 0.0));
        assert!(f.flow_target().values.iter().all(|v| *v == 0.0));
        assert!(f.top_target().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn moved_second_is_flagged_and_excluded() {
        let s = series(&[10.0, 10.0, 10.01, 10.01], &[100.0, 110.0, 50.0, 60.0]);
        let f = build_features(&s, 0.01, 1.0, MomentConvention::Exclude).unwrap();
        assert_eq!(f.moved, vec![false, true, false]);
        assert_eq!(f.price_change, vec![0, 1, 0]);
        let t = f.flow_target();
        assert_eq!(t.values, vec![10.0, 10.0]);
        assert_eq!(t.y, vec![100.0, 50.0]);
        let z = build_features(&s, 0.01, 1.0, MomentConvention::ZeroMoved).unwrap();
        assert_eq!(z.flow_target().values, vec![10.0, 0.0, 10.0]);
    }

    #[test]
    fn off_tick_moves_are_rounded_and_counted() {
        let s = series(&[10.0, 10.013, 10.013], &[1.0, 1.0, 1.0]);
        let f = build_features(&s, 0.01, 1.0, MomentConvention::ZeroMoved).unwrap();
        assert_eq!(f.price_change, vec![1, 0]);
        assert_eq!(f.off_tick, 1);
    }

    #[test]
    fn single_snapshot_is_rejected() {
        let s = series(&[10.0], &[1.0]);
        assert!(matches!(
            build_features(&s, 0.01, 1.0, MomentConvention::ZeroMoved),
            Err(LobError::InsufficientData(_))
        ));
    }
}
