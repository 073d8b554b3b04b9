//! Run configuration: a TOML document with strict keys plus `section.key=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CsvSchema, MomentConvention, Side, StdErrKind};
use crate::error::{LobError, Result};
use crate::grid::TestFunction;
use crate::params::SimplifiedCoefficients;
use crate::presets::{self, PresetName, Scenario, TableModelParams};
use crate::secondorder::{CovarianceExponent, OuScheme};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    pub coefficients: CoefficientsSection,
    pub sim: SimSection,
    pub first_order: FirstOrderSection,
    pub fluctuations: FluctuationsSection,
    pub second_order: SecondOrderSection,
    pub calibration: CalibrationSection,
    pub study: StudySection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub delta: f64,
    /// Simplified model only; presets of the general model fix their own grid.
    pub half_width: Option<f64>,
    /// Support bound `M` of placements and of the initial book.
    pub support_bound: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            delta: 0.002,
            half_width: None,
            support_bound: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    #[default]
    Simplified,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub mode: ModelMode,
    /// Builtin model for `general` mode.
    pub preset: PresetName,
    /// Coefficient set of the simplified model.
    pub side: Side,
    /// Initial total visible volume of the simplified model; defaults to the
    /// root of `F`.
    pub y0: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            mode: ModelMode::Simplified,
            preset: PresetName::Constant,
            side: Side::Bid,
            y0: None,
        }
    }
}

/// `[coefficients.bid]` / `[coefficients.ask]`; missing sides use the builtin
/// estimates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientsSection {
    pub bid: Option<SimplifiedCoefficients>,
    pub ask: Option<SimplifiedCoefficients>,
}

impl CoefficientsSection {
    pub fn for_side(&self, side: Side) -> SimplifiedCoefficients {
        match side {
            Side::Bid => self.bid.unwrap_or(SimplifiedCoefficients::BID),
            Side::Ask => self.ask.unwrap_or(SimplifiedCoefficients::ASK),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: f64,
    pub n_paths: usize,
    /// Required by every randomized subcommand.
    pub seed: Option<u64>,
    pub record_stride: usize,
    /// Paths whose event series are written to disk.
    pub write_paths: usize,
    pub write_densities: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: 0.36,
            n_paths: 100,
            seed: None,
            record_stride: 18,
            write_paths: 10,
            write_densities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct FirstOrderSection {
    /// Defaults to the tick size.
    pub dt: Option<f64>,
    /// Density snapshots every this many steps (0 writes none).
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluctuationsSection {
    /// Test functions in the `--test-fns` syntax; empty uses the model's own.
    pub test_fns: Vec<String>,
    pub checkpoints: usize,
    pub k_sigma: f64,
}

impl Default for FluctuationsSection {
    fn default() -> Self {
        Self {
            test_fns: Vec::new(),
            checkpoints: 10,
            k_sigma: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecondOrderMode {
    #[default]
    Simplified,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondOrderSection {
    pub mode: SecondOrderMode,
    /// Fourier modes `K` of the spectral truncation.
    pub modes: usize,
    pub dt: f64,
    pub covariance_exponent: CovarianceExponent,
    pub scheme: OuScheme,
    /// Ensemble size; 0 skips the Monte Carlo part.
    pub n_paths: usize,
    pub zero_q: bool,
    pub quad_steps: usize,
    /// Output times `T i / n_times`, `i = 1..n_times`.
    pub n_times: usize,
}

impl Default for SecondOrderSection {
    fn default() -> Self {
        Self {
            mode: SecondOrderMode::Simplified,
            modes: 32,
            dt: 1e-3,
            covariance_exponent: CovarianceExponent::Integral,
            scheme: OuScheme::Euler,
            n_paths: 1000,
            zero_q: false,
            quad_steps: 400,
            n_times: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// Snapshot CSV; without it the subcommands use simulated sessions.
    pub input: Option<PathBuf>,
    pub schema: CsvSchema,
    pub window_seconds: usize,
    pub burn_in: f64,
    /// Model time of one second; defaults to the tick size.
    pub dt: Option<f64>,
    /// Price tick; defaults to the tick size of the grid.
    pub tick: Option<f64>,
    pub stderr: StdErrKind,
    pub convention: MomentConvention,
    /// Length of a simulated session in seconds.
    pub session_seconds: usize,
    /// Simulated windows for `correlate`.
    pub n_windows: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            input: None,
            schema: CsvSchema::default(),
            window_seconds: 180,
            burn_in: 0.15,
            dt: None,
            tick: None,
            stderr: StdErrKind::Homoskedastic,
            convention: MomentConvention::ZeroMoved,
            session_seconds: 19_800,
            n_windows: 110,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    /// Finest tick size of the ladder `base_delta * 2^i`.
    pub base_delta: f64,
    pub rungs: usize,
    pub n_paths: usize,
    pub checkpoints: usize,
    pub k_sigma: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            base_delta: 0.002,
            rungs: 3,
            n_paths: 400,
            checkpoints: 10,
            k_sigma: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| LobError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| LobError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| LobError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LobError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid.delta", self.grid.delta),
            ("sim.horizon", self.sim.horizon),
            ("second_order.dt", self.second_order.dt),
            ("study.base_delta", self.study.base_delta),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LobError::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if let Some(dt) = self.first_order.dt {
            if !(dt > 0.0) {
                return Err(LobError::Config(format!(
                    "first_order.dt must be positive, got {dt}"
                )));
            }
        }
        if self.model.mode == ModelMode::General
            && (self.grid.half_width.is_some() || self.grid.support_bound.is_some())
        {
            return Err(LobError::Config(
                "grid.half_width and grid.support_bound apply to the simplified model only".into(),
            ));
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(LobError::Config(format!("unknown output format '{f}'")));
            }
        }
        for spec in &self.fluctuations.test_fns {
            parse_test_fn(spec)?;
        }
        Ok(())
    }

    /// Seed of a randomized subcommand.
    pub fn seed(&self) -> Result<u64> {
        self.sim.seed.ok_or_else(|| {
            LobError::Config("sim.seed is required for randomized subcommands".into())
        })
    }

    pub fn first_order_dt(&self) -> f64 {
        self.first_order.dt.unwrap_or(self.grid.delta)
    }

    pub fn coefficients(&self) -> Option<SimplifiedCoefficients> {
        match self.model.mode {
            ModelMode::Simplified => Some(self.coefficients.for_side(self.model.side)),
            ModelMode::General => match self.model.preset {
                PresetName::TableBid => Some(self.coefficients.for_side(Side::Bid)),
                PresetName::TableAsk => Some(self.coefficients.for_side(Side::Ask)),
                _ => None,
            },
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario_at(self.grid.delta)
    }

    /// The configured model on a grid of tick size `delta`.
    pub fn scenario_at(&self, delta: f64) -> Result<Scenario> {
        let mut s = match (self.model.mode, self.coefficients()) {
            (ModelMode::Simplified, Some(c)) => {
                let d = TableModelParams::default();
                let params = TableModelParams {
                    y0: self.model.y0,
                    support_bound: self.grid.support_bound.unwrap_or(d.support_bound),
                    half_width: self.grid.half_width.unwrap_or(d.half_width),
                    volume_bound: d.volume_bound,
                };
                presets::table_model(c, params, delta)?
            }
            (ModelMode::General, Some(c)) => {
                presets::table_model(c, TableModelParams::default(), delta)?
            }
            _ => presets::by_name(self.model.preset, delta)?,
        };
        if !self.fluctuations.test_fns.is_empty() {
            s.test_fns = self
                .fluctuations
                .test_fns
                .iter()
                .map(|t| parse_test_fn(t))
                .collect::<Result<_>>()?;
        }
        Ok(s)
    }
}

/// Sets `section.key` (or `section.sub.key`) to `value`, read as a TOML value
/// when it parses as one and as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| LobError::Config(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(LobError::Config(format!(
            "override key '{key}' must be section.key"
        )));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| LobError::Config(format!("'{p}' in '{key}' is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `bump:c:r`, `indicator:a:b`, `left_indicator` or `constant:c`.
pub fn parse_test_fn(spec: &str) -> Result<TestFunction> {
    let mut it = spec.trim().split(':');
    let kind = it.next().unwrap_or_default();
    let args: Vec<f64> = it
        .map(|a| a.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| LobError::Config(format!("test function '{spec}': {e}")))?;
    let bad = || LobError::Config(format!("test function '{spec}' has the wrong arguments"));
    match (kind, args.as_slice()) {
        ("bump", [c, r]) if *r > 0.0 => Ok(TestFunction::bump(*c, *r, 1.0)),
        ("indicator", [a, b]) if a < b => Ok(TestFunction::indicator(*a, *b)),
        ("left_indicator", []) => Ok(TestFunction::left_indicator()),
        ("constant", [c]) => Ok(TestFunction::constant(*c)),
        ("bump" | "indicator" | "left_indicator" | "constant", _) => Err(bad()),
        _ => Err(LobError::Config(format!(
            "unknown test function kind '{kind}'"
        ))),
    }
}
