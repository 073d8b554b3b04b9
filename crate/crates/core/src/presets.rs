//! Built-in model configurations.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{LobError, Result};
use crate::grid::{StepDensity, TestFunction, TickGrid};
use crate::params::{
    coef, EventProbabilityFns, ModelSpec, MomentTerm, PlacementMomentFns, SimplifiedCoefficients,
    VolumeIndicator,
};

/// A model together with a grid, an initial state and default test functions.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub spec: ModelSpec,
    pub grid: TickGrid,
    pub b0: f64,
    pub u0: StepDensity,
    pub test_fns: Vec<TestFunction>,
    /// Present for the simplified model.
    pub coefficients: Option<SimplifiedCoefficients>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    PurePrice,
    Constant,
    TableBid,
    TableAsk,
}

/// Knobs of the constant-parameter model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantParams {
    pub p_a: f64,
    pub p_b: f64,
    /// Total placement mean `int f`.
    pub f_mass: f64,
    /// Total placement second moment `int g`.
    pub g_mass: f64,
}

impl Default for ConstantParams {
    fn default() -> Self {
        Self {
            p_a: 0.04,
            p_b: 0.06,
            f_mass: 0.5,
            g_mass: 0.8,
        }
    }
}

const CONSTANT_HALF_WIDTH: f64 = 2.0;
const CONSTANT_BOUND: f64 = 1.0;

/// Triweight bump normalised to unit integral.
pub fn unit_bump(center: f64, radius: f64) -> TestFunction {
    TestFunction::bump(center, radius, 35.0 / (32.0 * radius))
}

/// `2 (1 - (x / 0.9)^2)^2` on `|x| < 0.9`.
pub fn constant_initial_profile(x: f64) -> f64 {
    let s = x / 0.9;
    if s.abs() >= 1.0 {
        0.0
    } else {
        2.0 * (1.0 - s * s).powi(2)
    }
}

fn default_test_fns() -> Vec<TestFunction> {
    vec![
        TestFunction::bump(-0.2, 0.4, 1.0),
        TestFunction::bump(0.1, 0.4, 1.0),
    ]
}

/// Only market orders and spread placements, each with probability `q`.
pub fn pure_price(q: f64, delta: f64) -> Result<Scenario> {
    let grid = TickGrid::new(delta, CONSTANT_HALF_WIDTH)?;
    let spec = ModelSpec::new(
        EventProbabilityFns::constant(q, q),
        PlacementMomentFns::zero(),
        VolumeIndicator::left_indicator(),
        CONSTANT_BOUND,
    )
    .with_volume_bound(2.0);
    Ok(Scenario {
        name: "pure_price".into(),
        spec,
        grid,
        b0: 0.0,
        u0: StepDensity::from_fn(grid, constant_initial_profile),
        test_fns: default_test_fns(),
        coefficients: None,
    })
}

/// Constant event probabilities, placements `f = F psi`, `g = G psi` with a
/// fixed bump `psi` on `[-0.8, 0]`, and a smooth volume indicator on `[-0.5, 0]`.
pub fn constant_model(params: ConstantParams, delta: f64) -> Result<Scenario> {
    let grid = TickGrid::new(delta, CONSTANT_HALF_WIDTH)?;
    let shape = unit_bump(-0.4, 0.4);
    let (fm, gm) = (params.f_mass, params.g_mass);
    let moments = PlacementMomentFns {
        first: vec![MomentTerm::new(coef(move |_, _| fm), shape.clone())
            .with_partials(Arc::new(|_, _| (0.0, 0.0)))],
        second: vec![
            MomentTerm::new(coef(move |_, _| gm), shape).with_partials(Arc::new(|_, _| (0.0, 0.0)))
        ],
    };
    let h = VolumeIndicator::smooth(TestFunction::bump(-0.25, 0.25, 1.0))?;
    let spec = ModelSpec::new(
        EventProbabilityFns::constant(params.p_a, params.p_b),
        moments,
        h,
        CONSTANT_BOUND,
    )
    .with_volume_bound(2.0);
    Ok(Scenario {
        name: "constant".into(),
        spec,
        grid,
        b0: 0.0,
        u0: StepDensity::from_fn(grid, constant_initial_profile),
        test_fns: default_test_fns(),
        coefficients: None,
    })
}

/// Settings of the simplified model lifted to a full discrete model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableModelParams {
    /// Initial total visible volume; `None` starts at the root of `F`.
    pub y0: Option<f64>,
    pub support_bound: f64,
    pub half_width: f64,
    pub volume_bound: f64,
}

impl Default for TableModelParams {
    fn default() -> Self {
        Self {
            y0: None,
            support_bound: 4.0,
            half_width: 5.0,
            volume_bound: 1e9,
        }
    }
}

/// Placement width `W = F_c / f0_c`: with a flat profile on `[-W, 0]` the
/// placement mean at the top of the book is `F(y) / W`, which reproduces the
/// fitted top-of-book intensity up to the ratio of the two slopes.
pub fn placement_width(c: &SimplifiedCoefficients) -> f64 {
    c.big_f_c / c.f0_c
}

/// Second moment used by the lifted model: the fitted `G` floored at the
/// smallest value for which the placement volume law exists.
pub fn effective_g(c: &SimplifiedCoefficients, y: f64) -> f64 {
    let p_c = 1.0 - c.p_sum(y);
    let f = c.big_f(y);
    let floor = if p_c > 0.0 { f * f / p_c } else { 0.0 };
    c.big_g(y).max(floor)
}

/// The simplified model: no price drift (`p_A = p_B = p^{B+A}(Y)/2`), total
/// visible volume as indicator, flat placements on `[-W, 0]` with total
/// mean `F(Y)` and second moment [`effective_g`].
pub fn table_model(
    c: SimplifiedCoefficients,
    params: TableModelParams,
    delta: f64,
) -> Result<Scenario> {
    let grid = TickGrid::new(delta, params.half_width)?;
    let w = placement_width(&c);
    if !(w > 0.0 && w <= params.support_bound) {
        return Err(LobError::InvalidParameter(format!(
            "placement width {w} must lie in (0, {}]",
            params.support_bound
        )));
    }
    let half = coef(move |_, y| 0.5 * c.p_sum_raw(y));
    let probs =
        EventProbabilityFns::new(half.clone(), half).with_partials(Arc::new(|_, _| (0.0, 0.0)));
    let shape = TestFunction::new(
        "flat",
        move |x| if x > -w && x <= 0.0 { 1.0 / w } else { 0.0 },
    )
    .with_support(-w, 0.0);
    let fy = c.big_f_y;
    let moments = PlacementMomentFns {
        first: vec![MomentTerm::new(coef(move |_, y| c.big_f(y)), shape.clone())
            .with_partials(Arc::new(move |_, _| (0.0, fy)))],
        second: vec![MomentTerm::new(coef(move |_, y| effective_g(&c, y)), shape)],
    };
    let spec = ModelSpec::new(
        probs,
        moments,
        VolumeIndicator::left_indicator(),
        params.support_bound,
    )
    .with_volume_bound(params.volume_bound);
    let y0 = params.y0.unwrap_or_else(|| c.y_star());
    let level = y0 / w;
    let m = params.support_bound;
    let u0 = StepDensity::from_fn(grid, move |x| if x > -w && x <= m { level } else { 0.0 });
    let test_fns = vec![
        TestFunction::indicator(-0.5 * w, 0.0),
        TestFunction::bump(-0.5 * w, 0.5 * w, 1.0),
    ];
    Ok(Scenario {
        name: "table".into(),
        spec,
        grid,
        b0: 0.0,
        u0,
        test_fns,
        coefficients: Some(c),
    })
}

pub fn by_name(name: PresetName, delta: f64) -> Result<Scenario> {
    match name {
        PresetName::PurePrice => pure_price(0.05, delta),
        PresetName::Constant => constant_model(ConstantParams::default(), delta),
        PresetName::TableBid => table_model(
            SimplifiedCoefficients::BID,
            TableModelParams::default(),
            delta,
        ),
        PresetName::TableAsk => table_model(
            SimplifiedCoefficients::ASK,
            TableModelParams::default(),
            delta,
        ),
    }
}
