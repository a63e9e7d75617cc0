//! Standalone Allen-Cahn runs with a fixed heterogeneity profile `alpha(x)` on `[0, 1]`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::basis::BasisMatrix;
use crate::error::{PsbcError, Result};
use crate::model::PsbcModel;
use crate::params::{BoundaryCondition, Hyperparameters, Subordination, WeightStack};
use crate::propagation::{forward, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaProfile {
    Constant(f64),
    /// `-2` left of `x = 0.5`, `+2` from there on.
    Step,
    /// `4 - 8 (x + 0.2)^2`.
    Parabola,
}

impl AlphaProfile {
    /// Parses `const:<value>`, `step` or `parabola`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(AlphaProfile::Step),
            "parabola" => Ok(AlphaProfile::Parabola),
            _ => s
                .strip_prefix("const:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .map(AlphaProfile::Constant)
                .ok_or_else(|| {
                    PsbcError::Config(format!(
                        "unknown alpha profile `{s}` (expected const:<value>, step or parabola)"
                    ))
                }),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            AlphaProfile::Constant(a) => a,
            AlphaProfile::Step => {
                if x < 0.5 {
                    -2.0
                } else {
                    2.0
                }
            }
            AlphaProfile::Parabola => 4.0 - 8.0 * (x + 0.2) * (x + 0.2),
        }
    }
}

impl std::fmt::Display for AlphaProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlphaProfile::Constant(a) => write!(f, "const:{a}"),
            AlphaProfile::Step => f.write_str("step"),
            AlphaProfile::Parabola => f.write_str("parabola"),
        }
    }
}

/// Cell centers `(m - 1/2) / n`, `m = 1..=n`.
pub fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|m| (m as f64 + 0.5) / n as f64).collect()
}

/// `1/2 - 1/2 sin(pi (2x - 1))` on the grid.
pub fn sine_initial_condition(n: usize) -> Vec<f64> {
    grid(n)
        .into_iter()
        .map(|x| (0.5 - 0.5 * (PI * (2.0 * x - 1.0)).sin()).clamp(0.0, 1.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    pub n_t: usize,
    pub dt: f64,
    pub eps: f64,
    pub bc: BoundaryCondition,
}

/// Runs the feature equation with `alpha` sampled at cell centers and held
/// fixed over all layers.
pub fn allen_cahn_simulate(
    alpha: impl Fn(f64) -> f64,
    u0: &[f64],
    params: &SimulationParams,
) -> Result<Trajectory> {
    let n = u0.len();
    let hp = Hyperparameters::new(
        params.n_t,
        n,
        n,
        params.eps,
        params.dt,
        params.n_t,
        params.bc,
        Subordination::NonSubordinate,
    )?;
    let weights = WeightStack {
        w_u: vec![grid(n).into_iter().map(alpha).collect()],
        // 1/2 is a root of f(., 1/2): the phase never moves
        w_p: vec![vec![0.5]],
    };
    let model = PsbcModel::new(hp, BasisMatrix::identity(n), weights)?;
    forward(&model, u0)
}

/// One line per layer, comma-separated, 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    for row in &traj.u_layers {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}
