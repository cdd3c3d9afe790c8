//! Semi-discrete 1-D heat and wave chains as LTI plants (boundary or
//! distributed control, tracked flux at the far end), plus the explicit
//! backward cascades that produce the boundary tracking control.
//!
//! The cascades are carried symbolically: each chain level is a linear
//! combination of target derivatives with integer coefficients times odd
//! powers of `h`, so the recursion is exact and the derivative count per
//! level is an inspectable fact rather than a numerical artifact.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ControlSignal, Grid, LtiSystem, SampledSignal, Signal, TargetSignal};

/// Spatial layout of a chain: `M` interior nodes on `(0, L)` with step
/// `h = L/(M+1)` and nodes `x_j = j h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub length: f64,
    pub interior_nodes: usize,
}

impl ChainSpec {
    pub fn new(length: f64, interior_nodes: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Io(format!("chain length must be positive, got {length}")));
        }
        if interior_nodes < 1 {
            return Err(Error::DimensionMismatch {
                context: "chain interior nodes",
                expected: 1,
                got: 0,
            });
        }
        Ok(ChainSpec { length, interior_nodes })
    }

    pub fn h(&self) -> f64 {
        self.length / (self.interior_nodes + 1) as f64
    }
}

fn laplacian(m: usize, h: f64) -> DMatrix<f64> {
    let s = 1.0 / (h * h);
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            -2.0 * s
        } else if i.abs_diff(j) == 1 {
            s
        } else {
            0.0
        }
    })
}

/// Flux output row `-(1/h) e_M`, tracking `(x_{M+1} - x_M)/h` with the far
/// boundary pinned at zero.
fn flux_row(m: usize, h: f64, total_dim: usize) -> DMatrix<f64> {
    let mut e = DMatrix::<f64>::zeros(1, total_dim);
    e[(0, m - 1)] = -1.0 / h;
    e
}

/// Heat chain with boundary control: `z_j' = (z_{j-1} - 2z_j + z_{j+1})/h²`,
/// `z_0 = u`, `z_{M+1} = 0`; the control enters the first equation as
/// `u/h²` and the tracked output is the flux at `x = L`.
pub fn heat_boundary_system(spec: &ChainSpec) -> LtiSystem {
    let m = spec.interior_nodes;
    let h = spec.h();
    let mut b = DMatrix::<f64>::zeros(m, 1);
    b[(0, 0)] = 1.0 / (h * h);
    LtiSystem::new(laplacian(m, h), b, flux_row(m, h, m), DVector::zeros(m))
        .expect("chain dimensions are consistent by construction")
}

/// Heat chain with one control per interior node (distributed forcing).
pub fn heat_distributed_system(spec: &ChainSpec) -> LtiSystem {
    let m = spec.interior_nodes;
    let h = spec.h();
    LtiSystem::new(laplacian(m, h), DMatrix::identity(m, m), flux_row(m, h, m), DVector::zeros(m))
        .expect("chain dimensions are consistent by construction")
}

/// Wave chain with boundary control, first-order form on `(w, w')`:
/// `w_j'' = (w_{j-1} - 2w_j + w_{j+1})/h²`, `w_0 = u`, `w_{M+1} = 0`.
pub fn wave_boundary_system(spec: &ChainSpec) -> LtiSystem {
    let m = spec.interior_nodes;
    let h = spec.h();
    let lap = laplacian(m, h);
    let mut a = DMatrix::<f64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        a[(i, m + i)] = 1.0;
        for j in 0..m {
            a[(m + i, j)] = lap[(i, j)];
        }
    }
    let mut b = DMatrix::<f64>::zeros(2 * m, 1);
    b[(m, 0)] = 1.0 / (h * h);
    LtiSystem::new(a, b, flux_row(m, h, 2 * m), DVector::zeros(2 * m))
        .expect("chain dimensions are consistent by construction")
}

/// Integer coefficient tables of the backward cascade.
///
/// Level `j` stores `a_{j,0..}` with
/// `chain_j(t) = Σ_i a_{j,i} h^{2i+1} f^{(stride·i)}(t)`,
/// where `stride` is 2 for the wave chain (second time derivatives per
/// spatial level) and 1 for the heat chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTables {
    /// `levels[j]` = coefficients of level `j`, `j = 0..=M` (level 0 is the
    /// boundary value, i.e. the control).
    pub levels: Vec<Vec<i128>>,
    pub derivative_stride: usize,
}

impl CascadeTables {
    /// Highest target-derivative order consumed by the control level.
    pub fn max_derivative_used(&self) -> usize {
        self.derivative_stride * (self.levels[0].len() - 1)
    }
}

/// Shared integer recursion `a_{j-1,i} = a_{j,i-1} + 2 a_{j,i} - a_{j+1,i}`
/// seeded by `chain_M = -h f` (so `a_M = [-1]`, `a_{M+1} = 0`).
fn chain_tables(m: usize, stride: usize) -> Result<CascadeTables> {
    let mut levels: Vec<Vec<i128>> = vec![Vec::new(); m + 1];
    levels[m] = vec![-1];
    let overflow = || Error::Io("cascade coefficient overflow; chain too deep".into());
    for j in (0..m).rev() {
        let width = m - j + 1;
        let mut row = vec![0i128; width];
        for i in 0..width {
            let from_shift = if i >= 1 { levels[j + 1].get(i - 1).copied().unwrap_or(0) } else { 0 };
            let same = levels[j + 1].get(i).copied().unwrap_or(0);
            let above = if j + 2 <= m { levels[j + 2].get(i).copied().unwrap_or(0) } else { 0 };
            let doubled = same.checked_mul(2).ok_or_else(overflow)?;
            row[i] = from_shift
                .checked_add(doubled)
                .and_then(|v| v.checked_sub(above))
                .ok_or_else(overflow)?;
        }
        levels[j] = row;
    }
    Ok(CascadeTables { levels, derivative_stride: stride })
}

/// Cascade tables for the wave chain (`f`, `f''`, `f⁗`, ... per level).
pub fn wave_coefficient_tables(m: usize) -> Result<CascadeTables> {
    chain_tables(m, 2)
}

/// Cascade tables for the heat chain (`f`, `f'`, `f''`, ... per level).
pub fn heat_coefficient_tables(m: usize) -> Result<CascadeTables> {
    chain_tables(m, 1)
}

/// Boundary control and interior states produced by a backward cascade.
#[derive(Debug, Clone)]
pub struct CascadeControl {
    pub u: ControlSignal,
    /// Interior levels `1..=M` sampled on the grid (scalar each).
    pub states: Vec<SampledSignal>,
    /// Exact target-derivative order consumed (`2M` wave, `M` heat).
    pub max_derivative_used: usize,
    pub tables: CascadeTables,
}

fn cascade_control(
    spec: &ChainSpec,
    f: &TargetSignal,
    grid: Grid,
    stride: usize,
) -> Result<CascadeControl> {
    let m = spec.interior_nodes;
    let h = spec.h();
    let tables = chain_tables(m, stride)?;
    let needed = tables.max_derivative_used();
    let available = f.max_derivative();
    if available < needed {
        return Err(Error::InsufficientRegularity { needed, available });
    }
    // the slope channel costs one more derivative; take it when granted
    let with_slope = available > needed;
    let top_order = if with_slope { needed + 1 } else { needed };

    // zero initial chain data requires the target to vanish at t = 0 up to
    // the highest derivative the states carry
    let probe: Vec<f64> = (0..8).map(|i| grid.t_final() * (i as f64 + 0.5) / 8.0).collect();
    let at_zero = f.eval_derivs(0.0, needed.saturating_sub(1))?;
    for (order, v) in at_zero.iter().enumerate() {
        let scale = probe
            .iter()
            .map(|&t| f.eval(order, t).map(f64::abs))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(1.0f64, f64::max);
        if v.abs() > 1e-9 * scale {
            return Err(Error::CompatibilityViolation { mismatch: v.abs() });
        }
    }

    let h_powers: Vec<f64> = (0..tables.levels[0].len()).map(|i| h.powi(2 * i as i32 + 1)).collect();
    let level_value = |level: usize, derivs: &[f64], shift: usize| -> f64 {
        tables.levels[level]
            .iter()
            .enumerate()
            .map(|(i, &a)| a as f64 * h_powers[i] * derivs[stride * i + shift])
            .sum()
    };

    let mut u_vals = Vec::with_capacity(grid.len());
    let mut du_vals = Vec::with_capacity(grid.len());
    let mut states = vec![Vec::with_capacity(grid.len()); m];
    for k in 0..grid.len() {
        let derivs = f.eval_derivs(grid.node(k), top_order)?;
        u_vals.push(level_value(0, &derivs, 0));
        if with_slope {
            du_vals.push(level_value(0, &derivs, 1));
        }
        for (j, state) in states.iter_mut().enumerate() {
            state.push(level_value(j + 1, &derivs, 0));
        }
    }

    let scalar_signal = |vals: Vec<f64>| SampledSignal {
        grid,
        values: vals.into_iter().map(|v| DVector::from_element(1, v)).collect(),
    };
    let u = if with_slope {
        ControlSignal::with_derivative(scalar_signal(u_vals), scalar_signal(du_vals))
    } else {
        ControlSignal::new(scalar_signal(u_vals))
    };
    Ok(CascadeControl {
        u,
        states: states.into_iter().map(scalar_signal).collect(),
        max_derivative_used: needed,
        tables,
    })
}

/// Explicit boundary control tracking the far-end flux of the wave chain;
/// consumes exactly `2M` derivatives of the target.
pub fn wave_cascade_control(spec: &ChainSpec, f: &TargetSignal, grid: Grid) -> Result<CascadeControl> {
    cascade_control(spec, f, grid, 2)
}

/// Heat-chain analogue; consumes exactly `M` derivatives of the target.
pub fn heat_cascade_control(spec: &ChainSpec, f: &TargetSignal, grid: Grid) -> Result<CascadeControl> {
    cascade_control(spec, f, grid, 1)
}
