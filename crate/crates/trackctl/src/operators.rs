//! Discrete realizations of the control-to-output operator
//! `Λ u(t) = ∫_0^t E e^{A(t-s)} B u(s) ds`, its adjoint, the tracking
//! Gramian `Λ∘Λ*`, spectrum/unique-continuation diagnostics, and the
//! explicit modal control formula for symmetric plants.
//!
//! The time discretization is Crank-Nicolson; the adjoint is the exact
//! transpose of the discrete forward map under trapezoid-weighted inner
//! products (discretize-then-transpose), which the backward solve of the
//! continuous adjoint system recovers to second order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpectrumReport;
use crate::model::{ControlSignal, Grid, LtiSystem, SampledSignal, Signal, TargetSignal};

/// Entry budget for dense assemblies.
pub const DENSE_ENTRY_LIMIT: usize = 4_000_000;

/// Crank-Nicolson realization of the control-to-output map on a grid.
///
/// One step is `x_{k+1} = S x_k + C (u_k + u_{k+1})` with
/// `S = (I - dt/2 A)^{-1} (I + dt/2 A)` and `C = (I - dt/2 A)^{-1} (dt/2) B`;
/// outputs are `y_k = E x_k` from a zero initial state, so the transpose
/// sweep below is the exact matrix transpose of the forward map.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Grid,
    step: DMatrix<f64>,
    step_t: DMatrix<f64>,
    input: DMatrix<f64>,
    input_t: DMatrix<f64>,
    output: DMatrix<f64>,
    output_t: DMatrix<f64>,
}

impl DiscreteOperator {
    pub fn new(sys: &LtiSystem, grid: Grid) -> Result<Self> {
        let n = sys.state_dim();
        let dt = grid.dt();
        let minus = DMatrix::<f64>::identity(n, n) - &sys.a * (dt / 2.0);
        let plus = DMatrix::<f64>::identity(n, n) + &sys.a * (dt / 2.0);
        let inv_minus = minus
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::Singular { cond_estimate: f64::INFINITY })?;
        let step = &inv_minus * plus;
        let input = &inv_minus * (&sys.b * (dt / 2.0));
        Ok(DiscreteOperator {
            grid,
            step_t: step.transpose(),
            step,
            input_t: input.transpose(),
            input,
            output_t: sys.e.transpose(),
            output: sys.e.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.step.nrows()
    }

    /// Forward sweep from a zero initial state; returns `E x` at the nodes.
    pub fn forward(&self, u: &SampledSignal) -> SampledSignal {
        SampledSignal { grid: self.grid, values: self.forward_states(u).iter().map(|x| &self.output * x).collect() }
    }

    /// States of the forward sweep (zero initial state).
    pub fn forward_states(&self, u: &SampledSignal) -> Vec<DVector<f64>> {
        let mut states = Vec::with_capacity(self.grid.len());
        let mut x = DVector::zeros(self.state_dim());
        states.push(x.clone());
        for k in 0..self.grid.steps() {
            x = &self.step * &x + &self.input * (&u.values[k] + &u.values[k + 1]);
            states.push(x.clone());
        }
        states
    }

    /// Plain transpose of the forward map (reverse sweep with transposed
    /// step matrices). No quadrature weights are applied.
    pub fn transpose_apply(&self, psi: &SampledSignal) -> SampledSignal {
        let n_steps = self.grid.steps();
        let mut ubar = vec![DVector::<f64>::zeros(self.input_dim()); self.grid.len()];
        let mut phi = &self.output_t * &psi.values[n_steps];
        for k in (1..=n_steps).rev() {
            let t = &self.input_t * &phi;
            ubar[k] += &t;
            ubar[k - 1] += &t;
            if k > 1 {
                phi = &self.step_t * phi + &self.output_t * &psi.values[k - 1];
            }
        }
        SampledSignal { grid: self.grid, values: ubar }
    }

    /// Adjoint with respect to the trapezoid-weighted inner products on both
    /// sides: `Λ* = W_u⁻¹ Fᵀ W_y`. Approximates
    /// `∫_t^T B* e^{A*(τ-t)} E* ψ(τ) dτ` to second order.
    pub fn adjoint_apply(&self, psi: &SampledSignal) -> SampledSignal {
        let w = self.grid.trapezoid_weights();
        let weighted = SampledSignal {
            grid: self.grid,
            values: psi.values.iter().zip(&w).map(|(v, wk)| v * *wk).collect(),
        };
        let mut out = self.transpose_apply(&weighted);
        for (v, wk) in out.values.iter_mut().zip(&w) {
            *v /= *wk;
        }
        out
    }

    /// Composition `Λ ∘ Λ*`.
    pub fn gramian_apply(&self, psi: &SampledSignal) -> SampledSignal {
        self.forward(&self.adjoint_apply(psi))
    }

    /// Dense matrix of the forward map, column by column.
    pub fn assemble_matrix(&self) -> Result<DMatrix<f64>> {
        let rows = self.output_dim() * self.grid.len();
        let cols = self.input_dim() * self.grid.len();
        check_dense(rows, cols)?;
        let mut f = DMatrix::<f64>::zeros(rows, cols);
        let m = self.input_dim();
        let p = self.output_dim();
        for node in 0..self.grid.len() {
            for comp in 0..m {
                let mut impulse = SampledSignal::zeros(self.grid, m);
                impulse.values[node][comp] = 1.0;
                let y = self.forward(&impulse);
                let col = node * m + comp;
                for (k, v) in y.values.iter().enumerate() {
                    for i in 0..p {
                        f[(k * p + i, col)] = v[i];
                    }
                }
            }
        }
        Ok(f)
    }
}

fn check_dense(rows: usize, cols: usize) -> Result<()> {
    let entries = rows.saturating_mul(cols);
    if entries > DENSE_ENTRY_LIMIT {
        return Err(Error::TooLarge { entries, limit: DENSE_ENTRY_LIMIT });
    }
    Ok(())
}

/// `Λ u`: Crank-Nicolson output of `x' = Ax + Bu` from a zero initial state.
pub fn lambda_apply(sys: &LtiSystem, u: &SampledSignal) -> Result<SampledSignal> {
    Ok(DiscreteOperator::new(sys, u.grid)?.forward(u))
}

/// `Λ* ψ`: the exact weighted transpose of the discrete forward map.
pub fn lambda_adjoint_apply(sys: &LtiSystem, psi: &SampledSignal) -> Result<SampledSignal> {
    Ok(DiscreteOperator::new(sys, psi.grid)?.adjoint_apply(psi))
}

/// Dense forward matrix (`p(N+1) × m(N+1)`).
pub fn assemble_lambda_matrix(sys: &LtiSystem, grid: Grid) -> Result<DMatrix<f64>> {
    DiscreteOperator::new(sys, grid)?.assemble_matrix()
}

/// Dense symmetric Gramian kernel `F W_u⁻¹ Fᵀ`; applying it to the
/// output-weighted coefficient vector `W_y ψ` reproduces `gramian_apply(ψ)`.
pub fn gramian_matrix(sys: &LtiSystem, grid: Grid) -> Result<DMatrix<f64>> {
    let op = DiscreteOperator::new(sys, grid)?;
    let f = op.assemble_matrix()?;
    check_dense(f.nrows(), f.nrows())?;
    let w = grid.trapezoid_weights();
    let mut scaled = f;
    let m = op.input_dim();
    for node in 0..grid.len() {
        let s = 1.0 / w[node].sqrt();
        for comp in 0..m {
            scaled.column_mut(node * m + comp).scale_mut(s);
        }
    }
    Ok(&scaled * scaled.transpose())
}

/// Backward Crank-Nicolson run of the adjoint system
/// `-φ' = A* φ + E* g`, `φ(T) = 0`, with its observation `B* φ`.
#[derive(Debug, Clone)]
pub struct AdjointRun {
    pub source: SampledSignal,
    pub state: Vec<DVector<f64>>,
    pub observation: SampledSignal,
}

/// Solves the adjoint system backwards from `φ(T) = 0`.
pub fn adjoint_solve(sys: &LtiSystem, g: &SampledSignal) -> Result<AdjointRun> {
    let n = sys.state_dim();
    let grid = g.grid;
    let dt = grid.dt();
    let at = sys.a.transpose();
    let et = sys.e.transpose();
    let bt = sys.b.transpose();
    let minus = DMatrix::<f64>::identity(n, n) - &at * (dt / 2.0);
    let plus = DMatrix::<f64>::identity(n, n) + &at * (dt / 2.0);
    let inv_minus = minus
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { cond_estimate: f64::INFINITY })?;

    let mut state = vec![DVector::<f64>::zeros(n); grid.len()];
    for k in (0..grid.steps()).rev() {
        let src = &et * (&g.values[k] + &g.values[k + 1]);
        state[k] = &inv_minus * (&plus * &state[k + 1] + src * (dt / 2.0));
    }
    let observation =
        SampledSignal { grid, values: state.iter().map(|phi| &bt * phi).collect() };
    Ok(AdjointRun { source: g.clone(), state, observation })
}

/// Per-grid singular spectra of the output-derivative realization of `Λ`.
///
/// Surjectivity onto once-differentiable output paths is a statement about
/// `(Λu)' = E B u + Λ_{EA} u`, which this sweep discretizes with trapezoid
/// weights on both sides. The decay of `σ_min` under grid refinement is the
/// numerical signature of derivative loss; it is reported, not asserted.
#[derive(Debug, Clone)]
pub struct ObservabilitySweep {
    /// `(steps, report)` per grid, in the order given.
    pub reports: Vec<(usize, SpectrumReport)>,
}

impl ObservabilitySweep {
    pub fn sigma_mins(&self) -> Vec<f64> {
        self.reports.iter().map(|(_, r)| r.sigma_min()).collect()
    }

    /// Least-squares slope of `log σ_min` against `log dt` (positive =
    /// decay under refinement).
    pub fn fitted_decay_exponent(&self, t_final: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .reports
            .iter()
            .filter(|(_, r)| r.sigma_min() > 0.0)
            .map(|(n, r)| ((t_final / *n as f64).ln(), r.sigma_min().ln()))
            .collect();
        if pts.len() < 2 {
            return 0.0;
        }
        let len = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        num / den
    }
}

/// Assembles the weighted output-derivative matrix on each grid and reports
/// its singular spectrum.
pub fn observability_spectrum(sys: &LtiSystem, grids: &[Grid]) -> Result<ObservabilitySweep> {
    let mut reports = Vec::with_capacity(grids.len());
    for grid in grids {
        // (Λu)' = EB u + Λ_{EA} u, exactly; discretized as a dense map.
        let deriv_sys = LtiSystem::new(
            sys.a.clone(),
            sys.b.clone(),
            &sys.e * &sys.a,
            DVector::zeros(sys.state_dim()),
        )?;
        let f_ea = assemble_lambda_matrix(&deriv_sys, *grid)?;
        let eb = &sys.e * &sys.b;
        let m = sys.input_dim();
        let p = sys.output_dim();
        let mut d = f_ea;
        for node in 0..grid.len() {
            for i in 0..p {
                for j in 0..m {
                    d[(node * p + i, node * m + j)] += eb[(i, j)];
                }
            }
        }
        let w = grid.trapezoid_weights();
        for node in 0..grid.len() {
            let sw = w[node].sqrt();
            for i in 0..p {
                d.row_mut(node * p + i).scale_mut(sw);
            }
            let sw_inv = 1.0 / w[node].sqrt();
            for j in 0..m {
                d.column_mut(node * m + j).scale_mut(sw_inv);
            }
        }
        reports.push((grid.steps(), SpectrumReport::from_matrix(&d, crate::linalg::RANK_REL_TOL)));
    }
    Ok(ObservabilitySweep { reports })
}

/// Outcome of the discrete unique-continuation probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniqueContinuationReport {
    /// `σ_min / σ_max` of the weighted adjoint map `g ↦ B*φ`.
    pub sigma_min_rel: f64,
    /// Discrete injectivity verdict: the ratio clears 1e-10.
    pub holds: bool,
}

/// Smallest relative singular value of the weighted adjoint map; a zero
/// ratio means some output source is invisible to the control side.
pub fn unique_continuation_test(sys: &LtiSystem, grid: Grid) -> Result<UniqueContinuationReport> {
    let op = DiscreteOperator::new(sys, grid)?;
    let p = op.output_dim();
    let m = op.input_dim();
    let rows = m * grid.len();
    let cols = p * grid.len();
    check_dense(rows, cols)?;

    let w = grid.trapezoid_weights();
    let mut adj = DMatrix::<f64>::zeros(rows, cols);
    for node in 0..grid.len() {
        for comp in 0..p {
            let mut impulse = SampledSignal::zeros(grid, p);
            impulse.values[node][comp] = 1.0;
            let obs = op.adjoint_apply(&impulse);
            let col = node * p + comp;
            for (k, v) in obs.values.iter().enumerate() {
                for i in 0..m {
                    adj[(k * m + i, col)] = v[i];
                }
            }
        }
    }
    for node in 0..grid.len() {
        let sw = w[node].sqrt();
        for i in 0..m {
            adj.row_mut(node * m + i).scale_mut(sw);
        }
        let sw_inv = 1.0 / w[node].sqrt();
        for j in 0..p {
            adj.column_mut(node * p + j).scale_mut(sw_inv);
        }
    }
    let report = SpectrumReport::from_matrix(&adj, crate::linalg::RANK_REL_TOL);
    let ratio = if report.sigma_max() > 0.0 { report.sigma_min() / report.sigma_max() } else { 0.0 };
    Ok(UniqueContinuationReport { sigma_min_rel: ratio, holds: ratio > 1e-10 })
}

/// Modal tracking control for a symmetric plant given as spectral data,
/// with the coherence report across components.
#[derive(Debug, Clone)]
pub struct MomentControl {
    pub u: ControlSignal,
    /// `max_{k≠1, t} |u_k(t) - u_1(t)|` where `u_k = f_k'/c_k - λ_k f_k/c_k`.
    pub max_deviation: f64,
}

/// Explicit control `u = f_1'/c_1 - λ_1 f_1/c_1` from the first modal
/// component, with the strong-compatibility deviation of the others.
pub fn moment_control(
    lambdas: &[f64],
    c: &[f64],
    f_components: &[TargetSignal],
    grid: Grid,
) -> Result<MomentControl> {
    if lambdas.is_empty() || lambdas.len() != c.len() || lambdas.len() != f_components.len() {
        return Err(Error::DimensionMismatch {
            context: "moment spectral data",
            expected: lambdas.len().max(1),
            got: c.len().min(f_components.len()),
        });
    }
    for (i, &ck) in c.iter().enumerate() {
        if ck == 0.0 {
            return Err(Error::ZeroCoefficient { index: i });
        }
    }

    let component = |k: usize, t: f64| -> Result<f64> {
        let d = f_components[k].eval_derivs(t, 1)?;
        Ok(d[1] / c[k] - lambdas[k] * d[0] / c[k])
    };

    let mut values = Vec::with_capacity(grid.len());
    let mut max_dev = 0.0f64;
    for node in 0..grid.len() {
        let t = grid.node(node);
        let u0 = component(0, t)?;
        for k in 1..lambdas.len() {
            max_dev = max_dev.max((component(k, t)? - u0).abs());
        }
        values.push(DVector::from_element(1, u0));
    }
    Ok(MomentControl {
        u: ControlSignal::new(SampledSignal { grid, values }),
        max_deviation: max_dev,
    })
}
