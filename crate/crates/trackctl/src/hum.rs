//! Penalized minimum-norm tracking solver: minimize
//! `J(u) = (β/2)∫|u|² + (α/2)∫|Ex - f|²` subject to `x' = Ax + Bu`,
//! by conjugate gradients on the normal equations
//! `(β W_u + α Fᵀ W_y F) u = α Fᵀ W_y (f - E x_free)`,
//! where `F` is the discrete control-to-output map and `W` the trapezoid
//! quadrature weights. The problem is convex-quadratic, so CG with the
//! exact discrete adjoint pair reaches the same minimizer a generic NLP
//! solver would.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{free_response, ControlSignal, Grid, LtiSystem, SampledSignal, Signal, TargetSignal, Trajectory};
use crate::operators::DiscreteOperator;
use crate::pde::{heat_distributed_system, ChainSpec};

/// Default relative residual tolerance for the CG solve.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// Default iteration cap for the CG solve.
pub const DEFAULT_CG_MAX_ITERS: usize = 5000;

/// One penalized tracking problem.
#[derive(Debug, Clone)]
pub struct HumProblem {
    pub sys: LtiSystem,
    pub f: TargetSignal,
    pub grid: Grid,
    /// Tracking penalty weight.
    pub alpha: f64,
    /// Control-energy weight.
    pub beta: f64,
    /// Extra per-component control weight (the spatial step `h` for
    /// distributed chains, 1 otherwise).
    pub space_weight: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl HumProblem {
    pub fn new(sys: LtiSystem, f: TargetSignal, grid: Grid, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Io(format!("alpha must be nonnegative and finite, got {alpha}")));
        }
        if sys.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "hum output dim",
                expected: 1,
                got: sys.output_dim(),
            });
        }
        Ok(HumProblem {
            sys,
            f,
            grid,
            alpha,
            beta: 1.0,
            space_weight: 1.0,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iters: DEFAULT_CG_MAX_ITERS,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Io(format!("beta must be positive and finite, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn with_cg(mut self, tol: f64, max_iters: usize) -> Self {
        self.cg_tol = tol;
        self.cg_max_iters = max_iters;
        self
    }
}

/// Minimizer data returned by the solver.
#[derive(Debug, Clone)]
pub struct HumSolution {
    pub u: ControlSignal,
    pub traj: Trajectory,
    /// Node-mean squared tracking error.
    pub mse: f64,
    /// Discrete objective value at the minimizer.
    pub objective: f64,
    pub cg_iters: usize,
    pub residual: f64,
    pub initial_residual: f64,
    /// False when the iteration cap was hit before the residual target;
    /// the best iterate is still returned.
    pub converged: bool,
}

struct CgOutcome {
    x: DVector<f64>,
    iters: usize,
    residual: f64,
    initial_residual: f64,
    converged: bool,
}

fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    rhs: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> CgOutcome {
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let r0 = r.norm();
    if r0 == 0.0 {
        return CgOutcome { x, iters: 0, residual: 0.0, initial_residual: 0.0, converged: true };
    }
    let mut p = r.clone();
    let mut rs_old = r.dot(&r);
    let target = tol * r0;

    for iter in 0..max_iters {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            // numerically lost positive definiteness; stop with the best iterate
            return CgOutcome {
                x,
                iters: iter,
                residual: rs_old.sqrt(),
                initial_residual: r0,
                converged: rs_old.sqrt() <= target,
            };
        }
        let step = rs_old / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rs_new = r.dot(&r);
        if rs_new.sqrt() <= target {
            return CgOutcome {
                x,
                iters: iter + 1,
                residual: rs_new.sqrt(),
                initial_residual: r0,
                converged: true,
            };
        }
        p = &r + &p * (rs_new / rs_old);
        rs_old = rs_new;
    }
    CgOutcome { x, iters: max_iters, residual: rs_old.sqrt(), initial_residual: r0, converged: false }
}

/// Target minus free output at the nodes.
fn tracking_defect(p: &HumProblem) -> Result<SampledSignal> {
    let free = free_response(&p.sys, p.grid)?;
    let mut values = Vec::with_capacity(p.grid.len());
    for k in 0..p.grid.len() {
        let fk = p.f.eval(0, p.grid.node(k))?;
        values.push(DVector::from_element(1, fk - free.traj.outputs[k][0]));
    }
    Ok(SampledSignal { grid: p.grid, values })
}

/// Applies the normal-equation operator `β W_u + α Fᵀ W_y F` to flattened
/// control samples.
fn normal_apply(p: &HumProblem, op: &DiscreteOperator, w: &[f64], u_flat: &DVector<f64>) -> DVector<f64> {
    let m = op.input_dim();
    let u = SampledSignal::from_flat(p.grid, m, u_flat);
    let mut y = op.forward(&u);
    for (v, wk) in y.values.iter_mut().zip(w) {
        *v *= p.alpha * wk;
    }
    let mut out = op.transpose_apply(&y).to_flat();
    for node in 0..p.grid.len() {
        let scale = p.beta * p.space_weight * w[node];
        for comp in 0..m {
            out[node * m + comp] += scale * u_flat[node * m + comp];
        }
    }
    out
}

/// Right-hand side `α Fᵀ W_y (f - E x_free)`.
fn normal_rhs(p: &HumProblem, op: &DiscreteOperator, w: &[f64], defect: &SampledSignal) -> DVector<f64> {
    let mut weighted = defect.clone();
    for (v, wk) in weighted.values.iter_mut().zip(w) {
        *v *= p.alpha * wk;
    }
    op.transpose_apply(&weighted).to_flat()
}

/// Discrete objective `(β/2)⟨u,u⟩_w + (α/2)⟨Ex-f, Ex-f⟩_w` for a candidate
/// control (weights include the spatial factor on the control side).
pub fn discrete_objective(p: &HumProblem, u: &SampledSignal) -> Result<f64> {
    let op = DiscreteOperator::new(&p.sys, p.grid)?;
    let defect = tracking_defect(p)?;
    let y = op.forward(u);
    let w = p.grid.trapezoid_weights();
    let mut control_energy = 0.0;
    let mut misfit = 0.0;
    for k in 0..p.grid.len() {
        control_energy += w[k] * p.space_weight * u.values[k].dot(&u.values[k]);
        let dev = y.values[k][0] - defect.values[k][0];
        misfit += w[k] * dev * dev;
    }
    Ok(0.5 * p.beta * control_energy + 0.5 * p.alpha * misfit)
}

/// Solves the penalized tracking problem.
///
/// Hitting the iteration cap is reported through `converged = false` on the
/// returned solution rather than an error, so callers can still inspect the
/// best iterate.
pub fn hum_solve(p: &HumProblem) -> Result<HumSolution> {
    let op = DiscreteOperator::new(&p.sys, p.grid)?;
    let m = op.input_dim();
    let w = p.grid.trapezoid_weights();
    let defect = tracking_defect(p)?;

    let outcome = if p.alpha == 0.0 {
        // pure control penalty: the minimizer is u = 0
        CgOutcome {
            x: DVector::zeros(m * p.grid.len()),
            iters: 0,
            residual: 0.0,
            initial_residual: 0.0,
            converged: true,
        }
    } else {
        let rhs = normal_rhs(p, &op, &w, &defect);
        conjugate_gradient(
            |v| normal_apply(p, &op, &w, v),
            &rhs,
            p.cg_tol,
            p.cg_max_iters,
        )
    };

    let u = SampledSignal::from_flat(p.grid, m, &outcome.x);
    let free = free_response(&p.sys, p.grid)?;
    let controlled = op.forward_states(&u);
    let states: Vec<DVector<f64>> = controlled
        .iter()
        .zip(&free.traj.states)
        .map(|(xc, xf)| xc + xf)
        .collect();
    let traj = Trajectory::from_states(p.grid, states, &p.sys.e);

    let mut mse = 0.0;
    for k in 0..p.grid.len() {
        let dev = traj.outputs[k][0] - p.f.eval(0, p.grid.node(k))?;
        mse += dev * dev;
    }
    mse /= p.grid.len() as f64;

    let objective = discrete_objective(p, &u)?;
    Ok(HumSolution {
        u: ControlSignal::new(u),
        traj,
        mse,
        objective,
        cg_iters: outcome.iters,
        residual: outcome.residual,
        initial_residual: outcome.initial_residual,
        converged: outcome.converged,
    })
}

/// Distributed-control heat problem: one control per interior node, control
/// energy weighted by the spatial step so it approximates `∫∫ u² dx dt`.
pub fn hum_solve_distributed(
    spec: &ChainSpec,
    f: &TargetSignal,
    grid: Grid,
    alpha: f64,
    beta: f64,
) -> Result<HumSolution> {
    let sys = heat_distributed_system(spec);
    let mut p = HumProblem::new(sys, f.clone(), grid, alpha)?.with_beta(beta)?;
    p.space_weight = spec.h();
    hum_solve(&p)
}

/// One row of an `alpha` sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub mse: f64,
    /// Weighted control norm `⟨u,u⟩_w^{1/2}`.
    pub control_norm: f64,
    pub cg_iters: usize,
    pub converged: bool,
}

/// Re-solves the problem across tracking weights. Higher `alpha` trades
/// control energy for fidelity, so `mse` is non-increasing and the control
/// norm non-decreasing along the sorted sweep (up to solver tolerance).
pub fn alpha_sweep(p: &HumProblem, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let point = sweep_point(p, alpha)?;
        out.push(point);
    }
    Ok(out)
}

pub(crate) fn sweep_point(p: &HumProblem, alpha: f64) -> Result<SweepPoint> {
    let mut q = p.clone();
    q.alpha = alpha;
    let sol = hum_solve(&q)?;
    Ok(SweepPoint {
        alpha,
        mse: sol.mse,
        control_norm: (sol.u.samples.weighted_inner(&sol.u.samples) * p.space_weight).sqrt(),
        cg_iters: sol.cg_iters,
        converged: sol.converged,
    })
}
