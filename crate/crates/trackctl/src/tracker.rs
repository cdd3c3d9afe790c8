//! Exact tracking synthesis for scalar-input, scalar-output problems.
//!
//! The pipeline shifts the target to zero initial data, moves the plant to
//! its controllable canonical form, solves the low-order cascade ODE for the
//! first canonical coordinate, lifts derivatives algebraically up the chain,
//! and reads the control off the companion last row. An independent RK4
//! simulator and error metrics close the loop.

use nalgebra::DVector;

use crate::brunovsky::{brunovsky_transform, BrunovskyForm};
use crate::error::{Error, Result};
use crate::model::{
    shift_target, ControlSignal, Grid, GridSamples, LtiSystem, SampledSignal, Signal, TargetSignal,
    Trajectory,
};

/// Relative threshold below which an output coefficient counts as zero.
pub const OUTPUT_COEFF_REL_TOL: f64 = 1e-10;

/// Output coefficients and the cascade bookkeeping they induce.
#[derive(Debug, Clone)]
pub struct CascadeState {
    /// `η_i = ⟨E, p_i⟩` in canonical coordinates.
    pub eta: Vec<f64>,
    /// Largest index with a nonvanishing output coefficient (1-based).
    pub k_star: usize,
    /// `y1_derivs[order][node]`, orders `0..=n` (one more when the control
    /// slope is also synthesized).
    pub y1_derivs: Vec<Vec<f64>>,
    /// Exact derivatives of the target consumed by the synthesis.
    pub required_target_order: usize,
}

/// Tracking-quality metrics of a trajectory against a scalar target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    /// Node-mean of the squared deviation.
    pub mse: f64,
    /// Largest node deviation.
    pub max_abs: f64,
}

/// `η_i = ⟨E, p_i⟩` for each canonical column.
pub fn output_coefficients(e_row: &DVector<f64>, form: &BrunovskyForm) -> Vec<f64> {
    (0..form.dim()).map(|i| e_row.dot(&form.p.column(i).into_owned())).collect()
}

/// Largest 1-based index `k` with `|η_k| > rel_tol · max_i |η_i|`.
///
/// The cascade eliminates every coordinate above this index, so it decides
/// both the ODE order (`k*-1`) and the target regularity demand
/// (`n - k* + 1` derivatives).
pub fn critical_index(eta: &[f64], rel_tol: f64) -> Result<usize> {
    let max = eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Err(Error::AllZeroOutput);
    }
    let threshold = rel_tol * max;
    for (i, v) in eta.iter().enumerate().rev() {
        if v.abs() > threshold {
            return Ok(i + 1);
        }
    }
    Err(Error::AllZeroOutput)
}

/// Solves the order-`(k*-1)` cascade ODE
/// `y_1^{(k*-1)} + (1/η_{k*}) Σ_{j<k*} η_j y_1^{(j-1)} = g/η_{k*}`
/// with zero initial conditions, returning node values of orders
/// `0..=k*-1`. For `k* = 1` no ODE exists and the relation is algebraic.
pub fn cascade_solve(eta: &[f64], k_star: usize, g: &GridSamples) -> Vec<Vec<f64>> {
    let grid = g.grid;
    let nodes = grid.len();
    let eta_k = eta[k_star - 1];

    if k_star == 1 {
        return vec![(0..nodes).map(|k| g.value(0, k) / eta_k).collect()];
    }

    let dim = k_star - 1;
    let mut derivs = vec![vec![0.0; nodes]; k_star];
    let rhs = |z: &[f64], gval: f64| -> f64 {
        let mut acc = gval;
        for j in 0..dim {
            acc -= eta[j] * z[j];
        }
        acc / eta_k
    };
    // z = (y1, y1', ..., y1^{(k*-2)}), z' given by the companion shift plus
    // the elimination row; classical RK4 with the target sampled at step
    // midpoints.
    let deriv = |z: &[f64], gval: f64, out: &mut [f64]| {
        for i in 0..dim - 1 {
            out[i] = z[i + 1];
        }
        out[dim - 1] = rhs(z, gval);
    };

    let dt = grid.dt();
    let mut z = vec![0.0; dim];
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    for step in 0..=grid.steps() {
        for i in 0..dim {
            derivs[i][step] = z[i];
        }
        derivs[dim][step] = rhs(&z, g.value(0, step));
        if step == grid.steps() {
            break;
        }

        let g0 = g.value(0, step);
        let gh = g.half_value(step);
        let g1 = g.value(0, step + 1);

        deriv(&z, g0, &mut k1);
        for i in 0..dim {
            tmp[i] = z[i] + 0.5 * dt * k1[i];
        }
        deriv(&tmp, gh, &mut k2);
        for i in 0..dim {
            tmp[i] = z[i] + 0.5 * dt * k2[i];
        }
        deriv(&tmp, gh, &mut k3);
        for i in 0..dim {
            tmp[i] = z[i] + dt * k3[i];
        }
        deriv(&tmp, g1, &mut k4);
        for i in 0..dim {
            z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    derivs
}

/// Extends the cascade solution to higher orders by the nodewise recursion
/// `y_1^{(k*-1+m)} =idx(g^{(m)} - Σ_{j<k*} η_j y_1^{(j-1+m)}) / η_{k*}`.
pub fn derivative_lift(
    eta: &[f64],
    k_star: usize,
    g: &GridSamples,
    y1: &mut Vec<Vec<f64>>,
    top_order: usize,
) {
    let nodes = g.grid.len();
    let eta_k = eta[k_star - 1];
    for order in y1.len()..=top_order {
        let m = order - (k_star - 1);
        let mut row = vec![0.0; nodes];
        for (node, slot) in row.iter_mut().enumerate() {
            let mut acc = g.value(m, node);
            for j in 1..k_star {
                acc -= eta[j - 1] * y1[j - 1 + m][node];
            }
            *slot = acc / eta_k;
        }
        y1.push(row);
    }
}

/// Full synthesis with access to the intermediate cascade data.
pub fn synthesize_with_details(
    sys: &LtiSystem,
    f: &TargetSignal,
    grid: Grid,
) -> Result<(ControlSignal, CascadeState, BrunovskyForm)> {
    let b = sys.input_column()?;
    let e_row = sys.output_row()?;
    let n = sys.state_dim();

    let shifted = shift_target(sys, f, grid)?;
    let form = brunovsky_transform(&sys.a, &b)?;
    let eta = output_coefficients(&e_row, &form);
    let k_star = critical_index(&eta, OUTPUT_COEFF_REL_TOL)?;

    let required = n - k_star + 1;
    let available = f.max_derivative();
    if available < required {
        return Err(Error::InsufficientRegularity { needed: required, available });
    }
    // One extra derivative (when the target grants it) lets us emit exact
    // slope samples for high-order reconstruction in the verifier.
    let with_slope = available > required;
    let sample_order = if with_slope { required + 1 } else { required };

    let g = GridSamples::of_shifted(&shifted, grid, sample_order)?;
    let mut y1 = cascade_solve(&eta, k_star, &g);
    let top = if with_slope { n + 1 } else { n };
    derivative_lift(&eta, k_star, &g, &mut y1, top);

    // Companion last row solved for the control:
    // u = y_1^{(n)} + Σ_{j=1..n} α_{n+1-j} y_1^{(j-1)}.
    let alpha = &form.alpha;
    let control_row = |shift: usize| -> Vec<f64> {
        (0..grid.len())
            .map(|node| {
                let mut acc = y1[n + shift][node];
                for j in 1..=n {
                    acc += alpha[n - j] * y1[j - 1 + shift][node];
                }
                acc
            })
            .collect()
    };
    let u_vals = control_row(0);
    let samples = SampledSignal {
        grid,
        values: u_vals.iter().map(|&v| DVector::from_element(1, v)).collect(),
    };
    if samples.values.iter().any(|v| !v[0].is_finite()) {
        return Err(Error::Io("synthesized control is not finite".into()));
    }
    let u = if with_slope {
        let du_vals = control_row(1);
        let deriv = SampledSignal {
            grid,
            values: du_vals.iter().map(|&v| DVector::from_element(1, v)).collect(),
        };
        ControlSignal::with_derivative(samples, deriv)
    } else {
        ControlSignal::new(samples)
    };

    let state = CascadeState { eta, k_star, y1_derivs: y1, required_target_order: required };
    Ok((u, state, form))
}

/// Synthesizes the tracking control `u` with `E x(t) = f(t)` for the
/// scalar-input, scalar-output plant.
pub fn synthesize_tracking_control(
    sys: &LtiSystem,
    f: &TargetSignal,
    grid: Grid,
) -> Result<ControlSignal> {
    synthesize_with_details(sys, f, grid).map(|(u, _, _)| u)
}

/// Control value between nodes: cubic Hermite when slope samples exist,
/// linear otherwise. `theta` in `[0, 1]` within coarse step `i`.
fn control_value(u: &ControlSignal, i: usize, theta: f64, out: &mut DVector<f64>) {
    let dt = u.grid().dt();
    let n_steps = u.grid().steps();
    let (i, theta) = if i >= n_steps { (n_steps - 1, 1.0) } else { (i, theta) };
    let a = &u.samples.values[i];
    let b = &u.samples.values[i + 1];
    match &u.derivative {
        Some(slope) => {
            let da = &slope.values[i];
            let db = &slope.values[i + 1];
            let t2 = theta * theta;
            let t3 = t2 * theta;
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + theta;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            out.copy_from(a);
            *out *= h00;
            out.axpy(h10 * dt, da, 1.0);
            out.axpy(h01, b, 1.0);
            out.axpy(h11 * dt, db, 1.0);
        }
        None => {
            out.copy_from(a);
            *out *= 1.0 - theta;
            out.axpy(theta, b, 1.0);
        }
    }
}

/// Independent verification oracle: classical RK4 for `x' = Ax + Bu` on a
/// grid refined by `refine`, restricted back to the coarse nodes. The
/// control is reconstructed between nodes from its samples (and slopes,
/// when present).
pub fn simulate(sys: &LtiSystem, u: &ControlSignal, grid: Grid, refine: usize) -> Result<Trajectory> {
    if u.grid() != grid {
        return Err(Error::DimensionMismatch {
            context: "simulate grid nodes",
            expected: grid.len(),
            got: u.grid().len(),
        });
    }
    if u.dim() != sys.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "simulate control dim",
            expected: sys.input_dim(),
            got: u.dim(),
        });
    }
    let refine = refine.max(1);
    let dt_f = grid.dt() / refine as f64;
    let m = sys.input_dim();

    let mut states = Vec::with_capacity(grid.len());
    let mut x = sys.x0.clone();
    states.push(x.clone());

    let mut uv = DVector::zeros(m);
    let mut stage = |x: &DVector<f64>, uv: &DVector<f64>| &sys.a * x + &sys.b * uv;

    for coarse in 0..grid.steps() {
        for sub in 0..refine {
            let th0 = sub as f64 / refine as f64;
            let th_mid = (sub as f64 + 0.5) / refine as f64;
            let th1 = (sub + 1) as f64 / refine as f64;

            control_value(u, coarse, th0, &mut uv);
            let k1 = stage(&x, &uv);
            control_value(u, coarse, th_mid, &mut uv);
            let k2 = stage(&(&x + &k1 * (dt_f / 2.0)), &uv);
            let k3 = stage(&(&x + &k2 * (dt_f / 2.0)), &uv);
            control_value(u, coarse, th1, &mut uv);
            let k4 = stage(&(&x + &k3 * dt_f), &uv);
            x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt_f / 6.0);
        }
        states.push(x.clone());
    }
    Ok(Trajectory::from_states(grid, states, &sys.e))
}

/// Node-mean squared error and maximum deviation of `Ex` against `f`.
pub fn tracking_error(traj: &Trajectory, f: &TargetSignal) -> Result<TrackingError> {
    if traj.outputs.first().map_or(0, |v| v.len()) != 1 {
        return Err(Error::DimensionMismatch {
            context: "tracking_error output dim",
            expected: 1,
            got: traj.outputs.first().map_or(0, |v| v.len()),
        });
    }
    let mut sum = 0.0;
    let mut max_abs = 0.0f64;
    for (k, out) in traj.outputs.iter().enumerate() {
        let dev = out[0] - f.eval(0, traj.grid.node(k))?;
        sum += dev * dev;
        max_abs = max_abs.max(dev.abs());
    }
    Ok(TrackingError { mse: sum / traj.outputs.len() as f64, max_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat_from_rows;
    use crate::model::{free_response, ShiftedTarget};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn benchmark_system(e: [f64; 2]) -> LtiSystem {
        LtiSystem::new(
            mat_from_rows(&[&[0.0, 1.0], &[-2.0, -3.0]]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &e),
            DVector::from_column_slice(&[1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn output_coefficients_with_identity_transform() {
        let sys = benchmark_system([1.0, 0.0]);
        let form = brunovsky_transform(&sys.a, &sys.input_column().unwrap()).unwrap();
        let eta = output_coefficients(&sys.output_row().unwrap(), &form);
        assert_abs_diff_eq!(eta[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eta[1], 0.0, epsilon = 1e-12);

        let sys2 = benchmark_system([0.0, 1.0]);
        let eta2 = output_coefficients(&sys2.output_row().unwrap(), &form);
        assert_abs_diff_eq!(eta2[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eta2[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn critical_index_cases() {
        assert_eq!(critical_index(&[1.0, 0.0], OUTPUT_COEFF_REL_TOL).unwrap(), 1);
        assert_eq!(critical_index(&[0.0, 1.0], OUTPUT_COEFF_REL_TOL).unwrap(), 2);
        assert_eq!(critical_index(&[1.0, 1.0], OUTPUT_COEFF_REL_TOL).unwrap(), 2);
        assert!(matches!(
            critical_index(&[0.0, 0.0], OUTPUT_COEFF_REL_TOL),
            Err(Error::AllZeroOutput)
        ));
    }

    #[test]
    fn cascade_zero_target_is_zero() {
        let grid = Grid::new(2.0, 50).unwrap();
        let g = GridSamples::of_signal(&TargetSignal::polynomial(&[0.0]), grid, 2).unwrap();
        let derivs = cascade_solve(&[0.5, 2.0], 2, &g);
        for row in derivs {
            for v in row {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn cascade_first_order_matches_variation_of_constants() {
        // η = (1, 1): y' + y = g, y(t) = ∫_0^t e^{-(t-s)} g(s) ds
        let grid = Grid::new(4.0, 2000).unwrap();
        let target = TargetSignal::sinusoid(1.0, 1.0, 0.0);
        let g = GridSamples::of_signal(&target, grid, 1).unwrap();
        let derivs = cascade_solve(&[1.0, 1.0], 2, &g);

        for &node in &[200usize, 700, 1400, 2000] {
            let t = grid.node(node);
            // composite Simpson on a fine mesh
            let steps = 4000;
            let h = t / steps as f64;
            let integrand = |s: f64| (-(t - s)).exp() * s.sin();
            let mut acc = integrand(0.0) + integrand(t);
            for j in 1..steps {
                let w = if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * integrand(j as f64 * h);
            }
            let oracle = acc * h / 3.0;
            assert!(
                (derivs[0][node] - oracle).abs() <= 1e-8,
                "node {node}: got {} want {}",
                derivs[0][node],
                oracle
            );
        }
    }

    #[test]
    fn lift_shortest_chain_uses_one_derivative() {
        // k* = n: single lift step, y_1^{(n)} from g'.
        let grid = Grid::new(1.0, 20).unwrap();
        let target = TargetSignal::polynomial(&[0.0, 1.0, 1.0]);
        let g = GridSamples::of_signal(&target, grid, 1).unwrap();
        let eta = [0.0, 2.0];
        let mut y1 = cascade_solve(&eta, 2, &g);
        derivative_lift(&eta, 2, &g, &mut y1, 2);
        for node in 0..grid.len() {
            let t = grid.node(node);
            // y_1' = g / η_2, y_1'' = g' / η_2
            assert_abs_diff_eq!(y1[1][node], (t + t * t) / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(y1[2][node], (1.0 + 2.0 * t) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scalar_plant_closed_form() {
        // n = 1: x' = a x + u, E = 1 → u = f' - a f.
        let a = -0.7;
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let f = TargetSignal::product(
            TargetSignal::polynomial(&[0.0, 1.0]),
            TargetSignal::sinusoid(1.0, 2.0, 0.0),
        );
        let grid = Grid::new(3.0, 300).unwrap();
        let u = synthesize_tracking_control(&sys, &f, grid).unwrap();
        for k in 0..grid.len() {
            let t = grid.node(k);
            let expect = f.eval(1, t).unwrap() - a * f.eval(0, t).unwrap();
            assert_abs_diff_eq!(u.samples.scalar(k), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn benchmark_first_component_closed_form() {
        // E = (1, 0): k* = 1 and u = g'' + 3 g' + 2 g nodewise.
        let sys = benchmark_system([1.0, 0.0]);
        let f = TargetSignal::benchmark_sinusoid();
        let grid = Grid::new(10.0, 500).unwrap();
        let (u, state, _) = synthesize_with_details(&sys, &f, grid).unwrap();
        assert_eq!(state.k_star, 1);
        let g: ShiftedTarget = shift_target(&sys, &f, grid).unwrap();
        for k in (0..grid.len()).step_by(25) {
            let t = grid.node(k);
            let d = g.eval_derivs(t, 2).unwrap();
            let expect = d[2] + 3.0 * d[1] + 2.0 * d[0];
            assert_abs_diff_eq!(u.samples.scalar(k), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn benchmark_second_component_closed_form() {
        // E = (0, 1): k* = 2 and u = g' + 3 g + 2 ∫g.
        let sys = benchmark_system([0.0, 1.0]);
        let f = TargetSignal::benchmark_sinusoid();
        let grid = Grid::new(10.0, 1000).unwrap();
        let (u, state, _) = synthesize_with_details(&sys, &f, grid).unwrap();
        assert_eq!(state.k_star, 2);
        let g = shift_target(&sys, &f, grid).unwrap();

        // quadrature oracle for ∫_0^t g: composite Simpson, 8 panels per step
        let mut integral = vec![0.0];
        let mut acc = 0.0;
        let dt = grid.dt();
        for k in 0..grid.steps() {
            let t0 = grid.node(k);
            let h = dt / 8.0;
            let mut s = g.eval(0, t0).unwrap() + g.eval(0, t0 + dt).unwrap();
            for j in 1..8 {
                let w = if j % 2 == 1 { 4.0 } else { 2.0 };
                s += w * g.eval(0, t0 + j as f64 * h).unwrap();
            }
            acc += s * h / 3.0;
            integral.push(acc);
        }

        for k in (0..grid.len()).step_by(50) {
            let t = grid.node(k);
            let d = g.eval_derivs(t, 1).unwrap();
            let expect = d[1] + 3.0 * d[0] + 2.0 * integral[k];
            assert!(
                (u.samples.scalar(k) - expect).abs() <= 1e-8,
                "node {k}: {} vs {}",
                u.samples.scalar(k),
                expect
            );
        }
    }

    #[test]
    fn zero_target_zero_state_gives_zero_control() {
        let mut sys = benchmark_system([1.0, 0.0]);
        sys.x0 = DVector::zeros(2);
        let f = TargetSignal::polynomial(&[0.0]);
        let grid = Grid::new(2.0, 40).unwrap();
        let u = synthesize_tracking_control(&sys, &f, grid).unwrap();
        assert!(u.samples.max_abs() <= 1e-300);
    }

    #[test]
    fn regularity_gate_boundary() {
        // E = (1,0): k* = 1, requires exactly n - k* + 1 = 2 derivatives.
        let mut sys = benchmark_system([1.0, 0.0]);
        sys.x0 = DVector::zeros(2);
        let grid = Grid::new(2.0, 40).unwrap();
        let base = TargetSignal::product(
            TargetSignal::polynomial(&[0.0, 0.0, 0.0, 1.0]),
            TargetSignal::sinusoid(1.0, 1.0, 0.0),
        );
        let ok = base.clone().with_max_derivative(2);
        assert!(synthesize_tracking_control(&sys, &ok, grid).is_ok());
        let too_low = base.with_max_derivative(1);
        assert!(matches!(
            synthesize_tracking_control(&sys, &too_low, grid),
            Err(Error::InsufficientRegularity { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn floor_target_rejected_by_tracker() {
        let sys = benchmark_system([1.0, 0.0]);
        let grid = Grid::new(10.0, 100).unwrap();
        let f = TargetSignal::floor_shift(1.0); // f(0) = 1 = E x0, but no derivatives
        assert!(matches!(
            synthesize_tracking_control(&sys, &f, grid),
            Err(Error::InsufficientRegularity { .. })
        ));
    }

    #[test]
    fn simulate_zero_control_zero_state() {
        let mut sys = benchmark_system([1.0, 0.0]);
        sys.x0 = DVector::zeros(2);
        let grid = Grid::new(1.0, 10).unwrap();
        let u = ControlSignal::new(SampledSignal::zeros(grid, 1));
        let traj = simulate(&sys, &u, grid, 4).unwrap();
        for x in traj.states {
            assert_abs_diff_eq!(x.norm(), 0.0, epsilon = 1e-300);
        }
    }

    #[test]
    fn simulate_pure_integrator_constant_control() {
        let sys = LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_column_slice(&[0.5, -0.5]),
        )
        .unwrap();
        let grid = Grid::new(2.0, 20).unwrap();
        let c = DVector::from_column_slice(&[1.0, 2.0]);
        let u = ControlSignal::new(SampledSignal::from_fn(grid, 2, |_, _| c.clone()));
        let traj = simulate(&sys, &u, grid, 2).unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            let t = grid.node(k);
            assert_abs_diff_eq!(x[0], 0.5 + t, epsilon = 1e-12);
            assert_abs_diff_eq!(x[1], -0.5 + 2.0 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn simulate_free_motion_matches_exponential() {
        let sys = benchmark_system([1.0, 0.0]);
        let grid = Grid::new(2.0, 100).unwrap();
        let u = ControlSignal::new(SampledSignal::zeros(grid, 1));
        let traj = simulate(&sys, &u, grid, 4).unwrap();
        let fr = free_response(&sys, grid).unwrap();
        for k in 0..grid.len() {
            assert!((&traj.states[k] - &fr.traj.states[k]).norm() <= 1e-8);
        }
    }

    #[test]
    fn shifted_target_complement_is_free_output() {
        // With u = 0: |E x(t) - (f - g)(t)| small, since f - g is the free output.
        let sys = benchmark_system([1.0, 0.0]);
        let f = TargetSignal::benchmark_sinusoid();
        let grid = Grid::new(5.0, 200).unwrap();
        let g = shift_target(&sys, &f, grid).unwrap();
        let u = ControlSignal::new(SampledSignal::zeros(grid, 1));
        let traj = simulate(&sys, &u, grid, 4).unwrap();
        for k in 0..grid.len() {
            let t = grid.node(k);
            let free_out = f.eval(0, t).unwrap() - g.eval(0, t).unwrap();
            assert!((traj.output_scalar(k) - free_out).abs() <= 1e-8);
        }
    }

    #[test]
    fn benchmark_closed_loop_tracks_target() {
        let sys = benchmark_system([1.0, 0.0]);
        let f = TargetSignal::benchmark_sinusoid();
        let grid = Grid::new(10.0, 2000).unwrap();
        let u = synthesize_tracking_control(&sys, &f, grid).unwrap();
        let traj = simulate(&sys, &u, grid, 4).unwrap();
        let err = tracking_error(&traj, &f).unwrap();
        assert!(err.max_abs <= 1e-6, "max tracking error {}", err.max_abs);
    }

    #[test]
    fn tracking_error_offsets() {
        let grid = Grid::new(1.0, 4).unwrap();
        let f = TargetSignal::polynomial(&[0.0, 1.0]);
        let states: Vec<DVector<f64>> =
            (0..grid.len()).map(|k| DVector::from_element(1, grid.node(k) + 0.5)).collect();
        let traj = Trajectory::from_states(grid, states, &DMatrix::identity(1, 1));
        let err = tracking_error(&traj, &f).unwrap();
        assert_abs_diff_eq!(err.mse, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(err.max_abs, 0.5, epsilon = 1e-12);

        let exact: Vec<DVector<f64>> =
            (0..grid.len()).map(|k| DVector::from_element(1, grid.node(k))).collect();
        let traj = Trajectory::from_states(grid, exact, &DMatrix::identity(1, 1));
        let err = tracking_error(&traj, &f).unwrap();
        assert_abs_diff_eq!(err.mse, 0.0, epsilon = 1e-300);
    }

    #[test]
    fn synthesis_invariant_under_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sys = {
            let mut s = benchmark_system([1.0, 0.0]);
            s.x0 = DVector::zeros(2);
            s
        };
        let f = TargetSignal::product(
            TargetSignal::polynomial(&[0.0, 0.0, 0.0, 1.0]),
            TargetSignal::sinusoid(1.0, 1.0, 0.0),
        );
        let grid = Grid::new(3.0, 300).unwrap();
        let u_ref = synthesize_tracking_control(&sys, &f, grid).unwrap();

        for _ in 0..5 {
            let s = DMatrix::from_fn(2, 2, |i, j| {
                if i == j { 1.0 } else { 0.4 * rng.gen_range(-1.0..1.0) }
            });
            let s_inv = s.clone().lu().try_inverse().unwrap();
            let sys2 = LtiSystem::new(
                &s * &sys.a * &s_inv,
                &s * &sys.b,
                &sys.e * &s_inv,
                DVector::zeros(2),
            )
            .unwrap();
            let u2 = synthesize_tracking_control(&sys2, &f, grid).unwrap();
            for k in 0..grid.len() {
                assert!(
                    (u_ref.samples.scalar(k) - u2.samples.scalar(k)).abs() <= 1e-8,
                    "controls differ at node {k}"
                );
            }
        }
    }
}
