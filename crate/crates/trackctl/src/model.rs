//! Problem-definition types: the plant `x' = Ax + Bu` with output row `E`,
//! uniform time grids, analytic target signals with exact derivative
//! evaluation, sampled signals/trajectories, and the reduction of nonzero
//! initial data to the zero-initial case.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::mat_exp;

/// Tolerance for the compatibility condition `f(0) = E x0`.
pub const COMPATIBILITY_TOL: f64 = 1e-9;

/// A linear time-invariant plant together with its output map and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NonSquare { rows: a.nrows(), cols: a.ncols() });
        }
        if n == 0 {
            return Err(Error::DimensionMismatch { context: "state dimension", expected: 1, got: 0 });
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch { context: "B rows", expected: n, got: b.nrows() });
        }
        if b.ncols() == 0 || b.ncols() > n {
            return Err(Error::DimensionMismatch { context: "B cols", expected: n, got: b.ncols() });
        }
        if e.ncols() != n {
            return Err(Error::DimensionMismatch { context: "E cols", expected: n, got: e.ncols() });
        }
        if e.nrows() == 0 || e.nrows() > n {
            return Err(Error::DimensionMismatch { context: "E rows", expected: n, got: e.nrows() });
        }
        if x0.len() != n {
            return Err(Error::DimensionMismatch { context: "x0 length", expected: n, got: x0.len() });
        }
        for m in [&a, &b, &e] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Io("matrix entries must be finite".into()));
            }
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Io("x0 entries must be finite".into()));
        }
        Ok(LtiSystem { a, b, e, x0 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.e.nrows()
    }

    /// The input column for scalar-control problems.
    pub fn input_column(&self) -> Result<DVector<f64>> {
        if self.input_dim() != 1 {
            return Err(Error::DimensionMismatch { context: "scalar input", expected: 1, got: self.input_dim() });
        }
        Ok(self.b.column(0).into_owned())
    }

    /// The output row for scalar-output problems.
    pub fn output_row(&self) -> Result<DVector<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch { context: "scalar output", expected: 1, got: self.output_dim() });
        }
        Ok(self.e.row(0).transpose())
    }
}

/// Uniform grid `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    t_final: f64,
    steps: usize,
}

impl Grid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::Io(format!("grid horizon must be positive and finite, got {t_final}")));
        }
        if steps < 2 {
            return Err(Error::DimensionMismatch { context: "grid steps", expected: 2, got: steps });
        }
        Ok(Grid { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Midpoint of the k-th step, `t_k + dt/2`.
    pub fn half_node(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    /// Trapezoid quadrature weights: `dt/2` at the ends, `dt` inside.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut w = vec![dt; self.len()];
        w[0] = dt / 2.0;
        w[self.steps] = dt / 2.0;
        w
    }

    /// Grid with the same horizon and `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Grid {
        Grid { t_final: self.t_final, steps: self.steps * factor.max(1) }
    }
}

/// Anything that can be evaluated together with its time derivatives.
pub trait Signal {
    /// Highest derivative order answerable exactly (`usize::MAX` = analytic).
    fn max_derivative(&self) -> usize;

    /// Derivatives of orders `0..=up_to` at `t`.
    fn eval_derivs(&self, t: f64, up_to: usize) -> Result<Vec<f64>>;

    fn eval(&self, order: usize, t: f64) -> Result<f64> {
        Ok(self.eval_derivs(t, order)?[order])
    }
}

/// Scalar target signal with closed-form differentiation.
///
/// Analytic kinds answer any derivative order exactly; the floor kind only
/// order 0, and tabulated data up to order 2 by finite differences (the
/// latter are approximations, not exact values).
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSignal {
    /// `c_0 + c_1 t + c_2 t² + ...`
    Polynomial { coeffs: Vec<f64> },
    /// `amp · sin(omega t + phase)`
    Sinusoid { amp: f64, omega: f64, phase: f64 },
    /// `amp · exp(rate t)`
    Exponential { amp: f64, rate: f64 },
    /// Weighted sum of sub-signals.
    Sum(Vec<(f64, TargetSignal)>),
    /// Pointwise product (derivatives by the Leibniz rule).
    Product(Box<TargetSignal>, Box<TargetSignal>),
    /// `floor(t + offset)`; piecewise constant, no derivatives.
    FloorShift { offset: f64 },
    /// Uniform samples on `[0, t_final]`; derivatives up to order 2 by
    /// centered differences on the sample grid.
    Tabulated { t_final: f64, samples: Vec<f64> },
    /// Caps the declared derivative order of the inner signal.
    Capped { inner: Box<TargetSignal>, max_order: usize },
}

impl TargetSignal {
    pub fn polynomial(coeffs: &[f64]) -> Self {
        TargetSignal::Polynomial { coeffs: coeffs.to_vec() }
    }

    pub fn sinusoid(amp: f64, omega: f64, phase: f64) -> Self {
        TargetSignal::Sinusoid { amp, omega, phase }
    }

    pub fn exponential(amp: f64, rate: f64) -> Self {
        TargetSignal::Exponential { amp, rate }
    }

    pub fn sum(terms: Vec<(f64, TargetSignal)>) -> Self {
        TargetSignal::Sum(terms)
    }

    pub fn product(lhs: TargetSignal, rhs: TargetSignal) -> Self {
        TargetSignal::Product(Box::new(lhs), Box::new(rhs))
    }

    pub fn floor_shift(offset: f64) -> Self {
        TargetSignal::FloorShift { offset }
    }

    pub fn tabulated(t_final: f64, samples: Vec<f64>) -> Self {
        TargetSignal::Tabulated { t_final, samples }
    }

    /// Declares a lower exact-derivative order than the underlying signal.
    pub fn with_max_derivative(self, max_order: usize) -> Self {
        TargetSignal::Capped { inner: Box::new(self), max_order }
    }

    /// The paper-style benchmark target `sin(t/2 + π/2)`.
    pub fn benchmark_sinusoid() -> Self {
        TargetSignal::sinusoid(1.0, 0.5, std::f64::consts::FRAC_PI_2)
    }
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
}

fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

impl Signal for TargetSignal {
    fn max_derivative(&self) -> usize {
        match self {
            TargetSignal::Polynomial { .. }
            | TargetSignal::Sinusoid { .. }
            | TargetSignal::Exponential { .. } => usize::MAX,
            TargetSignal::Sum(terms) => {
                terms.iter().map(|(_, s)| s.max_derivative()).min().unwrap_or(usize::MAX)
            }
            TargetSignal::Product(a, b) => a.max_derivative().min(b.max_derivative()),
            TargetSignal::FloorShift { .. } => 0,
            TargetSignal::Tabulated { .. } => 2,
            TargetSignal::Capped { inner, max_order } => inner.max_derivative().min(*max_order),
        }
    }

    fn eval_derivs(&self, t: f64, up_to: usize) -> Result<Vec<f64>> {
        if up_to > self.max_derivative() {
            return Err(Error::InsufficientRegularity {
                needed: up_to,
                available: self.max_derivative(),
            });
        }
        let mut out = Vec::with_capacity(up_to + 1);
        match self {
            TargetSignal::Polynomial { coeffs } => {
                let mut c = coeffs.clone();
                for _ in 0..=up_to {
                    out.push(poly_eval(&c, t));
                    c = poly_derivative(&c);
                }
            }
            TargetSignal::Sinusoid { amp, omega, phase } => {
                for k in 0..=up_to {
                    let shift = k as f64 * std::f64::consts::FRAC_PI_2;
                    out.push(amp * omega.powi(k as i32) * (omega * t + phase + shift).sin());
                }
            }
            TargetSignal::Exponential { amp, rate } => {
                let base = amp * (rate * t).exp();
                for k in 0..=up_to {
                    out.push(base * rate.powi(k as i32));
                }
            }
            TargetSignal::Sum(terms) => {
                out.resize(up_to + 1, 0.0);
                for (w, s) in terms {
                    let d = s.eval_derivs(t, up_to)?;
                    for (acc, v) in out.iter_mut().zip(d) {
                        *acc += w * v;
                    }
                }
            }
            TargetSignal::Product(a, b) => {
                let da = a.eval_derivs(t, up_to)?;
                let db = b.eval_derivs(t, up_to)?;
                // Leibniz: (fg)^{(k)} = Σ C(k,j) f^{(j)} g^{(k-j)}
                for k in 0..=up_to {
                    let mut binom = 1.0;
                    let mut v = 0.0;
                    for j in 0..=k {
                        v += binom * da[j] * db[k - j];
                        binom = binom * (k - j) as f64 / (j + 1) as f64;
                    }
                    out.push(v);
                }
            }
            TargetSignal::FloorShift { offset } => {
                out.push((t + offset).floor());
            }
            TargetSignal::Tabulated { t_final, samples } => {
                out.push(tabulated_value(samples, *t_final, t));
                if up_to >= 1 {
                    out.push(tabulated_difference(samples, *t_final, t, 1));
                }
                if up_to >= 2 {
                    out.push(tabulated_difference(samples, *t_final, t, 2));
                }
            }
            TargetSignal::Capped { inner, .. } => {
                out = inner.eval_derivs(t, up_to)?;
            }
        }
        Ok(out)
    }
}

fn tabulated_value(samples: &[f64], t_final: f64, t: f64) -> f64 {
    let n = samples.len();
    if n == 1 {
        return samples[0];
    }
    let ds = t_final / (n - 1) as f64;
    let pos = (t / ds).clamp(0.0, (n - 1) as f64);
    let i = (pos.floor() as usize).min(n - 2);
    let frac = pos - i as f64;
    samples[i] * (1.0 - frac) + samples[i + 1] * frac
}

/// Centered finite difference of the sample table at the node nearest `t`;
/// one-sided at the ends. Approximate by construction.
fn tabulated_difference(samples: &[f64], t_final: f64, t: f64, order: usize) -> f64 {
    let n = samples.len();
    if n < 3 {
        return 0.0;
    }
    let ds = t_final / (n - 1) as f64;
    let i = ((t / ds).round() as usize).clamp(1, n - 2);
    match order {
        1 => (samples[i + 1] - samples[i - 1]) / (2.0 * ds),
        _ => (samples[i + 1] - 2.0 * samples[i] + samples[i - 1]) / (ds * ds),
    }
}

/// Time-gridded samples of a vector-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub grid: Grid,
    pub values: Vec<DVector<f64>>,
}

impl SampledSignal {
    pub fn zeros(grid: Grid, dim: usize) -> Self {
        SampledSignal { grid, values: vec![DVector::zeros(dim); grid.len()] }
    }

    pub fn from_fn(grid: Grid, dim: usize, mut f: impl FnMut(usize, f64) -> DVector<f64>) -> Self {
        let values: Vec<DVector<f64>> = (0..grid.len()).map(|k| f(k, grid.node(k))).collect();
        debug_assert!(values.iter().all(|v| v.len() == dim));
        SampledSignal { grid, values }
    }

    pub fn from_scalar_fn(grid: Grid, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_fn(grid, 1, |_, t| DVector::from_element(1, f(t)))
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scalar sample (first component) at a node.
    pub fn scalar(&self, k: usize) -> f64 {
        self.values[k][0]
    }

    /// Trapezoid-weighted inner product `Σ_k w_k a_kᵀ b_k`.
    pub fn weighted_inner(&self, other: &SampledSignal) -> f64 {
        let w = self.grid.trapezoid_weights();
        self.values
            .iter()
            .zip(&other.values)
            .zip(w)
            .map(|((a, b), wk)| wk * a.dot(b))
            .sum()
    }

    pub fn weighted_norm(&self) -> f64 {
        self.weighted_inner(self).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs().max()).fold(0.0, f64::max)
    }

    /// Node-major flattening: sample `k` occupies `[k·d, (k+1)·d)`.
    pub fn to_flat(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(self.len() * d);
        for (k, v) in self.values.iter().enumerate() {
            out.rows_mut(k * d, d).copy_from(v);
        }
        out
    }

    pub fn from_flat(grid: Grid, dim: usize, flat: &DVector<f64>) -> Self {
        let values = (0..grid.len()).map(|k| flat.rows(k * dim, dim).into_owned()).collect();
        SampledSignal { grid, values }
    }
}

/// Scalar control samples plus (optionally) exact slope samples.
///
/// The slope channel, when present, lets the verification integrator
/// reconstruct the control between nodes at fourth order instead of
/// falling back to linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub samples: SampledSignal,
    pub derivative: Option<SampledSignal>,
}

impl ControlSignal {
    pub fn new(samples: SampledSignal) -> Self {
        ControlSignal { samples, derivative: None }
    }

    pub fn with_derivative(samples: SampledSignal, derivative: SampledSignal) -> Self {
        ControlSignal { samples, derivative: Some(derivative) }
    }

    pub fn grid(&self) -> Grid {
        self.samples.grid
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }
}

/// States and outputs along a grid, with `outputs[k] = E states[k]` as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn from_states(grid: Grid, states: Vec<DVector<f64>>, e: &DMatrix<f64>) -> Self {
        let outputs = states.iter().map(|x| e * x).collect();
        Trajectory { grid, states, outputs }
    }

    pub fn output_scalar(&self, k: usize) -> f64 {
        self.outputs[k][0]
    }
}

/// Uncontrolled solution `x(t) = e^{At} x0` sampled on a grid, with the
/// exact output-derivative evaluator `d^k/dt^k [E e^{At} x0] = E A^k e^{At} x0`.
#[derive(Debug, Clone)]
pub struct FreeResponse {
    pub traj: Trajectory,
    a: DMatrix<f64>,
    e: DMatrix<f64>,
}

impl FreeResponse {
    pub fn output_derivative(&self, order: usize, node: usize) -> DVector<f64> {
        let mut v = self.traj.states[node].clone();
        for _ in 0..order {
            v = &self.a * v;
        }
        &self.e * v
    }
}

/// Samples `e^{At} x0` on the grid nodes by stepping with `e^{A dt}`.
pub fn free_response(sys: &LtiSystem, grid: Grid) -> Result<FreeResponse> {
    let phi = mat_exp(&sys.a, grid.dt())?;
    let mut states = Vec::with_capacity(grid.len());
    let mut x = sys.x0.clone();
    states.push(x.clone());
    for _ in 0..grid.steps() {
        x = &phi * x;
        states.push(x.clone());
    }
    Ok(FreeResponse {
        traj: Trajectory::from_states(grid, states, &sys.e),
        a: sys.a.clone(),
        e: sys.e.clone(),
    })
}

/// Target with the free response subtracted:
/// `g^{(k)}(t) = f^{(k)}(t) - E A^k e^{At} x0`.
///
/// Tracking `g` from a zero initial state is equivalent to tracking `f`
/// from `x0`. Construction enforces the compatibility condition
/// `f(0) = E x0`, so `g(0) = 0` to round-off.
#[derive(Debug, Clone)]
pub struct ShiftedTarget {
    pub f: TargetSignal,
    a: DMatrix<f64>,
    e_row: DVector<f64>,
    x0: DVector<f64>,
}

impl ShiftedTarget {
    fn free_term(&self, order: usize, t: f64) -> Result<f64> {
        let mut v = mat_exp(&self.a, t)? * &self.x0;
        for _ in 0..order {
            v = &self.a * v;
        }
        Ok(self.e_row.dot(&v))
    }
}

impl Signal for ShiftedTarget {
    fn max_derivative(&self) -> usize {
        self.f.max_derivative()
    }

    fn eval_derivs(&self, t: f64, up_to: usize) -> Result<Vec<f64>> {
        let mut d = self.f.eval_derivs(t, up_to)?;
        if self.x0.iter().any(|&v| v != 0.0) {
            for (k, val) in d.iter_mut().enumerate() {
                *val -= self.free_term(k, t)?;
            }
        }
        Ok(d)
    }
}

/// Reduces a tracking problem with initial state `x0` to one with zero
/// initial data. Scalar output only.
pub fn shift_target(sys: &LtiSystem, f: &TargetSignal, _grid: Grid) -> Result<ShiftedTarget> {
    let e_row = sys.output_row()?;
    let f0 = f.eval(0, 0.0)?;
    let mismatch = (f0 - e_row.dot(&sys.x0)).abs();
    if mismatch > COMPATIBILITY_TOL * (1.0 + f0.abs()) {
        return Err(Error::CompatibilityViolation { mismatch });
    }
    Ok(ShiftedTarget { f: f.clone(), a: sys.a.clone(), e_row, x0: sys.x0.clone() })
}

/// Scalar signal tabulated on a grid (all requested orders at the nodes,
/// order zero additionally at step midpoints). This is the form the cascade
/// integrator consumes; building it once avoids re-evaluating matrix
/// exponentials inside inner loops.
#[derive(Debug, Clone)]
pub struct GridSamples {
    pub grid: Grid,
    /// `derivs[order][node]`
    derivs: Vec<Vec<f64>>,
    /// order-0 values at `t_k + dt/2`, `k = 0..N-1`
    half: Vec<f64>,
}

impl GridSamples {
    pub fn of_signal(signal: &impl Signal, grid: Grid, up_to: usize) -> Result<Self> {
        let mut derivs = vec![vec![0.0; grid.len()]; up_to + 1];
        for k in 0..grid.len() {
            let d = signal.eval_derivs(grid.node(k), up_to)?;
            for (order, val) in d.into_iter().enumerate() {
                derivs[order][k] = val;
            }
        }
        let half = (0..grid.steps())
            .map(|k| signal.eval(0, grid.half_node(k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridSamples { grid, derivs, half })
    }

    /// Fast path for shifted targets: the free-response part is advanced
    /// with `e^{A dt/2}` instead of a fresh matrix exponential per node.
    pub fn of_shifted(shift: &ShiftedTarget, grid: Grid, up_to: usize) -> Result<Self> {
        let mut derivs = vec![vec![0.0; grid.len()]; up_to + 1];
        for k in 0..grid.len() {
            let d = shift.f.eval_derivs(grid.node(k), up_to)?;
            for (order, val) in d.into_iter().enumerate() {
                derivs[order][k] = val;
            }
        }
        let mut half = (0..grid.steps())
            .map(|k| shift.f.eval(0, grid.half_node(k)))
            .collect::<Result<Vec<_>>>()?;

        if shift.x0.iter().any(|&v| v != 0.0) {
            let phi_half = mat_exp(&shift.a, grid.dt() / 2.0)?;
            let mut x = shift.x0.clone();
            for j in 0..=2 * grid.steps() {
                if j % 2 == 0 {
                    let node = j / 2;
                    let mut v = x.clone();
                    for row in derivs.iter_mut() {
                        row[node] -= shift.e_row.dot(&v);
                        v = &shift.a * v;
                    }
                } else {
                    half[j / 2] -= shift.e_row.dot(&x);
                }
                x = &phi_half * x;
            }
        }
        Ok(GridSamples { grid, derivs, half })
    }

    pub fn max_order(&self) -> usize {
        self.derivs.len() - 1
    }

    pub fn value(&self, order: usize, node: usize) -> f64 {
        self.derivs[order][node]
    }

    pub fn half_value(&self, step: usize) -> f64 {
        self.half[step]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn benchmark_system() -> LtiSystem {
        LtiSystem::new(
            crate::linalg::mat_from_rows(&[&[0.0, 1.0], &[-2.0, -3.0]]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_column_slice(&[1.0, 1.0]),
        )
        .unwrap()
    }

    use nalgebra::{DMatrix, DVector};

    #[test]
    fn sinusoid_benchmark_value() {
        let f = TargetSignal::benchmark_sinusoid();
        assert_abs_diff_eq!(f.eval(0, 0.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn polynomial_second_derivative() {
        let f = TargetSignal::polynomial(&[0.0, 0.0, 1.0]); // t²
        assert_abs_diff_eq!(f.eval(2, 7.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sinusoid_first_derivative_at_zero() {
        let f = TargetSignal::sinusoid(1.0, 2.0 * PI, 0.0);
        assert_abs_diff_eq!(f.eval(1, 0.0).unwrap(), 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn floor_rejects_derivatives() {
        let f = TargetSignal::floor_shift(1.0);
        assert_abs_diff_eq!(f.eval(0, 1.25).unwrap(), 2.0, epsilon = 1e-15);
        assert!(matches!(f.eval(1, 0.5), Err(Error::InsufficientRegularity { .. })));
    }

    #[test]
    fn capped_declares_lower_order() {
        let f = TargetSignal::sinusoid(1.0, 1.0, 0.0).with_max_derivative(3);
        assert_eq!(f.max_derivative(), 3);
        assert!(f.eval(3, 0.5).is_ok());
        assert!(matches!(f.eval(4, 0.5), Err(Error::InsufficientRegularity { .. })));
    }

    #[test]
    fn product_leibniz_matches_closed_form() {
        // (t² sin t)'' = 2 sin t + 4 t cos t - t² sin t
        let f = TargetSignal::product(
            TargetSignal::polynomial(&[0.0, 0.0, 1.0]),
            TargetSignal::sinusoid(1.0, 1.0, 0.0),
        );
        let t = 1.3;
        let expect = 2.0 * t.sin() + 4.0 * t * t.cos() - t * t * t.sin();
        assert_abs_diff_eq!(f.eval(2, t).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn centered_difference_consistency_across_kinds() {
        let kinds = vec![
            TargetSignal::polynomial(&[0.5, -1.0, 2.0, 0.25]),
            TargetSignal::sinusoid(1.5, 2.0, 0.3),
            TargetSignal::exponential(0.7, -0.4),
            TargetSignal::product(
                TargetSignal::polynomial(&[0.0, 1.0, 1.0]),
                TargetSignal::sinusoid(1.0, 1.5, 0.0),
            ),
        ];
        let h = 1e-5;
        for f in kinds {
            for k in 0..3 {
                for &t in &[0.3, 1.1, 2.7] {
                    let fd = (f.eval(k, t + h).unwrap() - f.eval(k, t - h).unwrap()) / (2.0 * h);
                    let exact = f.eval(k + 1, t).unwrap();
                    let scale = 1.0 + exact.abs() + f.eval(k, t).unwrap().abs();
                    assert!(
                        (fd - exact).abs() <= 1e-5 * scale,
                        "order {k} at t={t}: fd={fd} exact={exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn tabulated_derivatives_are_rough_but_sane() {
        let grid_n = 400;
        let t_final = 2.0;
        let samples: Vec<f64> =
            (0..=grid_n).map(|k| (k as f64 * t_final / grid_n as f64).sin()).collect();
        let f = TargetSignal::tabulated(t_final, samples);
        assert_eq!(f.max_derivative(), 2);
        assert_abs_diff_eq!(f.eval(1, 1.0).unwrap(), 1.0f64.cos(), epsilon = 1e-3);
        assert_abs_diff_eq!(f.eval(2, 1.0).unwrap(), -(1.0f64.sin()), epsilon = 1e-2);
    }

    #[test]
    fn free_response_zero_initial_state() {
        let mut sys = benchmark_system();
        sys.x0 = DVector::zeros(2);
        let fr = free_response(&sys, Grid::new(1.0, 10).unwrap()).unwrap();
        for x in &fr.traj.states {
            assert_abs_diff_eq!(x.norm(), 0.0, epsilon = 1e-300);
        }
    }

    #[test]
    fn free_response_zero_dynamics_is_constant() {
        let sys = LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_column_slice(&[3.0, -2.0]),
        )
        .unwrap();
        let fr = free_response(&sys, Grid::new(2.0, 8).unwrap()).unwrap();
        for x in &fr.traj.states {
            assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-14);
            assert_abs_diff_eq!(x[1], -2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn free_response_matches_rk4_reference() {
        let sys = benchmark_system();
        let grid = Grid::new(1.0, 10).unwrap();
        let fr = free_response(&sys, grid).unwrap();

        // independent fixed-step RK4 at dt = 1e-4
        let mut x = sys.x0.clone();
        let dt = 1e-4;
        let f = |x: &DVector<f64>| &sys.a * x;
        for _ in 0..10_000 {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (dt / 2.0)));
            let k3 = f(&(&x + &k2 * (dt / 2.0)));
            let k4 = f(&(&x + &k3 * dt));
            x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        }
        assert!((&fr.traj.states[10] - &x).norm() <= 1e-8);
    }

    #[test]
    fn free_response_output_derivative_definition() {
        let sys = benchmark_system();
        let grid = Grid::new(1.0, 4).unwrap();
        let fr = free_response(&sys, grid).unwrap();
        let expect = &sys.e * (&sys.a * (&sys.a * &fr.traj.states[2]));
        assert_abs_diff_eq!(fr.output_derivative(2, 2)[0], expect[0], epsilon = 1e-13);
    }

    #[test]
    fn shift_target_identity_without_initial_state() {
        let mut sys = benchmark_system();
        sys.x0 = DVector::zeros(2);
        let f = TargetSignal::polynomial(&[0.0, 1.0]);
        let grid = Grid::new(1.0, 4).unwrap();
        let g = shift_target(&sys, &f, grid).unwrap();
        for &t in &[0.0, 0.4, 1.0] {
            assert_abs_diff_eq!(g.eval(0, t).unwrap(), t, epsilon = 1e-14);
            assert_abs_diff_eq!(g.eval(1, t).unwrap(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn shift_target_benchmark_starts_at_zero() {
        let sys = benchmark_system();
        let f = TargetSignal::benchmark_sinusoid(); // f(0) = 1 = E x0
        let grid = Grid::new(10.0, 100).unwrap();
        let g = shift_target(&sys, &f, grid).unwrap();
        assert!(g.eval(0, 0.0).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn shift_target_rejects_incompatible_start() {
        let sys = benchmark_system();
        let f = TargetSignal::polynomial(&[0.0, 1.0]); // f(0) = 0 ≠ 1
        let grid = Grid::new(1.0, 4).unwrap();
        assert!(matches!(
            shift_target(&sys, &f, grid),
            Err(Error::CompatibilityViolation { .. })
        ));
    }

    #[test]
    fn grid_samples_fast_path_matches_direct_eval() {
        let sys = benchmark_system();
        let f = TargetSignal::benchmark_sinusoid();
        let grid = Grid::new(4.0, 32).unwrap();
        let g = shift_target(&sys, &f, grid).unwrap();
        let samples = GridSamples::of_shifted(&g, grid, 3).unwrap();
        for k in [0, 7, 16, 32] {
            for order in 0..=3 {
                let direct = g.eval(order, grid.node(k)).unwrap();
                assert_abs_diff_eq!(samples.value(order, k), direct, epsilon = 1e-10);
            }
        }
        for step in [0, 15, 31] {
            let direct = g.eval(0, grid.half_node(step)).unwrap();
            assert_abs_diff_eq!(samples.half_value(step), direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn weighted_inner_product_matches_integral() {
        let grid = Grid::new(2.0, 2000).unwrap();
        let a = SampledSignal::from_scalar_fn(grid, |t| t);
        let b = SampledSignal::from_scalar_fn(grid, |t| t * t);
        // ∫_0^2 t³ dt = 4
        assert_abs_diff_eq!(a.weighted_inner(&b), 4.0, epsilon = 1e-5);
    }

    #[test]
    fn sampled_signal_flat_round_trip() {
        let grid = Grid::new(1.0, 3).unwrap();
        let s = SampledSignal::from_fn(grid, 2, |k, t| DVector::from_column_slice(&[t, k as f64]));
        let back = SampledSignal::from_flat(grid, 2, &s.to_flat());
        assert_eq!(s, back);
    }

    #[test]
    fn grid_sanity() {
        assert!(Grid::new(0.0, 10).is_err());
        assert!(Grid::new(1.0, 1).is_err());
        let g = Grid::new(10.0, 100).unwrap();
        assert_abs_diff_eq!(g.dt(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g.node(100), 10.0, epsilon = 1e-12);
        let w = g.trapezoid_weights();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 10.0, epsilon = 1e-12);
    }
}
