//! Dense linear-algebra kernels shared by every module: matrix exponential,
//! characteristic polynomial, Kalman matrix rank and SVD-based spectrum
//! utilities. Factorizations are delegated to nalgebra; the matrix
//! exponential is a scaling-and-squaring Padé(13) implementation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative threshold for numerical rank decisions
/// (double-precision SVD noise floor with safety margin).
pub const RANK_REL_TOL: f64 = 1e-10;

/// Condition-estimate ceiling beyond which a solve is rejected as singular.
pub const SINGULAR_COND_LIMIT: f64 = 1e14;

/// Singular spectrum of a matrix together with the rank decision it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Singular values sorted descending.
    pub singular_values: Vec<f64>,
    /// Number of singular values strictly above `threshold_used`.
    pub rank_estimate: usize,
    /// Absolute threshold applied (`rel_tol * sigma_max`).
    pub threshold_used: f64,
}

impl SpectrumReport {
    /// Builds a report from a matrix and a relative tolerance.
    pub fn from_matrix(m: &DMatrix<f64>, rel_tol: f64) -> Self {
        let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        let threshold = rel_tol * sigma_max;
        let rank = sv.iter().filter(|&&s| s > threshold).count();
        SpectrumReport { singular_values: sv, rank_estimate: rank, threshold_used: threshold }
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

fn require_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(())
}

/// Computes `exp(A t)` by scaling-and-squaring with a Padé(13) approximant.
///
/// Relative accuracy is near machine precision for `‖At‖` up to the scaling
/// threshold times `2^s`; in practice better than 1e-12 for `‖At‖ ≤ 50`.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    require_square(a)?;
    let n = a.nrows();
    let m = a * t;

    // Padé(13) coefficients (Higham 2005).
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let norm = m.abs().column_sum().max(); // 1-norm
    let mut squarings = 0u32;
    let scaled = if norm > THETA_13 {
        squarings = (norm / THETA_13).log2().ceil() as u32;
        &m / 2f64.powi(squarings as i32)
    } else {
        m.clone()
    };

    let eye = DMatrix::<f64>::identity(n, n);
    let m2 = &scaled * &scaled;
    let m4 = &m2 * &m2;
    let m6 = &m4 * &m2;

    let u_inner = &m6 * (B[13] * &m6 + B[11] * &m4 + B[9] * &m2)
        + B[7] * &m6
        + B[5] * &m4
        + B[3] * &m2
        + B[1] * &eye;
    let u = &scaled * u_inner;
    let v = &m6 * (B[12] * &m6 + B[10] * &m4 + B[8] * &m2)
        + B[6] * &m6
        + B[4] * &m4
        + B[2] * &m2
        + B[0] * &eye;

    // Padé approximant is (V + U) / (V - U).
    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or(Error::Singular { cond_estimate: f64::INFINITY })?;

    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Coefficients `[α_1, ..., α_n]` of `det(λI - A) = λ^n + α_1 λ^{n-1} + ... + α_n`,
/// computed by the Faddeev-LeVerrier recursion (no complex arithmetic).
pub fn char_poly_coeffs(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    require_square(a)?;
    let n = a.nrows();
    let mut coeffs = Vec::with_capacity(n);
    let mut m = a.clone();
    for k in 1..=n {
        let c = -m.trace() / k as f64;
        coeffs.push(c);
        if k < n {
            for i in 0..n {
                m[(i, i)] += c;
            }
            m = a * m;
        }
    }
    Ok(coeffs)
}

/// Assembles the Kalman matrix `[B, AB, ..., A^{n-1}B]` and reports its
/// singular spectrum and numerical rank (values above `tol * sigma_max`).
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<SpectrumReport> {
    require_square(a)?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch { context: "kalman_rank B rows", expected: n, got: b.nrows() });
    }
    let m = b.ncols();
    let mut kalman = DMatrix::<f64>::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        kalman.view_mut((0, k * m), (n, m)).copy_from(&block);
        if k + 1 < n {
            block = a * block;
        }
    }
    Ok(SpectrumReport::from_matrix(&kalman, tol))
}

/// Solves `M X = rhs` by LU with partial pivoting.
///
/// Rejects matrices whose 1-norm condition estimate exceeds
/// [`SINGULAR_COND_LIMIT`].
pub fn solve_linear(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(m)?;
    if rhs.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch {
            context: "solve_linear rhs rows",
            expected: m.nrows(),
            got: rhs.nrows(),
        });
    }
    let cond = cond_estimate_1(m);
    if !cond.is_finite() || cond > SINGULAR_COND_LIMIT {
        return Err(Error::Singular { cond_estimate: cond });
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::Singular { cond_estimate: cond })
}

/// 1-norm condition estimate `‖M‖₁ ‖M⁻¹‖₁` (infinite when M has no inverse).
pub fn cond_estimate_1(m: &DMatrix<f64>) -> f64 {
    let norm = m.abs().column_sum().max();
    match m.clone().lu().try_inverse() {
        Some(inv) => norm * inv.abs().column_sum().max(),
        None => f64::INFINITY,
    }
}

/// Convenience constructor from row-major nested slices.
pub fn mat_from_rows(rows: &[&[f64]]) -> DMatrix<f64> {
    let r = rows.len();
    let c = if r > 0 { rows[0].len() } else { 0 };
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Column vector from a slice.
pub fn vec_from(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
