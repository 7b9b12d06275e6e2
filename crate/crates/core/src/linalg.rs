//! Small dense linear-algebra helpers shared by the model and the sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest eigenvalue modulus of a square matrix, complex eigenvalues included.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    // QR iteration can stall on sparse nilpotent structure; an orthogonal
    // similarity keeps the spectrum and breaks the stall.
    let n = m.nrows();
    for attempt in 0..4 {
        let target = if attempt == 0 {
            m.clone()
        } else {
            let v = DVector::from_fn(n, |i, _| 1.0 + ((i + 1) * attempt) as f64 * 0.618_033_988_7);
            let v = &v / v.norm();
            let h = DMatrix::identity(n, n) - 2.0 * &v * v.transpose();
            &h * m * &h
        };
        if let Some(schur) = target.try_schur(f64::EPSILON, 10_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max));
        }
    }
    Err(Error::Numerical("Schur decomposition did not converge".into()))
}

/// `log |det(m)|` and the sign of the determinant, via LU with partial pivoting.
pub fn log_abs_det(m: &DMatrix<f64>) -> (f64, f64) {
    let det = m.clone().lu().determinant();
    if det == 0.0 {
        (f64::NEG_INFINITY, 0.0)
    } else {
        (det.abs().ln(), det.signum())
    }
}

/// In-place lower Cholesky factor of the `k x k` row-major matrix `a`.
/// Returns `false` if the matrix is not numerically positive definite.
pub fn cholesky_in_place(a: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = a[j * k + j];
        for t in 0..j {
            d -= a[j * k + t] * a[j * k + t];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for t in 0..j {
                s -= a[i * k + t] * a[j * k + t];
            }
            a[i * k + j] = s / d;
        }
        for i in 0..j {
            a[i * k + j] = 0.0;
        }
    }
    true
}

/// Solves `L x = b` in place for lower-triangular row-major `l`.
pub fn forward_solve(l: &[f64], k: usize, x: &mut [f64]) {
    for i in 0..k {
        let mut s = x[i];
        for t in 0..i {
            s -= l[i * k + t] * x[t];
        }
        x[i] = s / l[i * k + i];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular row-major `l`.
pub fn backward_solve_transpose(l: &[f64], k: usize, x: &mut [f64]) {
    for i in (0..k).rev() {
        let mut s = x[i];
        for t in (i + 1)..k {
            s -= l[t * k + i] * x[t];
        }
        x[i] = s / l[i * k + i];
    }
}

/// Draws `x ~ N(Λ⁻¹ h, scale · Λ⁻¹)` where `Λ` is the row-major precision
/// `prec` (overwritten by its Cholesky factor) and `h` the linear term
/// (overwritten by the draw).
pub fn draw_gaussian_canonical<R: Rng + ?Sized>(
    prec: &mut [f64],
    h: &mut [f64],
    k: usize,
    scale: f64,
    rng: &mut R,
) -> Result<()> {
    if !cholesky_in_place(prec, k) {
        return Err(Error::Numerical(
            "posterior precision is not positive definite".into(),
        ));
    }
    forward_solve(prec, k, h);
    let sd = scale.sqrt();
    for v in h.iter_mut().take(k) {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
    backward_solve_transpose(prec, k, h);
    Ok(())
}

/// Solves `(I − B) y = rhs` for one right-hand side using a prepared LU.
pub struct ShiftedSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ShiftedSolver {
    pub fn new(b: &DMatrix<f64>) -> Result<Self> {
        let q = b.nrows();
        let m = DMatrix::<f64>::identity(q, q) - b;
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::Numerical("I - B is singular".into()));
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, rhs: &nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::Numerical("I - B is singular".into()))
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("I - B is singular".into()))
    }
}
