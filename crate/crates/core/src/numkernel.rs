//! Complex dense linear-algebra primitives shared by the estimation stages.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Columns whose singular value ratio falls below this are treated as
/// linearly dependent.
pub const CONDITIONING_FLOOR: f64 = 1e-10;

pub const POWER_ITERS: usize = 100;
pub const POWER_TOL: f64 = 1e-10;

/// Draws one circularly-symmetric complex Gaussian sample with variance `var`.
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn random_cn_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMatrix {
    // Column-major fill order keeps draws stable for a given shape.
    CMatrix::from_fn(rows, cols, |_, _| sample_cn(rng, var))
}

/// Ratio of smallest to largest singular value of `a`.
fn singular_ratio(a: &CMatrix) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !min.is_finite() {
        return 0.0;
    }
    min / max
}

/// Moore–Penrose pseudoinverse `(AᴴA)⁻¹Aᴴ` of a tall matrix with full column
/// rank, computed from a thin QR factorisation as `R⁻¹Qᴴ`.
pub fn pseudoinverse(a: &CMatrix) -> Result<CMatrix> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::DimensionMismatch(format!(
            "pseudoinverse expects a tall matrix, got {rows}x{cols}"
        )));
    }
    if cols == 0 {
        return Ok(CMatrix::zeros(0, rows));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let ratio = singular_ratio(&r);
    if ratio < CONDITIONING_FLOOR {
        return Err(Error::RankDeficient { ratio });
    }
    let q = qr.q();
    r.solve_upper_triangular(&q.adjoint())
        .ok_or(Error::RankDeficient { ratio })
}

/// Pseudoinverse of a wide matrix with full row rank, `Aᴴ(AAᴴ)⁻¹`.
pub fn right_pseudoinverse(a: &CMatrix) -> Result<CMatrix> {
    Ok(pseudoinverse(&a.adjoint())?.adjoint())
}

/// Orthogonal projector `W W†` onto the column space of `w`.
pub fn projector(w: &CMatrix) -> Result<CMatrix> {
    Ok(w * pseudoinverse(w)?)
}

/// Leading singular triple of a matrix.
#[derive(Debug, Clone)]
pub struct PrincipalPair {
    pub sigma: f64,
    pub u: CVector,
    pub v: CVector,
}

impl PrincipalPair {
    /// Rotates `u` so its largest-magnitude entry is real positive and
    /// applies the same rotation to `v`, leaving `σ u vᴴ` unchanged.
    fn pin_phase(mut self) -> Self {
        let mut best = 0;
        let mut best_mag = -1.0;
        for (i, z) in self.u.iter().enumerate() {
            if z.norm() > best_mag {
                best_mag = z.norm();
                best = i;
            }
        }
        if best_mag > 0.0 {
            let rot = Complex64::from_polar(1.0, -self.u[best].arg());
            self.u *= rot;
            self.v *= rot;
            self.u[best] = Complex64::new(self.u[best].norm(), 0.0);
        }
        self
    }

    pub fn rank_one(&self) -> CMatrix {
        &self.u * self.v.adjoint() * Complex64::new(self.sigma, 0.0)
    }
}

/// Principal singular pair by power iteration on `XᴴX`.
///
/// Converges when the Rayleigh quotient changes by less than `tol` relative
/// to its value. The start vector is the conjugate of the largest row, which
/// is exact after one step on rank-one inputs.
pub fn principal_pair(x: &CMatrix, max_iters: usize, tol: f64) -> Result<PrincipalPair> {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 || x.norm() == 0.0 {
        return Err(Error::ZeroInput);
    }
    let gram = x.adjoint() * x;

    let mut start = 0;
    let mut start_norm = -1.0;
    for i in 0..rows {
        let n = x.row(i).norm();
        if n > start_norm {
            start_norm = n;
            start = i;
        }
    }
    let mut v: CVector = x.row(start).adjoint();
    v /= Complex64::new(v.norm(), 0.0);

    let mut rayleigh = (v.adjoint() * &gram * &v)[(0, 0)].re;
    let mut converged = false;
    for _ in 0..max_iters {
        let w = &gram * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return Err(Error::ZeroInput);
        }
        v = w / Complex64::new(wn, 0.0);
        let next = (v.adjoint() * &gram * &v)[(0, 0)].re;
        let change = (next - rayleigh).abs();
        rayleigh = next;
        if change <= tol * rayleigh.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iters: max_iters });
    }

    let xv = x * &v;
    let sigma = xv.norm();
    let u = xv / Complex64::new(sigma, 0.0);
    Ok(PrincipalPair { sigma, u, v }.pin_phase())
}

/// Principal singular pair from a full SVD, with the same phase convention
/// as [`principal_pair`].
pub fn principal_pair_svd(x: &CMatrix) -> Result<PrincipalPair> {
    if x.nrows() == 0 || x.ncols() == 0 || x.norm() == 0.0 {
        return Err(Error::ZeroInput);
    }
    let svd = x.clone().svd(true, true);
    let (mut best, mut sigma) = (0, -1.0);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > sigma {
            sigma = *s;
            best = i;
        }
    }
    let u = svd.u.as_ref().ok_or(Error::ZeroInput)?.column(best).into_owned();
    let v = svd
        .v_t
        .as_ref()
        .ok_or(Error::ZeroInput)?
        .row(best)
        .adjoint();
    Ok(PrincipalPair { sigma, u, v }.pin_phase())
}

/// Power iteration with the default budget, falling back to a full SVD when
/// it fails to converge.
pub fn principal_pair_or_svd(x: &CMatrix) -> Result<PrincipalPair> {
    match principal_pair(x, POWER_ITERS, POWER_TOL) {
        Err(Error::NoConvergence { .. }) => principal_pair_svd(x),
        other => other,
    }
}
