//! Objective, reduced objective, steering-vector derivatives and the
//! projector-based gradients of the BCD refinement.
//!
//! Distances are handled through their inverse `u = 1/r` so far-field paths
//! (`u = 0`) stay representable.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::numkernel::{pseudoinverse, CMatrix, CVector};

/// `∂b/∂θ` at `(θ, u)`; entry `n` is `jk · n d cosθ / √(1+x) · b_n`.
pub fn steering_deriv_theta(geom: &ArrayGeometry, theta: f64, inv_r: f64) -> CVector {
    let k = geom.wavenumber();
    let b = geom.steering_vector_inv(theta, inv_r);
    let cos = theta.cos();
    CVector::from_fn(geom.n_antennas(), |n, _| {
        let nd = n as f64 * geom.spacing();
        let ratio = geom.distance_ratio(theta, inv_r, n);
        b[n] * Complex64::new(0.0, k * nd * cos / ratio)
    })
}

/// `∂b/∂u` with `u = 1/r`; entry `n` is `jk r² ((r − nd sinθ)/r⁽ⁿ⁾ − 1) b_n`.
///
/// The bracket is evaluated without cancellation so the derivative stays
/// accurate as `u → 0`, where it tends to `−jk n²d² cos²θ / 2`.
pub fn steering_deriv_inv_r(geom: &ArrayGeometry, theta: f64, inv_r: f64) -> CVector {
    let k = geom.wavenumber();
    let b = geom.steering_vector_inv(theta, inv_r);
    let (s, c) = theta.sin_cos();
    CVector::from_fn(geom.n_antennas(), |n, _| {
        let nd = n as f64 * geom.spacing();
        let root = geom.distance_ratio(theta, inv_r, n);
        let a = 1.0 - nd * s * inv_r;
        let scaled = if a >= 0.0 {
            -nd * nd * c * c / (root * (a + root))
        } else {
            (a / root - 1.0) / (inv_r * inv_r)
        };
        b[n] * Complex64::new(0.0, k * scaled)
    })
}

/// `F = ‖Ý − W̃ γ δᵀ‖²_F`.
pub fn objective_f(y_acute: &CMatrix, w_tilde: &CMatrix, gamma: &CVector, delta: &CVector) -> f64 {
    let h = w_tilde * gamma;
    let mut total = 0.0;
    for s in 0..y_acute.ncols() {
        for n in 0..y_acute.nrows() {
            total += (y_acute[(n, s)] - h[n] * delta[s]).norm_sqr();
        }
    }
    total
}

/// Range-space quantities of `W̃` shared by `Φ` and its gradients.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub w: CMatrix,
    pub w_pinv: CMatrix,
    /// `Ψ = W̃ W̃†`, formed explicitly.
    pub psi: CMatrix,
}

impl Subspace {
    pub fn new(w: CMatrix) -> Result<Self> {
        let w_pinv = pseudoinverse(&w)?;
        let psi = &w * &w_pinv;
        Ok(Self { w, w_pinv, psi })
    }

    pub fn at(geom: &ArrayGeometry, thetas: &[f64], inv_rs: &[f64]) -> Result<Self> {
        Self::new(geom.steering_matrix(thetas, inv_rs))
    }

    /// `Φ = −tr(Ýᴴ Ψ Ý)`.
    pub fn phi(&self, y_acute: &CMatrix) -> f64 {
        let py = &self.psi * y_acute;
        -y_acute.zip_fold(&py, 0.0, |acc, a, b| acc + (a.conj() * b).re)
    }

    /// `−tr(Ýᴴ ∂Ψ Ý)` for each column derivative in `w_dot`, where
    /// `∂Ψ/∂x_l = X + Xᴴ` with `X = (I − Ψ) Ẇ_l W̃†`.
    fn gradient(&self, y_acute: &CMatrix, w_dot: &CMatrix) -> Vec<f64> {
        let orth = y_acute - &self.psi * y_acute;
        let coeffs = &self.w_pinv * y_acute;
        let m = orth.adjoint() * w_dot;
        (0..w_dot.ncols())
            .map(|l| {
                let mut acc = Complex64::new(0.0, 0.0);
                for s in 0..y_acute.ncols() {
                    acc += m[(s, l)] * coeffs[(l, s)];
                }
                -2.0 * acc.re
            })
            .collect()
    }

    pub fn grad_theta(&self, geom: &ArrayGeometry, y_acute: &CMatrix, thetas: &[f64], inv_rs: &[f64]) -> Vec<f64> {
        self.gradient(y_acute, &deriv_matrix(geom, thetas, inv_rs, steering_deriv_theta))
    }

    pub fn grad_inv_r(&self, geom: &ArrayGeometry, y_acute: &CMatrix, thetas: &[f64], inv_rs: &[f64]) -> Vec<f64> {
        self.gradient(y_acute, &deriv_matrix(geom, thetas, inv_rs, steering_deriv_inv_r))
    }
}

fn deriv_matrix(
    geom: &ArrayGeometry,
    thetas: &[f64],
    inv_rs: &[f64],
    deriv: fn(&ArrayGeometry, f64, f64) -> CVector,
) -> CMatrix {
    let mut d = CMatrix::zeros(geom.n_antennas(), thetas.len());
    for (l, (&t, &u)) in thetas.iter().zip(inv_rs).enumerate() {
        d.set_column(l, &deriv(geom, t, u));
    }
    d
}

/// `Φ(θ, u) = −tr(Ýᴴ Ψ Ý)`.
pub fn reduced_objective(geom: &ArrayGeometry, y_acute: &CMatrix, thetas: &[f64], inv_rs: &[f64]) -> Result<f64> {
    Ok(Subspace::at(geom, thetas, inv_rs)?.phi(y_acute))
}

/// `∂Φ/∂θ_l` for every path.
pub fn grad_phi_theta(geom: &ArrayGeometry, y_acute: &CMatrix, thetas: &[f64], inv_rs: &[f64]) -> Result<Vec<f64>> {
    Ok(Subspace::at(geom, thetas, inv_rs)?.grad_theta(geom, y_acute, thetas, inv_rs))
}

/// `∂Φ/∂u_l` for every path.
pub fn grad_phi_inv_r(geom: &ArrayGeometry, y_acute: &CMatrix, thetas: &[f64], inv_rs: &[f64]) -> Result<Vec<f64>> {
    Ok(Subspace::at(geom, thetas, inv_rs)?.grad_inv_r(geom, y_acute, thetas, inv_rs))
}

/// `∂Ψ` for a perturbation of column `l` only: `X + Xᴴ`,
/// `X = (I − Ψ) Ẇ_l W̃†` with `Ẇ_l` zero outside column `l`.
pub fn projector_derivative(w: &CMatrix, column_deriv: &CVector, l: usize) -> Result<CMatrix> {
    let sub = Subspace::new(w.clone())?;
    let n = w.nrows();
    let orth = CMatrix::identity(n, n) - &sub.psi;
    let x = (orth * column_deriv) * sub.w_pinv.row(l);
    Ok(&x + x.adjoint())
}

/// `γ = W̃† Ý conj(δ) / ‖δ‖²`, the exact minimiser of `F` over `γ`.
pub fn update_gamma(y_acute: &CMatrix, w_pinv: &CMatrix, delta: &CVector) -> Result<CVector> {
    let energy = delta.norm_squared();
    if energy.sqrt() <= 1e-12 {
        return Err(Error::DegenerateData);
    }
    let conj = delta.map(|z| z.conj());
    Ok(w_pinv * (y_acute * conj) / Complex64::new(energy, 0.0))
}

/// `δ = Ýᵀ conj(W̃γ) / ‖W̃γ‖²`, the exact minimiser of `F` over `δ`.
pub fn update_delta(y_acute: &CMatrix, w_tilde: &CMatrix, gamma: &CVector) -> Result<CVector> {
    let h = w_tilde * gamma;
    let energy = h.norm_squared();
    if energy.sqrt() <= 1e-12 {
        return Err(Error::DegenerateChannel);
    }
    Ok(y_acute.transpose() * h.map(|z| z.conj()) / Complex64::new(energy, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{projector, random_cn_matrix, sample_cn};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(n, 0.003).unwrap()
    }

    fn random_params(g: &ArrayGeometry, l: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let r = g.fraunhofer_distance();
        let thetas = (0..l).map(|_| rng.random_range(-PI / 3.0..PI / 3.0)).collect();
        let inv = (0..l).map(|_| 1.0 / rng.random_range(r / 20.0..r)).collect();
        (thetas, inv)
    }

    fn rel_err(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn steering_deriv_theta_edges() {
        let g = geom(16);
        let d = steering_deriv_theta(&g, 0.3, 1.0 / 0.5);
        assert_eq!(d[0], Complex64::new(0.0, 0.0));
        for t in [PI / 2.0, -PI / 2.0] {
            let d = steering_deriv_theta(&g, t, 1.0 / 0.5);
            assert!(d.iter().all(|z| z.norm() < 1e-9 * g.wavenumber()));
        }
    }

    #[test]
    fn steering_deriv_theta_matches_fd() {
        let g = geom(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (t, u) = random_params(&g, 1, &mut rng);
            let h = 1e-6;
            let fd = (g.steering_vector_inv(t[0] + h, u[0]) - g.steering_vector_inv(t[0] - h, u[0])) / Complex64::new(2.0 * h, 0.0);
            let d = steering_deriv_theta(&g, t[0], u[0]);
            for n in 1..32 {
                assert!(rel_err(d[n], fd[n]) <= 1e-5, "n={n}");
            }
        }
    }

    #[test]
    fn steering_deriv_inv_r_matches_fd() {
        let g = geom(32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let far = 1.0 / (1e3 * g.fraunhofer_distance());
        let mut cases: Vec<(f64, f64)> = (0..20)
            .map(|_| {
                let (t, u) = random_params(&g, 1, &mut rng);
                (t[0], u[0])
            })
            .collect();
        cases.push((0.4, far));
        for (t, u) in cases {
            let h = 1e-6 * u.max(1.0 / g.fraunhofer_distance());
            let fd = (g.steering_vector_inv(t, u + h) - g.steering_vector_inv(t, u - h)) / Complex64::new(2.0 * h, 0.0);
            let d = steering_deriv_inv_r(&g, t, u);
            assert_eq!(d[0], Complex64::new(0.0, 0.0));
            for n in 1..32 {
                assert!(d[n].re.is_finite() && d[n].im.is_finite());
                assert!(rel_err(d[n], fd[n]) <= 1e-5, "n={n} u={u} d={} fd={}", d[n], fd[n]);
            }
        }
    }

    #[test]
    fn steering_deriv_inv_r_direct_formula() {
        // r² ((r − nd sinθ)/r⁽ⁿ⁾ − 1) evaluated literally at a near-field point.
        let g = geom(16);
        let (theta, r) = (-0.7, 0.2);
        let d = steering_deriv_inv_r(&g, theta, 1.0 / r);
        let b = g.steering_vector(theta, r);
        for n in 0..16 {
            let nd = n as f64 * g.spacing();
            let rn = g.element_distance(theta, r, n);
            let expected = Complex64::new(0.0, g.wavenumber() * r * r * ((r - nd * theta.sin()) / rn - 1.0)) * b[n];
            assert!((d[n] - expected).norm() <= 1e-8 * expected.norm().max(1.0));
        }
    }

    #[test]
    fn objective_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_cn_matrix(&mut rng, 6, 4, 1.0);
        let w = random_cn_matrix(&mut rng, 6, 2, 1.0);
        let delta = random_cn_matrix(&mut rng, 4, 1, 1.0).column(0).into_owned();
        let zero = CVector::zeros(2);
        assert!((objective_f(&y, &w, &zero, &delta) - y.norm_squared()).abs() < 1e-12);
        let gamma = random_cn_matrix(&mut rng, 2, 1, 1.0).column(0).into_owned();
        let exact = &w * &gamma * delta.transpose();
        assert!(objective_f(&exact, &w, &gamma, &delta) < 1e-24);

        let mut brute = 0.0;
        for n in 0..6 {
            for s in 0..4 {
                let mut model = Complex64::new(0.0, 0.0);
                for l in 0..2 {
                    model += w[(n, l)] * gamma[l] * delta[s];
                }
                let e = y[(n, s)] - model;
                brute += e.re * e.re + e.im * e.im;
            }
        }
        assert!((objective_f(&y, &w, &gamma, &delta) - brute).abs() < 1e-10 * brute);
    }

    #[test]
    fn phi_trivial_cases() {
        let g = geom(16);
        let (t, u) = (vec![0.2, -0.4], vec![1.0 / 0.3, 1.0 / 0.8]);
        let w = g.steering_matrix(&t, &u);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coeffs = random_cn_matrix(&mut rng, 2, 5, 1.0);
        let inside = &w * coeffs;
        let phi = reduced_objective(&g, &inside, &t, &u).unwrap();
        assert!((phi + inside.norm_squared()).abs() < 1e-9 * inside.norm_squared());

        let raw = random_cn_matrix(&mut rng, 16, 5, 1.0);
        let outside = &raw - projector(&w).unwrap() * &raw;
        assert!(reduced_objective(&g, &outside, &t, &u).unwrap().abs() < 1e-10 * raw.norm_squared());
    }

    #[test]
    fn reduced_objective_matches_least_squares_residual() {
        // min over γ, δ of F equals ‖Ý‖² + Φ only in the sense of the inner LS
        // in γδᵀ collapsed to its best rank-one fit for L = 1.
        let g = geom(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (t, u) = random_params(&g, 3, &mut rng);
            let y = random_cn_matrix(&mut rng, 16, 6, 1.0);
            let w = g.steering_matrix(&t, &u);
            let x = pseudoinverse(&w).unwrap() * &y;
            let f_ls = (&y - &w * x).norm_squared();
            let phi = reduced_objective(&g, &y, &t, &u).unwrap();
            assert!((y.norm_squared() + phi - f_ls).abs() <= 1e-8 * y.norm_squared());
        }
    }

    fn phi_fd(
        g: &ArrayGeometry,
        y: &CMatrix,
        t: &[f64],
        u: &[f64],
        l: usize,
        on_theta: bool,
        h: f64,
    ) -> f64 {
        let (mut tp, mut up) = (t.to_vec(), u.to_vec());
        let (mut tm, mut um) = (t.to_vec(), u.to_vec());
        if on_theta {
            tp[l] += h;
            tm[l] -= h;
        } else {
            up[l] += h;
            um[l] -= h;
        }
        (reduced_objective(g, y, &tp, &up).unwrap() - reduced_objective(g, y, &tm, &um).unwrap()) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = geom(24);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..10 {
            let l = 1 + trial % 3;
            let (t, u) = random_params(&g, l, &mut rng);
            let truth = g.steering_matrix(&t, &u);
            let gamma = CVector::from_fn(l, |_, _| sample_cn(&mut rng, 1.0));
            let delta = CVector::from_fn(5, |_, _| sample_cn(&mut rng, 1.0));
            let y = &truth * gamma * delta.transpose() + random_cn_matrix(&mut rng, 24, 5, 0.1);
            let t0: Vec<f64> = t.iter().map(|v| v + 0.01).collect();
            let u0: Vec<f64> = u.iter().map(|v| v * 1.05).collect();
            let gt = grad_phi_theta(&g, &y, &t0, &u0).unwrap();
            let gu = grad_phi_inv_r(&g, &y, &t0, &u0).unwrap();
            for i in 0..l {
                let fd = phi_fd(&g, &y, &t0, &u0, i, true, 1e-6);
                assert!((gt[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3 * y.norm_squared()));
                let fd = phi_fd(&g, &y, &t0, &u0, i, false, 1e-6 * u0[i]);
                assert!((gu[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3 * y.norm_squared()));
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_symmetric_fixed_point() {
        let g = geom(32);
        let (t, u) = (vec![0.25], vec![1.0 / 0.4]);
        let w = g.steering_vector_inv(t[0], u[0]);
        let delta = CVector::from_vec(vec![Complex64::new(1.0, -0.5), Complex64::new(0.3, 0.2)]);
        let y = &w * delta.transpose();
        assert!(grad_phi_theta(&g, &y, &t, &u).unwrap()[0].abs() <= 1e-8 * y.norm_squared());
        assert!(grad_phi_inv_r(&g, &y, &t, &u).unwrap()[0].abs() <= 1e-8 * y.norm_squared());
        let zero = CMatrix::zeros(32, 2);
        assert_eq!(grad_phi_theta(&g, &zero, &t, &u).unwrap(), vec![0.0]);
        assert_eq!(grad_phi_inv_r(&g, &zero, &t, &u).unwrap(), vec![0.0]);
    }

    #[test]
    fn projector_derivative_matches_fd() {
        let g = geom(20);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let (t, u) = random_params(&g, 3, &mut rng);
            let w = g.steering_matrix(&t, &u);
            let h = 1e-6;
            for l in 0..3 {
                let deriv = projector_derivative(&w, &steering_deriv_theta(&g, t[l], u[l]), l).unwrap();
                let (mut tp, mut tm) = (t.clone(), t.clone());
                tp[l] += h;
                tm[l] -= h;
                let fd = (projector(&g.steering_matrix(&tp, &u)).unwrap() - projector(&g.steering_matrix(&tm, &u)).unwrap())
                    / Complex64::new(2.0 * h, 0.0);
                assert!((&deriv - &fd).norm() <= 1e-5 * fd.norm());
            }
        }
    }

    #[test]
    fn block_updates_are_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_cn_matrix(&mut rng, 10, 3, 1.0);
        let w_pinv = pseudoinverse(&w).unwrap();
        let y = random_cn_matrix(&mut rng, 10, 4, 1.0);
        let delta = random_cn_matrix(&mut rng, 4, 1, 1.0).column(0).into_owned();

        // γ oracle: vec(W γ δᵀ) = (δ ⊗ W) γ, solved by normal equations.
        let mut a = CMatrix::zeros(40, 3);
        let mut b = CVector::zeros(40);
        for s in 0..4 {
            for n in 0..10 {
                for l in 0..3 {
                    a[(s * 10 + n, l)] = w[(n, l)] * delta[s];
                }
                b[s * 10 + n] = y[(n, s)];
            }
        }
        let normal = (a.adjoint() * &a).try_inverse().unwrap() * a.adjoint() * b;
        let gamma = update_gamma(&y, &w_pinv, &delta).unwrap();
        assert!((&gamma - normal).norm() <= 1e-9 * gamma.norm());

        let scaled = update_gamma(&y, &w_pinv, &(&delta * Complex64::new(0.0, 2.0))).unwrap();
        assert!((&scaled * Complex64::new(0.0, 2.0) - &gamma).norm() <= 1e-12 * gamma.norm());

        let h = &w * &gamma;
        let new_delta = update_delta(&y, &w, &gamma).unwrap();
        for s in 0..4 {
            let col = y.column(s);
            let oracle = h.dotc(&col) / Complex64::new(h.norm_squared(), 0.0);
            assert!((new_delta[s] - oracle).norm() <= 1e-9 * oracle.norm().max(1.0));
        }
        let before = objective_f(&y, &w, &gamma, &delta);
        let after = objective_f(&y, &w, &gamma, &new_delta);
        assert!(after <= before + 1e-12);

        assert_eq!(update_gamma(&y, &w_pinv, &CVector::zeros(4)).unwrap_err(), Error::DegenerateData);
        assert_eq!(update_delta(&y, &w, &CVector::zeros(3)).unwrap_err(), Error::DegenerateChannel);
    }

    #[test]
    fn consistent_rank_one_recovery() {
        let g = geom(16);
        let (t, u) = (vec![0.1, -0.5], vec![1.0 / 0.3, 0.0]);
        let w = g.steering_matrix(&t, &u);
        let gamma = CVector::from_vec(vec![Complex64::new(1.0, 1.0), Complex64::new(-0.5, 0.0)]);
        let delta = CVector::from_vec(vec![Complex64::new(0.3, 0.0), Complex64::new(0.0, -1.0), Complex64::new(0.7, 0.7)]);
        let y = &w * &gamma * delta.transpose();
        let w_pinv = pseudoinverse(&w).unwrap();
        assert!((update_gamma(&y, &w_pinv, &delta).unwrap() - &gamma).norm() < 1e-10);
        assert!((update_delta(&y, &w, &gamma).unwrap() - &delta).norm() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn theta_gradient_fd_property(seed in any::<u64>(), l in 1usize..4) {
            let g = geom(16);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, u) = random_params(&g, l, &mut rng);
            let y = random_cn_matrix(&mut rng, 16, 3, 1.0);
            let grad = grad_phi_theta(&g, &y, &t, &u).unwrap();
            for i in 0..l {
                let fd = phi_fd(&g, &y, &t, &u, i, true, 1e-6);
                prop_assert!((grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3 * y.norm_squared()));
            }
        }
    }
}
