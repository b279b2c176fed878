//! Pilot-based comparison scheme: orthogonal DFT pilots, per-user OMP over
//! the polar dictionary, and zero-forcing detection.
//!
//! The baseline frame spends `τ = T − S` symbols on pilots and `S` on data,
//! with no precoding.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{PolarDictionary, UserChannel};
use crate::numkernel::{pseudoinverse, random_cn_matrix, CMatrix, CVector};
use crate::waveform::Qam;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// OMP iterations per user; `None` uses the channel's path count.
    pub n_paths_assumed: Option<usize>,
}

/// First `K` columns of the `τ`-point DFT matrix, entries `e^{−j2π t k/τ}`.
pub fn dft_pilots(tau: usize, n_users: usize) -> Result<CMatrix> {
    if n_users == 0 || tau < n_users {
        return Err(Error::InvalidConfig(format!("need τ ≥ K ≥ 1, got τ = {tau}, K = {n_users}")));
    }
    Ok(CMatrix::from_fn(tau, n_users, |t, k| {
        // Reduce the exponent first so phases stay exact for large t·k.
        let m = (t * k) % tau;
        Complex64::from_polar(1.0, -2.0 * PI * m as f64 / tau as f64)
    }))
}

/// Pilot and data blocks received by the baseline scheme.
#[derive(Debug, Clone)]
pub struct BaselineFrame {
    pub pilots: CMatrix,
    /// `Y_p = √ρ H Pᵀ + Z_p`, `N × τ`.
    pub y_pilot: CMatrix,
    /// `Y_d = √ρ H D + Z_d`, `N × S`.
    pub y_data: CMatrix,
}

/// Builds the baseline frame for the given channels and per-user data
/// symbols; `None` for the RNG gives a noiseless frame.
pub fn synthesize_baseline_frame<R: Rng + ?Sized>(
    channels: &[UserChannel],
    data: &[Vec<Complex64>],
    tau: usize,
    snr: f64,
    noise_var: f64,
    rng: Option<&mut R>,
) -> Result<BaselineFrame> {
    let k = channels.len();
    if k == 0 || data.len() != k {
        return Err(Error::DimensionMismatch("one data stream per channel".into()));
    }
    let n = channels[0].h.len();
    let s = data[0].len();
    if data.iter().any(|d| d.len() != s) || channels.iter().any(|c| c.h.len() != n) {
        return Err(Error::DimensionMismatch("ragged data or channels".into()));
    }
    let pilots = dft_pilots(tau, k)?;
    let h = CMatrix::from_columns(&channels.iter().map(|c| c.h.clone()).collect::<Vec<_>>());
    let d = CMatrix::from_fn(k, s, |u, i| data[u][i]);
    let amp = Complex64::new(snr.sqrt(), 0.0);
    let mut y_pilot = &h * pilots.transpose() * amp;
    let mut y_data = &h * d * amp;
    if let Some(rng) = rng {
        y_pilot += random_cn_matrix(rng, n, tau, noise_var);
        y_data += random_cn_matrix(rng, n, s, noise_var);
    }
    Ok(BaselineFrame { pilots, y_pilot, y_data })
}

/// Despreads each user's pilot: `y_k = Y_p conj(p_k) / (√ρ τ)`.
pub fn pilot_ls_observation(y_pilot: &CMatrix, pilots: &CMatrix, snr: f64) -> Result<Vec<CVector>> {
    let tau = pilots.nrows();
    if y_pilot.ncols() != tau {
        return Err(Error::DimensionMismatch("pilot length".into()));
    }
    if !(snr > 0.0) {
        return Err(Error::InvalidConfig("despreading needs ρ > 0".into()));
    }
    let scale = Complex64::new(1.0 / (snr.sqrt() * tau as f64), 0.0);
    Ok((0..pilots.ncols())
        .map(|k| y_pilot * pilots.column(k).map(|z| z.conj()) * scale)
        .collect())
}

/// Vector OMP over the polar dictionary with `n_paths` iterations.
///
/// Returns `W(:,S) c` and the selected support.
pub fn omp_channel_estimate(y: &CVector, dict: &PolarDictionary, n_paths: usize) -> Result<(CVector, Vec<usize>)> {
    if y.len() != dict.matrix.nrows() {
        return Err(Error::DimensionMismatch("observation length".into()));
    }
    let norms: Vec<f64> = dict.matrix.column_iter().map(|c| c.norm()).collect();
    let mut support: Vec<usize> = Vec::with_capacity(n_paths);
    let mut banned: Vec<usize> = Vec::new();
    let mut estimate = CVector::zeros(y.len());
    let mut residual = y.clone();
    while support.len() < n_paths {
        let corr = dict.matrix.adjoint() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for (q, z) in corr.iter().enumerate() {
            if support.contains(&q) || banned.contains(&q) || norms[q] == 0.0 {
                continue;
            }
            let score = z.norm() / norms[q];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((q, score));
            }
        }
        let Some((q, _)) = best else { return Err(Error::Exhausted) };
        support.push(q);
        let w = dict.columns(&support);
        match pseudoinverse(&w) {
            Ok(pinv) => {
                estimate = &w * (pinv * y);
                residual = y - &estimate;
            }
            Err(Error::RankDeficient { .. }) => {
                support.pop();
                banned.push(q);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((estimate, support))
}

/// Zero-forcing detection `X̂ = Ĥ† Y_d / √ρ` followed by QAM slicing.
pub fn zf_detect(y_data: &CMatrix, h_hat: &CMatrix, snr: f64, qam: &Qam) -> Result<(CMatrix, Vec<Vec<usize>>)> {
    if y_data.nrows() != h_hat.nrows() {
        return Err(Error::DimensionMismatch("antenna count".into()));
    }
    if h_hat.ncols() > h_hat.nrows() {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    if !(snr > 0.0) {
        return Err(Error::InvalidConfig("detection needs ρ > 0".into()));
    }
    let x = pseudoinverse(h_hat)? * y_data / Complex64::new(snr.sqrt(), 0.0);
    let indices = x.row_iter().map(|row| row.iter().map(|&z| qam.slice(z)).collect()).collect();
    Ok((x, indices))
}
