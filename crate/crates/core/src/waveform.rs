//! QAM mapping, pilot-augmented data vectors, precoders and frame synthesis.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UserChannel;
use crate::numkernel::{random_cn_matrix, right_pseudoinverse, CMatrix, CVector};

/// Unit-energy QAM constellation.
///
/// Square orders (4, 16, 64) are Gray mapped per axis: the upper half of the
/// index bits selects the in-phase level, the lower half the quadrature
/// level. Order 32 is the 6×6 cross constellation, enumerated row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Qam {
    order: usize,
    points: Vec<Complex64>,
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

impl Qam {
    pub fn new(order: usize) -> Result<Self> {
        let raw: Vec<Complex64> = match order {
            4 | 16 | 64 => {
                let side = (order as f64).sqrt().round() as usize;
                let bits = side.trailing_zeros();
                let level = |g: usize| (2 * gray_to_binary(g)) as f64 - (side as f64 - 1.0);
                (0..order)
                    .map(|i| Complex64::new(level(i >> bits), level(i & (side - 1))))
                    .collect()
            }
            32 => {
                let levels = [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0];
                let mut pts = Vec::with_capacity(32);
                for &q in levels.iter().rev() {
                    for &i in &levels {
                        if f64::abs(i) == 5.0 && f64::abs(q) == 5.0 {
                            continue;
                        }
                        pts.push(Complex64::new(i, q));
                    }
                }
                pts
            }
            _ => return Err(Error::InvalidOrder(order)),
        };
        let energy = raw.iter().map(|z| z.norm_sqr()).sum::<f64>() / order as f64;
        let scale = 1.0 / energy.sqrt();
        Ok(Self { order, points: raw.into_iter().map(|z| z * scale).collect() })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn modulate(&self, indices: &[usize]) -> Vec<Complex64> {
        indices.iter().map(|&i| self.points[i]).collect()
    }

    /// Nearest constellation point; ties go to the lower index.
    pub fn slice(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn demodulate(&self, symbols: &[Complex64]) -> Vec<usize> {
        symbols.iter().map(|&z| self.slice(z)).collect()
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
        best
    }
}

/// Per-frame dimensions and powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub n_users: usize,
    pub coherence_len: usize,
    pub n_data: usize,
    pub mod_order: usize,
    /// Linear transmit SNR `ρ`.
    pub snr: f64,
    pub noise_var: f64,
}

impl FrameConfig {
    pub fn cols_per_user(&self) -> usize {
        self.n_data + 1
    }

    /// Checks ranges and the separability condition `T ≥ K(S+1)`.
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_data == 0 {
            return Err(Error::InvalidConfig("need K ≥ 1 and S ≥ 1".into()));
        }
        Qam::new(self.mod_order)?;
        if !(self.snr >= 0.0) || !(self.noise_var >= 0.0) {
            return Err(Error::InvalidConfig("snr and noise variance must be nonnegative".into()));
        }
        let required = self.n_users * self.cols_per_user();
        if self.coherence_len < required {
            return Err(Error::SeparabilityViolated { coherence_len: self.coherence_len, required });
        }
        Ok(())
    }
}

/// A user's pilot-augmented, unit-norm data vector `d̄ = [p, dᵀ]ᵀ / η`.
#[derive(Debug, Clone)]
pub struct AugmentedData {
    pub pilot: Complex64,
    pub indices: Vec<usize>,
    pub data: Vec<Complex64>,
    pub dbar: CVector,
    pub eta: f64,
}

impl AugmentedData {
    pub fn from_symbols(pilot: Complex64, indices: Vec<usize>, data: Vec<Complex64>) -> Self {
        let mut raw = Vec::with_capacity(data.len() + 1);
        raw.push(pilot);
        raw.extend_from_slice(&data);
        let v = CVector::from_vec(raw);
        let eta = v.norm();
        Self { pilot, indices, data, dbar: v / Complex64::new(eta, 0.0), eta }
    }
}

pub const NOMINAL_PILOT: Complex64 = Complex64::new(1.0, 0.0);

/// Draws `S` uniform QAM symbols behind the nominal pilot `p = 1`.
pub fn make_augmented_data<R: Rng + ?Sized>(rng: &mut R, config: &FrameConfig, qam: &Qam) -> AugmentedData {
    let indices: Vec<usize> = (0..config.n_data).map(|_| rng.random_range(0..qam.order())).collect();
    let data = qam.modulate(&indices);
    AugmentedData::from_symbols(NOMINAL_PILOT, indices, data)
}

/// Per-user precoders `C̄_k` and their concatenation `A C̄ = [C̄_1 … C̄_K]`.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub blocks: Vec<CMatrix>,
    pub concat: CMatrix,
    /// `(C̄ᵀAᵀ)†`, the `T × K(S+1)` matrix that separates users.
    pub separator: CMatrix,
}

impl PrecoderSet {
    /// Splits `concat` into blocks of `cols_per_user` columns.
    pub fn from_concat(concat: CMatrix, cols_per_user: usize) -> Result<Self> {
        if cols_per_user == 0 || !concat.ncols().is_multiple_of(cols_per_user) {
            return Err(Error::DimensionMismatch("precoder columns not divisible by S+1".into()));
        }
        let users = concat.ncols() / cols_per_user;
        let blocks = (0..users)
            .map(|k| concat.columns(k * cols_per_user, cols_per_user).into_owned())
            .collect();
        let separator = right_pseudoinverse(&concat.transpose())?;
        Ok(Self { blocks, concat, separator })
    }

    pub fn n_users(&self) -> usize {
        self.blocks.len()
    }

    pub fn cols_per_user(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ncols())
    }

    pub fn coherence_len(&self) -> usize {
        self.concat.nrows()
    }
}

/// Orthonormalised Gaussian columns scaled by `√T`, so `concatᴴ concat = T·I`.
pub fn generate_precoders<R: Rng + ?Sized>(rng: &mut R, config: &FrameConfig) -> Result<PrecoderSet> {
    let t = config.coherence_len;
    let cols = config.n_users * config.cols_per_user();
    if t < cols {
        return Err(Error::SeparabilityViolated { coherence_len: t, required: cols });
    }
    let g = random_cn_matrix(rng, t, cols, 1.0);
    let q = g.qr().q();
    PrecoderSet::from_concat(q * Complex64::new((t as f64).sqrt(), 0.0), config.cols_per_user())
}

/// One coherence interval of the blind scheme.
#[derive(Debug, Clone)]
pub struct Frame {
    pub config: FrameConfig,
    pub channels: Vec<UserChannel>,
    pub data: Vec<AugmentedData>,
    pub precoders: PrecoderSet,
    /// `Ȳ = √ρ Σ_k h_k d̄_kᵀ C̄_kᵀ + Z`.
    pub received: CMatrix,
}

/// Builds `Ȳ`; passing `None` for the RNG gives a noiseless frame.
pub fn synthesize_frame<R: Rng + ?Sized>(
    channels: Vec<UserChannel>,
    data: Vec<AugmentedData>,
    precoders: PrecoderSet,
    config: &FrameConfig,
    rng: Option<&mut R>,
) -> Result<Frame> {
    let k = config.n_users;
    if channels.len() != k || data.len() != k || precoders.n_users() != k {
        return Err(Error::DimensionMismatch("user counts disagree".into()));
    }
    let n = channels[0].h.len();
    let t = precoders.coherence_len();
    if t != config.coherence_len || precoders.cols_per_user() != config.cols_per_user() {
        return Err(Error::DimensionMismatch("precoder shape disagrees with config".into()));
    }
    let amp = Complex64::new(config.snr.sqrt(), 0.0);
    let mut received = CMatrix::zeros(n, t);
    for ((ch, d), c) in channels.iter().zip(&data).zip(&precoders.blocks) {
        if ch.h.len() != n || d.dbar.len() != config.cols_per_user() {
            return Err(Error::DimensionMismatch("channel or data length".into()));
        }
        let x = c * &d.dbar;
        received += &ch.h * x.transpose() * amp;
    }
    if let Some(rng) = rng {
        received += random_cn_matrix(rng, n, t, config.noise_var);
    }
    Ok(Frame { config: *config, channels, data, precoders, received })
}

/// `Y̆ = Ȳ (C̄ᵀAᵀ)†`, split into per-user `N × (S+1)` blocks.
pub fn effective_received(received: &CMatrix, precoders: &PrecoderSet) -> Result<Vec<CMatrix>> {
    if received.ncols() != precoders.coherence_len() {
        return Err(Error::DimensionMismatch("received frame length".into()));
    }
    let full = received * &precoders.separator;
    let m = precoders.cols_per_user();
    Ok((0..precoders.n_users())
        .map(|k| full.columns(k * m, m).into_owned())
        .collect())
}

/// Rescales an estimated augmented data vector by `p / p̂` and returns the
/// data part, resolving the unknown normalisation `η` and any residual phase.
pub fn rescale_by_pilot(dbar_hat: &CVector, pilot: Complex64) -> Result<Vec<Complex64>> {
    let p_hat = dbar_hat[0];
    if p_hat.norm() < 1e-12 {
        return Err(Error::ZeroPilotEstimate);
    }
    let ratio = pilot / p_hat;
    Ok(dbar_hat.iter().skip(1).map(|z| z * ratio).collect())
}

fn write_matrix_csv(path: &Path, m: &CMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "row,col,re,im")?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            writeln!(out, "{i},{j},{:.14e},{:.14e}", z.re, z.im)?;
        }
    }
    Ok(())
}

/// Debug dump: `<prefix>_received.csv`, `<prefix>_channels.csv`,
/// `<prefix>_precoders.csv` and a `<prefix>.json` sidecar with the
/// configuration and transmitted data.
pub fn dump_frame(frame: &Frame, prefix: &Path) -> Result<()> {
    let with_suffix = |s: &str| {
        let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(s);
        prefix.with_file_name(name)
    };
    write_matrix_csv(&with_suffix("_received.csv"), &frame.received)?;
    write_matrix_csv(&with_suffix("_precoders.csv"), &frame.precoders.concat)?;
    let mut h = CMatrix::zeros(frame.channels[0].h.len(), frame.channels.len());
    for (k, ch) in frame.channels.iter().enumerate() {
        h.set_column(k, &ch.h);
    }
    write_matrix_csv(&with_suffix("_channels.csv"), &h)?;

    let users: Vec<_> = frame
        .channels
        .iter()
        .zip(&frame.data)
        .map(|(ch, d)| {
            serde_json::json!({
                "paths": ch.paths,
                "symbol_indices": d.indices,
                "eta": d.eta,
            })
        })
        .collect();
    let sidecar = serde_json::json!({ "config": frame.config, "users": users });
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(with_suffix(".json"), text)?;
    Ok(())
}
