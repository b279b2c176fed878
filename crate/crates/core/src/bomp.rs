//! On-grid blind orthogonal matching pursuit (B-OMP).
//!
//! Every iteration correlates the residual with the dictionary in the
//! user-separated domain, grows each user's support by the row of maximum
//! power, re-fits the channel-data product `Ξ̂_k` by least squares on the
//! support, and recomputes the residual. The final `Ξ̂_k` are factorised into
//! a channel and a unit-norm data vector whose pilot entry carries the known
//! pilot phase.
//!
//! The residual is always recomputed from `Ȳ` (`R = Ȳ − W Ξ̂ C̄ᵀAᵀ`) so the
//! LS residual stays orthogonal to the selected atoms, and termination by
//! threshold compares `‖R‖²_F / ‖Ȳ‖²_F` against `ε₁`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::PolarDictionary;
use crate::numkernel::{principal_pair_or_svd, pseudoinverse, CMatrix, CVector};
use crate::waveform::{effective_received, PrecoderSet};

/// Termination rule for [`run_bomp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BompStopRule {
    /// Stop after exactly `L` iterations.
    KnownPaths(usize),
    /// Stop once `‖R‖²/‖Ȳ‖² ≤ eps1`; exceeding `max_iters` is an error.
    ResidualThreshold { eps1: f64, max_iters: usize },
}

impl BompStopRule {
    /// Relative threshold `ε₁ = 0.05` with `min(Q, 4L)` iterations.
    pub fn default_threshold(n_atoms: usize, nominal_paths: usize) -> Self {
        Self::ResidualThreshold { eps1: 0.05, max_iters: n_atoms.min(4 * nominal_paths).max(1) }
    }
}

/// Iteration state of the algorithm.
#[derive(Debug, Clone)]
pub struct BompState {
    pub residual: CMatrix,
    pub supports: Vec<Vec<usize>>,
    /// Row-sparse `Q × (S+1)` estimates of `√ρ Ξ_k`.
    pub xi_hats: Vec<CMatrix>,
    pub iteration: usize,
}

/// Phase-aligned estimates for one user.
#[derive(Debug, Clone)]
pub struct UserEstimate {
    /// Polar-domain channel estimate (length `Q`). Like `Ξ̂_k` it includes
    /// the `√ρ` received amplitude.
    pub g_hat: CVector,
    /// `W ĝ`.
    pub h_hat: CVector,
    /// Unit-norm augmented data estimate whose first entry has the pilot's
    /// phase.
    pub dbar_hat: CVector,
    pub support: Vec<usize>,
}

/// One row of the optional per-iteration diagnostic trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BompTraceRow {
    pub iteration: usize,
    pub user: usize,
    pub atom: usize,
    pub angle: f64,
    pub inv_distance: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct BompOutput {
    pub users: Vec<UserEstimate>,
    /// Number of paths estimated per user, `L̂`.
    pub n_paths: usize,
    pub state: BompState,
    pub trace: Vec<BompTraceRow>,
}

/// Correlation matrix `Γ = Wᴴ R (C̄ᵀAᵀ)†` of size `Q × K(S+1)`.
pub fn correlation(residual: &CMatrix, dict: &PolarDictionary, precoders: &PrecoderSet) -> Result<CMatrix> {
    if residual.nrows() != dict.matrix.nrows() || residual.ncols() != precoders.coherence_len() {
        return Err(Error::DimensionMismatch("residual shape".into()));
    }
    let separated = residual * &precoders.separator;
    Ok(dict.matrix.adjoint() * separated)
}

/// Row of maximum power among rows not in `exclude`; ties go to the lower
/// index.
pub fn select_atom(gamma_k: &CMatrix, exclude: &[usize]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (s, row) in gamma_k.row_iter().enumerate() {
        if exclude.contains(&s) {
            continue;
        }
        let power = row.norm_squared();
        if best.is_none_or(|(_, p)| power > p) {
            best = Some((s, power));
        }
    }
    best.map(|(s, _)| s).ok_or(Error::Exhausted)
}

/// `Ξ̂_k` with rows `W(:,S)† Y̆_k` on the support and zeros elsewhere.
pub fn ls_update(y_breve_k: &CMatrix, dict: &PolarDictionary, support: &[usize]) -> Result<CMatrix> {
    let mut xi = CMatrix::zeros(dict.n_atoms(), y_breve_k.ncols());
    if support.is_empty() {
        return Ok(xi);
    }
    let rows = pseudoinverse(&dict.columns(support))? * y_breve_k;
    for (i, &q) in support.iter().enumerate() {
        xi.set_row(q, &rows.row(i));
    }
    Ok(xi)
}

/// Reconstruction `W Ξ̂_k` restricted to the support.
fn reconstruct(xi_k: &CMatrix, dict: &PolarDictionary, support: &[usize]) -> CMatrix {
    if support.is_empty() {
        return CMatrix::zeros(dict.matrix.nrows(), xi_k.ncols());
    }
    dict.columns(support) * xi_k.select_rows(support.iter())
}

/// `R = Ȳ − W Ξ̂ C̄ᵀAᵀ`, exploiting the row sparsity of every `Ξ̂_k`.
pub fn update_residual(
    received: &CMatrix,
    xi_hats: &[CMatrix],
    dict: &PolarDictionary,
    precoders: &PrecoderSet,
) -> Result<CMatrix> {
    if xi_hats.len() != precoders.n_users() {
        return Err(Error::DimensionMismatch("one Ξ̂ per user".into()));
    }
    let mut residual = received.clone();
    for (xi, c) in xi_hats.iter().zip(&precoders.blocks) {
        let support: Vec<usize> = (0..xi.nrows()).filter(|&q| xi.row(q).norm_squared() > 0.0).collect();
        if support.is_empty() {
            continue;
        }
        residual -= reconstruct(xi, dict, &support) * c.transpose();
    }
    Ok(residual)
}

/// Rank-one factorisation `Ξ̂_k ≈ ĝ d̂̄ᵀ` with `‖d̂̄‖ = 1` and the phase of
/// `d̂̄(0)` pinned to that of the pilot.
///
/// The data factor is the conjugated right singular vector because the model
/// uses `d̄ᵀ` where the SVD yields `Vᴴ`.
pub fn factorize_align(xi_k: &CMatrix, pilot: Complex64) -> Result<(CVector, CVector)> {
    let pp = principal_pair_or_svd(xi_k)?;
    let g_tilde = &pp.u * Complex64::new(pp.sigma, 0.0);
    let d_tilde = pp.v.map(|z| z.conj());
    let p_tilde = d_tilde[0];
    if p_tilde.norm() < 1e-12 {
        return Err(Error::ZeroPilotEstimate);
    }
    let chi = (pilot / p_tilde).arg();
    let g_hat = g_tilde * Complex64::from_polar(1.0, -chi);
    let dbar_hat = d_tilde * Complex64::from_polar(1.0, chi);
    Ok((g_hat, dbar_hat))
}

/// Runs B-OMP on one received frame.
///
/// `pilots` holds each user's nominal pilot symbol. With `trace`, one
/// [`BompTraceRow`] is recorded per user and iteration.
pub fn run_bomp(
    received: &CMatrix,
    dict: &PolarDictionary,
    precoders: &PrecoderSet,
    stop: BompStopRule,
    pilots: &[Complex64],
    trace: bool,
) -> Result<BompOutput> {
    let n_users = precoders.n_users();
    if pilots.len() != n_users {
        return Err(Error::DimensionMismatch("one pilot per user".into()));
    }
    let y_breve = effective_received(received, precoders)?;
    let total_energy = received.norm_squared();
    let cols = precoders.cols_per_user();

    let mut state = BompState {
        residual: received.clone(),
        supports: vec![Vec::new(); n_users],
        xi_hats: vec![CMatrix::zeros(dict.n_atoms(), cols); n_users],
        iteration: 0,
    };
    let mut rows = Vec::new();

    loop {
        state.iteration += 1;
        let gamma = correlation(&state.residual, dict, precoders)?;
        for k in 0..n_users {
            let gamma_k = gamma.columns(k * cols, cols).into_owned();
            // Atoms that make the support numerically dependent are skipped.
            let mut banned = state.supports[k].clone();
            loop {
                let s = select_atom(&gamma_k, &banned)?;
                state.supports[k].push(s);
                match ls_update(&y_breve[k], dict, &state.supports[k]) {
                    Ok(xi) => {
                        state.xi_hats[k] = xi;
                        break;
                    }
                    Err(Error::RankDeficient { .. }) => {
                        state.supports[k].pop();
                        banned.push(s);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        state.residual = update_residual(received, &state.xi_hats, dict, precoders)?;
        let relative = if total_energy > 0.0 { state.residual.norm_squared() / total_energy } else { 0.0 };

        if trace {
            for k in 0..n_users {
                let atom = *state.supports[k].last().unwrap();
                rows.push(BompTraceRow {
                    iteration: state.iteration,
                    user: k,
                    atom,
                    angle: dict.grid[atom].angle,
                    inv_distance: dict.grid[atom].inv_distance,
                    relative_residual: relative,
                });
            }
        }

        match stop {
            BompStopRule::KnownPaths(l) => {
                if state.iteration >= l.max(1) {
                    break;
                }
            }
            BompStopRule::ResidualThreshold { eps1, max_iters } => {
                if relative <= eps1 {
                    break;
                }
                if state.iteration >= max_iters {
                    return Err(Error::MaxItersExceeded(max_iters));
                }
            }
        }
    }

    let mut users = Vec::with_capacity(n_users);
    for k in 0..n_users {
        let (g_hat, dbar_hat) = factorize_align(&state.xi_hats[k], pilots[k])?;
        let support = state.supports[k].clone();
        let h_hat = dict.columns(&support) * g_hat.select_rows(support.iter());
        users.push(UserEstimate { g_hat, h_hat, dbar_hat, support });
    }
    Ok(BompOutput { users, n_paths: state.iteration, state, trace: rows })
}

/// Writes a B-OMP trace as CSV.
pub fn write_trace_csv<W: std::io::Write>(rows: &[BompTraceRow], mut out: W) -> Result<()> {
    writeln!(out, "iteration,user,atom,angle_rad,inv_distance_per_m,relative_residual")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.10e},{:.10e},{:.10e}",
            r.iteration, r.user, r.atom, r.angle, r.inv_distance, r.relative_residual
        )?;
    }
    Ok(())
}
