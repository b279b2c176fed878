//! Off-grid refinement of a B-OMP estimate by block coordinate descent.
//!
//! For each user the data part `Ý` of the effective received signal (pilot
//! column removed) is fitted by `W̃(θ, u) γ δᵀ`. One iteration updates, in
//! order, the angles and the inverse distances by projected Armijo steps on
//! the reduced objective `Φ`, then `γ` and `δ` in closed form. Every block is
//! accepted only if it does not increase `F`, so the `F` sequence is
//! nonincreasing block by block.

mod linesearch;
mod objective;

pub use linesearch::{backtracking_step, projected_backtracking_step, Armijo, StepResult};
pub use objective::{
    grad_phi_inv_r, grad_phi_theta, objective_f, projector_derivative, reduced_objective, steering_deriv_inv_r,
    steering_deriv_theta, update_delta, update_gamma, Subspace,
};

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bomp::UserEstimate;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, PolarDictionary};
use crate::numkernel::{CMatrix, CVector};

/// Angles are kept this far inside `(−π/2, π/2)`.
pub const ANGLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcdConfig {
    /// `I_max`, counted per user.
    pub max_iters: usize,
    /// `ε₂` relative to `‖Ý‖²_F`.
    pub eps2_rel: f64,
    pub beta: f64,
    pub c_armijo: f64,
    pub max_backtracks: usize,
    /// Fixed initial step; `None` uses `1/(‖g‖ + 1)`.
    pub eta0: Option<f64>,
    /// Inverse-distance box in 1/m; `None` uses `1/(10 R)` and `20/R`.
    pub min_inv_distance: Option<f64>,
    pub max_inv_distance: Option<f64>,
    /// Stop once an iteration changes nothing.
    pub stop_when_stationary: bool,
    /// Stop when an iteration lowers `F` by less than this fraction; `0`
    /// disables the test.
    pub ftol: f64,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            eps2_rel: 1e-6,
            beta: 0.5,
            c_armijo: 1e-4,
            max_backtracks: 30,
            eta0: None,
            min_inv_distance: None,
            max_inv_distance: None,
            stop_when_stationary: true,
            ftol: 0.0,
        }
    }
}

impl BcdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps2_rel >= 0.0
            && self.beta > 0.0
            && self.beta < 1.0
            && self.c_armijo > 0.0
            && self.eta0.is_none_or(|e| e > 0.0)
            && self.ftol >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig("BCD line-search constants out of range".into()));
        }
        if let (Some(lo), Some(hi)) = (self.min_inv_distance, self.max_inv_distance) {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::InvalidConfig("inverse-distance bounds".into()));
            }
        }
        Ok(())
    }

    fn armijo(&self) -> Armijo {
        Armijo { beta: self.beta, c: self.c_armijo, max_backtracks: self.max_backtracks }
    }

    pub fn inv_distance_bounds(&self, geom: &ArrayGeometry) -> (f64, f64) {
        let r = geom.fraunhofer_distance();
        (self.min_inv_distance.unwrap_or(0.1 / r), self.max_inv_distance.unwrap_or(20.0 / r))
    }
}

/// Current per-user refinement iterate.
#[derive(Debug, Clone)]
pub struct RefinementState {
    pub theta: Vec<f64>,
    /// Inverse distances `1/r̂`; zero marks a far-field path.
    pub inv_r: Vec<f64>,
    pub gamma: CVector,
    /// Data symbols only; the pilot is not part of the fit.
    pub delta: CVector,
    /// Steering vectors at `(θ̂, 1/r̂)`.
    pub w_tilde: CMatrix,
    /// `F` at the current iterate.
    pub objective: f64,
    pub iterations: usize,
    pub stationary: bool,
}

impl RefinementState {
    pub fn new(
        geom: &ArrayGeometry,
        y_acute: &CMatrix,
        theta: Vec<f64>,
        inv_r: Vec<f64>,
        gamma: CVector,
        delta: CVector,
    ) -> Result<Self> {
        if theta.len() != inv_r.len() || theta.len() != gamma.len() || theta.is_empty() {
            return Err(Error::DimensionMismatch("path parameter lengths".into()));
        }
        if y_acute.nrows() != geom.n_antennas() || y_acute.ncols() != delta.len() {
            return Err(Error::DimensionMismatch("Ý shape".into()));
        }
        if inv_r.iter().any(|&u| !(u >= 0.0)) {
            return Err(Error::InvalidConfig("inverse distances must be nonnegative".into()));
        }
        let w_tilde = geom.steering_matrix(&theta, &inv_r);
        let objective = objective_f(y_acute, &w_tilde, &gamma, &delta);
        Ok(Self { theta, inv_r, gamma, delta, w_tilde, objective, iterations: 0, stationary: false })
    }

    /// Seeds the iterate from a B-OMP estimate: grid points of the support,
    /// `ĝ` on the support and the data part of `d̂̄`.
    pub fn from_estimate(
        geom: &ArrayGeometry,
        dict: &PolarDictionary,
        y_acute: &CMatrix,
        estimate: &UserEstimate,
    ) -> Result<Self> {
        let support = &estimate.support;
        let theta = support.iter().map(|&q| dict.grid[q].angle).collect();
        let inv_r = support.iter().map(|&q| dict.grid[q].inv_distance).collect();
        let gamma = estimate.g_hat.select_rows(support.iter());
        let delta = estimate.dbar_hat.rows(1, estimate.dbar_hat.len() - 1).into_owned();
        Self::new(geom, y_acute, theta, inv_r, gamma, delta)
    }

    /// Distances in meters, `+∞` for far-field paths.
    pub fn distances(&self) -> Vec<f64> {
        self.inv_r.iter().map(|&u| if u == 0.0 { f64::INFINITY } else { 1.0 / u }).collect()
    }

    pub fn h_hat(&self) -> CVector {
        &self.w_tilde * &self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Theta,
    InvDistance,
    Gamma,
    Delta,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Theta => "theta",
            Block::InvDistance => "inv_r",
            Block::Gamma => "gamma",
            Block::Delta => "delta",
        }
    }
}

/// State after one block update.
#[derive(Debug, Clone, PartialEq)]
pub struct BcdTraceRow {
    pub user: usize,
    pub iteration: usize,
    pub block: Block,
    pub objective: f64,
    pub phi: f64,
    /// Accepted step size; `0` for a null step, `1` for closed-form blocks.
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct BcdRun {
    pub initial_objective: f64,
    pub state: RefinementState,
    pub trace: Vec<BcdTraceRow>,
}

/// Clamps `x` into `[lo, hi]` without pushing a coordinate that already lies
/// outside the box further out or back in by force.
fn box_projector(x0: &[f64], lo: f64, hi: f64) -> impl Fn(&mut [f64]) + '_ {
    move |x: &mut [f64]| {
        for (v, &start) in x.iter_mut().zip(x0) {
            *v = v.clamp(lo.min(start), hi.max(start));
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn relative_change(new: &CVector, old: &CVector) -> f64 {
    (new - old).norm() / old.norm().max(1e-300)
}

/// Runs the block coordinate descent from `init`.
///
/// With `record_trace`, one row is recorded per block update (user index 0;
/// callers relabel it).
pub fn run_bcd(
    geom: &ArrayGeometry,
    y_acute: &CMatrix,
    init: RefinementState,
    config: &BcdConfig,
    record_trace: bool,
) -> Result<BcdRun> {
    config.validate()?;
    let mut st = init;
    if y_acute.nrows() != st.w_tilde.nrows() || y_acute.ncols() != st.delta.len() {
        return Err(Error::DimensionMismatch("Ý shape".into()));
    }
    let initial_objective = st.objective;
    let eps2 = config.eps2_rel * y_acute.norm_squared();
    let armijo = config.armijo();
    let (u_lo, u_hi) = config.inv_distance_bounds(geom);
    let (a_lo, a_hi) = (-FRAC_PI_2 + ANGLE_MARGIN, FRAC_PI_2 - ANGLE_MARGIN);
    let mut trace = Vec::new();

    let mut sub = Subspace::new(st.w_tilde.clone())?;
    let mut phi = sub.phi(y_acute);

    for iteration in 1..=config.max_iters {
        if st.objective <= eps2 || (st.stationary && config.stop_when_stationary) {
            break;
        }
        let f_start = st.objective;
        let mut moved = false;

        for block in [Block::Theta, Block::InvDistance] {
            let is_theta = block == Block::Theta;
            let grad = if is_theta {
                sub.grad_theta(geom, y_acute, &st.theta, &st.inv_r)
            } else {
                sub.grad_inv_r(geom, y_acute, &st.theta, &st.inv_r)
            };
            let eta0 = config.eta0.unwrap_or(1.0 / (l2(&grad) + 1.0));
            let x0 = if is_theta { st.theta.clone() } else { st.inv_r.clone() };
            let f_cur = st.objective;
            let mut accepted: Option<(Subspace, f64)> = None;
            let result = {
                let (theta, inv_r, gamma, delta) = (&st.theta, &st.inv_r, &st.gamma, &st.delta);
                let eval = |x: &[f64]| {
                    let sub = if is_theta { Subspace::at(geom, x, inv_r) } else { Subspace::at(geom, theta, x) };
                    let Ok(sub) = sub else { return f64::INFINITY };
                    let f = objective_f(y_acute, &sub.w, gamma, delta);
                    if !(f <= f_cur) {
                        return f64::INFINITY;
                    }
                    let value = sub.phi(y_acute);
                    accepted = Some((sub, f));
                    value
                };
                let (lo, hi) = if is_theta { (a_lo, a_hi) } else { (u_lo, u_hi) };
                projected_backtracking_step(eval, &x0, phi, &grad, eta0, &armijo, box_projector(&x0, lo, hi))
            };
            if !result.is_null() && result.x != x0 {
                let (new_sub, f) = accepted.expect("accepted point was evaluated");
                if is_theta {
                    st.theta = result.x;
                } else {
                    st.inv_r = result.x;
                }
                st.w_tilde = new_sub.w.clone();
                st.objective = f;
                sub = new_sub;
                phi = result.value;
                moved = true;
            }
            if record_trace {
                trace.push(BcdTraceRow {
                    user: 0,
                    iteration,
                    block,
                    objective: st.objective,
                    phi,
                    step: result.eta,
                    backtracks: result.backtracks,
                });
            }
        }

        let gamma = update_gamma(y_acute, &sub.w_pinv, &st.delta)?;
        let f = objective_f(y_acute, &st.w_tilde, &gamma, &st.delta);
        let mut gamma_change = 0.0;
        if f <= st.objective {
            gamma_change = relative_change(&gamma, &st.gamma);
            st.gamma = gamma;
            st.objective = f;
        }
        if record_trace {
            trace.push(BcdTraceRow {
                user: 0,
                iteration,
                block: Block::Gamma,
                objective: st.objective,
                phi,
                step: 1.0,
                backtracks: 0,
            });
        }

        let delta = update_delta(y_acute, &st.w_tilde, &st.gamma)?;
        let f = objective_f(y_acute, &st.w_tilde, &st.gamma, &delta);
        let mut delta_change = 0.0;
        if f <= st.objective {
            delta_change = relative_change(&delta, &st.delta);
            st.delta = delta;
            st.objective = f;
        }
        if record_trace {
            trace.push(BcdTraceRow {
                user: 0,
                iteration,
                block: Block::Delta,
                objective: st.objective,
                phi,
                step: 1.0,
                backtracks: 0,
            });
        }

        st.iterations = iteration;
        st.stationary = !moved && gamma_change <= 1e-10 && delta_change <= 1e-10;
        if config.ftol > 0.0 && f_start - st.objective <= config.ftol * f_start {
            break;
        }
    }
    Ok(BcdRun { initial_objective, state: st, trace })
}

/// Converts a refined state into a channel estimate and a unit-norm augmented
/// data vector.
///
/// The pilot coefficient is re-estimated from the pilot column of `Y̆_k` by
/// projecting onto `ĥ = W̃γ̂`; the product `ĥ [p̂, δ̂ᵀ]` is then split so the
/// data vector has unit norm and its first entry has the pilot's phase.
pub fn finalize(state: &RefinementState, y_breve_k: &CMatrix, pilot: Complex64) -> Result<(CVector, CVector)> {
    let h = state.h_hat();
    let energy = h.norm_squared();
    if energy.sqrt() <= 1e-12 {
        return Err(Error::DegenerateChannel);
    }
    let p_hat = h.dotc(&y_breve_k.column(0)) / Complex64::new(energy, 0.0);
    if p_hat.norm() < 1e-12 {
        return Err(Error::ZeroPilotEstimate);
    }
    let mut a = CVector::zeros(state.delta.len() + 1);
    a[0] = p_hat;
    a.rows_mut(1, state.delta.len()).copy_from(&state.delta);
    let scale = a.norm();
    let rot = Complex64::from_polar(1.0, (pilot / p_hat).arg());
    let h_hat = h * (Complex64::new(scale, 0.0) / rot);
    let dbar_hat = a * (rot / Complex64::new(scale, 0.0));
    Ok((h_hat, dbar_hat))
}

#[derive(Debug, Clone)]
pub struct RefinedUser {
    pub h_hat: CVector,
    pub dbar_hat: CVector,
    pub run: BcdRun,
}

/// Initialises from B-OMP, refines, and finalises one user.
pub fn refine_user(
    geom: &ArrayGeometry,
    dict: &PolarDictionary,
    y_breve_k: &CMatrix,
    estimate: &UserEstimate,
    pilot: Complex64,
    config: &BcdConfig,
    record_trace: bool,
) -> Result<RefinedUser> {
    if y_breve_k.ncols() < 2 {
        return Err(Error::DimensionMismatch("Y̆_k needs a pilot and a data column".into()));
    }
    let y_acute = y_breve_k.columns(1, y_breve_k.ncols() - 1).into_owned();
    let init = RefinementState::from_estimate(geom, dict, &y_acute, estimate)?;
    let run = run_bcd(geom, &y_acute, init, config, record_trace)?;
    let (h_hat, dbar_hat) = finalize(&run.state, y_breve_k, pilot)?;
    Ok(RefinedUser { h_hat, dbar_hat, run })
}

/// Writes BCD trace rows as CSV.
pub fn write_trace_csv<W: Write>(rows: &[BcdTraceRow], mut out: W) -> Result<()> {
    writeln!(out, "user,iteration,block,objective,phi,step,backtracks")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.10e},{:.10e},{:.10e},{}",
            r.user,
            r.iteration,
            r.block.name(),
            r.objective,
            r.phi,
            r.step,
            r.backtracks
        )?;
    }
    Ok(())
}
