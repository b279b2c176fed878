use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{omp_channel_estimate, pilot_ls_observation, synthesize_baseline_frame, zf_detect, BaselineFrame};
use crate::bomp::{run_bomp, BompOutput, BompTraceRow};
use crate::error::{Error, Result};
use crate::geometry::{sample_on_grid_channel, sample_user_channel, ArrayGeometry, PolarDictionary, UserChannel};
use crate::numkernel::{CMatrix, CVector};
use crate::refine::{refine_user, BcdTraceRow};
use crate::waveform::{
    effective_received, generate_precoders, make_augmented_data, rescale_by_pilot, synthesize_frame, AugmentedData,
    Frame, Qam,
};

use super::config::{ExperimentConfig, Scheme, SweepPoint};
use super::output::{ResultRow, ResultTable};

/// Accumulated outcome of one scheme over one or more trials.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemeTally {
    pub symbol_errors: u64,
    pub symbols_total: u64,
    pub nmse_num: f64,
    pub nmse_den: f64,
    /// Sums for the ratio-estimator standard error of the NMSE.
    pub nmse_num_sq: f64,
    pub nmse_den_sq: f64,
    pub nmse_cross: f64,
    pub trials: u64,
    /// Trials in which the scheme raised an error.
    pub flagged: u64,
    pub wall_time_s: f64,
}

impl SchemeTally {
    fn single(errors: usize, total: usize, num: f64, den: f64, flagged: bool, seconds: f64) -> Self {
        Self {
            symbol_errors: errors as u64,
            symbols_total: total as u64,
            nmse_num: num,
            nmse_den: den,
            nmse_num_sq: num * num,
            nmse_den_sq: den * den,
            nmse_cross: num * den,
            trials: 1,
            flagged: flagged as u64,
            wall_time_s: seconds,
        }
    }

    pub fn merge(&mut self, other: &SchemeTally) {
        self.symbol_errors += other.symbol_errors;
        self.symbols_total += other.symbols_total;
        self.nmse_num += other.nmse_num;
        self.nmse_den += other.nmse_den;
        self.nmse_num_sq += other.nmse_num_sq;
        self.nmse_den_sq += other.nmse_den_sq;
        self.nmse_cross += other.nmse_cross;
        self.trials += other.trials;
        self.flagged += other.flagged;
        self.wall_time_s += other.wall_time_s;
    }
}

/// Symbol error rate: errors over data symbols, pilots excluded.
pub fn ser(t: &SchemeTally) -> f64 {
    if t.symbols_total == 0 {
        return f64::NAN;
    }
    t.symbol_errors as f64 / t.symbols_total as f64
}

/// `Σ‖ĥ − h‖² / Σ‖h‖²` over users and trials.
pub fn nmse(t: &SchemeTally) -> f64 {
    if t.nmse_den <= 0.0 {
        return f64::NAN;
    }
    t.nmse_num / t.nmse_den
}

/// Binomial standard error `√(p(1−p)/n)`.
pub fn ser_stderr(t: &SchemeTally) -> f64 {
    let p = ser(t);
    (p * (1.0 - p) / t.symbols_total as f64).sqrt()
}

/// Ratio-estimator standard error of the pooled NMSE across trials.
pub fn nmse_stderr(t: &SchemeTally) -> f64 {
    let n = t.trials as f64;
    if t.trials < 2 || t.nmse_den <= 0.0 {
        return f64::NAN;
    }
    let r = nmse(t);
    let ss = (t.nmse_num_sq - 2.0 * r * t.nmse_cross + r * r * t.nmse_den_sq).max(0.0);
    (n / (n - 1.0) * ss).sqrt() / t.nmse_den
}

/// Random draws of one trial: channels, data, the blind frame (absent when
/// the dimensions violate separability) and the paired baseline frame.
#[derive(Debug, Clone)]
pub struct TrialDraw {
    pub channels: Vec<UserChannel>,
    pub data: Vec<AugmentedData>,
    pub frame: Option<Frame>,
    pub baseline: BaselineFrame,
}

/// Shared, read-only experiment state.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub geom: ArrayGeometry,
    pub dict: PolarDictionary,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let geom = config.array_geometry()?;
        let dict = crate::geometry::build_polar_dictionary(&geom, &config.dictionary_spec(&geom))?;
        Ok(Self { config: config.clone(), geom, dict })
    }

    /// The trial's random stream: the master seed with the trial index as
    /// stream number, identical at every grid point.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(trial);
        rng
    }

    /// Draws channels, data, precoders and noise for one trial. The order of
    /// draws does not depend on which schemes are enabled.
    pub fn draw(&self, point: &SweepPoint, trial: u64) -> Result<TrialDraw> {
        let setup = self.config.setup(point);
        let cfg = setup.frame;
        let qam = Qam::new(cfg.mod_order)?;
        let mut rng = self.trial_rng(trial);
        let ch = &self.config.channel;
        let mut channels = Vec::with_capacity(cfg.n_users);
        for _ in 0..cfg.n_users {
            let c = if ch.on_grid {
                sample_on_grid_channel(&self.geom, &self.dict, setup.n_paths, ch.angle_range, true, &mut rng)?.0
            } else {
                sample_user_channel(&self.geom, setup.n_paths, &self.config.channel_sampling(&self.geom), &mut rng)
            };
            channels.push(c);
        }
        let data: Vec<_> = (0..cfg.n_users).map(|_| make_augmented_data(&mut rng, &cfg, &qam)).collect();
        let noiseless = self.config.frame.noiseless;
        let symbols: Vec<Vec<Complex64>> = data.iter().map(|d| d.data.clone()).collect();
        let frame = if cfg.coherence_len >= cfg.n_users * cfg.cols_per_user() {
            let precoders = generate_precoders(&mut rng, &cfg)?;
            let noise = (!noiseless).then_some(&mut rng);
            Some(synthesize_frame(channels.clone(), data.clone(), precoders, &cfg, noise)?)
        } else {
            None
        };
        let tau = cfg.coherence_len.saturating_sub(cfg.n_data).max(cfg.n_users);
        let baseline = synthesize_baseline_frame(
            &channels,
            &symbols,
            tau,
            cfg.snr,
            cfg.noise_var,
            (!noiseless).then_some(&mut rng),
        )?;
        Ok(TrialDraw { channels, data, frame, baseline })
    }

    /// Runs every enabled scheme on one trial; tallies follow the order of
    /// `config.schemes`.
    pub fn run_trial(&self, point: &SweepPoint, trial: u64) -> Result<Vec<SchemeTally>> {
        Ok(self.run_trial_traced(point, trial, false)?.0)
    }

    pub fn run_trial_traced(
        &self,
        point: &SweepPoint,
        trial: u64,
        trace: bool,
    ) -> Result<(Vec<SchemeTally>, TrialTrace)> {
        let draw = self.draw(point, trial)?;
        let setup = self.config.setup(point);
        let cfg = setup.frame;
        let qam = Qam::new(cfg.mod_order)?;
        let pilots: Vec<Complex64> = draw.data.iter().map(|d| d.pilot).collect();
        let true_h: Vec<&CVector> = draw.channels.iter().map(|c| &c.h).collect();
        let energy: f64 = true_h.iter().map(|h| h.norm_squared()).sum();
        let total = cfg.n_users * cfg.n_data;
        let amp = cfg.snr.sqrt();
        let timed = self.config.record_wall_time;
        let mut traces = TrialTrace::default();

        let score = |estimates: &[(CVector, Vec<usize>)]| -> (usize, f64) {
            let mut errors = 0;
            let mut num = 0.0;
            for (k, (h_hat, detected)) in estimates.iter().enumerate() {
                errors += detected.iter().zip(&draw.data[k].indices).filter(|(a, b)| a != b).count();
                num += (h_hat - true_h[k]).norm_squared();
            }
            (errors, num)
        };
        let failed = |seconds: f64| SchemeTally::single(total, total, energy, energy, true, seconds);

        let blind_frame = draw
            .frame
            .as_ref()
            .ok_or(Error::SeparabilityViolated { coherence_len: cfg.coherence_len, required: cfg.n_users * cfg.cols_per_user() });
        let mut bomp_result: Option<(Result<BompOutput>, f64)> = None;
        let mut run_blind = |traces: &mut TrialTrace| -> (Result<BompOutput>, f64) {
            if let Some((r, t)) = &bomp_result {
                return (r.clone(), *t);
            }
            let start = Instant::now();
            let stop = self.config.stop_rule(self.dict.n_atoms(), setup.n_paths);
            let r = blind_frame
                .clone()
                .and_then(|f| run_bomp(&f.received, &self.dict, &f.precoders, stop, &pilots, trace));
            let t = if timed { start.elapsed().as_secs_f64() } else { 0.0 };
            if let Ok(out) = &r {
                traces.bomp = out.trace.clone();
            }
            bomp_result = Some((r.clone(), t));
            (r, t)
        };

        let mut tallies = Vec::with_capacity(self.config.schemes.len());
        for &scheme in &self.config.schemes {
            let tally = match scheme {
                Scheme::Bomp => {
                    let (r, t) = run_blind(&mut traces);
                    let est = r.and_then(|out| {
                        out.users
                            .iter()
                            .zip(&pilots)
                            .map(|(u, &pilot)| {
                                let symbols = rescale_by_pilot(&u.dbar_hat, pilot)?;
                                Ok((&u.h_hat / Complex64::new(amp, 0.0), qam.demodulate(&symbols)))
                            })
                            .collect::<Result<Vec<_>>>()
                    });
                    match est {
                        Ok(e) => {
                            let (errors, num) = score(&e);
                            SchemeTally::single(errors, total, num, energy, false, t)
                        }
                        Err(_) => failed(t),
                    }
                }
                Scheme::BompBcd => {
                    let (r, t0) = run_blind(&mut traces);
                    let start = Instant::now();
                    let est = r.and_then(|out| {
                        let f = blind_frame.clone()?;
                        let y_breve = effective_received(&f.received, &f.precoders)?;
                        let mut est = Vec::with_capacity(out.users.len());
                        for (k, u) in out.users.iter().enumerate() {
                            let refined =
                                refine_user(&self.geom, &self.dict, &y_breve[k], u, pilots[k], &self.config.bcd, trace)?;
                            if trace {
                                traces.bcd.extend(refined.run.trace.iter().cloned().map(|mut row| {
                                    row.user = k;
                                    row
                                }));
                            }
                            let symbols = rescale_by_pilot(&refined.dbar_hat, pilots[k])?;
                            est.push((refined.h_hat / Complex64::new(amp, 0.0), qam.demodulate(&symbols)));
                        }
                        Ok(est)
                    });
                    let t = if timed { t0 + start.elapsed().as_secs_f64() } else { 0.0 };
                    match est {
                        Ok(e) => {
                            let (errors, num) = score(&e);
                            SchemeTally::single(errors, total, num, energy, false, t)
                        }
                        Err(_) => failed(t),
                    }
                }
                Scheme::OmpZf => {
                    let start = Instant::now();
                    let est = self.run_baseline(&draw.baseline, cfg.snr, setup.n_paths, &qam);
                    let t = if timed { start.elapsed().as_secs_f64() } else { 0.0 };
                    match est {
                        Ok(e) => {
                            let (errors, num) = score(&e);
                            SchemeTally::single(errors, total, num, energy, false, t)
                        }
                        Err(_) => failed(t),
                    }
                }
            };
            tallies.push(tally);
        }
        Ok((tallies, traces))
    }

    fn run_baseline(
        &self,
        frame: &BaselineFrame,
        snr: f64,
        n_paths: usize,
        qam: &Qam,
    ) -> Result<Vec<(CVector, Vec<usize>)>> {
        let observations = pilot_ls_observation(&frame.y_pilot, &frame.pilots, snr)?;
        let l = self.config.baseline.n_paths_assumed.unwrap_or(n_paths);
        let h_hats = observations
            .iter()
            .map(|y| omp_channel_estimate(y, &self.dict, l).map(|(h, _)| h))
            .collect::<Result<Vec<_>>>()?;
        let h_matrix = CMatrix::from_columns(&h_hats);
        let (_, detected) = zf_detect(&frame.y_data, &h_matrix, snr, qam)?;
        Ok(h_hats.into_iter().zip(detected).collect())
    }
}

/// Diagnostic traces collected while replaying one trial.
#[derive(Debug, Clone, Default)]
pub struct TrialTrace {
    pub bomp: Vec<BompTraceRow>,
    pub bcd: Vec<BcdTraceRow>,
}

/// Runs the configured experiment on the current rayon pool.
///
/// Trials are evaluated in parallel and merged in trial order, so the result
/// does not depend on the number of worker threads.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    let prepared = Prepared::new(config)?;
    let mut rows = Vec::new();
    for point in config.grid() {
        let per_trial: Vec<Vec<SchemeTally>> = (0..config.trials as u64)
            .into_par_iter()
            .map(|t| prepared.run_trial(&point, t))
            .collect::<Result<_>>()?;
        let mut totals = vec![SchemeTally::default(); config.schemes.len()];
        for trial in &per_trial {
            for (acc, t) in totals.iter_mut().zip(trial) {
                acc.merge(t);
            }
        }
        for (&scheme, tally) in config.schemes.iter().zip(totals) {
            rows.push(ResultRow { point, scheme, tally });
        }
    }
    Ok(ResultTable { sweep_parameter: config.sweep.as_ref().map(|s| s.parameter), rows })
}

/// Runs the experiment on a dedicated pool with the given worker count.
pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ResultTable> {
    thread_pool(threads)?.install(|| run_experiment(config))
}

/// A rayon pool with `threads` workers (at least one).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}
