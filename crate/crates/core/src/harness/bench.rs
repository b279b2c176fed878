use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bomp::{run_bomp, BompStopRule};
use crate::error::{Error, Result};
use crate::geometry::{
    build_polar_dictionary, sample_user_channel, ArrayGeometry, ChannelSampling, DictionarySpec,
};
use crate::numkernel::{random_cn_matrix, sample_cn, CVector};
use crate::refine::{run_bcd, BcdConfig, RefinementState};
use crate::waveform::{generate_precoders, make_augmented_data, synthesize_frame, FrameConfig, Qam, NOMINAL_PILOT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    /// Array size for the B-OMP sweep over `Q = N·V`.
    pub bomp_antennas: usize,
    pub samples_per_angle: Vec<usize>,
    /// Array sizes for the BCD sweep.
    pub bcd_antennas: Vec<usize>,
    /// Fixed BCD iteration count per timed run.
    pub bcd_iters: usize,
    pub n_paths: usize,
    pub n_data: usize,
    /// Each timing repeats the call until at least this much time elapsed.
    pub min_batch_seconds: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            bomp_antennas: 32,
            samples_per_angle: vec![8, 16, 32, 64],
            bcd_antennas: vec![32, 64, 128, 256],
            bcd_iters: 10,
            n_paths: 3,
            n_data: 8,
            min_batch_seconds: 0.05,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub size: usize,
    /// Fastest per-call time over the repeats.
    pub seconds: f64,
    /// `(max − min)/min` over the repeats; reported only.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub bomp: Vec<Timing>,
    pub bomp_slope: f64,
    pub bcd: Vec<Timing>,
    pub bcd_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn time_call<F: FnMut()>(mut f: F, min_seconds: f64, repeats: usize) -> (f64, f64) {
    f();
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut calls = 0u64;
        while calls == 0 || start.elapsed().as_secs_f64() < min_seconds {
            f();
            calls += 1;
        }
        samples.push(start.elapsed().as_secs_f64() / calls as f64);
    }
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(0.0, f64::max);
    (min, (max - min) / min)
}

/// Times B-OMP against the dictionary size and BCD against the array size.
pub fn scaling_benchmark(config: &ScalingConfig) -> Result<ScalingReport> {
    if config.samples_per_angle.len() < 3 || config.bcd_antennas.len() < 3 {
        return Err(Error::InvalidConfig("need at least 3 sizes per swept dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let geom = ArrayGeometry::half_wavelength(config.bomp_antennas, 0.003)?;
    let cfg = FrameConfig {
        n_users: 2,
        coherence_len: 64.max(2 * (config.n_data + 1)),
        n_data: config.n_data,
        mod_order: 16,
        snr: 1.0,
        noise_var: 1.0,
    };
    let qam = Qam::new(16)?;
    let sampling = ChannelSampling::default_for(&geom);
    let channels = (0..2).map(|_| sample_user_channel(&geom, config.n_paths, &sampling, &mut rng)).collect();
    let data = (0..2).map(|_| make_augmented_data(&mut rng, &cfg, &qam)).collect();
    let precoders = generate_precoders(&mut rng, &cfg)?;
    let frame = synthesize_frame(channels, data, precoders, &cfg, Some(&mut rng))?;
    let mut bomp = Vec::new();
    for &v in &config.samples_per_angle {
        let spec = DictionarySpec { samples_per_angle: v, ..DictionarySpec::default_for(&geom) };
        let dict = build_polar_dictionary(&geom, &spec)?;
        let stop = BompStopRule::KnownPaths(config.n_paths);
        run_bomp(&frame.received, &dict, &frame.precoders, stop, &[NOMINAL_PILOT; 2], false)?;
        let (seconds, spread) = time_call(
            || {
                let _ = run_bomp(&frame.received, &dict, &frame.precoders, stop, &[NOMINAL_PILOT; 2], false);
            },
            config.min_batch_seconds,
            config.repeats,
        );
        bomp.push(Timing { size: dict.n_atoms(), seconds, spread });
    }

    let bcd_config = BcdConfig {
        max_iters: config.bcd_iters,
        eps2_rel: 0.0,
        stop_when_stationary: false,
        ftol: 0.0,
        ..BcdConfig::default()
    };
    let mut bcd = Vec::new();
    for &n in &config.bcd_antennas {
        let geom = ArrayGeometry::half_wavelength(n, 0.003)?;
        let r = geom.fraunhofer_distance();
        let l = config.n_paths;
        let thetas: Vec<f64> = (0..l).map(|_| rng.random_range(-0.7..0.7)).collect();
        let inv_r: Vec<f64> = (0..l).map(|_| 1.0 / rng.random_range(r / 20.0..r / 2.0)).collect();
        let gamma = CVector::from_fn(l, |_, _| sample_cn(&mut rng, 1.0));
        let delta = CVector::from_fn(config.n_data, |_, _| sample_cn(&mut rng, 1.0));
        let y = geom.steering_matrix(&thetas, &inv_r) * &gamma * delta.transpose()
            + random_cn_matrix(&mut rng, n, config.n_data, 0.1);
        let start_theta: Vec<f64> = thetas.iter().map(|t| t + 0.3 / n as f64).collect();
        let start_inv: Vec<f64> = inv_r.iter().map(|u| u * 1.1).collect();
        let init = RefinementState::new(&geom, &y, start_theta, start_inv, gamma, delta)?;
        let (seconds, spread) = time_call(
            || {
                let _ = run_bcd(&geom, &y, init.clone(), &bcd_config, false);
            },
            config.min_batch_seconds,
            config.repeats,
        );
        bcd.push(Timing { size: n, seconds, spread });
    }

    let slope = |t: &[Timing]| loglog_slope(&t.iter().map(|p| (p.size as f64, p.seconds)).collect::<Vec<_>>());
    Ok(ScalingReport { bomp_slope: slope(&bomp), bcd_slope: slope(&bcd), bomp, bcd })
}

/// `benchmark,size,seconds,spread` rows followed by the two fitted slopes.
pub fn write_scaling_csv<W: Write>(report: &ScalingReport, mut out: W) -> Result<()> {
    writeln!(out, "benchmark,size,seconds,spread")?;
    for (name, rows) in [("bomp_vs_q", &report.bomp), ("bcd_vs_n", &report.bcd)] {
        for t in rows {
            writeln!(out, "{name},{},{:.9e},{:.9e}", t.size, t.seconds, t.spread)?;
        }
    }
    writeln!(out, "bomp_vs_q_slope,,{:.9e},", report.bomp_slope)?;
    writeln!(out, "bcd_vs_n_slope,,{:.9e},", report.bcd_slope)?;
    Ok(())
}
