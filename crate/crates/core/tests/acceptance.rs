//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xlmimo::bomp::{run_bomp, BompStopRule};
use xlmimo::geometry::{
    build_polar_dictionary, sample_on_grid_channel, sample_user_channel, ChannelSampling, DictionarySpec,
};
use xlmimo::harness::{
    emit_csv, nmse, nmse_stderr, run_experiment, run_experiment_with_threads, scaling_benchmark, ser, ser_stderr,
    ResultRow, ScalingConfig, Sweep, SweepParam,
};
use xlmimo::numkernel::{random_cn_matrix, sample_cn};
use xlmimo::refine::{grad_phi_inv_r, grad_phi_theta, reduced_objective, run_bcd};
use xlmimo::waveform::{generate_precoders, make_augmented_data, rescale_by_pilot, synthesize_frame};
use xlmimo::{
    ArrayGeometry, BcdConfig, CMatrix, CVector, Complex64, ExperimentConfig, FrameConfig, Qam, RefinementState,
    Scheme,
};

const WAVELENGTH: f64 = 0.003;

type Outcome = (bool, String);

fn geom(n: usize) -> ArrayGeometry {
    ArrayGeometry::half_wavelength(n, WAVELENGTH).unwrap()
}

fn fraunhofer_constant() -> Outcome {
    let r = geom(256).fraunhofer_distance();
    let ok = (r - 98.304).abs() <= 1e-9 * 98.304 && format!("{r:.1}") == "98.3";
    (ok, format!("R = {r:.6} m"))
}

fn channel_power() -> Outcome {
    let g = geom(32);
    let sampling = ChannelSampling::default_for(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 10_000;
    let mean = (0..draws).map(|_| sample_user_channel(&g, 6, &sampling, &mut rng).h.norm_squared()).sum::<f64>()
        / draws as f64;
    let rel = (mean - 32.0).abs() / 32.0;
    (rel <= 0.03, format!("E‖h‖² = {mean:.3} vs N = 32, relative deviation {rel:.4} (limit 0.03)"))
}

fn exact_recovery() -> Outcome {
    let g = geom(32);
    let dict = build_polar_dictionary(&g, &DictionarySpec { samples_per_angle: 6, ..DictionarySpec::default_for(&g) })
        .unwrap();
    let qam = Qam::new(16).unwrap();
    let cfg = FrameConfig { n_users: 2, coherence_len: 64, n_data: 8, mod_order: 16, snr: 1.0, noise_var: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..100 {
        let l = 1 + i % 3;
        let mut channels = Vec::new();
        let mut supports = Vec::new();
        for _ in 0..2 {
            let (ch, s) = sample_on_grid_channel(&g, &dict, l, (-PI / 4.0, PI / 4.0), true, &mut rng).unwrap();
            channels.push(ch);
            supports.push(s);
        }
        let data: Vec<_> = (0..2).map(|_| make_augmented_data(&mut rng, &cfg, &qam)).collect();
        let precoders = generate_precoders(&mut rng, &cfg).unwrap();
        let frame = synthesize_frame(channels.clone(), data.clone(), precoders, &cfg, None::<&mut ChaCha8Rng>).unwrap();
        let pilots: Vec<Complex64> = data.iter().map(|d| d.pilot).collect();
        let out = run_bomp(&frame.received, &dict, &frame.precoders, BompStopRule::KnownPaths(l), &pilots, false)
            .unwrap();
        for k in 0..2 {
            let u = &out.users[k];
            let mut got = u.support.clone();
            let mut want = supports[k].clone();
            got.sort_unstable();
            want.sort_unstable();
            // Polar-domain truth: gains scaled by 1/√L on the drawn atoms.
            let mut g_true = CVector::zeros(dict.n_atoms());
            for (p, &q) in channels[k].paths.iter().zip(&supports[k]) {
                g_true[q] = p.gain / (l as f64).sqrt();
            }
            let xi = &g_true * data[k].dbar.transpose();
            let err = (&u.g_hat * u.dbar_hat.transpose() - &xi).norm() / xi.norm();
            worst = worst.max(err);
            let symbols = rescale_by_pilot(&u.dbar_hat, pilots[k]).unwrap();
            let errors = qam.demodulate(&symbols).iter().zip(&data[k].indices).filter(|(a, b)| a != b).count();
            if got != want || err > 1e-8 || errors > 0 {
                failures += 1;
            }
        }
    }
    (failures == 0, format!("100 instances, {failures} user failures, worst ‖ĝd̂ᵀ − Ξ‖/‖Ξ‖ = {worst:.2e} (limit 1e-8)"))
}

fn random_instance(g: &ArrayGeometry, l: usize, s: usize, rng: &mut ChaCha8Rng) -> (CMatrix, Vec<f64>, Vec<f64>) {
    let r = g.fraunhofer_distance();
    let n = g.n_antennas();
    let t: Vec<f64> = (0..l).map(|_| rng.random_range(-PI / 3.0..PI / 3.0)).collect();
    let u: Vec<f64> = (0..l).map(|_| 1.0 / rng.random_range(r / 20.0..r)).collect();
    let gamma = CVector::from_fn(l, |_, _| sample_cn(rng, 1.0));
    let delta = CVector::from_fn(s, |_, _| sample_cn(rng, 1.0));
    let y = g.steering_matrix(&t, &u) * gamma * delta.transpose() + random_cn_matrix(rng, n, s, 0.1);
    // Evaluate away from the generating parameters.
    let t0 = t.iter().map(|v| v + rng.random_range(-0.02..0.02)).collect();
    let u0 = u.iter().map(|v| v * rng.random_range(0.9..1.1)).collect();
    (y, t0, u0)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let instances = 120;
    for i in 0..instances {
        let n = [16, 32, 64][i % 3];
        let g = geom(n);
        let l = 1 + i % 4;
        let (y, t, u) = random_instance(&g, l, 6, &mut rng);
        let phi = |t: &[f64], u: &[f64]| reduced_objective(&g, &y, t, u).unwrap();
        let gt = grad_phi_theta(&g, &y, &t, &u).unwrap();
        let gu = grad_phi_inv_r(&g, &y, &t, &u).unwrap();
        let scale = 1e-3 * y.norm_squared();
        for j in 0..l {
            let h = 1e-6;
            let (mut tp, mut tm) = (t.clone(), t.clone());
            tp[j] += h;
            tm[j] -= h;
            let fd = (phi(&tp, &u) - phi(&tm, &u)) / (2.0 * h);
            worst = worst.max((gt[j] - fd).abs() / fd.abs().max(scale));
            let h = 1e-6 * u[j].max(1.0 / g.fraunhofer_distance());
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += h;
            um[j] -= h;
            let fd = (phi(&t, &up) - phi(&t, &um)) / (2.0 * h);
            worst = worst.max((gu[j] - fd).abs() / fd.abs().max(scale));
        }
    }
    (worst <= 1e-5, format!("{instances} instances, worst relative error {worst:.2e} (limit 1e-5)"))
}

fn ls_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let n = [16, 32][i % 2];
        let g = geom(n);
        let l = 1 + i % 3;
        let (y, t, u) = random_instance(&g, l, 5 + i % 4, &mut rng);
        let w = g.steering_matrix(&t, &u);
        // Least squares through an SVD solve, independent of the library's pseudoinverse.
        let x = w.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        let f_ls = (&y - &w * x).norm_squared();
        let phi = reduced_objective(&g, &y, &t, &u).unwrap();
        worst = worst.max((y.norm_squared() + phi - f_ls).abs() / f_ls.max(1e-300));
    }
    (worst <= 1e-8, format!("50 instances, worst relative gap {worst:.2e} (limit 1e-8)"))
}

fn bcd_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = geom(32);
    let n = g.n_antennas() as f64;
    let config = BcdConfig::default();
    let mut increases = 0;
    let mut worst_rise = f64::NEG_INFINITY;
    for i in 0..50 {
        let l = 1 + i % 3;
        let (y, t, u) = random_instance(&g, l, 8, &mut rng);
        let gamma = CVector::from_fn(l, |_, _| sample_cn(&mut rng, 1.0));
        let delta = CVector::from_fn(8, |_, _| sample_cn(&mut rng, 1.0));
        let init = RefinementState::new(&g, &y, t, u, gamma, delta).unwrap();
        let run = run_bcd(&g, &y, init, &config, true).unwrap();
        let mut prev = run.initial_objective;
        for row in &run.trace {
            worst_rise = worst_rise.max(row.objective - prev);
            if row.objective > prev + 1e-12 {
                increases += 1;
            }
            prev = row.objective;
        }
    }

    let mut off_grid_failures = 0;
    let r = g.fraunhofer_distance();
    let off_grid = 20;
    for _ in 0..off_grid {
        let theta = rng.random_range(-0.6..0.6f64);
        let u = 1.0 / rng.random_range(r / 20.0..r / 2.0);
        let gamma = CVector::from_element(1, sample_cn(&mut rng, 1.0));
        let delta = CVector::from_fn(8, |_, _| sample_cn(&mut rng, 1.0));
        let y = g.steering_vector_inv(theta, u) * &gamma * delta.transpose() + random_cn_matrix(&mut rng, 32, 8, 0.01);
        // Grid cells are 2/N wide in sin θ.
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let theta0 = (theta.sin() + sign * 0.3 * 2.0 / n).asin();
        let init = RefinementState::new(&g, &y, vec![theta0], vec![u], gamma, delta).unwrap();
        let run = run_bcd(&g, &y, init.clone(), &config, false).unwrap();
        let better_f = run.state.objective < init.objective;
        let better_angle = (run.state.theta[0] - theta).abs() < (theta0 - theta).abs();
        if !(better_f && better_angle) {
            off_grid_failures += 1;
        }
    }
    (
        increases == 0 && off_grid_failures == 0,
        format!(
            "50 noisy instances, {increases} block increases (largest change {worst_rise:.2e}, limit 1e-12); \
             {off_grid_failures}/{off_grid} off-grid failures"
        ),
    )
}

fn paired_se(a: &ResultRow, b: &ResultRow, f: fn(&xlmimo::harness::SchemeTally) -> f64) -> f64 {
    (f(&a.tally).powi(2) + f(&b.tally).powi(2)).sqrt()
}

fn desk_config(snr_db: Vec<f64>, trials: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig { snr_db, trials, seed, ..ExperimentConfig::default() }
}

fn ser_vs_snr(table: &xlmimo::ResultTable) -> Outcome {
    let mut notes = Vec::new();
    for scheme in Scheme::ALL {
        let rows = table.rows_for(scheme);
        for w in rows.windows(2) {
            if ser(&w[1].tally) > ser(&w[0].tally) + 2.0 * paired_se(w[0], w[1], ser_stderr) {
                notes.push(format!("{} rises at {} dB", scheme.name(), w[1].point.snr_db));
            }
        }
    }
    let (b, r, z) = (table.rows_for(Scheme::Bomp), table.rows_for(Scheme::BompBcd), table.rows_for(Scheme::OmpZf));
    for i in 0..b.len() {
        if ser(&r[i].tally) > ser(&b[i].tally) + 2.0 * paired_se(r[i], b[i], ser_stderr) {
            notes.push(format!("bcd worse than bomp at {} dB", b[i].point.snr_db));
        }
        if b[i].point.snr_db <= -5.0 && ser(&b[i].tally) >= ser(&z[i].tally) {
            notes.push(format!("bomp not below omp+zf at {} dB", b[i].point.snr_db));
        }
    }
    let summary: Vec<String> = b
        .iter()
        .zip(&r)
        .zip(&z)
        .map(|((b, r), z)| {
            format!("{}dB {:.4}/{:.4}/{:.4}", b.point.snr_db, ser(&b.tally), ser(&r.tally), ser(&z.tally))
        })
        .collect();
    let ok = notes.is_empty();
    notes.insert(0, format!("SER bomp/bomp+bcd/omp+zf: {}", summary.join(", ")));
    (ok, notes.join("; "))
}

fn ser_vs_s() -> Outcome {
    let config = ExperimentConfig {
        snr_db: vec![0.0],
        sweep: Some(Sweep { parameter: SweepParam::NData, values: vec![2, 4, 8, 16, 24, 31] }),
        trials: 500,
        seed: 8,
        ..ExperimentConfig::default()
    };
    let table = run_experiment(&config).unwrap();
    let mut notes = Vec::new();
    for scheme in [Scheme::Bomp, Scheme::BompBcd] {
        let rows = table.rows_for(scheme);
        for w in rows.windows(2) {
            if ser(&w[1].tally) < ser(&w[0].tally) - 2.0 * paired_se(w[0], w[1], ser_stderr) {
                notes.push(format!("{} drops at S = {}", scheme.name(), w[1].point.sweep_value.unwrap()));
            }
        }
    }
    let z: Vec<f64> = table.rows_for(Scheme::OmpZf).iter().map(|r| ser(&r.tally)).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let spread = (z.iter().cloned().fold(f64::MIN, f64::max) - z.iter().cloned().fold(f64::MAX, f64::min)) / mean;
    if spread > 0.3 {
        notes.push(format!("omp+zf spread {spread:.3} exceeds 0.3"));
    }
    let fmt = |s: Scheme| {
        table.rows_for(s).iter().map(|r| format!("{:.4}", ser(&r.tally))).collect::<Vec<_>>().join(" ")
    };
    let ok = notes.is_empty();
    notes.insert(
        0,
        format!(
            "S = 2..31 at T = 64, 0 dB: bomp [{}], bomp+bcd [{}], omp+zf [{}] spread {spread:.3} (limit 0.3)",
            fmt(Scheme::Bomp),
            fmt(Scheme::BompBcd),
            fmt(Scheme::OmpZf)
        ),
    );
    (ok, notes.join("; "))
}

fn nmse_ordering(table: &xlmimo::ResultTable) -> Outcome {
    let mut notes = Vec::new();
    let keep = |rows: Vec<&ResultRow>| -> Vec<ResultRow> {
        rows.into_iter().filter(|r| r.point.snr_db >= 0.0).cloned().collect()
    };
    for scheme in Scheme::ALL {
        let rows = keep(table.rows_for(scheme));
        for w in rows.windows(2) {
            if nmse(&w[1].tally) > nmse(&w[0].tally) + 2.0 * paired_se(&w[0], &w[1], nmse_stderr) {
                notes.push(format!("{} NMSE rises at {} dB", scheme.name(), w[1].point.snr_db));
            }
        }
    }
    let (b, r) = (keep(table.rows_for(Scheme::Bomp)), keep(table.rows_for(Scheme::BompBcd)));
    for (b, r) in b.iter().zip(&r) {
        if nmse(&r.tally) > nmse(&b.tally) {
            notes.push(format!("bomp+bcd NMSE above bomp at {} dB", b.point.snr_db));
        }
    }
    let summary: Vec<String> = Scheme::ALL
        .iter()
        .map(|&s| {
            let v: Vec<String> = keep(table.rows_for(s)).iter().map(|r| format!("{:.4}", nmse(&r.tally))).collect();
            format!("{} [{}]", s.name(), v.join(" "))
        })
        .collect();
    let ok = notes.is_empty();
    notes.insert(0, format!("NMSE at 0/5/10 dB: {}", summary.join(", ")));
    (ok, notes.join("; "))
}

fn complexity() -> Outcome {
    let report = scaling_benchmark(&ScalingConfig::default()).unwrap();
    let ok = (0.7..=1.4).contains(&report.bomp_slope) && (1.5..=2.5).contains(&report.bcd_slope);
    (
        ok,
        format!(
            "B-OMP vs Q slope {:.3} (range [0.7, 1.4]), BCD vs N slope {:.3} (range [1.5, 2.5])",
            report.bomp_slope, report.bcd_slope
        ),
    )
}

fn determinism() -> Outcome {
    let config = desk_config(vec![-5.0, 5.0], 24, 11);
    let csv = |threads| {
        let table = run_experiment_with_threads(&config, threads).unwrap();
        let mut buf = Vec::new();
        emit_csv(&table, &mut buf).unwrap();
        buf
    };
    let one = csv(1);
    let three = csv(3);
    let four = csv(4);
    (one == three && one == four, format!("{} bytes, 1 vs 3 vs 4 workers", one.len()))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    };

    report(1, "fraunhofer distance", &fraunhofer_constant);
    report(2, "channel power", &channel_power);
    report(3, "exact recovery", &exact_recovery);
    report(4, "gradient vs finite differences", &gradient_suite);
    report(5, "reduced objective identity", &ls_identity);
    report(6, "bcd monotonicity", &bcd_monotone);

    let start = Instant::now();
    let table = run_experiment(&desk_config(vec![-10.0, -5.0, 0.0, 5.0, 10.0], 2000, 7)).unwrap();
    println!("     desk-scale SNR sweep: 2000 trials in {:.1}s", start.elapsed().as_secs_f64());
    let mut low = table.clone();
    low.rows.retain(|r| r.point.snr_db <= 5.0);
    report(7, "ser vs snr trends", &|| ser_vs_snr(&low));
    report(8, "ser vs data length", &ser_vs_s);
    report(9, "nmse ordering", &|| nmse_ordering(&table));
    report(10, "complexity slopes", &complexity);
    report(11, "thread-count determinism", &determinism);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} check(s) failed");
        ExitCode::FAILURE
    }
}
