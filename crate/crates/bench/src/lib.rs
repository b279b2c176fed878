//! Fixtures shared by the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xlmimo::geometry::{build_polar_dictionary, sample_user_channel, ChannelSampling, DictionarySpec};
use xlmimo::numkernel::{random_cn_matrix, sample_cn};
use xlmimo::waveform::{generate_precoders, make_augmented_data, synthesize_frame};
use xlmimo::{ArrayGeometry, CMatrix, CVector, Frame, FrameConfig, PolarDictionary, Qam, RefinementState};

pub const WAVELENGTH: f64 = 0.003;

/// A noisy two-user frame at 0 dB with `L = 3` paths per user and a polar
/// dictionary with `samples_per_angle` distance samples.
pub fn bomp_fixture(n_antennas: usize, samples_per_angle: usize, seed: u64) -> (Frame, PolarDictionary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = ArrayGeometry::half_wavelength(n_antennas, WAVELENGTH).unwrap();
    let spec = DictionarySpec { samples_per_angle, ..DictionarySpec::default_for(&geom) };
    let dict = build_polar_dictionary(&geom, &spec).unwrap();
    let cfg = FrameConfig { n_users: 2, coherence_len: 64, n_data: 8, mod_order: 16, snr: 1.0, noise_var: 1.0 };
    let qam = Qam::new(16).unwrap();
    let sampling = ChannelSampling::default_for(&geom);
    let channels = (0..2).map(|_| sample_user_channel(&geom, 3, &sampling, &mut rng)).collect();
    let data = (0..2).map(|_| make_augmented_data(&mut rng, &cfg, &qam)).collect();
    let precoders = generate_precoders(&mut rng, &cfg).unwrap();
    let frame = synthesize_frame(channels, data, precoders, &cfg, Some(&mut rng)).unwrap();
    (frame, dict)
}

/// A three-path refinement problem on an `n_antennas` array, started slightly
/// off the generating parameters.
pub fn bcd_fixture(n_antennas: usize, seed: u64) -> (ArrayGeometry, CMatrix, RefinementState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = ArrayGeometry::half_wavelength(n_antennas, WAVELENGTH).unwrap();
    let r = geom.fraunhofer_distance();
    let thetas: Vec<f64> = (0..3).map(|_| rng.random_range(-0.7..0.7)).collect();
    let inv_r: Vec<f64> = (0..3).map(|_| 1.0 / rng.random_range(r / 20.0..r / 2.0)).collect();
    let gamma = CVector::from_fn(3, |_, _| sample_cn(&mut rng, 1.0));
    let delta = CVector::from_fn(8, |_, _| sample_cn(&mut rng, 1.0));
    let y = geom.steering_matrix(&thetas, &inv_r) * &gamma * delta.transpose()
        + random_cn_matrix(&mut rng, n_antennas, 8, 0.1);
    let start_theta = thetas.iter().map(|t| t + 0.3 / n_antennas as f64).collect();
    let start_inv = inv_r.iter().map(|u| u * 1.1).collect();
    let init = RefinementState::new(&geom, &y, start_theta, start_inv, gamma, delta).unwrap();
    (geom, y, init)
}
