//! Uniform linear array geometry, near-field steering vectors, random channel
//! synthesis and the polar-domain dictionary.
//!
//! Distances are referenced to antenna 0. Internally steering vectors are
//! evaluated from the inverse distance `u = 1/r`, which stays finite for
//! far-field atoms (`u = 0`) and avoids the cancellation in `r⁽ⁿ⁾ − r` at
//! large `r`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{pseudoinverse, sample_cn, CMatrix, CVector};

/// Uniform linear array: antenna count, element spacing and carrier wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_antennas: usize,
    spacing: f64,
    wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if n_antennas < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 antennas, got {n_antennas}")));
        }
        if !(spacing > 0.0) || !(wavelength > 0.0) {
            return Err(Error::InvalidConfig("spacing and wavelength must be positive".into()));
        }
        Ok(Self { n_antennas, spacing, wavelength })
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(n_antennas: usize, wavelength: f64) -> Result<Self> {
        Self::new(n_antennas, wavelength / 2.0, wavelength)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Fraunhofer distance `2D²/λ` of the aperture `D = N d`; equals `N²λ/2`
    /// for half-wavelength spacing.
    pub fn fraunhofer_distance(&self) -> f64 {
        let aperture = self.n_antennas as f64 * self.spacing;
        2.0 * aperture * aperture / self.wavelength
    }

    /// Distance from a source at `(theta, r)` to antenna `n`.
    pub fn element_distance(&self, theta: f64, r: f64, n: usize) -> f64 {
        let nd = n as f64 * self.spacing;
        (r * r + nd * nd - 2.0 * r * nd * theta.sin()).max(0.0).sqrt()
    }

    /// `r⁽ⁿ⁾ − r` as a function of the inverse distance, finite at `u = 0`.
    pub(crate) fn path_difference(&self, theta: f64, inv_r: f64, n: usize) -> f64 {
        let nd = n as f64 * self.spacing;
        let s = theta.sin();
        let radicand = (1.0 + nd * nd * inv_r * inv_r - 2.0 * nd * inv_r * s).max(0.0);
        (nd * nd * inv_r - 2.0 * nd * s) / (radicand.sqrt() + 1.0)
    }

    /// `r⁽ⁿ⁾ / r`, i.e. `sqrt(1 + n²d²u² − 2ndu sinθ)`.
    pub(crate) fn distance_ratio(&self, theta: f64, inv_r: f64, n: usize) -> f64 {
        let nd = n as f64 * self.spacing;
        (1.0 + nd * nd * inv_r * inv_r - 2.0 * nd * inv_r * theta.sin())
            .max(0.0)
            .sqrt()
    }

    /// Steering vector parameterised by inverse distance (`0` is far field).
    pub fn steering_vector_inv(&self, theta: f64, inv_r: f64) -> CVector {
        let k = self.wavenumber();
        CVector::from_fn(self.n_antennas, |n, _| {
            Complex64::from_polar(1.0, -k * self.path_difference(theta, inv_r, n))
        })
    }

    /// Near-field steering vector `b(θ, r)`; `r = +∞` gives the far-field
    /// limit `exp(+j k n d sinθ)`.
    pub fn steering_vector(&self, theta: f64, r: f64) -> CVector {
        self.steering_vector_inv(theta, inverse_distance(r))
    }

    /// Far-field steering vector in closed form.
    pub fn far_field_vector(&self, theta: f64) -> CVector {
        let k = self.wavenumber();
        CVector::from_fn(self.n_antennas, |n, _| {
            Complex64::from_polar(1.0, k * n as f64 * self.spacing * theta.sin())
        })
    }

    /// Matrix whose columns are steering vectors at the given parameters.
    pub fn steering_matrix(&self, thetas: &[f64], inv_rs: &[f64]) -> CMatrix {
        assert_eq!(thetas.len(), inv_rs.len());
        let mut w = CMatrix::zeros(self.n_antennas, thetas.len());
        for (l, (&t, &u)) in thetas.iter().zip(inv_rs).enumerate() {
            w.set_column(l, &self.steering_vector_inv(t, u));
        }
        w
    }
}

/// `1/r`, mapping `+∞` to `0`.
pub fn inverse_distance(r: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else {
        1.0 / r
    }
}

/// One propagation path: angle, distance from antenna 0, complex gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub theta: f64,
    pub distance: f64,
    pub gain: Complex64,
}

/// A user's multipath channel and its synthesised antenna-domain vector.
#[derive(Debug, Clone)]
pub struct UserChannel {
    pub paths: Vec<PathParams>,
    pub h: CVector,
}

impl UserChannel {
    /// `h = (1/√L) Σ g_l b(θ_l, r_l)`.
    pub fn from_paths(geom: &ArrayGeometry, paths: Vec<PathParams>) -> Self {
        let mut h = CVector::zeros(geom.n_antennas());
        let scale = 1.0 / (paths.len().max(1) as f64).sqrt();
        for p in &paths {
            h += geom.steering_vector(p.theta, p.distance) * (p.gain * scale);
        }
        Self { paths, h }
    }
}

/// Ranges used to draw random paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSampling {
    pub angle_range: (f64, f64),
    pub distance_range: (f64, f64),
}

impl ChannelSampling {
    /// Angles in `[−π/4, π/4]`, distances in `[R/20, 2R/3]`.
    pub fn default_for(geom: &ArrayGeometry) -> Self {
        let r = geom.fraunhofer_distance();
        Self {
            angle_range: (-PI / 4.0, PI / 4.0),
            distance_range: (r / 20.0, 2.0 * r / 3.0),
        }
    }
}

/// Draws `L` i.i.d. paths with uniform angle, uniform distance and `CN(0,1)`
/// gains.
pub fn sample_user_channel<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    n_paths: usize,
    sampling: &ChannelSampling,
    rng: &mut R,
) -> UserChannel {
    let (a0, a1) = sampling.angle_range;
    let (r0, r1) = sampling.distance_range;
    let paths = (0..n_paths)
        .map(|_| {
            let theta = a0 + (a1 - a0) * rng.random::<f64>();
            let distance = r0 + (r1 - r0) * rng.random::<f64>();
            let gain = sample_cn(rng, 1.0);
            PathParams { theta, distance, gain }
        })
        .collect();
    UserChannel::from_paths(geom, paths)
}

/// One dictionary grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub angle: f64,
    /// Inverse distance in 1/m; zero marks a far-field atom.
    pub inv_distance: f64,
}

impl GridPoint {
    pub fn distance(&self) -> f64 {
        if self.inv_distance == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.inv_distance
        }
    }
}

/// How the distance axis of the polar grid is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    /// Distance samples per angle, `V`.
    pub samples_per_angle: usize,
    /// Smallest grid distance in meters.
    pub r_min: f64,
    /// Largest finite grid distance; only used without far-field atoms.
    pub r_max: f64,
    pub include_far_field: bool,
}

impl DictionarySpec {
    /// `V = 8`, `r_min = R/20`, far-field atoms included.
    pub fn default_for(geom: &ArrayGeometry) -> Self {
        let r = geom.fraunhofer_distance();
        Self { samples_per_angle: 8, r_min: r / 20.0, r_max: r, include_far_field: true }
    }
}

/// Polar-domain dictionary: `N × Q` steering vectors with their grid points.
///
/// Column `q = n·V + v` holds angle sample `n` and distance sample `v`.
#[derive(Debug, Clone)]
pub struct PolarDictionary {
    pub matrix: CMatrix,
    pub grid: Vec<GridPoint>,
    pub per_angle: Vec<usize>,
}

impl PolarDictionary {
    pub fn n_atoms(&self) -> usize {
        self.grid.len()
    }

    pub fn atom(&self, q: usize) -> nalgebra::DVectorView<'_, Complex64> {
        self.matrix.column(q)
    }

    pub fn columns(&self, support: &[usize]) -> CMatrix {
        self.matrix.select_columns(support.iter())
    }

    /// Writes `angle_rad,inv_distance_per_m,column_index` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "angle_rad,inv_distance_per_m,column_index")?;
        for (q, p) in self.grid.iter().enumerate() {
            writeln!(out, "{:.15e},{:.15e},{}", p.angle, p.inv_distance, q)?;
        }
        Ok(())
    }
}

/// Angle samples `θ̄_n = arcsin((2n − N + 1)/N)`.
pub fn angle_grid(n_antennas: usize) -> Vec<f64> {
    let nf = n_antennas as f64;
    (0..n_antennas)
        .map(|n| ((2.0 * n as f64 - nf + 1.0) / nf).asin())
        .collect()
}

/// Inverse-distance samples, uniform on `[0, 1/r_min]` with far-field atoms
/// or on `[1/r_max, 1/r_min]` without.
fn inverse_distance_grid(spec: &DictionarySpec) -> Vec<f64> {
    let hi = 1.0 / spec.r_min;
    let lo = if spec.include_far_field { 0.0 } else { 1.0 / spec.r_max };
    let v = spec.samples_per_angle;
    if v == 1 {
        return vec![if spec.include_far_field { 0.0 } else { hi }];
    }
    (0..v).map(|i| lo + (hi - lo) * i as f64 / (v - 1) as f64).collect()
}

pub fn build_polar_dictionary(geom: &ArrayGeometry, spec: &DictionarySpec) -> Result<PolarDictionary> {
    if !(spec.r_min > 0.0) {
        return Err(Error::InvalidGrid(format!("r_min must be positive, got {}", spec.r_min)));
    }
    if spec.samples_per_angle == 0 {
        return Err(Error::InvalidGrid("need at least one distance sample per angle".into()));
    }
    if !spec.include_far_field && !(spec.r_max > spec.r_min) {
        return Err(Error::InvalidGrid("r_max must exceed r_min".into()));
    }
    let angles = angle_grid(geom.n_antennas());
    let inv = inverse_distance_grid(spec);
    let mut grid = Vec::with_capacity(angles.len() * inv.len());
    for &angle in &angles {
        for &u in &inv {
            grid.push(GridPoint { angle, inv_distance: u });
        }
    }
    let mut matrix = CMatrix::zeros(geom.n_antennas(), grid.len());
    for (q, p) in grid.iter().enumerate() {
        matrix.set_column(q, &geom.steering_vector_inv(p.angle, p.inv_distance));
    }
    Ok(PolarDictionary { matrix, grid, per_angle: vec![inv.len(); angles.len()] })
}

/// Tropp's exact recovery condition: `max_{j∉S} ‖W_S† w_j‖₁ < 1` guarantees
/// that OMP recovers any signal supported on `S` from noiseless data.
pub fn exact_recovery_condition(dict: &PolarDictionary, support: &[usize]) -> bool {
    let ws = dict.columns(support);
    let Ok(pinv) = pseudoinverse(&ws) else {
        return false;
    };
    let coeffs = pinv * &dict.matrix;
    (0..dict.n_atoms())
        .filter(|q| !support.contains(q))
        .all(|q| coeffs.column(q).iter().map(|z| z.norm()).sum::<f64>() < 1.0)
}

/// Draws a channel whose paths sit exactly on distinct dictionary atoms with
/// angles inside `angle_range`. With `require_recoverable`, supports failing
/// [`exact_recovery_condition`] are redrawn.
pub fn sample_on_grid_channel<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    dict: &PolarDictionary,
    n_paths: usize,
    angle_range: (f64, f64),
    require_recoverable: bool,
    rng: &mut R,
) -> Result<(UserChannel, Vec<usize>)> {
    let candidates: Vec<usize> = (0..dict.n_atoms())
        .filter(|&q| {
            let a = dict.grid[q].angle;
            a >= angle_range.0 && a <= angle_range.1
        })
        .collect();
    if candidates.len() < n_paths {
        return Err(Error::InvalidGrid("not enough atoms inside the angle range".into()));
    }
    for _ in 0..1000 {
        let mut support: Vec<usize> = Vec::with_capacity(n_paths);
        while support.len() < n_paths {
            let q = candidates[rng.random_range(0..candidates.len())];
            if !support.contains(&q) {
                support.push(q);
            }
        }
        let gains: Vec<Complex64> = (0..n_paths).map(|_| sample_cn(rng, 1.0)).collect();
        if require_recoverable && !exact_recovery_condition(dict, &support) {
            continue;
        }
        let paths = support
            .iter()
            .zip(gains)
            .map(|(&q, gain)| PathParams {
                theta: dict.grid[q].angle,
                distance: dict.grid[q].distance(),
                gain,
            })
            .collect();
        return Ok((UserChannel::from_paths(geom, paths), support));
    }
    Err(Error::InvalidGrid("could not draw a recoverable on-grid support".into()))
}
