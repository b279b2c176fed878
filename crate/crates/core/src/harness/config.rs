use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::bomp::BompStopRule;
use crate::error::{Error, Result};
use crate::geometry::{build_polar_dictionary, ArrayGeometry, ChannelSampling, DictionarySpec};
use crate::refine::BcdConfig;
use crate::waveform::{FrameConfig, Qam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "bomp")]
    Bomp,
    #[serde(rename = "bomp+bcd")]
    BompBcd,
    #[serde(rename = "omp+zf")]
    OmpZf,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Bomp, Scheme::BompBcd, Scheme::OmpZf];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bomp => "bomp",
            Scheme::BompBcd => "bomp+bcd",
            Scheme::OmpZf => "omp+zf",
        }
    }

    pub fn is_blind(self) -> bool {
        self != Scheme::OmpZf
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_antennas: usize,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { n_antennas: 32, wavelength: 0.003, spacing_wavelengths: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_paths: usize,
    /// Angle range in radians.
    pub angle_range: (f64, f64),
    /// Distance range in units of the Fraunhofer distance.
    pub distance_range: (f64, f64),
    /// Place paths exactly on dictionary atoms with a recoverable support.
    pub on_grid: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_paths: 3,
            angle_range: (-FRAC_PI_4, FRAC_PI_4),
            distance_range: (1.0 / 20.0, 2.0 / 3.0),
            on_grid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub n_users: usize,
    pub coherence_len: usize,
    pub n_data: usize,
    pub mod_order: usize,
    pub noise_var: f64,
    pub noiseless: bool,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self { n_users: 2, coherence_len: 64, n_data: 8, mod_order: 16, noise_var: 1.0, noiseless: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub samples_per_angle: usize,
    /// Smallest grid distance in units of the Fraunhofer distance.
    pub r_min: f64,
    /// Largest finite grid distance (only used without far-field atoms).
    pub r_max: f64,
    pub include_far_field: bool,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self { samples_per_angle: 6, r_min: 1.0 / 20.0, r_max: 1.0, include_far_field: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    KnownPaths,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BompSection {
    pub stop: StopKind,
    /// Iterations for `known_paths`; defaults to the channel's path count.
    pub n_paths: Option<usize>,
    pub eps1: f64,
    /// Iteration cap for `threshold`; defaults to `min(Q, 4L)`.
    pub max_iters: Option<usize>,
}

impl Default for BompSection {
    fn default() -> Self {
        Self { stop: StopKind::KnownPaths, n_paths: None, eps1: 0.05, max_iters: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NData,
    CoherenceLen,
    NUsers,
    NPaths,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NData => "n_data",
            SweepParam::CoherenceLen => "coherence_len",
            SweepParam::NUsers => "n_users",
            SweepParam::NPaths => "n_paths",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<usize>,
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub frame: FrameSection,
    /// Transmit SNR points in dB.
    pub snr_db: Vec<f64>,
    /// Optional outer sweep over an integer parameter.
    pub sweep: Option<Sweep>,
    pub dictionary: DictionaryConfig,
    pub bomp: BompSection,
    pub bcd: BcdConfig,
    pub baseline: BaselineConfig,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// Measure per-scheme wall time; off by default so output is
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            channel: ChannelConfig::default(),
            frame: FrameSection::default(),
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            sweep: None,
            dictionary: DictionaryConfig::default(),
            bomp: BompSection::default(),
            bcd: BcdConfig::default(),
            baseline: BaselineConfig::default(),
            trials: 500,
            seed: 0,
            schemes: Scheme::ALL.to_vec(),
            record_wall_time: false,
        }
    }
}

/// One point of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sweep_value: Option<usize>,
    pub snr_db: f64,
}

impl SweepPoint {
    pub fn snr_linear(&self) -> f64 {
        db_to_linear(self.snr_db)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Per-grid-point dimensions after applying the sweep value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSetup {
    pub frame: FrameConfig,
    pub n_paths: usize,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn array_geometry(&self) -> Result<ArrayGeometry> {
        let g = &self.geometry;
        ArrayGeometry::new(g.n_antennas, g.spacing_wavelengths * g.wavelength, g.wavelength)
    }

    pub fn channel_sampling(&self, geom: &ArrayGeometry) -> ChannelSampling {
        let r = geom.fraunhofer_distance();
        let (a, b) = self.channel.distance_range;
        ChannelSampling { angle_range: self.channel.angle_range, distance_range: (a * r, b * r) }
    }

    pub fn dictionary_spec(&self, geom: &ArrayGeometry) -> DictionarySpec {
        let r = geom.fraunhofer_distance();
        let d = &self.dictionary;
        DictionarySpec {
            samples_per_angle: d.samples_per_angle,
            r_min: d.r_min * r,
            r_max: d.r_max * r,
            include_far_field: d.include_far_field,
        }
    }

    /// Grid in row-major order: sweep value outer, SNR inner.
    pub fn grid(&self) -> Vec<SweepPoint> {
        let values: Vec<Option<usize>> = match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        };
        values
            .into_iter()
            .flat_map(|v| self.snr_db.iter().map(move |&snr_db| SweepPoint { sweep_value: v, snr_db }))
            .collect()
    }

    pub fn setup(&self, point: &SweepPoint) -> PointSetup {
        let f = &self.frame;
        let mut frame = FrameConfig {
            n_users: f.n_users,
            coherence_len: f.coherence_len,
            n_data: f.n_data,
            mod_order: f.mod_order,
            snr: point.snr_linear(),
            noise_var: f.noise_var,
        };
        let mut n_paths = self.channel.n_paths;
        if let (Some(sweep), Some(v)) = (&self.sweep, point.sweep_value) {
            match sweep.parameter {
                SweepParam::NData => frame.n_data = v,
                SweepParam::CoherenceLen => frame.coherence_len = v,
                SweepParam::NUsers => frame.n_users = v,
                SweepParam::NPaths => n_paths = v,
            }
        }
        PointSetup { frame, n_paths }
    }

    pub fn stop_rule(&self, n_atoms: usize, n_paths: usize) -> BompStopRule {
        match self.bomp.stop {
            StopKind::KnownPaths => BompStopRule::KnownPaths(self.bomp.n_paths.unwrap_or(n_paths)),
            StopKind::Threshold => BompStopRule::ResidualThreshold {
                eps1: self.bomp.eps1,
                max_iters: self.bomp.max_iters.unwrap_or_else(|| n_atoms.min(4 * n_paths).max(1)),
            },
        }
    }

    pub fn has_blind_scheme(&self) -> bool {
        self.schemes.iter().any(|s| s.is_blind())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected");
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|v| !v.is_finite()) {
            return bad("snr_db must be a nonempty list of finite values");
        }
        let geom = self.array_geometry()?;
        let c = &self.channel;
        if c.n_paths == 0 {
            return bad("channel.n_paths must be at least 1");
        }
        if !(c.angle_range.0 <= c.angle_range.1) || c.angle_range.0 < -FRAC_PI_4 * 2.0 || c.angle_range.1 > FRAC_PI_4 * 2.0
        {
            return bad("channel.angle_range must lie in [-π/2, π/2]");
        }
        if !(c.distance_range.0 > 0.0 && c.distance_range.0 <= c.distance_range.1) {
            return bad("channel.distance_range must be positive and ordered");
        }
        let d = &self.dictionary;
        if d.samples_per_angle == 0 || !(d.r_min > 0.0) || (!d.include_far_field && !(d.r_max > d.r_min)) {
            return bad("dictionary settings out of range");
        }
        if !(self.frame.noise_var >= 0.0) {
            return bad("frame.noise_var must be nonnegative");
        }
        if self.bomp.stop == StopKind::Threshold && !(self.bomp.eps1 >= 0.0) {
            return bad("bomp.eps1 must be nonnegative");
        }
        self.bcd.validate()?;
        build_polar_dictionary(&geom, &self.dictionary_spec(&geom))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values is empty");
            }
        }
        for point in self.grid() {
            let setup = self.setup(&point);
            let f = setup.frame;
            if f.n_users == 0 || f.n_data == 0 || setup.n_paths == 0 {
                return bad("K, S and L must be at least 1");
            }
            Qam::new(f.mod_order)?;
            if self.has_blind_scheme() {
                f.validate()?;
            }
            if self.schemes.contains(&Scheme::OmpZf) {
                if f.coherence_len < f.n_data + f.n_users {
                    return Err(Error::InvalidConfig(format!(
                        "baseline needs τ = T − S ≥ K (T = {}, S = {}, K = {})",
                        f.coherence_len, f.n_data, f.n_users
                    )));
                }
                if f.n_users > geom.n_antennas() {
                    return bad("zero forcing needs N ≥ K");
                }
            }
        }
        Ok(())
    }
}
