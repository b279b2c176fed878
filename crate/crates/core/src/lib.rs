//! Blind channel estimation and data detection (B-CE-DD) for uplink
//! near-field XL-MIMO.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkernel`]: complex pseudoinverse, orthogonal projector and the
//!   principal singular pair used by every algorithm.
//! * [`geometry`]: uniform linear array geometry, spherical-wavefront steering
//!   vectors, random near-field channels and the polar-domain dictionary.
//! * [`waveform`]: QAM, pilot-augmented data vectors, precoders, frame
//!   synthesis and the user-separating effective-received transform.
//! * [`bomp`]: the on-grid blind OMP stage that estimates each user's
//!   channel-data product and factorises it.
//! * [`refine`]: the off-grid block coordinate descent refinement over
//!   angles, inverse distances, path gains and data symbols.
//! * [`baseline`]: the pilot-based OMP channel estimator with zero-forcing
//!   detection used for comparison.
//! * [`harness`]: seeded, parallel Monte Carlo experiments with SER/NMSE
//!   metrics, CSV emission and scaling benchmarks.

pub mod baseline;
pub mod bomp;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod numkernel;
pub mod refine;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use numkernel::{CMatrix, CVector};

pub use bomp::{run_bomp, BompOutput, BompStopRule};
pub use geometry::{ArrayGeometry, PolarDictionary, UserChannel};
pub use harness::{run_experiment, ExperimentConfig, ResultTable, Scheme};
pub use refine::{run_bcd, BcdConfig, RefinementState};
pub use waveform::{Frame, FrameConfig, PrecoderSet, Qam};
