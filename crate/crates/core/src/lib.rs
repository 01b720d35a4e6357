//! Minimum-power downlink beamforming for power-domain NOMA.
//!
//! The crate covers the whole pipeline:
//!
//! * [`channel`]: Rayleigh channel draws, SIC user ordering, JSONL datasets;
//! * [`socp`]: the exact minimum-power beamformer, computed by an
//!   interior-point solver for second-order cone programs;
//! * [`precoding`]: MRC and ZF directions, power recovery for any fixed
//!   directions, SINR evaluation;
//! * [`cnn`]: a convolutional regressor from channels to beam directions;
//! * [`evalbench`]: power curves, learning curves and timing, as CSV.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! file formats and the command-line tool use.

pub mod channel;
pub mod cnn;
pub mod error;
pub mod evalbench;
pub mod linalg;
pub mod precoding;
pub mod scalar;
pub mod socp;

pub use channel::{DatasetParams, DatasetSample, Labeler, RngStream};
pub use cnn::Encoding;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use socp::{SolverOptions, SolverStatus};

pub type C64 = num_complex::Complex<f64>;
pub type CMatrix = linalg::CMatrix<f64>;
pub type ChannelSet = channel::ChannelSet<f64>;
pub type SinrSpec = precoding::SinrSpec<f64>;
pub type DirectionMatrix = precoding::DirectionMatrix<f64>;
pub type PowerReport = precoding::PowerReport<f64>;
pub type BeamSolution = socp::BeamSolution<f64>;
pub type ConeProgram = socp::ConeProgram<f64>;
pub type Tensor3 = cnn::Tensor3<f64>;
pub type CnnModel = cnn::CnnModel<f64>;
