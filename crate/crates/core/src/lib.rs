//! Simulation and reconstruction toolkit for 3D photoacoustic computed
//! tomography with a hemispherical detector bowl.
//!
//! The crate is organized along the processing chain:
//!
//! - [`geometry`]: equiangular hemispherical sensor grids, quadrature weights,
//!   geodesic distance and the subsampling patterns used for accelerated scans.
//! - [`phantom`]: procedural vessel trees and their initial-pressure volumes.
//! - [`forward`]: the frequency-domain Green's-function forward operator, its
//!   adjoint, time-domain conversion, noise and the masked physics residual.
//! - [`ubp`]: universal back-projection.
//! - [`iterative`]: Huber-TV regularized, nonnegative FISTA reconstruction.
//! - [`neuralop`]: kernel bases, spherical discrete-continuous convolution and
//!   the Fourier neural operator layer.
//! - [`metrics`]: cosine similarity, PSNR and NMSE.
//! - [`io`] and [`pipeline`]: file formats and the end-to-end driver.

pub mod checks;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod iterative;
pub mod metrics;
pub mod neuralop;
pub mod phantom;
pub mod pipeline;
pub mod summation;
pub mod ubp;
pub mod volume;

pub use error::{Error, Result};
pub use forward::{AcousticMedium, PhysicsMask, ReceiveChain, Spectra, Traces};
pub use geometry::{PatternKind, SamplingPattern, SensorArray};
pub use metrics::MetricReport;
pub use volume::{GridSpec, Volume};

/// Toolkit version recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
