//! Building blocks of the spherical neural operator: geodesic-disk kernel
//! bases, discrete-continuous convolution on the detector sphere and the
//! Fourier layer over `(theta, phi, k)` features. There is no training loop;
//! weights come from files or seeded initializers.

pub mod basis;
pub mod disco;
pub mod fno;

pub use basis::{BasisKind, KernelBasis};
pub use disco::{build_disco_matrices, disco_apply, disco_features, DiscoLayer, DiscoMatrices, FrequencyDisco};
pub use fno::{fno_layer_apply, fno_preactivation, fno_spectral_conv, spectra_to_time_features, Activation, FnoLayer, FnoModes};
