//! Invertible 3D orientation scores built from cake wavelets, with
//! crossing-preserving diffusion on the space of positions and orientations.

pub mod cakewavelet;
pub mod error;
pub mod fft;
pub mod io;
pub mod lieops;
pub mod oscore;
pub mod phantom;
pub mod sh;
pub mod sphere;
pub mod volume;

pub use cakewavelet::{build_wavelet_stack, DcPolicy, WaveletParams, WaveletStack};
pub use error::{Error, Result};
pub use oscore::OrientationScore;
pub use sphere::{icosphere, OrientationSet};
pub use volume::{Dims, Volume};
