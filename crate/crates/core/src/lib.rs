//! Numerical core for fractional-Fourier feature extraction and variational
//! deformable registration of 3D volumes.

pub mod dfrft;
pub mod error;
pub mod fca;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod regopt;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
pub use volume::{ComplexVolume3D, Dims, LabelMap, Spacing, Volume3D};
pub use warp::DisplacementField;
