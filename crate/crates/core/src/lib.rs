//! Forward simulation and layer-stripping inversion of optical coherence
//! elastography measurements on layered media with random scatterers.

pub mod detect;
pub mod error;
pub mod forward;
pub mod invert;
pub mod lsq;
pub mod medium;
pub mod quadrature;
pub mod scatterlab;
pub mod scenario;
pub mod spectra;

pub use error::{Error, Result};
