//! Projective parallel single-pixel imaging (pPSI).
//!
//! Each camera pixel is treated as an independent single-pixel detector. Oblique
//! phase-shifted sinusoids are projected, the captured intensities are folded
//! into Fourier coefficients, and the inverse transform yields the pixel's 1D
//! projection function (the Radon slice of its pixel transport image) along
//! each pattern direction. Local maxima of those functions are intersected to
//! recover the projector-side correspondence even when inter-reflections or
//! subsurface scattering add extra light paths.
//!
//! The crate is organised along the processing chain:
//!
//! - [`geometry`]: the synthetic rectified projector/camera rig, line
//!   intersection and triangulation.
//! - [`patterns`]: oblique pattern generation and pattern budgets.
//! - [`ltc_sim`]: the light-transport scene model, forward image formation
//!   and the brute-force Radon oracle.
//! - [`recon`]: spectrum assembly, full-frequency and coarse-to-fine
//!   reconstruction of projection functions.
//! - [`matching`]: subpixel peak extraction and correspondence resolution.
//! - [`pointcloud`]: triangulation fan-out, continuity filtering and shape
//!   fits.
//! - [`metrics`]: matching error, spectral energy distribution and the
//!   capture-ratio sweep.
//! - [`pipeline`] and [`io`]: end-to-end orchestration and file formats.

pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod ltc_sim;
pub mod matching;
pub mod metrics;
pub mod patterns;
pub mod pipeline;
pub mod pointcloud;
pub mod recon;

pub use error::{Error, Result};
