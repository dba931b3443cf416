//! Photoacoustic tomography in attenuating media.
//!
//! Forward simulation of integrated pressure data on planar and spherical detector
//! surfaces, exact planar inversion through the inverse dispersion map, and spherical
//! filtered backprojection with a Neumann-series attenuation correction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attenuation;
pub mod error;
pub mod forward;
pub mod io;
pub mod phantom;
pub mod quadrature;
pub mod recon_plane;
pub mod recon_sphere;
pub mod transforms;

pub use error::{Error, Result};
