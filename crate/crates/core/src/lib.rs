//! Tomographic reconstruction from measurements taken with an inexactly known
//! forward operator: an object that moves rigidly while it is scanned.
//!
//! The crate simulates such data (random phantoms, damped-sinusoid motion
//! trajectories, perturbed sinograms) and reconstructs it with filtered
//! backprojection, Kaczmarz/ART, Kaczmarz with per-angle shift correction
//! ([`dremel`]) and the two-direction RESESOP-Kaczmarz solver ([`resesop`]).

pub mod dataio;
pub mod dataset;
pub mod dremel;
pub mod error;
pub mod fbp;
pub mod geometry;
pub mod kaczmarz;
pub mod metrics;
pub mod perturbation;
pub mod phantom;
pub mod projector;
pub mod resesop;
pub mod selftest;

pub use error::{Error, Result};
pub use geometry::{inner_x, make_geometry, Geometry, GeometryKind, GeometrySpec, Image, Ray};
pub use projector::{RayFootprint, Sinogram};
