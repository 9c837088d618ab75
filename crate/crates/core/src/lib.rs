//! Sparse-view CT laboratory: parallel-beam simulation, streaking-artifact
//! generation, TV-regularized iterative reconstruction, Vietoris-Rips
//! persistent homology over image point clouds, and a small exact-gradient
//! convolutional network engine for residual learning experiments.

pub mod error;
pub mod homology;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tomo;
pub mod tv;

pub use error::{Error, Result};
pub use image::{Ellipse, EllipsePhantom, Image};
pub use tomo::{Geometry, Sinogram};
