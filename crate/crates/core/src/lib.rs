//! Glaucoma classification from 3D optic-nerve-head point clouds.
//!
//! The library covers the full pipeline: segmented OCT volumes to aligned
//! point clouds ([`geometry`]), a synthetic volume generator for desk-scale
//! experiments ([`synth`]), two point-cloud classifiers ([`pointnet`],
//! [`dgcnn`]) built on a small reverse-mode autodiff core ([`autodiff`]),
//! a training/cross-validation harness ([`train`]), and critical-point
//! interpretability analyses ([`interpret`]).

pub mod autodiff;
pub mod dgcnn;
pub mod error;
pub mod geometry;
pub mod interpret;
pub mod io;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pointnet;
pub mod synth;
pub mod tensor;
pub mod testutil;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
