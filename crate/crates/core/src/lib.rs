//! Structured dropout for point-cloud networks.
//!
//! The crate bundles everything needed to train a small permutation-invariant
//! point network with noise-injection regularizers and to run ablations over
//! them:
//!
//! - [`geometry`]: point clouds, synthetic shapes, unit-sphere normalization and
//!   exact k-nearest-neighbour queries.
//! - [`masks`]: input drop, head dropout, DropFeat, DropPoint and DropCluster masks
//!   with train/eval semantics.
//! - [`net`]: shared per-point layers, a simplified EdgeConv, global max pooling,
//!   a classifier head, reverse-mode gradients and optimizers.
//! - [`train`]: seeded experiment runner and ablation sweeps.
//! - [`cli`]: config files, XYZ point files, CSV reports and the command-line
//!   entry point.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision instantiation used for training.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod masks;
pub mod matrix;
pub mod net;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = matrix::Matrix<f64>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type KnnIndex64 = geometry::KnnIndex<f64>;
pub type FeatureMap64 = net::FeatureMap<f64>;
pub type Params64 = net::Params<f64>;
pub type Tape64 = net::Tape<f64>;
pub type Sample64 = net::Sample<f64>;

pub type Matrix32 = matrix::Matrix<f32>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type Params32 = net::Params<f32>;
