//! Parabolic position encoding and friends, at desk scale.
//!
//! A self-contained numerical library for position encodings inside
//! multi-head self-attention: the parabolic encoding (attention-bias form
//! and the exactly equivalent query/key feature maps that a streaming
//! softmax kernel can consume), its rotation-invariant constraint, a
//! univariate polynomial generalization, and the usual baselines
//! (nD sin/cos, axial/mixed rotary, distance bias). A small reverse-mode
//! tape, a finite-difference oracle, and a decoupled-weight-decay optimizer
//! support training and gradient verification.
//!
//! Everything numeric is generic over the [`Scalar`] floating type; all
//! verification runs in f64 (the aliases below), f32 exists for timing runs.

pub mod analysis;
pub mod array;
pub mod attention;
pub mod encodings;
pub mod error;
pub mod fdiff;
pub mod geometry;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tape;

pub use array::DenseArray;
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Array = array::DenseArray<f64>;
pub type Positions = geometry::PositionSet<f64>;
pub type Rotation = geometry::RigidRotation<f64>;
pub type TapeF64 = tape::Tape<f64>;

/// Opt-in single precision, for timing runs.
pub type Array32 = array::DenseArray<f32>;
pub type Positions32 = geometry::PositionSet<f32>;
