//! Self-supervised audio-visual forgery detection.
//!
//! Three region-specific visual branches are trained on self-blended
//! pseudo-forgeries of real faces only, an alignment scorer is trained
//! contrastively on real audio/visual feature streams, and the four
//! resulting scores are calibrated and fused by logit averaging.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for callers that don't care.

pub mod augment;
pub mod avsync;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod fusion;
pub mod image;
pub mod manifest;
pub mod masks;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pseudo_forgery;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod synth;
pub mod visual;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Image64 = image::Image<f64>;
pub type Image32 = image::Image<f32>;
pub type SoftMask64 = masks::SoftMask<f64>;
pub type SoftMask32 = masks::SoftMask<f32>;
pub type BlendPair64 = pseudo_forgery::BlendPair<f64>;
pub type BlendPair32 = pseudo_forgery::BlendPair<f32>;
pub type BranchModel64 = visual::BranchModel<f64>;
pub type BranchModel32 = visual::BranchModel<f32>;
pub type FeatureSequence64 = avsync::FeatureSequence<f64>;
pub type FeatureSequence32 = avsync::FeatureSequence<f32>;
pub type AlignmentScorer64 = avsync::AlignmentScorer<f64>;
pub type AlignmentScorer32 = avsync::AlignmentScorer<f32>;
