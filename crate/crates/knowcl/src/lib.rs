//! KnowCL: a semi-supervised contrastive-learning toolkit for pixel-level
//! hyperspectral image classification.
//!
//! The pipeline runs end to end on desk-scale synthetic cubes: disjoint
//! spatial sampling, spectral grouping + PCA, two-view augmentation, a light
//! ViT encoder with supervised and contrastive heads, an adaptively fused
//! multi-task loss, and kNN / linear-probe / supervised-head evaluation.

pub mod backbone;
pub mod datacube;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod nn;
pub mod patcher;
pub mod runconfig;
pub mod spectral;
pub mod splitter;
pub mod trainer;

pub use error::{Error, Result};
