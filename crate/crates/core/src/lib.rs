//! One-shot personalized sketch segmentation.
//!
//! Given a single label-annotated exemplar sketch, transfer its part labels
//! to unlabeled sketches of the same category. The pipeline couples a
//! graph-convolutional sketch encoder with an unsupervised keypoint
//! predictor, an analytic global rigid alignment, constrained per-stroke
//! deformation of the exemplar, and a point-label classifier, all trained
//! jointly on one category.

pub mod align;
pub mod autodiff;
pub mod sketch;
pub mod deform;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod model;
pub mod nn;
pub mod segment;
pub mod train;

pub use error::{Error, Result};
