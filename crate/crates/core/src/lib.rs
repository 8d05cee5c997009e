//! Two-branch skin-lesion classifier.
//!
//! Every image is cropped to its lesion area ([`roi`]) and then scored by two
//! independent branches:
//!
//! * a hand-crafted 512-dimensional descriptor ([`features`]) fed to a bagged
//!   CART ensemble ([`forest`]), and
//! * a small VGG-style convnet ([`tinycnn`]) run over 256×256 patches
//!   ([`imaging::extract_patches`]) whose softmax outputs are averaged.
//!
//! The two probability vectors are blended with a tuned weight and thresholded
//! at 0.5 ([`fusion`]). [`pipeline`] ties this together for the two binary tasks
//! (melanoma vs rest, seborrheic keratosis vs rest), including dataset loading,
//! the single-file model bundle, and batch prediction.

pub mod codec;
pub mod error;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod imaging;
pub mod pipeline;
pub mod prob;
pub mod rng;
pub mod roi;
pub mod synthetic;
pub mod tinycnn;

pub use error::{Error, Result};
pub use prob::{ClassId, ProbVector};
