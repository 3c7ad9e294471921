//! Frequency-domain augmentation and out-of-distribution evaluation toolkit.
//!
//! The pipeline is built from small pure pieces:
//!
//! - [`tensorio`] holds the image model and the CIFAR binary / NPY / PPM codecs.
//! - [`spectral`] provides center-shifted 2D DFTs, circular band masks and
//!   amplitude/phase decomposition.
//! - [`augment`] implements the same-class low/high frequency swap (RFC),
//!   paired amplitude–phase recombination (APR), the crop/flip baseline and
//!   the corruption generators.
//! - [`probe`] builds band-limited and phase-only diagnostic images and the
//!   accuracy table over them.
//! - [`classifier`] is a small MLP trained with step-scheduled momentum SGD.
//! - [`oodval`] scores datasets by max-softmax confidence and computes AUROC.
//!
//! All pixel values are `f64` in `[0, 1]`; quantization to bytes happens only
//! in [`tensorio`].

pub mod augment;
pub mod classifier;
pub mod error;
pub mod oodval;
pub mod probe;
pub mod rng;
pub mod spectral;
pub mod tensorio;

pub use error::{Error, Result};
pub use tensorio::{ImageTensor, LabeledDataset};

/// Toolkit version recorded in run manifests and model files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
