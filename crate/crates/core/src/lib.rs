//! CPU engine for a family of minimal encoder–decoder segmentation networks
//! built from depthwise-separable 3×3 convolutions.
//!
//! The crate covers the whole workflow: building and validating networks of the
//! `L{layers}F{filters}M{multiplier}S{stride}` family, training them with SGD,
//! folding batch norms for inference, evaluating IoU with a threshold sweep,
//! extracting connected regions, benchmarking forward latency, and a color
//! lookup-table baseline compiled from a pixel SVM.
//!
//! Every segmentation method implements [`segmenter::Segmenter`] and is
//! available by name from a [`segmenter::SegmenterRegistry`].

pub mod baseline;
pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod net;
pub mod ops;
pub mod optimize;
pub mod rng;
pub mod segmenter;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result, Violation};
pub use net::{Model, NetworkConfig, ProbMap};
pub use optimize::{fold_batchnorm, FoldBatchNorm, FoldedModel};
pub use segmenter::{Segmenter, SegmenterRegistry};
pub use tensor::{Precision, Scalar, Shape, Tensor};
