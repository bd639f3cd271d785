//! Non-network machinery of a brain-tumor segmentation pipeline: radiomic
//! features, stratified folds, probability-map ensembling, cluster-adaptive
//! post-processing and lesion-wise evaluation.
//!
//! Volumes are stored flat with the first axis varying fastest
//! (`index = i + nx * (j + ny * k)`), the NIfTI on-disk order.

pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod postprocess;
pub mod radiomics;
pub mod stratify;
pub mod volume;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
