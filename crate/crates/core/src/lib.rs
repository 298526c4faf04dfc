//! Instance-level image retrieval from pre-extracted convolutional feature maps.
//!
//! The crate is organised along the processing chain:
//!
//! - [`tensor_io`]: feature-map (`FMAP`) and descriptor-set (`DSET`) binary
//!   formats, plus ground-truth ingestion.
//! - [`aggregation`]: R-MAC region pooling and spatial downsampling.
//! - [`postprocess`]: L2 normalisation, PCA-whitening and ensembling.
//! - [`ranking`]: global search, query expansion, database augmentation,
//!   graph diffusion and the pipeline that composes them.
//! - [`evaluation`]: average precision, precision@k and the classic and
//!   revisited (easy / medium / hard) protocols.
//!
//! All numerical work runs in `f64`; descriptors are stored as `f32` to match
//! the on-disk formats.

pub mod aggregation;
pub mod descriptor;
pub mod evaluation;
pub mod postprocess;
pub mod ranking;
pub mod tensor_io;

pub use descriptor::Descriptor;
pub use tensor_io::{DescriptorSet, FeatureMap, GroundTruth, QueryGroundTruth};
