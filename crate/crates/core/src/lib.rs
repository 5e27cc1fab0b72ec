//! Dataset engineering and evaluation kernels for aerial object detection.
//!
//! The crate covers the deterministic parts of a detection pipeline:
//! box geometry and crowding targets, COCO ingestion and statistics,
//! patch tiling, COCO/YOLO conversion, class-balanced proposal sampling,
//! focal and smooth-L1 losses, the weighted channel-attention fusion
//! transform, and COCO-protocol evaluation.

pub mod convert;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod rng;
pub mod sampler;
pub mod tiler;

pub use dataset::{
    Annotation, BackgroundPolicy, BoxValidation, Category, ClassGroup, ClassGrouping, ClassStats,
    DatasetIndex, GroupingPolicy, ImageRecord,
};
pub use error::{Error, ErrorKind, Result};
pub use geometry::BBox;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
