//! Video object detection over a synthetic compressed stream.
//!
//! Key frames get features from a large extractor fused with the warped
//! previous key-frame feature (attention-weighted, recursive). Non-key frames
//! reuse the key-frame feature by warping it along the motion vectors already
//! present in the compressed stream, plus a projected residual term and a
//! tiny-network term. A dense single-stage head turns feature maps into boxes.
//!
//! The crate is organized along that data path:
//!
//! * [`tensor_ops`]: dense kernels (conv, warp, resize, pairwise softmax)
//!   and their hand-derived backward passes,
//! * [`compressed_stream`]: the synthetic I/P codec, motion/residual
//!   accumulation back to the key frame, and the container file format,
//! * [`networks`]: the toy sub-networks and weight (de)serialization,
//! * [`aggregation`]: long-term and short-term feature aggregation,
//! * [`detection`]: head decoding, NMS, and the mAP evaluator,
//! * [`pipeline`]: scheduling, training, synthetic data, ablations,
//!   profiling, and visualization.

pub mod aggregation;
pub mod compressed_stream;
pub mod detection;
pub mod error;
pub mod networks;
pub mod pipeline;
pub mod tensor_ops;

pub use aggregation::AggregationState;
pub use compressed_stream::{CodecParams, CompressedClip, Frame, GopSegment, ResidualMap};
pub use detection::{DetectionBox, EvalReport, GroundTruthBox, MotionSpeed};
pub use error::{Error, Result};
pub use networks::{ModelWeights, NetworkSpec};
pub use pipeline::{PipelineConfig, SyntheticClip, SyntheticDatasetSpec, TimingReport};
pub use tensor_ops::{ConvKernel, FeatureMap, MotionField, ScoreMap, WeightMap};
