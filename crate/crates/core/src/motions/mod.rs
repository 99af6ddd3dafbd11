//! Synthetic reference motions, clip statistics and clustering.

mod clip;
mod cluster;
mod dataset;

pub use clip::{
    clip_goal, generate_clip, MotionClip, MotionFrame, MotionKind, MotionLabel, MotionParams,
    TrackingGoal,
};
pub use cluster::{feature_embedding, kmeans, z_normalize, KMeans};
pub use dataset::{
    build_dataset, clip_from_bytes, clip_to_bytes, clip_to_csv, frame_to_row, DatasetSpec,
    FieldLayout, KindSpec, MotionDataset, DATASET_FORMAT_VERSION,
};
