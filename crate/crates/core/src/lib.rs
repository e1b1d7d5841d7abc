//! Occlusion-type-aware gait recognition on binary silhouette videos.
//!
//! The pipeline has four stages: synthetic occlusion transforms
//! ([`occlusion`]), a small CNN that classifies the occlusion type and
//! emits occlusion features ([`detector`]), a 3D-convolutional gait
//! backbone with named hook points where those features are injected
//! ([`backbone`], [`awareness`]), and a gallery/probe rank-K retrieval
//! harness ([`evaluation`]). Since real occluded gait datasets are
//! restricted, [`walker`] procedurally generates identity-bearing
//! silhouette walkers for desk-scale experiments.

pub mod awareness;
pub mod backbone;
pub mod checkpoint;
pub mod data_model;
pub mod detector;
pub mod evaluation;
pub mod nn;
pub mod occlusion;
pub mod seed;
pub mod training;
pub mod walker;

pub use data_model::{
    load_dataset, load_video, normalize_frame, video_pixel_sum, DataError, GaitSignature,
    SilhouetteFrame, SilhouetteVideo, FRAME_SIZE,
};
pub use occlusion::{DynamicPatchSpec, OcclusionClass, OcclusionSpec};
