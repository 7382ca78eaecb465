//! Procedural training data: synthetic originals, the edit menu, training
//! classes, and synthetic videos with planted copied segments.

mod dataset;
mod image;
pub mod io;
mod ops;
mod synth;
mod video;

pub use dataset::{
    build_dataset, build_dataset_with, generate_class, ChainSampler, DatasetConfig, EditedCopy,
    TrainingClass,
};
pub use image::{Image, CHANNELS, DEFAULT_HEIGHT, DEFAULT_WIDTH};
pub use ops::{apply_chain, apply_transform, format_chain, parse_chain, TransformFamily, TransformSpec};
pub use synth::{synthesize, synthesize_original};
pub use video::{
    build_video_benchmark, render_query, render_video, render_video_pair, BenchmarkConfig, CopySpec,
    Frame, Plant, PlantedSegment, SyntheticVideo, VideoBenchmark,
};
