//! End-to-end frame processing.

pub mod config;
pub mod eval;
pub mod frame;
pub mod io;
pub mod synth;

pub use config::{CameraConfig, MatcherMode, PathsConfig, PipelineConfig};
pub use eval::{evaluate_disparity, EvalReport};
pub use frame::{bench, run_frame, BenchReport, DetectionRecord, FrameResult, Pipeline, SequenceResult, Timings};
