//! Stereo perception toolkit.
//!
//! Dense disparity comes from a multi-path Viterbi optimizer over an SSIM
//! matching cost with a gradient-weighted total-variation penalty, run
//! coarse-to-fine over a three-level pyramid. The disparity map feeds a
//! v-disparity road model and u-disparity obstacle extraction, and obstacle
//! regions are classified by a boosted LBP cascade.

pub mod cost;
pub mod error;
pub mod imgio;
pub mod multiscale;
pub mod pipeline;
pub mod recog;
pub mod roadobs;
pub mod viterbi;

pub use error::{Error, Result};
pub use imgio::{GradientMap, GrayImage, RemapTable, StereoPair};
pub use viterbi::DisparityMap;
