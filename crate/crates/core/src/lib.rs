//! Comparison of recorded exercise repetitions against a supervised
//! reference repetition from 6-axis IMU data.
//!
//! The pipeline: denoise both series, align them with multi-dimensional
//! dynamic time warping and derive micro-segment correspondences, compute
//! gradient attributions over a differentiable comparative scorer, refine
//! the attribution inside the critical segments, quantify attribution
//! quality (monotonicity, feature mutual information, continuity), and
//! translate the signals into physical terms: Euler angles, range of
//! motion, per-segment smoothness, avatar joint trajectories, and template
//! feedback text.

pub mod align;
pub mod attribution;
pub mod error;
pub mod preprocess;
pub mod scorer;
pub mod series;

pub use error::{Error, Result};
pub use series::{MotionSeries, SeriesLabel, AXIS_NAMES, DEFAULT_FS_HZ, GRAVITY, IMU_AXES};
