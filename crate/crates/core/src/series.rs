//! The multivariate motion time series that every stage of the pipeline
//! consumes and produces.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of axes in a full IMU series: 3-axis accelerometer + 3-axis gyro.
pub const IMU_AXES: usize = 6;

/// Fixed axis order for 6-axis IMU data.
pub const AXIS_NAMES: [&str; IMU_AXES] = ["ax", "ay", "az", "gx", "gy", "gz"];

/// Default sampling frequency in Hz.
pub const DEFAULT_FS_HZ: f64 = 50.0;

/// Standard gravitational acceleration in m/s².
pub const GRAVITY: f64 = 9.81;

/// Optional provenance and ground-truth metadata attached to a series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesLabel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exercise: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetition: Option<u32>,
    /// Ground-truth range of motion in degrees, when the series is synthetic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rom_deg: Option<f64>,
    /// Ground-truth jitter level, when the series is synthetic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter_std: Option<f64>,
}

/// A length-N multivariate time series with sampling-rate metadata.
///
/// IMU recordings carry six axes in the fixed order `[ax, ay, az, gx, gy, gz]`
/// (accelerometer in m/s², gyroscope in rad/s). Lower-dimensional series are
/// allowed so alignment and attribution can be exercised on small fixtures;
/// operations that need the full IMU layout check for it explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeries {
    samples: Array2<f64>,
    fs_hz: f64,
    label: Option<SeriesLabel>,
}

impl MotionSeries {
    /// Builds a series from an `N × axes` array. All values must be finite,
    /// `N ≥ 1`, `axes ≥ 1`, and `fs_hz > 0`.
    pub fn new(samples: Array2<f64>, fs_hz: f64) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::data("motion series must contain at least one sample"));
        }
        if samples.ncols() == 0 {
            return Err(Error::data("motion series must have at least one axis"));
        }
        if !(fs_hz > 0.0 && fs_hz.is_finite()) {
            return Err(Error::config(format!(
                "sampling frequency must be positive and finite, got {fs_hz}"
            )));
        }
        if let Some((i, _)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite value at timestep {} axis {}",
                i.0, i.1
            )));
        }
        Ok(Self {
            samples,
            fs_hz,
            label: None,
        })
    }

    /// Builds a series from row slices (one row per timestep).
    pub fn from_rows(rows: &[Vec<f64>], fs_hz: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::data("motion series must contain at least one sample"));
        }
        let axes = rows[0].len();
        if rows.iter().any(|r| r.len() != axes) {
            return Err(Error::data("all rows must have the same axis count"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let samples = Array2::from_shape_vec((rows.len(), axes), flat)
            .map_err(|e| Error::data(e.to_string()))?;
        Self::new(samples, fs_hz)
    }

    pub fn with_label(mut self, label: SeriesLabel) -> Self {
        self.label = Some(label);
        self
    }

    /// Replaces the sample array, keeping rate and label. The new array must
    /// pass the same validation as `new`.
    pub fn with_samples(&self, samples: Array2<f64>) -> Result<Self> {
        let mut out = Self::new(samples, self.fs_hz)?;
        out.label = self.label.clone();
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn n_axes(&self) -> usize {
        self.samples.ncols()
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    /// Sample spacing in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.fs_hz
    }

    /// Total duration covered by the samples, `N / fs`.
    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs_hz
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.samples.row(i)
    }

    pub fn axis_values(&self, axis: usize) -> ArrayView1<'_, f64> {
        self.samples.column(axis)
    }

    pub fn label(&self) -> Option<&SeriesLabel> {
        self.label.as_ref()
    }

    /// True when the series carries the full 6-axis IMU layout.
    pub fn is_imu(&self) -> bool {
        self.n_axes() == IMU_AXES
    }

    /// Errors unless the series has the 6-axis IMU layout.
    pub fn require_imu(&self) -> Result<()> {
        if self.is_imu() {
            Ok(())
        } else {
            Err(Error::data(format!(
                "operation requires a 6-axis IMU series, got {} axes",
                self.n_axes()
            )))
        }
    }
}

/// Column header used for an attribution or series CSV with the given axis
/// count: the IMU names for 6 axes, `v0..` otherwise.
pub fn axis_header(n_axes: usize) -> Vec<String> {
    if n_axes == IMU_AXES {
        AXIS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n_axes).map(|i| format!("v{i}")).collect()
    }
}
