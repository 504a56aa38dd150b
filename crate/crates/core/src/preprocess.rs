//! Noise removal for raw IMU series: Butterworth low-pass filtering followed
//! by centered moving-average smoothing.

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::MotionSeries;

/// How the low-pass filter is applied.
///
/// `ZeroPhase` applies the analytic Butterworth magnitude response in the
/// frequency domain (reflection-padded FFT). It introduces no phase shift,
/// so filtered samples stay index-aligned with avatar/video frames, and its
/// attenuation matches the textbook `|H(f)| = 1/sqrt(1 + (f/fc)^(2n))` at
/// every frequency. `Causal` is a conventional bilinear-transform biquad
/// cascade: single forward pass, phase-shifting, with the usual frequency
/// warping away from the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    ZeroPhase,
    Causal,
}

/// Low-pass filter and smoothing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Cutoff frequency in Hz. Must stay below the Nyquist rate at use time.
    pub cutoff_hz: f64,
    /// Butterworth order.
    pub order: u32,
    /// Moving-average window (odd, in samples).
    pub ma_window: usize,
    pub mode: FilterMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 20.0,
            order: 4,
            ma_window: 5,
            mode: FilterMode::ZeroPhase,
        }
    }
}

impl FilterConfig {
    fn validate(&self, fs_hz: f64) -> Result<()> {
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz.is_finite()) {
            return Err(Error::config(format!(
                "cutoff frequency must be positive, got {}",
                self.cutoff_hz
            )));
        }
        if self.cutoff_hz >= fs_hz / 2.0 {
            return Err(Error::config(format!(
                "cutoff {} Hz is at or above the Nyquist frequency {} Hz",
                self.cutoff_hz,
                fs_hz / 2.0
            )));
        }
        if self.order == 0 {
            return Err(Error::config("filter order must be at least 1"));
        }
        Ok(())
    }
}

/// Applies the Butterworth low-pass filter independently to every axis.
/// Output length equals input length and DC gain is 1.
pub fn butterworth_lowpass(series: &MotionSeries, cfg: &FilterConfig) -> Result<MotionSeries> {
    cfg.validate(series.fs_hz())?;
    let n = series.len();
    let mut out = Array2::zeros((n, series.n_axes()));
    for axis in 0..series.n_axes() {
        let x: Vec<f64> = series.axis_values(axis).to_vec();
        let y = match cfg.mode {
            FilterMode::ZeroPhase => {
                zero_phase_lowpass(&x, series.fs_hz(), cfg.cutoff_hz, cfg.order)
            }
            FilterMode::Causal => causal_lowpass(&x, series.fs_hz(), cfg.cutoff_hz, cfg.order),
        };
        out.column_mut(axis).assign(&Array1::from_vec(y));
    }
    series.with_samples(out)
}

/// Centered moving average per axis with truncated windows at the edges.
/// Output length equals input length; `window` must be odd and `≤ N`.
pub fn moving_average(series: &MotionSeries, window: usize) -> Result<MotionSeries> {
    validate_window(window, series.len())?;
    let smoothed = smooth_columns(&series.samples().to_owned(), window);
    series.with_samples(smoothed)
}

/// Low-pass filter followed by moving-average smoothing, in that order.
pub fn denoise(series: &MotionSeries, cfg: &FilterConfig) -> Result<MotionSeries> {
    let filtered = butterworth_lowpass(series, cfg)?;
    moving_average(&filtered, cfg.ma_window)
}

pub(crate) fn validate_window(window: usize, n: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::config(format!(
            "moving-average window must be odd and positive, got {window}"
        )));
    }
    if window > n {
        return Err(Error::config(format!(
            "moving-average window {window} exceeds series length {n}"
        )));
    }
    Ok(())
}

/// Centered moving average along rows (time) for every column, truncating the
/// window where it would run past the ends. Shared by smoothing in alignment
/// and attribution refinement.
pub(crate) fn smooth_columns(values: &Array2<f64>, window: usize) -> Array2<f64> {
    if window <= 1 {
        return values.clone();
    }
    let n = values.nrows();
    let half = window / 2;
    let mut out = Array2::zeros(values.raw_dim());
    for col in 0..values.ncols() {
        // Prefix sums keep this O(N) per axis.
        let mut prefix = vec![0.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + values[(i, col)];
        }
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            out[(i, col)] = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
        }
    }
    out
}

/// Zero-phase filtering: reflect-pad, FFT, multiply each bin by the analytic
/// Butterworth gain, inverse FFT, crop.
fn zero_phase_lowpass(x: &[f64], fs: f64, fc: f64, order: u32) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return x.to_vec();
    }
    let pad = (3.0 * fs / fc).ceil() as usize;
    let pad = pad.min(n - 1);
    let mut ext: Vec<f64> = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(x[n - 1 - i]);
    }

    let m = ext.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);

    let mut buf: Vec<Complex<f64>> = ext.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        // Bins above m/2 carry the mirrored negative frequencies.
        let f = fs * k.min(m - k) as f64 / m as f64;
        let gain = 1.0 / (1.0 + (f / fc).powi(2 * order as i32)).sqrt();
        *c *= gain;
    }
    ifft.process(&mut buf);
    buf[pad..pad + n].iter().map(|c| c.re / m as f64).collect()
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// RBJ-cookbook low-pass section for the given quality factor.
    fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cos_w0 = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos_w0) / 2.0 / a0,
            b1: (1.0 - cos_w0) / a0,
            b2: (1.0 - cos_w0) / 2.0 / a0,
            a1: -2.0 * cos_w0 / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// First-order low-pass expressed as a degenerate biquad (for odd orders).
    fn lowpass_first_order(fc: f64, fs: f64) -> Self {
        let k = (std::f64::consts::PI * fc / fs).tan();
        Self {
            b0: k / (k + 1.0),
            b1: k / (k + 1.0),
            b2: 0.0,
            a1: (k - 1.0) / (k + 1.0),
            a2: 0.0,
        }
    }

    /// Direct Form II transposed, zero initial state.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        x.iter()
            .map(|&xi| {
                let y = self.b0 * xi + s1;
                s1 = self.b1 * xi - self.a1 * y + s2;
                s2 = self.b2 * xi - self.a2 * y;
                y
            })
            .collect()
    }
}

/// Single forward pass through a cascade of bilinear-transform sections.
fn causal_lowpass(x: &[f64], fs: f64, fc: f64, order: u32) -> Vec<f64> {
    let mut sections = Vec::new();
    let n = order as usize;
    // Butterworth pole angles give one Q per conjugate pair.
    for k in 1..=(n / 2) {
        let theta = (2 * k - 1) as f64 * std::f64::consts::PI / (2 * n) as f64;
        sections.push(Biquad::lowpass(fc, fs, 1.0 / (2.0 * theta.sin())));
    }
    if n % 2 == 1 {
        sections.push(Biquad::lowpass_first_order(fc, fs));
    }
    let mut y = x.to_vec();
    for s in &sections {
        y = s.apply(&y);
    }
    y
}
