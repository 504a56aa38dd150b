//! Gradient attribution over a comparative scorer, joint normalization,
//! top-segment extraction, and segment-guided refinement of the raw maps.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::align::SegmentAlignment;
use crate::error::{Error, Result};
use crate::preprocess::smooth_columns;
use crate::scorer::ComparativeScorer;
use crate::series::{axis_header, MotionSeries};

/// Attribution method identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    Saliency,
    InputXGradient,
    IntegratedGradients,
}

impl AttributionMethod {
    pub const ALL: [AttributionMethod; 3] = [
        AttributionMethod::Saliency,
        AttributionMethod::InputXGradient,
        AttributionMethod::IntegratedGradients,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            AttributionMethod::Saliency => "SA",
            AttributionMethod::InputXGradient => "XG",
            AttributionMethod::IntegratedGradients => "IG",
        }
    }
}

impl std::fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AttributionMethod::Saliency => "saliency",
            AttributionMethod::InputXGradient => "input_x_gradient",
            AttributionMethod::IntegratedGradients => "integrated_gradients",
        };
        write!(f, "{name}")
    }
}

/// Per-timestep, per-axis importance scores, shaped exactly like the series
/// they explain.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    values: Array2<f64>,
    method: AttributionMethod,
    normalized: bool,
}

impl AttributionMap {
    pub fn new(values: Array2<f64>, method: AttributionMethod) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::data("attribution map must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("attribution map contains non-finite values"));
        }
        Ok(Self {
            values,
            method,
            normalized: false,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn method(&self) -> AttributionMethod {
        self.method
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_axes(&self) -> usize {
        self.values.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flat row-major view of the values (timestep-major).
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// Writes the map as CSV: one row per timestep, one column per axis.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header = axis_header(self.n_axes()).join(",");
        writeln!(w, "{header}").map_err(|e| Error::io("<attribution csv>", e))?;
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(w, "{}", line.join(",")).map_err(|e| Error::io("<attribution csv>", e))?;
        }
        Ok(())
    }
}

/// Refinement parameters for the segment-guided modification of a raw map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Fraction of cells, by magnitude, considered "top" attribution.
    pub top_t: f64,
    /// Gain applied inside critical segments.
    pub amplify: f64,
    /// Centered moving-average window applied along time after scaling.
    pub smooth_window: usize,
    /// Gain applied outside critical segments (1.0 = keep).
    pub attenuate: f64,
    /// Weight cells toward the temporal middle before ranking, for
    /// range-of-motion style analyses where the peak sits mid-repetition.
    pub middle_prior: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            top_t: 0.10,
            amplify: 2.0,
            smooth_window: 5,
            attenuate: 1.0,
            middle_prior: false,
        }
    }
}

impl RefinementConfig {
    fn validate(&self) -> Result<()> {
        if !(self.top_t > 0.0 && self.top_t <= 1.0) {
            return Err(Error::config(format!(
                "top fraction must lie in (0, 1], got {}",
                self.top_t
            )));
        }
        if self.amplify < 1.0 {
            return Err(Error::config(format!(
                "amplification must be ≥ 1, got {}",
                self.amplify
            )));
        }
        if !(0.0..=1.0).contains(&self.attenuate) {
            return Err(Error::config(format!(
                "attenuation must lie in [0, 1], got {}",
                self.attenuate
            )));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(Error::config(format!(
                "smoothing window must be odd and positive, got {}",
                self.smooth_window
            )));
        }
        Ok(())
    }
}

/// Absolute gradient of the score with respect to every signal sample.
pub fn saliency<S: ComparativeScorer + ?Sized>(
    scorer: &S,
    signal: &MotionSeries,
    anchor: &MotionSeries,
) -> Result<AttributionMap> {
    let grad = scorer.grad_signal(signal, anchor)?;
    AttributionMap::new(grad.mapv(f64::abs), AttributionMethod::Saliency)
}

/// Element-wise product of the signal with the score gradient.
pub fn input_x_gradient<S: ComparativeScorer + ?Sized>(
    scorer: &S,
    signal: &MotionSeries,
    anchor: &MotionSeries,
) -> Result<AttributionMap> {
    let grad = scorer.grad_signal(signal, anchor)?;
    AttributionMap::new(&grad * &signal.samples(), AttributionMethod::InputXGradient)
}

/// Path-integral attribution from `baseline` to `signal`: the mean gradient
/// along the straight path (right-endpoint Riemann sum over `steps` points)
/// times the input difference. Satisfies the completeness axiom up to the
/// Riemann discretization error.
pub fn integrated_gradients<S: ComparativeScorer + ?Sized>(
    scorer: &S,
    signal: &MotionSeries,
    anchor: &MotionSeries,
    baseline: &MotionSeries,
    steps: usize,
) -> Result<AttributionMap> {
    if baseline.samples().raw_dim() != signal.samples().raw_dim() {
        return Err(Error::data(format!(
            "baseline shape {:?} does not match signal shape {:?}",
            baseline.samples().shape(),
            signal.samples().shape()
        )));
    }
    if steps == 0 {
        return Err(Error::config("integrated gradients needs at least one step"));
    }
    let diff = &signal.samples() - &baseline.samples();
    let mut grad_sum: Array2<f64> = Array2::zeros(diff.raw_dim());
    for k in 1..=steps {
        let alpha = k as f64 / steps as f64;
        let point = &baseline.samples() + &(&diff * alpha);
        let series = signal.with_samples(point)?;
        grad_sum += &scorer.grad_signal(&series, anchor)?;
    }
    grad_sum /= steps as f64;
    AttributionMap::new(diff * grad_sum, AttributionMethod::IntegratedGradients)
}

/// Draws a baseline shaped like `signal` from a per-axis normal distribution
/// whose mean and standard deviation come from the anchor, keeping the
/// baseline on the data's own scale.
pub fn random_baseline(
    signal: &MotionSeries,
    anchor: &MotionSeries,
    seed: u64,
) -> Result<MotionSeries> {
    if signal.n_axes() != anchor.n_axes() {
        return Err(Error::data("signal and anchor must share the axis count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats: Vec<(f64, f64)> = (0..anchor.n_axes())
        .map(|ax| {
            let col = anchor.axis_values(ax);
            let mean = col.mean().unwrap_or(0.0);
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            (mean, var.sqrt())
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let values = Array2::from_shape_fn((signal.len(), signal.n_axes()), |(_, ax)| {
        let (mean, std) = stats[ax];
        mean + std * rng.sample::<f64, _>(normal)
    });
    signal.with_samples(values)
}

/// Divides both maps by their shared maximum absolute value so the larger of
/// the two peaks at exactly 1. All-zero pairs pass through unchanged.
pub fn normalize_joint(
    a_signal: &AttributionMap,
    a_anchor: &AttributionMap,
) -> Result<(AttributionMap, AttributionMap)> {
    if a_signal.method != a_anchor.method {
        return Err(Error::config(
            "joint normalization requires maps from the same method",
        ));
    }
    let max = a_signal.max_abs().max(a_anchor.max_abs());
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    let mut s = AttributionMap::new(a_signal.values.mapv(|v| v * scale), a_signal.method)?;
    let mut a = AttributionMap::new(a_anchor.values.mapv(|v| v * scale), a_anchor.method)?;
    s.normalized = true;
    a.normalized = true;
    Ok((s, a))
}

/// Ids of the micro-segments holding the strongest attribution cells.
///
/// The top set is the `ceil(top_t · N · axes)` non-zero cells with the
/// largest magnitude (ties broken by cell index); a segment qualifies when
/// it contains at least one such cell. Zero cells carry no attribution and
/// never qualify, so a map concentrated in one segment names exactly that
/// segment.
pub fn extract_top_segments(
    map: &AttributionMap,
    seg: &SegmentAlignment,
    top_t: f64,
) -> Result<Vec<usize>> {
    extract_top_segments_weighted(map, seg, top_t, false)
}

/// As [`extract_top_segments`], optionally weighting magnitudes by a
/// triangular bump peaking mid-series before ranking (range-of-motion prior:
/// the largest motion change sits in the middle of a repetition).
pub fn extract_top_segments_weighted(
    map: &AttributionMap,
    seg: &SegmentAlignment,
    top_t: f64,
    middle_prior: bool,
) -> Result<Vec<usize>> {
    if map.is_empty() {
        return Err(Error::data("attribution map is empty"));
    }
    if map.len() != seg.signal_len() {
        return Err(Error::data(format!(
            "map has {} timesteps but the alignment covers {}",
            map.len(),
            seg.signal_len()
        )));
    }
    if !(top_t > 0.0 && top_t <= 1.0) {
        return Err(Error::config(format!(
            "top fraction must lie in (0, 1], got {top_t}"
        )));
    }
    let n_cells = map.len() * map.n_axes();
    let count = ((top_t * n_cells as f64).ceil() as usize).clamp(1, n_cells);

    let n = map.len() as f64;
    let weight = |t: usize| -> f64 {
        if !middle_prior || map.len() == 1 {
            1.0
        } else {
            // Triangular bump: 1 at the ends, 2 at the center.
            let u = t as f64 / (n - 1.0);
            1.0 + (1.0 - (2.0 * u - 1.0).abs())
        }
    };

    let mut cells: Vec<(f64, usize)> = map
        .values
        .indexed_iter()
        .filter(|(_, v)| **v != 0.0)
        .map(|((t, ax), v)| (v.abs() * weight(t), t * map.n_axes() + ax))
        .collect();
    cells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    let mut segments: Vec<usize> = cells
        .iter()
        .take(count)
        .map(|&(_, flat)| seg.signal_segment_of(flat / map.n_axes()))
        .collect();
    segments.sort_unstable();
    segments.dedup();
    Ok(segments)
}

/// Amplifies the map inside the critical segments, attenuates it outside,
/// smooths along time, and renormalizes to unit maximum magnitude.
pub fn refine_attribution(
    map: &AttributionMap,
    critical: &[usize],
    seg: &SegmentAlignment,
    cfg: &RefinementConfig,
) -> Result<AttributionMap> {
    cfg.validate()?;
    if map.len() != seg.signal_len() {
        return Err(Error::data(format!(
            "map has {} timesteps but the alignment covers {}",
            map.len(),
            seg.signal_len()
        )));
    }
    for &id in critical {
        if id >= seg.segment_count() {
            return Err(Error::config(format!(
                "segment id {id} out of range (have {} segments)",
                seg.segment_count()
            )));
        }
    }
    let ranges: Vec<std::ops::Range<usize>> =
        critical.iter().map(|&id| seg.signal_range(id)).collect();
    refine_regions(map, &ranges, cfg)
}

/// Core refinement transform over explicit signal index ranges. Shared with
/// the randomized-segment control experiment, which substitutes random
/// windows for the critical segments.
pub(crate) fn refine_regions(
    map: &AttributionMap,
    regions: &[std::ops::Range<usize>],
    cfg: &RefinementConfig,
) -> Result<AttributionMap> {
    cfg.validate()?;
    let mut inside = vec![false; map.len()];
    for r in regions {
        for flag in inside[r.start.min(map.len())..r.end.min(map.len())].iter_mut() {
            *flag = true;
        }
    }
    let mut scaled = map.values.clone();
    for (t, row) in scaled.rows_mut().into_iter().enumerate() {
        let gain = if inside[t] { cfg.amplify } else { cfg.attenuate };
        for v in row {
            *v *= gain;
        }
    }
    let window = cfg.smooth_window.min(if map.len() % 2 == 0 {
        map.len().saturating_sub(1).max(1)
    } else {
        map.len()
    });
    let smoothed = smooth_columns(&scaled, window);
    let max = smoothed.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let renormalized = if max > 0.0 {
        smoothed.mapv(|v| v / max)
    } else {
        smoothed
    };
    let mut out = AttributionMap::new(renormalized, map.method)?;
    out.normalized = true;
    Ok(out)
}
