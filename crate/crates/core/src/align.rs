//! Alignment of a signal repetition against its anchor: multi-dimensional
//! dynamic time warping and the micro-segment correspondences derived from
//! the warp path.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{smooth_columns, validate_window};
use crate::series::MotionSeries;

/// An optimal warp path between two series.
///
/// Pairs are 1-based `(i, j)` indices into the signal and anchor, stored in
/// chronological order: the first pair is `(1, 1)`, the last `(n, m)`, and
/// successive pairs differ by `(1,0)`, `(0,1)` or `(1,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPath {
    pairs: Vec<(usize, usize)>,
    total_cost: f64,
}

impl WarpPath {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Micro-segment correspondences between a signal and its anchor.
///
/// The anchor is cut into segments of `seg_len` timesteps; for each segment
/// start, `anchors` holds the 0-based `(signal index, anchor index)` pair on
/// the warp path with the smallest pointwise distance at that column. The
/// boundaries carve both series into the same number of segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAlignment {
    anchors: Vec<(usize, usize)>,
    n_seg: usize,
    seg_len: usize,
    signal_len: usize,
    anchor_len: usize,
}

impl SegmentAlignment {
    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    /// Number of micro-segments actually produced, `ceil(anchor_len / seg_len)`.
    pub fn segment_count(&self) -> usize {
        self.anchors.len()
    }

    /// Nominal segment count requested at construction.
    pub fn n_seg(&self) -> usize {
        self.n_seg
    }

    pub fn seg_len(&self) -> usize {
        self.seg_len
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn anchor_len(&self) -> usize {
        self.anchor_len
    }

    /// Half-open signal index range covered by segment `k`. Segment 0 always
    /// starts at 0; the last segment always ends at the signal length.
    pub fn signal_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = if k == 0 { 0 } else { self.anchors[k].0 };
        let end = if k + 1 < self.anchors.len() {
            self.anchors[k + 1].0
        } else {
            self.signal_len
        };
        start..end.max(start)
    }

    /// Half-open anchor index range covered by segment `k`.
    pub fn anchor_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = k * self.seg_len;
        let end = ((k + 1) * self.seg_len).min(self.anchor_len);
        start..end
    }

    /// Segment id containing the given signal timestep.
    pub fn signal_segment_of(&self, idx: usize) -> usize {
        let mut seg = 0;
        for (k, &(min_i, _)) in self.anchors.iter().enumerate().skip(1) {
            if idx >= min_i {
                seg = k;
            } else {
                break;
            }
        }
        seg
    }
}

/// Alignment parameters: nominal micro-segment count and the smoothing
/// window applied to both series before the DTW pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub n_seg: usize,
    pub ma_window: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            n_seg: 10,
            ma_window: 5,
        }
    }
}

fn l1_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// Multi-dimensional DTW distance and path.
///
/// The cell cost is the L1 distance summed over axes; the recurrence takes
/// the minimum over insertion, deletion and match. The path is recovered by
/// argmin backtracking from `(n, m)`; ties prefer the diagonal, then the
/// `(i-1, j)` move, so paths are deterministic.
pub fn dtw_path(s: &MotionSeries, t: &MotionSeries) -> Result<WarpPath> {
    if s.is_empty() || t.is_empty() {
        return Err(Error::data("DTW requires non-empty series"));
    }
    if s.n_axes() != t.n_axes() {
        return Err(Error::data(format!(
            "axis mismatch: signal has {} axes, anchor has {}",
            s.n_axes(),
            t.n_axes()
        )));
    }
    let (n, m) = (s.len(), t.len());
    let width = m + 1;
    let mut dtw = vec![f64::INFINITY; (n + 1) * width];
    dtw[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = l1_distance(s.row(i - 1), t.row(j - 1));
            let best = dtw[(i - 1) * width + j]
                .min(dtw[i * width + (j - 1)])
                .min(dtw[(i - 1) * width + (j - 1)]);
            dtw[i * width + j] = cost + best;
        }
    }

    let mut pairs = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        pairs.push((i, j));
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = dtw[(i - 1) * width + (j - 1)];
            let up = dtw[(i - 1) * width + j];
            let left = dtw[i * width + (j - 1)];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
    }
    pairs.reverse();
    Ok(WarpPath {
        pairs,
        total_cost: dtw[n * width + m],
    })
}

/// Micro-segmentation: smooth both series, align them with DTW, then pick
/// the closest warp-path pair at each anchor segment start.
///
/// The per-segment minimum distance is reset for every segment so each
/// segment receives a valid pair. Among equally close pairs the earliest
/// along the path wins.
pub fn micro_segments(
    s: &MotionSeries,
    t: &MotionSeries,
    cfg: &AlignmentConfig,
) -> Result<SegmentAlignment> {
    if cfg.n_seg == 0 {
        return Err(Error::config("segment count must be at least 1"));
    }
    if t.len() < cfg.n_seg {
        return Err(Error::config(format!(
            "segment count {} exceeds anchor length {}",
            cfg.n_seg,
            t.len()
        )));
    }
    let seg_len = t.len() / cfg.n_seg;

    if cfg.ma_window == 0 || cfg.ma_window % 2 == 0 {
        return Err(Error::config(format!(
            "smoothing window must be odd and positive, got {}",
            cfg.ma_window
        )));
    }
    // Shrink the window for very short series instead of refusing them.
    let max_w = s.len().min(t.len());
    let max_w = if max_w % 2 == 0 { max_w - 1 } else { max_w };
    let window = cfg.ma_window.min(max_w);
    validate_window(window, s.len().min(t.len()))?;
    let s_smooth = s.with_samples(smooth_columns(&s.samples().to_owned(), window))?;
    let t_smooth = t.with_samples(smooth_columns(&t.samples().to_owned(), window))?;

    let path = dtw_path(&s_smooth, &t_smooth)?;

    let mut anchors = Vec::new();
    let mut seg_start = 0;
    while seg_start < t.len() {
        let mut min_dist = f64::INFINITY;
        let mut best: Option<(usize, usize)> = None;
        for &(i, j) in path.pairs() {
            if j - 1 == seg_start {
                let d = l1_distance(s_smooth.row(i - 1), t_smooth.row(j - 1));
                if d < min_dist {
                    min_dist = d;
                    best = Some((i - 1, j - 1));
                }
            }
        }
        // Every anchor column is visited by a valid path, so a pair exists.
        anchors.push(best.expect("warp path covers every anchor column"));
        seg_start += seg_len;
    }

    Ok(SegmentAlignment {
        anchors,
        n_seg: cfg.n_seg,
        seg_len,
        signal_len: s.len(),
        anchor_len: t.len(),
    })
}
