//! The differentiable comparative scorer: a similarity score in [-1, 1]
//! between a signal repetition and its anchor, plus the exact gradient of
//! that score with respect to the signal samples.
//!
//! Attribution only needs `score` and `grad_signal`, so any differentiable
//! comparator can be plugged in. The built-in surrogate embeds each series
//! with fixed seeded weights and compares embeddings by cosine similarity,
//! which keeps gradients exact and runs without a trained model.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::MotionSeries;

/// A differentiable comparator between a signal and an anchor series.
///
/// Implementations must be pure: identical inputs yield identical outputs,
/// and instances are safe to share across worker threads.
pub trait ComparativeScorer: Send + Sync {
    /// Similarity in [-1, 1]; 1 means indistinguishable from the anchor.
    fn score(&self, signal: &MotionSeries, anchor: &MotionSeries) -> Result<f64>;

    /// Element-wise partial derivatives of `score` with respect to every
    /// signal sample, shaped like the signal.
    fn grad_signal(&self, signal: &MotionSeries, anchor: &MotionSeries) -> Result<Array2<f64>>;
}

/// Construction parameters for [`SurrogateScorer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Mean-pooling window length in samples.
    pub pool_window: usize,
    /// Hidden width of the per-window affine map.
    pub hidden_dim: usize,
    /// Embedding dimension compared by cosine similarity.
    pub embed_dim: usize,
    /// Number of input axes the scorer accepts.
    pub input_axes: usize,
    /// Apply tanh after the first affine map. Disable for a purely linear
    /// embedding (useful for closed-form checks).
    pub nonlinearity: bool,
    /// Draw bias vectors as well. Without biases an all-zero input maps to
    /// the zero embedding, where cosine similarity is undefined.
    pub bias: bool,
    /// Seed for the weight draw.
    pub seed: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            pool_window: 10,
            hidden_dim: 16,
            embed_dim: 8,
            input_axes: crate::series::IMU_AXES,
            nonlinearity: true,
            bias: true,
            seed: 42,
        }
    }
}

/// Serialized weight file, so an externally produced linearization can be
/// dropped in instead of the seeded draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateWeights {
    pub pool_window: usize,
    pub nonlinearity: bool,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

/// Fixed-weight differentiable comparator.
///
/// Each series is cut into consecutive `pool_window`-sample windows (the
/// last window may be shorter); window means pass through an affine map and
/// tanh, the per-window activations are averaged, and a second affine map
/// produces the embedding. The score is the cosine similarity of the two
/// embeddings, so it is symmetric in its arguments and equals 1 for
/// identical inputs.
#[derive(Debug, Clone)]
pub struct SurrogateScorer {
    pool_window: usize,
    nonlinearity: bool,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl SurrogateScorer {
    pub fn new(params: &SurrogateParams) -> Result<Self> {
        if params.pool_window == 0 {
            return Err(Error::config("pooling window must be at least 1"));
        }
        if params.embed_dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        if params.hidden_dim == 0 || params.input_axes == 0 {
            return Err(Error::config("hidden and input dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let w1 = draw_matrix(&mut rng, params.hidden_dim, params.input_axes);
        let b1 = if params.bias {
            draw_vector(&mut rng, params.hidden_dim)
        } else {
            Array1::zeros(params.hidden_dim)
        };
        let w2 = draw_matrix(&mut rng, params.embed_dim, params.hidden_dim);
        let b2 = if params.bias {
            draw_vector(&mut rng, params.embed_dim)
        } else {
            Array1::zeros(params.embed_dim)
        };
        Ok(Self {
            pool_window: params.pool_window,
            nonlinearity: params.nonlinearity,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn pool_window(&self) -> usize {
        self.pool_window
    }

    pub fn input_axes(&self) -> usize {
        self.w1.ncols()
    }

    pub fn from_weights(weights: &SurrogateWeights) -> Result<Self> {
        let w1 = matrix_from_rows(&weights.w1)?;
        let w2 = matrix_from_rows(&weights.w2)?;
        if w1.nrows() != weights.b1.len() || w2.nrows() != weights.b2.len() {
            return Err(Error::config("bias lengths do not match weight rows"));
        }
        if w2.ncols() != w1.nrows() {
            return Err(Error::config("w2 columns must equal w1 rows"));
        }
        if weights.pool_window == 0 {
            return Err(Error::config("pooling window must be at least 1"));
        }
        Ok(Self {
            pool_window: weights.pool_window,
            nonlinearity: weights.nonlinearity,
            w1,
            b1: Array1::from_vec(weights.b1.clone()),
            w2,
            b2: Array1::from_vec(weights.b2.clone()),
        })
    }

    pub fn to_weights(&self) -> SurrogateWeights {
        SurrogateWeights {
            pool_window: self.pool_window,
            nonlinearity: self.nonlinearity,
            w1: matrix_to_rows(&self.w1),
            b1: self.b1.to_vec(),
            w2: matrix_to_rows(&self.w2),
            b2: self.b2.to_vec(),
        }
    }

    pub fn save_weights<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, &self.to_weights())
            .map_err(|e| Error::data(format!("failed to serialize weights: {e}")))
    }

    pub fn load_weights<R: Read>(reader: R) -> Result<Self> {
        let weights: SurrogateWeights = serde_json::from_reader(reader)
            .map_err(|e| Error::config(format!("invalid weight file: {e}")))?;
        Self::from_weights(&weights)
    }

    pub fn load_weights_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::load_weights(file)
    }

    fn check_input(&self, series: &MotionSeries, role: &str) -> Result<()> {
        if series.n_axes() != self.input_axes() {
            return Err(Error::data(format!(
                "{role} has {} axes but the scorer expects {}",
                series.n_axes(),
                self.input_axes()
            )));
        }
        if series.len() < self.pool_window {
            return Err(Error::data(format!(
                "{role} length {} is shorter than the pooling window {}",
                series.len(),
                self.pool_window
            )));
        }
        Ok(())
    }

    /// Window boundaries: consecutive `pool_window` chunks, last one truncated.
    fn windows(&self, n: usize) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(n.div_ceil(self.pool_window));
        let mut start = 0;
        while start < n {
            let end = (start + self.pool_window).min(n);
            out.push(start..end);
            start = end;
        }
        out
    }

    /// Embedding plus the pre-activation of every window (needed by the
    /// backward pass).
    fn embed_detailed(&self, series: &MotionSeries) -> (Array1<f64>, Vec<Array1<f64>>) {
        let windows = self.windows(series.len());
        let k = windows.len() as f64;
        let mut pre_acts = Vec::with_capacity(windows.len());
        let mut mean_act = Array1::zeros(self.w1.nrows());
        for w in &windows {
            let mut pool = Array1::zeros(series.n_axes());
            for i in w.clone() {
                pool += &series.row(i);
            }
            pool /= w.len() as f64;
            let z = self.w1.dot(&pool) + &self.b1;
            let act = if self.nonlinearity { z.mapv(f64::tanh) } else { z.clone() };
            mean_act += &act;
            pre_acts.push(z);
        }
        mean_act /= k;
        let emb = self.w2.dot(&mean_act) + &self.b2;
        (emb, pre_acts)
    }

    fn embed(&self, series: &MotionSeries) -> Array1<f64> {
        self.embed_detailed(series).0
    }
}

impl ComparativeScorer for SurrogateScorer {
    fn score(&self, signal: &MotionSeries, anchor: &MotionSeries) -> Result<f64> {
        self.check_input(signal, "signal")?;
        self.check_input(anchor, "anchor")?;
        let a = self.embed(signal);
        let b = self.embed(anchor);
        cosine(&a, &b)
    }

    fn grad_signal(&self, signal: &MotionSeries, anchor: &MotionSeries) -> Result<Array2<f64>> {
        self.check_input(signal, "signal")?;
        self.check_input(anchor, "anchor")?;
        let (a, pre_acts) = self.embed_detailed(signal);
        let b = self.embed(anchor);

        let na2 = a.dot(&a);
        let nb2 = b.dot(&b);
        if na2 <= 0.0 || nb2 <= 0.0 {
            return Err(Error::data(
                "degenerate embedding: cosine gradient undefined at the zero vector",
            ));
        }
        let denom = (na2 * nb2).sqrt();
        let cos = a.dot(&b) / denom;
        // d cos / d a = b / (|a||b|) - cos * a / |a|^2
        let g_emb = &b / denom - &(&a * (cos / na2));

        let g_mean_act = self.w2.t().dot(&g_emb);
        let windows = self.windows(signal.len());
        let k = windows.len() as f64;

        let mut grad = Array2::zeros((signal.len(), signal.n_axes()));
        for (w, z) in windows.iter().zip(pre_acts.iter()) {
            let g_z = if self.nonlinearity {
                let dtanh = z.mapv(|v| 1.0 - v.tanh().powi(2));
                (&g_mean_act / k) * dtanh
            } else {
                &g_mean_act / k
            };
            let g_pool = self.w1.t().dot(&g_z);
            let scale = 1.0 / w.len() as f64;
            for i in w.clone() {
                let mut row = grad.row_mut(i);
                row.assign(&(&g_pool * scale));
            }
        }
        Ok(grad)
    }
}

/// A deliberately simple scorer: the inner product of the flattened input
/// with a fixed weight array. Its gradient is the weight array itself, which
/// makes attribution outputs predictable in closed form.
#[derive(Debug, Clone)]
pub struct LinearScorer {
    weights: Array2<f64>,
}

impl LinearScorer {
    /// Weights are normalized to unit Frobenius norm and scaled by `scale`,
    /// so small `scale` keeps scores inside [-1, 1] on test inputs.
    pub fn new(weights: Array2<f64>, scale: f64) -> Result<Self> {
        let norm = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::config("linear scorer weights must not be all zero"));
        }
        Ok(Self {
            weights: weights.mapv(|v| v * scale / norm),
        })
    }

    pub fn seeded(len: usize, axes: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let weights =
            Array2::from_shape_fn((len, axes), |_| rng.sample::<f64, _>(normal));
        Self::new(weights, scale)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

impl ComparativeScorer for LinearScorer {
    fn score(&self, signal: &MotionSeries, _anchor: &MotionSeries) -> Result<f64> {
        if signal.samples().raw_dim() != self.weights.raw_dim() {
            return Err(Error::data("signal shape does not match linear scorer weights"));
        }
        Ok((&self.weights * &signal.samples()).sum())
    }

    fn grad_signal(&self, signal: &MotionSeries, _anchor: &MotionSeries) -> Result<Array2<f64>> {
        if signal.samples().raw_dim() != self.weights.raw_dim() {
            return Err(Error::data("signal shape does not match linear scorer weights"));
        }
        Ok(self.weights.clone())
    }
}

/// Cosine similarity with exact results for the identical and negated cases.
fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a == b {
        return Ok(1.0);
    }
    if *a == -b.clone() {
        return Ok(-1.0);
    }
    let na2 = a.dot(a);
    let nb2 = b.dot(b);
    if na2 <= 0.0 || nb2 <= 0.0 {
        return Err(Error::data(
            "degenerate embedding: cosine similarity undefined for the zero vector",
        ));
    }
    Ok((a.dot(b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

fn draw_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(normal))
}

fn draw_vector(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    Array1::from_shape_fn(len, |_| rng.sample::<f64, _>(normal))
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::config("weight matrix must be non-empty"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config("weight matrix rows have inconsistent lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::config(e.to_string()))
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
