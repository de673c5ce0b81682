//! Bidirectional additive-margin softmax ranking loss over cosine similarity.
//!
//! For a batch of aligned pairs `(x_i, y_i)`, the source-to-target term ranks
//! every target for each source with logits `z_ij = s * (cos(x_i, y_j) - m [i = j])`
//! and takes the mean negative log-likelihood of the aligned target. The
//! target-to-source term does the same over columns. The training loss is
//! their sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_MARGIN: f64 = 0.3;
pub const DEFAULT_SCALE: f64 = 10.0;

/// Where the scale factor is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMode {
    /// `s * (cos - m)`.
    Similarity,
    /// Both embeddings are multiplied by `s` before the dot product, which
    /// scales cosine by `s^2`: `s^2 * (cos - m)`.
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub scale: f64,
    pub scale_mode: ScaleMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            scale: DEFAULT_SCALE,
            scale_mode: ScaleMode::Similarity,
        }
    }
}

impl LossConfig {
    pub fn new(margin: f64, scale: f64) -> Self {
        Self {
            margin,
            scale,
            scale_mode: ScaleMode::Similarity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin < 1.0) {
            return Err(Error::invalid(format!("margin must lie in [0, 1), got {}", self.margin)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive and finite, got {}", self.scale)));
        }
        Ok(())
    }

    /// Multiplier applied to `cos - m`.
    pub fn logit_scale(&self) -> f64 {
        match self.scale_mode {
            ScaleMode::Similarity => self.scale,
            ScaleMode::Embedding => self.scale * self.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

/// Cosine similarities between source rows and target rows. Rows `0..N` of
/// the targets are the aligned positives; a wider matrix carries extra
/// negative columns for the source-to-target direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
}

impl SimilarityMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.cols() < values.rows() {
            return Err(Error::shape(format!(
                "similarity matrix {}x{} has fewer columns than rows",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::numerical("similarity matrix has non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn batch_size(&self) -> usize {
        self.values.rows()
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.values.rows() != self.values.cols() {
            return Err(Error::shape("only square similarity matrices can be transposed"));
        }
        Ok(Self {
            values: self.values.transpose(),
        })
    }
}

/// `X Y^T` for unit-norm rows.
pub fn similarity_matrix(x: &Matrix, y: &Matrix) -> Result<SimilarityMatrix> {
    if x.rows() != y.rows() {
        return Err(Error::shape(format!("{} source rows vs {} target rows", x.rows(), y.rows())));
    }
    SimilarityMatrix::new(x.matmul_transposed(y)?)
}

/// Negative log-softmax of the positive entry for one query whose candidate
/// similarities are `sims`. When `grad` is given, `d loss / d sims` is added
/// into it, multiplied by `weight`.
pub(crate) fn query_term(
    sims: &[f64],
    positive: usize,
    config: &LossConfig,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let s = config.logit_scale();
    let logits: Vec<f64> = sims
        .iter()
        .enumerate()
        .map(|(j, &c)| s * (c - if j == positive { config.margin } else { 0.0 }))
        .collect();
    let lse = linalg::log_sum_exp(&logits);
    if let Some((g, weight)) = grad {
        for (j, (gj, &z)) in g.iter_mut().zip(&logits).enumerate() {
            let p = (z - lse).exp();
            *gj += weight * s * (p - if j == positive { 1.0 } else { 0.0 });
        }
    }
    lse - logits[positive]
}

/// Per-query loss terms in query order.
pub fn query_losses(sim: &SimilarityMatrix, config: &LossConfig, direction: Direction) -> Vec<f64> {
    let v = &sim.values;
    let n = v.rows();
    match direction {
        Direction::SourceToTarget => (0..n).map(|i| query_term(v.row(i), i, config, None)).collect(),
        Direction::TargetToSource => (0..n)
            .map(|j| {
                let column: Vec<f64> = (0..n).map(|i| v.get(i, j)).collect();
                query_term(&column, j, config, None)
            })
            .collect(),
    }
}

/// Index of the most probable candidate under the training softmax for every
/// query (ties to the lower index).
pub fn predicted_matches(sim: &SimilarityMatrix, config: &LossConfig, direction: Direction) -> Vec<usize> {
    let v = &sim.values;
    let n = v.rows();
    let s = config.logit_scale();
    let best = |sims: Vec<f64>, positive: usize| {
        let logits: Vec<f64> = sims
            .iter()
            .enumerate()
            .map(|(j, &c)| s * (c - if j == positive { config.margin } else { 0.0 }))
            .collect();
        let lse = linalg::log_sum_exp(&logits);
        let probs: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        (0..probs.len()).fold(0, |b, j| if probs[j] > probs[b] { j } else { b })
    };
    match direction {
        Direction::SourceToTarget => (0..n).map(|i| best(v.row(i).to_vec(), i)).collect(),
        Direction::TargetToSource => (0..n).map(|j| best((0..n).map(|i| v.get(i, j)).collect(), j)).collect(),
    }
}

fn mean_in_order(terms: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in terms {
        acc += t;
    }
    acc / terms.len() as f64
}

/// One direction of the ranking loss.
pub fn ams_loss(sim: &SimilarityMatrix, config: &LossConfig, direction: Direction) -> Result<f64> {
    config.validate()?;
    if sim.batch_size() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if !sim.values.is_finite() {
        return Err(Error::numerical("similarity matrix has non-finite entries"));
    }
    let loss = mean_in_order(&query_losses(sim, config, direction));
    if !loss.is_finite() {
        return Err(Error::numerical(format!("loss is {loss}")));
    }
    Ok(loss)
}

pub fn bidirectional_loss(sim: &SimilarityMatrix, config: &LossConfig) -> Result<f64> {
    Ok(ams_loss(sim, config, Direction::SourceToTarget)? + ams_loss(sim, config, Direction::TargetToSource)?)
}

/// `d loss / d sim` for the bidirectional loss. Extra columns beyond the
/// square block only take part in the source-to-target direction.
pub(crate) fn bidirectional_sim_grad(sim: &Matrix, config: &LossConfig) -> (f64, Matrix) {
    let n = sim.rows();
    let m = sim.cols();
    let w = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, m);
    let mut forward = Vec::with_capacity(n);
    for i in 0..n {
        forward.push(query_term(sim.row(i), i, config, Some((grad.row_mut(i), w))));
    }
    let mut backward = Vec::with_capacity(n);
    let mut column = vec![0.0; n];
    let mut column_grad = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            column[i] = sim.get(i, j);
        }
        column_grad.iter_mut().for_each(|v| *v = 0.0);
        backward.push(query_term(&column, j, config, Some((&mut column_grad, w))));
        for i in 0..n {
            grad.set(i, j, grad.get(i, j) + column_grad[i]);
        }
    }
    (mean_in_order(&forward) + mean_in_order(&backward), grad)
}

/// Maps `d loss / d (Xn Tn^T)` back to the unnormalized rows of `X` and `T`,
/// given the normalized rows and the original norms.
pub(crate) fn backprop_similarity(
    xn: &Matrix,
    xnorm: &[f64],
    tn: &Matrix,
    tnorm: &[f64],
    g: &Matrix,
) -> (Matrix, Matrix) {
    let d = xn.cols();
    let mut dx = Matrix::zeros(xn.rows(), d);
    let mut tmp = vec![0.0; d];
    for i in 0..xn.rows() {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..tn.rows() {
            linalg::axpy(g.get(i, j), tn.row(j), &mut tmp);
        }
        linalg::normalize_backward(xn.row(i), xnorm[i], &tmp, dx.row_mut(i));
    }
    let mut dt = Matrix::zeros(tn.rows(), d);
    for j in 0..tn.rows() {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..xn.rows() {
            linalg::axpy(g.get(i, j), xn.row(i), &mut tmp);
        }
        linalg::normalize_backward(tn.row(j), tnorm[j], &tmp, dt.row_mut(j));
    }
    (dx, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient w.r.t. the unnormalized source rows.
    pub dx: Matrix,
    /// Gradient w.r.t. the unnormalized target rows.
    pub dy: Matrix,
    /// Gradient w.r.t. the unnormalized extra negative targets, if any.
    pub d_negatives: Option<Matrix>,
}

/// Bidirectional loss of the raw (not necessarily normalized) embeddings and
/// its gradient, including the L2-normalization Jacobian.
pub fn loss_grad(x: &Matrix, y: &Matrix, config: &LossConfig) -> Result<LossGrad> {
    loss_grad_with_negatives(x, y, None, config)
}

/// As [`loss_grad`], with `negatives` appended as extra target columns for
/// every source row.
pub fn loss_grad_with_negatives(
    x: &Matrix,
    y: &Matrix,
    negatives: Option<&Matrix>,
    config: &LossConfig,
) -> Result<LossGrad> {
    config.validate()?;
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::shape(format!(
            "source {}x{} vs target {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let (xn, xnorm) = linalg::normalize_rows(x)?;
    let (yn, ynorm) = linalg::normalize_rows(y)?;
    let (targets, tnorm) = match negatives {
        Some(neg) => {
            let (nn, nnorm) = linalg::normalize_rows(neg)?;
            let mut norms = ynorm.clone();
            norms.extend(nnorm);
            (yn.vstack(&nn)?, norms)
        }
        None => (yn, ynorm),
    };
    let sim = xn.matmul_transposed(&targets)?;
    if !sim.is_finite() {
        return Err(Error::numerical("similarity matrix has non-finite entries"));
    }
    let (loss, g) = bidirectional_sim_grad(&sim, config);

    let (dx, dt) = backprop_similarity(&xn, &xnorm, &targets, &tnorm, &g);
    if !(loss.is_finite() && dx.is_finite() && dt.is_finite()) {
        return Err(Error::numerical("non-finite loss gradient"));
    }
    let n = y.rows();
    let (dy, d_negatives) = if negatives.is_some() {
        (dt.slice_rows(0, n), Some(dt.slice_rows(n, dt.rows())))
    } else {
        (dt, None)
    };
    Ok(LossGrad {
        loss,
        dx,
        dy,
        d_negatives,
    })
}
