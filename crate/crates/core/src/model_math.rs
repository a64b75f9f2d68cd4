//! Numerical core of the image-to-serialization model: topic attention over
//! text features, LayerNorm fusion with image features, multi-image
//! max-pooling and the token cross-entropy objective, with analytic
//! gradients and a finite-difference checker.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// Dense real matrix with positive dimensions and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self, MathError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(MathError::Shape(format!("empty matrix {:?}", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MathError::Input("matrix has non-finite entries".into()));
        }
        Ok(FeatureMatrix(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MathError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MathError::Shape("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), cols), flat)
            .map_err(|e| MathError::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Row-wise softmax, shifted by each row's maximum for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn check_inner(q: &FeatureMatrix, h: &FeatureMatrix) -> Result<(), MathError> {
    if q.cols() != h.cols() {
        return Err(MathError::Shape(format!(
            "queries have width {}, features have width {}",
            q.cols(),
            h.cols()
        )));
    }
    Ok(())
}

/// `Softmax(Q Hᵀ)`, one row of weights over the `l` text positions per topic.
pub fn attention_weights(q: &FeatureMatrix, h: &FeatureMatrix) -> Result<Array2<f64>, MathError> {
    check_inner(q, h)?;
    Ok(softmax_rows(&q.0.dot(&h.0.t())))
}

/// `Softmax(Q Hᵀ) H`: each topic query pools the text features into a convex
/// combination of the rows of `H`.
pub fn attention_pool(q: &FeatureMatrix, h: &FeatureMatrix) -> Result<FeatureMatrix, MathError> {
    let a = attention_weights(q, h)?;
    Ok(FeatureMatrix(a.dot(&h.0)))
}

/// Gradient of a scalar objective with respect to `Q`, given the upstream
/// gradient with respect to the pooled output.
pub fn attention_pool_grad_q(
    q: &FeatureMatrix,
    h: &FeatureMatrix,
    upstream: &Array2<f64>,
) -> Result<Array2<f64>, MathError> {
    let a = attention_weights(q, h)?;
    if upstream.dim() != (q.rows(), h.cols()) {
        return Err(MathError::Shape(format!("upstream gradient has shape {:?}", upstream.dim())));
    }
    let grad_a = upstream.dot(&h.0.t());
    let row_dot = (&a * &grad_a).sum_axis(Axis(1)).insert_axis(Axis(1));
    let grad_logits = &a * &(&grad_a - &row_dot);
    Ok(grad_logits.dot(&h.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
}

impl LayerNormParams {
    /// Unit scale, zero shift.
    pub fn identity(dim: usize, epsilon: f64) -> Self {
        LayerNormParams { gamma: vec![1.0; dim], beta: vec![0.0; dim], epsilon }
    }

    fn check(&self, dim: usize) -> Result<(), MathError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(MathError::Input("LayerNorm epsilon must be positive".into()));
        }
        if self.gamma.len() != dim || self.beta.len() != dim {
            return Err(MathError::Shape(format!(
                "LayerNorm parameters have widths {}/{} for {dim} features",
                self.gamma.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }
}

fn normalize_row(row: ArrayView1<f64>, eps: f64) -> (Array1<f64>, f64) {
    let mean = row.mean().unwrap_or(0.0);
    let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0);
    let inv_std = 1.0 / (var + eps).sqrt();
    (row.mapv(|v| (v - mean) * inv_std), inv_std)
}

/// `LayerNorm(D_img + D_txt)` with population variance per row.
pub fn fuse(
    d_img: &FeatureMatrix,
    d_txt: &FeatureMatrix,
    params: &LayerNormParams,
) -> Result<FeatureMatrix, MathError> {
    if d_img.0.dim() != d_txt.0.dim() {
        return Err(MathError::Shape(format!(
            "image features {:?} vs text features {:?}",
            d_img.0.dim(),
            d_txt.0.dim()
        )));
    }
    params.check(d_img.cols())?;
    let sum = &d_img.0 + &d_txt.0;
    let gamma = ArrayView1::from(&params.gamma);
    let beta = ArrayView1::from(&params.beta);
    let mut out = Array2::zeros(sum.dim());
    for (src, mut dst) in sum.rows().into_iter().zip(out.rows_mut()) {
        let (xhat, _) = normalize_row(src, params.epsilon);
        dst.assign(&(&xhat * &gamma + beta));
    }
    Ok(FeatureMatrix(out))
}

/// Gradient of a scalar objective with respect to the fused input
/// `D_img + D_txt` (and so to each summand), given the upstream gradient with
/// respect to the LayerNorm output.
pub fn fuse_grad_input(
    input: &FeatureMatrix,
    params: &LayerNormParams,
    upstream: &Array2<f64>,
) -> Result<Array2<f64>, MathError> {
    params.check(input.cols())?;
    if upstream.dim() != input.0.dim() {
        return Err(MathError::Shape(format!("upstream gradient has shape {:?}", upstream.dim())));
    }
    let e = input.cols() as f64;
    let gamma = ArrayView1::from(&params.gamma);
    let mut out = Array2::zeros(input.0.dim());
    for ((x, g), mut dst) in input.0.rows().into_iter().zip(upstream.rows()).zip(out.rows_mut()) {
        let (xhat, inv_std) = normalize_row(x, params.epsilon);
        let gx = &g * &gamma;
        let mean_g = gx.sum() / e;
        let mean_gx = (&gx * &xhat).sum() / e;
        dst.assign(&((&gx - mean_g - &xhat * mean_gx) * inv_std));
    }
    Ok(out)
}

/// Element-wise maximum over the feature vectors of a multi-image study.
pub fn max_pool_features(vectors: &[Vec<f64>]) -> Result<Vec<f64>, MathError> {
    let first = vectors.first().ok_or_else(|| MathError::Input("no feature vectors".into()))?;
    let mut out = first.clone();
    for (i, v) in vectors.iter().enumerate().skip(1) {
        if v.len() != out.len() {
            return Err(MathError::Shape(format!(
                "vector {i} has length {} (expected {})",
                v.len(),
                out.len()
            )));
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o = o.max(*x);
        }
    }
    Ok(out)
}

/// Reference projection of a global image feature `d` into per-topic
/// representations, row `i` being `projections[i] · d`. This is a stand-in
/// interface: the projection used by a trained model is not fixed here.
pub fn project_disease_representations(
    d: &[f64],
    projections: &[Array2<f64>],
) -> Result<FeatureMatrix, MathError> {
    if projections.is_empty() {
        return Err(MathError::Input("no projection matrices".into()));
    }
    let d = ArrayView1::from(d);
    let width = projections[0].nrows();
    let mut out = Array2::zeros((projections.len(), width));
    for (i, p) in projections.iter().enumerate() {
        if p.ncols() != d.len() || p.nrows() != width {
            return Err(MathError::Shape(format!("projection {i} has shape {:?}", p.dim())));
        }
        out.row_mut(i).assign(&p.dot(&d));
    }
    FeatureMatrix::new(out)
}

/// Predicted word distributions over `l` positions with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    probs: Array2<f64>,
    targets: Vec<usize>,
}

/// Tolerance on each probability row summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
/// Smallest probability fed to the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

impl ProbTable {
    /// `targets[i]` is the vocabulary index of the ground-truth word at
    /// position `i`.
    pub fn new(probs: Array2<f64>, targets: Vec<usize>) -> Result<Self, MathError> {
        let (l, v) = probs.dim();
        if l == 0 || v == 0 {
            return Err(MathError::Shape(format!("empty probability table {:?}", (l, v))));
        }
        if targets.len() != l {
            return Err(MathError::Shape(format!("{} targets for {l} positions", targets.len())));
        }
        if let Some(i) = targets.iter().position(|&t| t >= v) {
            return Err(MathError::Input(format!("target at position {i} outside vocabulary of {v}")));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(MathError::Input(format!("row {i} has a value outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(MathError::Input(format!("row {i} sums to {}", row.sum())));
            }
        }
        Ok(ProbTable { probs, targets })
    }

    /// Builds the table from a one-hot target matrix of the same shape.
    pub fn from_one_hot(probs: Array2<f64>, one_hot: &Array2<f64>) -> Result<Self, MathError> {
        if probs.dim() != one_hot.dim() {
            return Err(MathError::Shape("probability and target tables differ in shape".into()));
        }
        let mut targets = Vec::with_capacity(one_hot.nrows());
        for (i, row) in one_hot.rows().into_iter().enumerate() {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &y)| y == 1.0).map(|(j, _)| j).collect();
            if ones.len() != 1 || row.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(MathError::Input(format!("target row {i} is not one-hot")));
            }
            targets.push(ones[0]);
        }
        Self::new(probs, targets)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

/// `-(1/l) Σ_i Σ_j y_ij ln p_ij`. Target probabilities below [`LOG_FLOOR`]
/// are clamped to it, with a warning.
pub fn cross_entropy(table: &ProbTable) -> f64 {
    let l = table.targets.len() as f64;
    let mut total = 0.0;
    for (i, &t) in table.targets.iter().enumerate() {
        let p = table.probs[[i, t]];
        if p < LOG_FLOOR {
            tracing::warn!(position = i, probability = p, "target probability floored for log");
        }
        total -= p.max(LOG_FLOOR).ln();
    }
    total / l
}

/// Cross-entropy of `softmax(logits)` against `targets` and its gradient
/// with respect to the logits, `(softmax − y) / l`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>), MathError> {
    let probs = softmax_rows(logits);
    let table = ProbTable::new(probs.clone(), targets.to_vec())?;
    let loss = cross_entropy(&table);
    let mut grad = probs;
    for (i, &t) in targets.iter().enumerate() {
        grad[[i, t]] -= 1.0;
    }
    grad /= targets.len() as f64;
    Ok((loss, grad))
}

/// Largest relative error between `analytic` and central finite differences
/// of `f` at `point`, each coordinate perturbed by `±h`. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, analytic: &Array2<f64>, point: &Array2<f64>, h: f64) -> Result<f64, MathError>
where
    F: Fn(&Array2<f64>) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(MathError::Input("step must be positive".into()));
    }
    if analytic.dim() != point.dim() {
        return Err(MathError::Shape("gradient and point differ in shape".into()));
    }
    let mut x = point.clone();
    let mut worst = 0.0f64;
    for idx in ndarray::indices(point.dim()) {
        let orig = x[idx];
        x[idx] = orig + h;
        let plus = f(&x);
        x[idx] = orig - h;
        let minus = f(&x);
        x[idx] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
