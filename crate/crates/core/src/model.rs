//! Classifier models with hand-written forward and backward passes.
//!
//! Parameters live in a single flat vector so the protocol layer can mix and
//! track them with plain vector algebra. Layouts:
//!
//! * logistic regression: W (classes x dim, row-major), then b (classes)
//! * one-hidden-layer tanh MLP: W1 (hidden x dim), b1 (hidden),
//!   W2 (classes x hidden), b2 (classes)
//!
//! All losses and gradients are means over the batch, so batch size only
//! changes variance, not scale.

use crate::data::Dataset;
use crate::numerics::{DenseMatrix, DenseVector, NumericsError, SeededRng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter vector has length {got}, model needs {expected}")]
    BadParamLength { expected: usize, got: usize },
    #[error("batch feature dimension {got} does not match model dim {expected}")]
    BadFeatureDim { expected: usize, got: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logreg,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub n_classes: usize,
}

/// Flat parameter vector in the layout described at module level.
pub type ModelParams = DenseVector;

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize, n_classes: usize) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::BadSpec("dim must be at least 1".into()));
        }
        if n_classes < 2 {
            return Err(ModelError::BadSpec("need at least 2 classes".into()));
        }
        if let ModelKind::Mlp { hidden } = kind {
            if hidden == 0 {
                return Err(ModelError::BadSpec(
                    "hidden width must be at least 1".into(),
                ));
            }
        }
        Ok(Self {
            kind,
            dim,
            n_classes,
        })
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Logreg => self.n_classes * self.dim + self.n_classes,
            ModelKind::Mlp { hidden } => {
                hidden * self.dim + hidden + self.n_classes * hidden + self.n_classes
            }
        }
    }

    fn check_params(&self, params: &ModelParams) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::BadParamLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// A slice of samples a gradient is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: DenseMatrix, labels: Vec<usize>) -> Self {
        assert_eq!(features.n_rows(), labels.len());
        Self { features, labels }
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            features: dataset.features.clone(),
            labels: dataset.labels.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.n_cols()
    }

    fn check(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        if self.n() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if self.dim() != spec.dim {
            return Err(ModelError::BadFeatureDim {
                expected: spec.dim,
                got: self.dim(),
            });
        }
        for &label in &self.labels {
            if label >= spec.n_classes {
                return Err(ModelError::LabelOutOfRange {
                    label,
                    n_classes: spec.n_classes,
                });
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases. Weight entries are drawn in layout
/// order so the stream position after each layer is well defined.
pub fn init_params(spec: &ModelSpec, rng: &mut SeededRng) -> ModelParams {
    let mut params = DenseVector::zeros(spec.param_count());
    let fill = |slice: std::ops::Range<usize>,
                fan_in: usize,
                fan_out: usize,
                params: &mut ModelParams,
                rng: &mut SeededRng| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for i in slice {
            params[i] = rng.next_range(-a, a);
        }
    };
    match spec.kind {
        ModelKind::Logreg => {
            fill(
                0..spec.n_classes * spec.dim,
                spec.dim,
                spec.n_classes,
                &mut params,
                rng,
            );
        }
        ModelKind::Mlp { hidden } => {
            let w1 = hidden * spec.dim;
            fill(0..w1, spec.dim, hidden, &mut params, rng);
            let w2_start = w1 + hidden;
            fill(
                w2_start..w2_start + spec.n_classes * hidden,
                hidden,
                spec.n_classes,
                &mut params,
                rng,
            );
        }
    }
    params
}

/// Softmax probabilities of one logit row, max-subtracted for stability.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// log(sum(exp(z))) with the same max subtraction as `softmax`.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

struct LogregView<'a> {
    w: &'a [f64],
    b: &'a [f64],
}

fn logreg_view<'a>(spec: &ModelSpec, params: &'a ModelParams) -> LogregView<'a> {
    let wc = spec.n_classes * spec.dim;
    let s = params.as_slice();
    LogregView {
        w: &s[..wc],
        b: &s[wc..],
    }
}

struct MlpView<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    hidden: usize,
}

fn mlp_view<'a>(spec: &ModelSpec, hidden: usize, params: &'a ModelParams) -> MlpView<'a> {
    let s = params.as_slice();
    let w1 = hidden * spec.dim;
    let b1 = w1 + hidden;
    let w2 = b1 + spec.n_classes * hidden;
    MlpView {
        w1: &s[..w1],
        b1: &s[w1..b1],
        w2: &s[b1..w2],
        b2: &s[w2..],
        hidden,
    }
}

fn logreg_logits(view: &LogregView, spec: &ModelSpec, x: &[f64]) -> Vec<f64> {
    (0..spec.n_classes)
        .map(|c| {
            let row = &view.w[c * spec.dim..(c + 1) * spec.dim];
            view.b[c] + row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Hidden activations and output logits for one sample.
fn mlp_forward(view: &MlpView, spec: &ModelSpec, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h: Vec<f64> = (0..view.hidden)
        .map(|k| {
            let row = &view.w1[k * spec.dim..(k + 1) * spec.dim];
            (view.b1[k] + row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()).tanh()
        })
        .collect();
    let z: Vec<f64> = (0..spec.n_classes)
        .map(|c| {
            let row = &view.w2[c * view.hidden..(c + 1) * view.hidden];
            view.b2[c] + row.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    (h, z)
}

fn per_sample_logits(spec: &ModelSpec, params: &ModelParams, x: &[f64]) -> Vec<f64> {
    match spec.kind {
        ModelKind::Logreg => logreg_logits(&logreg_view(spec, params), spec, x),
        ModelKind::Mlp { hidden } => mlp_forward(&mlp_view(spec, hidden, params), spec, x).1,
    }
}

/// Mean cross-entropy loss over the batch.
pub fn forward_loss(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
) -> Result<f64, ModelError> {
    spec.check_params(params)?;
    batch.check(spec)?;
    let mut total = 0.0;
    for s in 0..batch.n() {
        let z = per_sample_logits(spec, params, batch.features.row(s));
        total += log_sum_exp(&z) - z[batch.labels[s]];
    }
    Ok(total / batch.n() as f64)
}

/// Gradient of the mean cross-entropy loss with respect to the flat
/// parameter vector.
pub fn grad_weights(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
) -> Result<DenseVector, ModelError> {
    spec.check_params(params)?;
    batch.check(spec)?;
    let mut grad = DenseVector::zeros(spec.param_count());
    let scale = 1.0 / batch.n() as f64;
    match spec.kind {
        ModelKind::Logreg => {
            let view = logreg_view(spec, params);
            let wc = spec.n_classes * spec.dim;
            for s in 0..batch.n() {
                let x = batch.features.row(s);
                let p = softmax(&logreg_logits(&view, spec, x));
                for c in 0..spec.n_classes {
                    let q = scale * (p[c] - f64::from(batch.labels[s] == c));
                    for (j, &xj) in x.iter().enumerate() {
                        grad[c * spec.dim + j] += q * xj;
                    }
                    grad[wc + c] += q;
                }
            }
        }
        ModelKind::Mlp { hidden } => {
            let view = mlp_view(spec, hidden, params);
            let w1_len = hidden * spec.dim;
            let b1_off = w1_len;
            let w2_off = b1_off + hidden;
            let b2_off = w2_off + spec.n_classes * hidden;
            for s in 0..batch.n() {
                let x = batch.features.row(s);
                let (h, z) = mlp_forward(&view, spec, x);
                let p = softmax(&z);
                // dz_c = (p_c - y_c) / B
                let dz: Vec<f64> = (0..spec.n_classes)
                    .map(|c| scale * (p[c] - f64::from(batch.labels[s] == c)))
                    .collect();
                let mut dh = vec![0.0; hidden];
                for c in 0..spec.n_classes {
                    for k in 0..hidden {
                        grad[w2_off + c * hidden + k] += dz[c] * h[k];
                        dh[k] += view.w2[c * hidden + k] * dz[c];
                    }
                    grad[b2_off + c] += dz[c];
                }
                for k in 0..hidden {
                    let da = dh[k] * (1.0 - h[k] * h[k]);
                    for (j, &xj) in x.iter().enumerate() {
                        grad[k * spec.dim + j] += da * xj;
                    }
                    grad[b1_off + k] += da;
                }
            }
        }
    }
    Ok(grad)
}

/// Like `grad_weights` but against per-sample target distributions instead
/// of hard labels; `targets` is batch x classes. Used by the reconstruction
/// attack, where the label guess is itself a softmax.
pub(crate) fn grad_weights_soft(
    spec: &ModelSpec,
    params: &ModelParams,
    features: &DenseMatrix,
    targets: &DenseMatrix,
) -> Result<DenseVector, ModelError> {
    spec.check_params(params)?;
    let b = features.n_rows();
    if b == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if features.n_cols() != spec.dim {
        return Err(ModelError::BadFeatureDim {
            expected: spec.dim,
            got: features.n_cols(),
        });
    }
    if targets.n_rows() != b || targets.n_cols() != spec.n_classes {
        return Err(ModelError::BadFeatureDim {
            expected: spec.n_classes,
            got: targets.n_cols(),
        });
    }
    let mut grad = DenseVector::zeros(spec.param_count());
    let scale = 1.0 / b as f64;
    match spec.kind {
        ModelKind::Logreg => {
            let view = logreg_view(spec, params);
            let wc = spec.n_classes * spec.dim;
            for s in 0..b {
                let x = features.row(s);
                let p = softmax(&logreg_logits(&view, spec, x));
                for c in 0..spec.n_classes {
                    let q = scale * (p[c] - targets[(s, c)]);
                    for (j, &xj) in x.iter().enumerate() {
                        grad[c * spec.dim + j] += q * xj;
                    }
                    grad[wc + c] += q;
                }
            }
        }
        ModelKind::Mlp { hidden } => {
            let view = mlp_view(spec, hidden, params);
            let w1_len = hidden * spec.dim;
            let b1_off = w1_len;
            let w2_off = b1_off + hidden;
            let b2_off = w2_off + spec.n_classes * hidden;
            for s in 0..b {
                let x = features.row(s);
                let (h, z) = mlp_forward(&view, spec, x);
                let p = softmax(&z);
                let dz: Vec<f64> = (0..spec.n_classes)
                    .map(|c| scale * (p[c] - targets[(s, c)]))
                    .collect();
                let mut dh = vec![0.0; hidden];
                for c in 0..spec.n_classes {
                    for k in 0..hidden {
                        grad[w2_off + c * hidden + k] += dz[c] * h[k];
                        dh[k] += view.w2[c * hidden + k] * dz[c];
                    }
                    grad[b2_off + c] += dz[c];
                }
                for k in 0..hidden {
                    let da = dh[k] * (1.0 - h[k] * h[k]);
                    for (j, &xj) in x.iter().enumerate() {
                        grad[k * spec.dim + j] += da * xj;
                    }
                    grad[b1_off + k] += da;
                }
            }
        }
    }
    Ok(grad)
}

/// Gradient of the mean cross-entropy loss with respect to each input row;
/// result has the batch's shape.
pub fn grad_inputs(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
) -> Result<DenseMatrix, ModelError> {
    spec.check_params(params)?;
    batch.check(spec)?;
    let mut grad = DenseMatrix::zeros(batch.n(), spec.dim);
    let scale = 1.0 / batch.n() as f64;
    match spec.kind {
        ModelKind::Logreg => {
            let view = logreg_view(spec, params);
            for s in 0..batch.n() {
                let x = batch.features.row(s);
                let p = softmax(&logreg_logits(&view, spec, x));
                for (c, &pc) in p.iter().enumerate() {
                    let q = scale * (pc - f64::from(batch.labels[s] == c));
                    for j in 0..spec.dim {
                        grad[(s, j)] += q * view.w[c * spec.dim + j];
                    }
                }
            }
        }
        ModelKind::Mlp { hidden } => {
            let view = mlp_view(spec, hidden, params);
            for s in 0..batch.n() {
                let x = batch.features.row(s);
                let (h, z) = mlp_forward(&view, spec, x);
                let p = softmax(&z);
                let dz: Vec<f64> = (0..spec.n_classes)
                    .map(|c| scale * (p[c] - f64::from(batch.labels[s] == c)))
                    .collect();
                for (k, &hk) in h.iter().enumerate() {
                    let dh: f64 = (0..spec.n_classes)
                        .map(|c| view.w2[c * hidden + k] * dz[c])
                        .sum();
                    let da = dh * (1.0 - hk * hk);
                    for j in 0..spec.dim {
                        grad[(s, j)] += da * view.w1[k * spec.dim + j];
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Fraction of samples whose argmax logit matches the label. Ties resolve to
/// the lowest class index.
pub fn accuracy(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<f64, ModelError> {
    spec.check_params(params)?;
    batch.check(spec)?;
    let mut correct = 0usize;
    for s in 0..batch.n() {
        let z = per_sample_logits(spec, params, batch.features.row(s));
        let mut best = 0;
        for (c, &zc) in z.iter().enumerate() {
            if zc > z[best] {
                best = c;
            }
        }
        correct += usize::from(best == batch.labels[s]);
    }
    Ok(correct as f64 / batch.n() as f64)
}
