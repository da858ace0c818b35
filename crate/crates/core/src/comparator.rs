//! Reason-wise comparison of two reason matrices and the three-way
//! (dis)agreement classifier.

use rand::Rng;
use thiserror::Error;

use crate::corpus::Label;
use crate::tensor_math::{Graph, NodeId, ParamId, ParamStore, Tensor, TensorError, PROB_FLOOR};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparisonVector {
    /// `1 x 2h`, max over all `r_i^P ⊙ r_j^Q`.
    pub s_mul: NodeId,
    /// `1 x 2h`, max over all `(r_i^P − r_j^Q)²`.
    pub s_sub: NodeId,
    /// `1 x 4h`, `[s_mul ; s_sub]`.
    pub s: NodeId,
}

/// Compares every reason column of `r_p` with every reason column of `r_q`
/// (both `2h x κ`) and max-pools each comparison family.
pub fn compare_reasons(
    g: &mut Graph,
    r_p: NodeId,
    r_q: NodeId,
) -> Result<ComparisonVector, TensorError> {
    let (vp, vq) = (g.value(r_p), g.value(r_q));
    if vp.shape() != vq.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "compare_reasons",
            lhs: vp.shape().to_vec(),
            rhs: vq.shape().to_vec(),
        });
    }
    let (_, kappa) = vp.dims2()?;
    let cols_p: Vec<NodeId> = (0..kappa)
        .map(|i| g.col(r_p, i))
        .collect::<Result<_, _>>()?;
    let cols_q: Vec<NodeId> = (0..kappa)
        .map(|j| g.col(r_q, j))
        .collect::<Result<_, _>>()?;
    let mut muls = Vec::with_capacity(kappa * kappa);
    let mut subs = Vec::with_capacity(kappa * kappa);
    for &rp in &cols_p {
        for &rq in &cols_q {
            muls.push(g.mul(rp, rq)?);
            subs.push(g.sub_square(rp, rq)?);
        }
    }
    let s_mul = g.global_max_pool(&muls)?;
    let s_sub = g.global_max_pool(&subs)?;
    let s = g.concat_cols(&[s_mul, s_sub])?;
    Ok(ComparisonVector { s_mul, s_sub, s })
}

/// Two-layer feed-forward network: `relu(s W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl ClassifierParams {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::matrix(rows, cols, data).unwrap()
        };
        let w1 = uniform(input, hidden);
        let w2 = uniform(hidden, NUM_CLASSES);
        ClassifierParams {
            w1: store.add(format!("{prefix}.w1"), w1),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add(format!("{prefix}.w2"), w2),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[NUM_CLASSES])),
            input,
            hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierOutput {
    pub logits: NodeId,
    pub probs: NodeId,
}

pub fn classify(
    g: &mut Graph,
    store: &ParamStore,
    s: NodeId,
    params: &ClassifierParams,
) -> Result<ClassifierOutput, TensorError> {
    let w1 = g.param(store, params.w1);
    let b1 = g.param(store, params.b1);
    let w2 = g.param(store, params.w2);
    let b2 = g.param(store, params.b2);
    let z = g.matmul(s, w1)?;
    let z = g.add_row(z, b1)?;
    let hidden = g.relu(z);
    let logits = g.matmul(hidden, w2)?;
    let logits = g.add_row(logits, b2)?;
    let probs = g.softmax_rows(logits)?;
    Ok(ClassifierOutput { logits, probs })
}

/// Probability row `(Agree, Disagree, Neither)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionDistribution(pub [f64; NUM_CLASSES]);

impl PredictionDistribution {
    pub fn from_slice(p: &[f64]) -> Self {
        PredictionDistribution([p[0], p[1], p[2]])
    }

    /// First class with the largest probability.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if self.0[k] > self.0[best] {
                best = k;
            }
        }
        Label::from_index(best).expect("three classes")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label index {0} is outside the three-class set")]
    BadLabel(usize),
    #[error("{predictions} predictions but {labels} labels")]
    Length { predictions: usize, labels: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Batch objective in the graph:
/// `−Σ_i log ŷ_i[y_i] + λ Σ_θ θ²`, summed (not averaged) over the batch.
pub fn loss(
    g: &mut Graph,
    probs: &[NodeId],
    labels: &[usize],
    params: &[NodeId],
    lambda: f64,
) -> Result<NodeId, LossError> {
    if probs.len() != labels.len() {
        return Err(LossError::Length {
            predictions: probs.len(),
            labels: labels.len(),
        });
    }
    let mut terms = Vec::with_capacity(probs.len() + params.len());
    for (&p, &y) in probs.iter().zip(labels) {
        if y >= NUM_CLASSES {
            return Err(LossError::BadLabel(y));
        }
        terms.push(g.cross_entropy(p, y)?);
    }
    if lambda != 0.0 {
        for &theta in params {
            let sq = g.sum_squares(theta);
            terms.push(g.scale(sq, lambda));
        }
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    Ok(g.add_all(&terms)?)
}

/// Value-only form of [`loss`] for already computed probabilities and a
/// precomputed `Σ θ²`.
pub fn loss_value(
    predictions: &[PredictionDistribution],
    labels: &[usize],
    sum_of_squares: f64,
    lambda: f64,
) -> Result<f64, LossError> {
    if predictions.len() != labels.len() {
        return Err(LossError::Length {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut total = 0.0;
    for (p, &y) in predictions.iter().zip(labels) {
        if y >= NUM_CLASSES {
            return Err(LossError::BadLabel(y));
        }
        total -= p.0[y].max(PROB_FLOOR).ln();
    }
    Ok(total + lambda * sum_of_squares)
}
