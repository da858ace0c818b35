//! Multi-dimensional self-attention that extracts κ reason encodings from an
//! encoded utterance.
//!
//! For positions `i, j` of the padded sequence and reason `k`:
//!
//! ```text
//! c[i,j] = tanh(h_i' W1 h_j)                 (0 where i or j is padding)
//! e[i,k] = Σ_j c[i,j] W2[j,k] + b[k]         (padding rows -> -1e30)
//! A[i,k] = exp(e[i,k]) / Σ_j exp(e[j,k])     (softmax down each column)
//! r_k    = Σ_i A[i,k] h_i                    (R = H' A, 2h x κ)
//! ```

use rand::Rng;

use crate::encoder::EncodedSequence;
use crate::tensor_math::{Graph, NodeId, ParamId, ParamStore, Tensor, TensorError};

pub const MAX_REASONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReasonAttentionParams {
    /// `2h x 2h` bilinear relatedness.
    pub w1: ParamId,
    /// `L x κ` position-to-reason map.
    pub w2: ParamId,
    /// `κ`.
    pub b: ParamId,
    pub kappa: usize,
    pub seq_len: usize,
}

impl ReasonAttentionParams {
    /// `W1` uniform in ±0.01; `W2` and `b` start at zero so attention begins
    /// near uniform.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        encoding_dim: usize,
        seq_len: usize,
        kappa: usize,
        rng: &mut R,
    ) -> Self {
        assert!((1..=MAX_REASONS).contains(&kappa), "kappa must be in 1..=8");
        let w1 = (0..encoding_dim * encoding_dim)
            .map(|_| rng.random_range(-0.01..0.01))
            .collect();
        ReasonAttentionParams {
            w1: store.add(
                format!("{prefix}.w1"),
                Tensor::matrix(encoding_dim, encoding_dim, w1).unwrap(),
            ),
            w2: store.add(format!("{prefix}.w2"), Tensor::zeros(&[seq_len, kappa])),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[kappa])),
            kappa,
            seq_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReasonMatrix {
    /// `L x L` pairwise relatedness.
    pub c: NodeId,
    /// `L x κ` reason scores.
    pub e: NodeId,
    /// `L x κ` attention weights.
    pub a: NodeId,
    /// `2h x κ` reason encodings.
    pub r: NodeId,
}

fn mask_matrix(mask: &[bool]) -> Tensor {
    let n = mask.len();
    let data = (0..n * n)
        .map(|k| if mask[k / n] && mask[k % n] { 1.0 } else { 0.0 })
        .collect();
    Tensor::matrix(n, n, data).unwrap()
}

pub fn pairwise_relatedness(
    g: &mut Graph,
    store: &ParamStore,
    h: NodeId,
    mask: &[bool],
    params: &ReasonAttentionParams,
) -> Result<NodeId, TensorError> {
    let w1 = g.param(store, params.w1);
    let hw = g.matmul(h, w1)?;
    let ht = g.transpose(h)?;
    let bilinear = g.matmul(hw, ht)?;
    let c = g.tanh(bilinear);
    let (l, _) = g.value(c).dims2()?;
    if l != mask.len() {
        return Err(TensorError::ShapeMismatch {
            op: "pairwise_relatedness",
            lhs: g.value(c).shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let m = g.constant(mask_matrix(mask));
    g.mul(c, m)
}

pub fn reason_scores(
    g: &mut Graph,
    store: &ParamStore,
    c: NodeId,
    mask: &[bool],
    params: &ReasonAttentionParams,
) -> Result<NodeId, TensorError> {
    let w2 = g.param(store, params.w2);
    let b = g.param(store, params.b);
    let cw = g.matmul(c, w2)?;
    let e = g.add_row(cw, b)?;
    g.mask_fill_rows(e, mask)
}

pub fn attention_weights(g: &mut Graph, e: NodeId, mask: &[bool]) -> Result<NodeId, TensorError> {
    g.softmax_cols(e, mask)
}

pub fn reason_matrix(g: &mut Graph, h: NodeId, a: NodeId) -> Result<NodeId, TensorError> {
    let ht = g.transpose(h)?;
    g.matmul(ht, a)
}

/// Full reason encoder over one encoded utterance.
pub fn encode_reasons(
    g: &mut Graph,
    store: &ParamStore,
    encoded: &EncodedSequence,
    params: &ReasonAttentionParams,
) -> Result<ReasonMatrix, TensorError> {
    encode_reasons_from(g, store, encoded.h, &encoded.mask, params)
}

/// Same as [`encode_reasons`] on an explicit `H` (e.g. after dropout).
pub fn encode_reasons_from(
    g: &mut Graph,
    store: &ParamStore,
    h: NodeId,
    mask: &[bool],
    params: &ReasonAttentionParams,
) -> Result<ReasonMatrix, TensorError> {
    let c = pairwise_relatedness(g, store, h, mask, params)?;
    let e = reason_scores(g, store, c, mask, params)?;
    let a = attention_weights(g, e, mask)?;
    let r = reason_matrix(g, h, a)?;
    Ok(ReasonMatrix { c, e, a, r })
}
