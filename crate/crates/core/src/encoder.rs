//! BiLSTM encoders. The utterance LSTM of each direction starts from the
//! final `(h, c)` of the matching topic LSTM direction.

use rand::Rng;

use crate::tensor_math::{Graph, NodeId, ParamId, ParamStore, Tensor, TensorError};
use crate::text::{EmbeddingTable, TokenizedUtterance};

/// One LSTM direction. Gate columns of `w_x`, `w_h` and `b` are laid out as
/// `[input | forget | output | candidate]`, each `hidden` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Weights uniform in ±1/√hidden, forget bias 1, other biases 0.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut uniform =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w_x = Tensor::matrix(input, 4 * hidden, uniform(input * 4 * hidden)).unwrap();
        let w_h = Tensor::matrix(hidden, 4 * hidden, uniform(hidden * 4 * hidden)).unwrap();
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        LstmParams {
            w_x: store.add(format!("{prefix}.w_x"), w_x),
            w_h: store.add(format!("{prefix}.w_h"), w_h),
            b: store.add(format!("{prefix}.b"), Tensor::vector(b)),
            input,
            hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiLstmParams {
            forward: LstmParams::init(store, &format!("{prefix}.fwd"), input, hidden, rng),
            backward: LstmParams::init(store, &format!("{prefix}.bwd"), input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }
}

/// Hidden and cell state, each `1 x hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        LstmState {
            h: g.constant(Tensor::zeros(&[1, hidden])),
            c: g.constant(Tensor::zeros(&[1, hidden])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    /// `L x 2h`; row `i` is `[forward_i ; backward_i]`, zero where masked.
    pub h: NodeId,
    pub mask: Vec<bool>,
    pub final_forward: LstmState,
    pub final_backward: LstmState,
}

fn check_state(g: &Graph, s: &LstmState, hidden: usize) -> Result<(), TensorError> {
    for node in [s.h, s.c] {
        let shape = g.value(node).shape();
        if g.value(node).dims2()? != (1, hidden) {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_state",
                lhs: shape.to_vec(),
                rhs: vec![1, hidden],
            });
        }
    }
    Ok(())
}

/// One step given the already projected input row `x W_x` (`1 x 4h`).
fn step_projected(
    g: &mut Graph,
    store: &ParamStore,
    xw: NodeId,
    prev: LstmState,
    params: &LstmParams,
) -> Result<LstmState, TensorError> {
    let h = params.hidden;
    let w_h = g.param(store, params.w_h);
    let b = g.param(store, params.b);
    let hw = g.matmul(prev.h, w_h)?;
    let z = g.add(xw, hw)?;
    let z = g.add_row(z, b)?;
    let zi = g.slice_cols(z, 0, h)?;
    let zf = g.slice_cols(z, h, 2 * h)?;
    let zo = g.slice_cols(z, 2 * h, 3 * h)?;
    let zg = g.slice_cols(z, 3 * h, 4 * h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let cand = g.tanh(zg);
    let keep = g.mul(f, prev.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_next = g.mul(o, tc)?;
    Ok(LstmState { h: h_next, c })
}

/// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate and
/// output squashing.
pub fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    x: NodeId,
    prev: LstmState,
    params: &LstmParams,
) -> Result<LstmState, TensorError> {
    check_state(g, &prev, params.hidden)?;
    let w_x = g.param(store, params.w_x);
    let xw = g.matmul(x, w_x)?;
    step_projected(g, store, xw, prev, params)
}

/// Embedding rows of the unmasked prefix as an `n x d` constant.
pub fn embed(
    g: &mut Graph,
    emb: &EmbeddingTable,
    u: &TokenizedUtterance,
) -> Result<NodeId, TensorError> {
    let n = u.real_len();
    if n == 0 {
        return Err(TensorError::Degenerate("embed"));
    }
    let mut data = Vec::with_capacity(n * emb.dim());
    for &idx in &u.indices[..n] {
        data.extend_from_slice(emb.lookup(idx));
    }
    Ok(g.constant(Tensor::matrix(n, emb.dim(), data)?))
}

/// Runs one direction over the `n` projected rows of `xw` in the given
/// position order; returns the hidden state per position (indexed by
/// position) and the final state.
fn run_direction(
    g: &mut Graph,
    store: &ParamStore,
    xw: NodeId,
    order: impl Iterator<Item = usize>,
    n: usize,
    init: LstmState,
    params: &LstmParams,
) -> Result<(Vec<Option<NodeId>>, LstmState), TensorError> {
    let mut outputs = vec![None; n];
    let mut state = init;
    for pos in order {
        let row = g.row(xw, pos)?;
        state = step_projected(g, store, row, state, params)?;
        outputs[pos] = Some(state.h);
    }
    Ok((outputs, state))
}

/// Bidirectional pass over the unmasked prefix. The backward direction
/// starts at the last real token, so padding never enters either state.
pub fn encode_bidirectional(
    g: &mut Graph,
    store: &ParamStore,
    u: &TokenizedUtterance,
    emb: &EmbeddingTable,
    params: &BiLstmParams,
    init_forward: LstmState,
    init_backward: LstmState,
) -> Result<EncodedSequence, TensorError> {
    let hidden = params.hidden();
    check_state(g, &init_forward, hidden)?;
    check_state(g, &init_backward, hidden)?;
    let n = u.real_len();
    let x = embed(g, emb, u)?;
    let wf = g.param(store, params.forward.w_x);
    let xf = g.matmul(x, wf)?;
    let wb = g.param(store, params.backward.w_x);
    let xb = g.matmul(x, wb)?;
    let (fwd, final_forward) = run_direction(g, store, xf, 0..n, n, init_forward, &params.forward)?;
    let (bwd, final_backward) = run_direction(
        g,
        store,
        xb,
        (0..n).rev(),
        n,
        init_backward,
        &params.backward,
    )?;

    let pad = g.constant(Tensor::zeros(&[1, 2 * hidden]));
    let mut rows = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        if i < n {
            let (f, b) = (
                fwd[i].expect("forward state"),
                bwd[i].expect("backward state"),
            );
            rows.push(g.concat_cols(&[f, b])?);
        } else {
            rows.push(pad);
        }
    }
    let h = g.stack_rows(&rows)?;
    Ok(EncodedSequence {
        h,
        mask: u.mask.clone(),
        final_forward,
        final_backward,
    })
}

/// Topic BiLSTM from zero initial states.
pub fn encode_topic(
    g: &mut Graph,
    store: &ParamStore,
    topic: &TokenizedUtterance,
    emb: &EmbeddingTable,
    params: &BiLstmParams,
) -> Result<EncodedSequence, TensorError> {
    let zf = LstmState::zeros(g, params.hidden());
    let zb = LstmState::zeros(g, params.hidden());
    encode_bidirectional(g, store, topic, emb, params, zf, zb)
}

/// Utterance BiLSTM seeded per direction by the topic's final states.
pub fn encode_utterance_conditional(
    g: &mut Graph,
    store: &ParamStore,
    u: &TokenizedUtterance,
    topic: &EncodedSequence,
    emb: &EmbeddingTable,
    params: &BiLstmParams,
) -> Result<EncodedSequence, TensorError> {
    encode_bidirectional(
        g,
        store,
        u,
        emb,
        params,
        topic.final_forward,
        topic.final_backward,
    )
}
