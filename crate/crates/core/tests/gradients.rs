mod common;

use common::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rcn::encoder::{
    encode_topic, encode_utterance_conditional, lstm_step, BiLstmParams, LstmParams, LstmState,
};
use rcn::model::{Architecture, ModelConfig};
use rcn::synthetic::{desk_config, desk_gradient_check, desk_instance};
use rcn::tensor_math::{grad_check, Graph, NodeId, ParamStore, Tensor, TensorError};
use rcn::text::EMBEDDING_DIM;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: usize = 100;

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<NodeId, TensorError>>;

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Fixed pseudo-random read-out weights so the scalar loss depends on every
/// output element differently.
fn readout(g: &mut Graph, out: NodeId) -> Result<NodeId, TensorError> {
    let shape = g.value(out).shape().to_vec();
    let w = random_tensor(&mut rng(4242), &shape);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn check_op(name: &str, seed: u64, make: impl Fn(&mut ChaCha8Rng) -> (ParamStore, Build)) {
    let mut r = rng(seed);
    for k in 0..INSTANCES {
        let (store, build) = make(&mut r);
        let report = grad_check(&store, EPS, |g, s| {
            let out = build(g, s)?;
            readout(g, out)
        })
        .unwrap();
        assert!(
            report.max_rel_err < TOL,
            "{name} instance {k}: rel err {:e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(1..5), r.random_range(1..5))
}

fn unary(name: &str, seed: u64, f: fn(&mut Graph, NodeId) -> NodeId) {
    check_op(name, seed, |r| {
        let (m, n) = dims(r);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[m, n]));
        (
            s,
            Box::new(move |g, st| {
                let x = g.param(st, a);
                Ok(f(g, x))
            }),
        )
    });
}

fn binary(name: &str, seed: u64, f: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId, TensorError>) {
    check_op(name, seed, |r| {
        let (m, n) = dims(r);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[m, n]));
        let b = s.add("b", random_tensor(r, &[m, n]));
        (
            s,
            Box::new(move |g, st| {
                let (x, y) = (g.param(st, a), g.param(st, b));
                f(g, x, y)
            }),
        )
    });
}

#[test]
fn matmul_gradient() {
    check_op("matmul", 1, |r| {
        let (m, k) = dims(r);
        let n = r.random_range(1..5);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[m, k]));
        let b = s.add("b", random_tensor(r, &[k, n]));
        (
            s,
            Box::new(move |g, st| {
                let (x, y) = (g.param(st, a), g.param(st, b));
                g.matmul(x, y)
            }),
        )
    });
}

#[test]
fn elementwise_gradients() {
    binary("add", 2, |g, a, b| g.add(a, b));
    binary("mul", 3, |g, a, b| g.mul(a, b));
    binary("sub_square", 4, |g, a, b| g.sub_square(a, b));
}

#[test]
fn activation_gradients() {
    unary("tanh", 5, |g, a| g.tanh(a));
    unary("sigmoid", 6, |g, a| g.sigmoid(a));
    unary("relu", 7, |g, a| g.relu(a));
    unary("scale", 8, |g, a| g.scale(a, -2.5));
    unary("sum_squares", 9, |g, a| g.sum_squares(a));
    unary("transpose", 10, |g, a| g.transpose(a).unwrap());
}

#[test]
fn add_row_gradient() {
    check_op("add_row", 11, |r| {
        let (m, n) = dims(r);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[m, n]));
        let b = s.add("b", random_tensor(r, &[n]));
        (
            s,
            Box::new(move |g, st| {
                let (x, y) = (g.param(st, a), g.param(st, b));
                g.add_row(x, y)
            }),
        )
    });
}

#[test]
fn slicing_and_stacking_gradients() {
    check_op("slice_row_col", 12, |r| {
        let m = r.random_range(2..5);
        let n = r.random_range(2..5);
        let (i, j) = (r.random_range(0..m), r.random_range(0..n));
        let start = r.random_range(0..n);
        let end = r.random_range(start + 1..=n);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[m, n]));
        (
            s,
            Box::new(move |g, st| {
                let x = g.param(st, a);
                let sl = g.slice_cols(x, start, end)?;
                let row = g.row(x, i)?;
                let col = g.col(x, j)?;
                let t = g.transpose(col)?;
                let prod = g.mul(t, t)?;
                let parts = [g.sum(sl), g.sum_squares(row), g.sum(prod)];
                g.add_all(&parts)
            }),
        )
    });
    check_op("concat_stack", 13, |r| {
        let n = r.random_range(1..4);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[1, n]));
        let b = s.add("b", random_tensor(r, &[1, n + 1]));
        (
            s,
            Box::new(move |g, st| {
                let (x, y) = (g.param(st, a), g.param(st, b));
                let c = g.concat_cols(&[x, y, x])?;
                let d = g.stack_rows(&[c, c])?;
                Ok(g.tanh(d))
            }),
        )
    });
}

#[test]
fn max_pool_gradient() {
    check_op("global_max_pool", 14, |r| {
        let count = r.random_range(1..10);
        let n = r.random_range(1..5);
        let mut s = ParamStore::new();
        let ids: Vec<_> = (0..count)
            .map(|k| s.add(format!("v{k}"), random_tensor(r, &[1, n])))
            .collect();
        (
            s,
            Box::new(move |g, st| {
                let nodes: Vec<_> = ids.iter().map(|&id| g.param(st, id)).collect();
                g.global_max_pool(&nodes)
            }),
        )
    });
}

#[test]
fn softmax_and_masking_gradients() {
    check_op("softmax_cols", 15, |r| {
        let (m, n) = dims(r);
        let real = r.random_range(1..=m);
        let mask: Vec<bool> = (0..m).map(|i| i < real).collect();
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[m, n]));
        (
            s,
            Box::new(move |g, st| {
                let x = g.param(st, a);
                let e = g.mask_fill_rows(x, &mask)?;
                g.softmax_cols(e, &mask)
            }),
        )
    });
    check_op("softmax_rows_ce", 16, |r| {
        let n = r.random_range(2..5);
        let label = r.random_range(0..n);
        let mut s = ParamStore::new();
        let a = s.add("a", random_tensor(r, &[1, n]));
        (
            s,
            Box::new(move |g, st| {
                let x = g.param(st, a);
                let p = g.softmax_rows(x)?;
                let ce = g.cross_entropy(p, label)?;
                let both = [ce, g.sum_squares(p)];
                g.add_all(&both)
            }),
        )
    });
}

#[test]
fn lstm_three_chained_steps() {
    check_op("lstm", 17, |r| {
        let (input, hidden) = (r.random_range(1..4), r.random_range(1..4));
        let mut s = ParamStore::new();
        let p = LstmParams::init(&mut s, "cell", input, hidden, r);
        for id in [p.w_x, p.w_h, p.b] {
            let shape = s.get(id).shape().to_vec();
            *s.get_mut(id) = random_tensor(r, &shape);
        }
        let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(r, &[1, input])).collect();
        let h0 = s.add("h0", random_tensor(r, &[1, hidden]));
        let c0 = s.add("c0", random_tensor(r, &[1, hidden]));
        (
            s,
            Box::new(move |g, st| {
                let mut state = LstmState {
                    h: g.param(st, h0),
                    c: g.param(st, c0),
                };
                for x in &xs {
                    let xn = g.constant(x.clone());
                    state = lstm_step(g, st, xn, state, &p)?;
                }
                g.concat_cols(&[state.h, state.c])
            }),
        )
    });
}

#[test]
fn conditional_encoding_passes_gradient_into_topic_encoder() {
    let inst = desk_instance(desk_config(2), 3);
    let ex = &inst.batch[0];
    let mut store = ParamStore::new();
    let mut r = rng(8);
    let topic = BiLstmParams::init(&mut store, "topic", EMBEDDING_DIM, 3, &mut r);
    let utter = BiLstmParams::init(&mut store, "utterance", EMBEDDING_DIM, 3, &mut r);
    let build = |g: &mut Graph, st: &ParamStore| {
        let t = encode_topic(g, st, &ex.topic, &inst.embeddings, &topic)?;
        let u = encode_utterance_conditional(g, st, &ex.p, &t, &inst.embeddings, &utter)?;
        readout(g, u.h)
    };
    let mut g = Graph::new();
    let loss = build(&mut g, &store).unwrap();
    g.backward(loss).unwrap();
    let grads = g.param_grads(&store);
    for id in [
        topic.forward.w_x,
        topic.forward.w_h,
        topic.backward.w_x,
        topic.backward.b,
    ] {
        assert!(
            grads[id.index()].data().iter().any(|&x| x != 0.0),
            "{}",
            store.name(id)
        );
    }
    let report = grad_check(&store, EPS, build).unwrap();
    assert!(report.max_rel_err < TOL, "{report:?}");
}

#[test]
fn full_network_gradients_for_other_reason_counts_and_baseline() {
    for kappa in [1, 3] {
        let r = desk_gradient_check(desk_config(kappa), 11, 1e-2, EPS).unwrap();
        assert!(r.max_rel_err < TOL, "kappa {kappa}: {r:?}");
    }
    let base = ModelConfig {
        arch: Architecture::BiLstm,
        ..desk_config(2)
    };
    let r = desk_gradient_check(base, 12, 1e-2, EPS).unwrap();
    assert!(r.max_rel_err < TOL, "baseline: {r:?}");
}
