//! Scalar-loop reference implementations and random instance builders shared
//! by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcn::corpus::Label;
use rcn::reason::ReasonAttentionParams;
use rcn::tensor_math::{ParamStore, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).expect("rectangular")
}

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().expect("matrix");
    (0..r)
        .map(|i| (0..c).map(|j| t.get(i, j)).collect())
        .collect()
}

/// Random reason-encoder instance: `H` is `L x 2h` with zero padding rows,
/// plus fresh `W1`, `W2`, `b`.
pub struct ReasonInstance {
    pub h: Mat,
    pub mask: Vec<bool>,
    pub w1: Mat,
    pub w2: Mat,
    pub b: Vec<f64>,
    pub store: ParamStore,
    pub params: ReasonAttentionParams,
}

pub fn reason_instance(seed: u64, max_l: usize, max_h: usize, max_kappa: usize) -> ReasonInstance {
    let mut r = rng(seed);
    let l = r.random_range(1..=max_l);
    let hid = r.random_range(1..=max_h);
    let kappa = r.random_range(1..=max_kappa);
    let d = 2 * hid;
    let real = r.random_range(1..=l);
    let mask: Vec<bool> = (0..l).map(|i| i < real).collect();
    let mut h = random_mat(&mut r, l, d, 1.0);
    for (i, row) in h.iter_mut().enumerate() {
        if !mask[i] {
            row.fill(0.0);
        }
    }
    let w1 = random_mat(&mut r, d, d, 0.8);
    let w2 = random_mat(&mut r, l, kappa, 1.5);
    let b: Vec<f64> = (0..kappa).map(|_| r.random_range(-0.5..0.5)).collect();
    let mut store = ParamStore::new();
    let params = ReasonAttentionParams::init(&mut store, "reason", d, l, kappa, &mut r);
    *store.get_mut(params.w1) = to_tensor(&w1);
    *store.get_mut(params.w2) = to_tensor(&w2);
    *store.get_mut(params.b) = Tensor::vector(b.clone());
    ReasonInstance {
        h,
        mask,
        w1,
        w2,
        b,
        store,
        params,
    }
}

/// `c[i][j] = tanh(h_i' W1 h_j)`, zero when either position is padding.
pub fn oracle_relatedness(h: &Mat, w1: &Mat, mask: &[bool]) -> Mat {
    let l = h.len();
    let d = w1.len();
    let mut c = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in 0..l {
            if !(mask[i] && mask[j]) {
                continue;
            }
            let mut total = 0.0;
            for a in 0..d {
                let mut hw = 0.0;
                for bb in 0..d {
                    hw += h[i][bb] * w1[bb][a];
                }
                total += hw * h[j][a];
            }
            c[i][j] = total.tanh();
        }
    }
    c
}

/// `e[i][k] = Σ_j c[i][j] W2[j][k] + b[k]`, padding rows at the surrogate.
pub fn oracle_scores(c: &Mat, w2: &Mat, b: &[f64], mask: &[bool], surrogate: f64) -> Mat {
    let l = c.len();
    let kappa = b.len();
    let mut e = vec![vec![0.0; kappa]; l];
    for i in 0..l {
        for k in 0..kappa {
            if !mask[i] {
                e[i][k] = surrogate;
                continue;
            }
            let mut total = 0.0;
            for j in 0..l {
                total += c[i][j] * w2[j][k];
            }
            e[i][k] = total + b[k];
        }
    }
    e
}

pub fn oracle_softmax_cols(e: &Mat, mask: &[bool]) -> Mat {
    let l = e.len();
    let kappa = e[0].len();
    let mut a = vec![vec![0.0; kappa]; l];
    for k in 0..kappa {
        let mut max = f64::NEG_INFINITY;
        for i in 0..l {
            if mask[i] && e[i][k] > max {
                max = e[i][k];
            }
        }
        let mut total = 0.0;
        for i in 0..l {
            if mask[i] {
                a[i][k] = (e[i][k] - max).exp();
                total += a[i][k];
            }
        }
        for i in 0..l {
            if mask[i] {
                a[i][k] /= total;
            }
        }
    }
    a
}

/// `R[d][k] = Σ_i H[i][d] A[i][k]`.
pub fn oracle_reason_matrix(h: &Mat, a: &Mat) -> Mat {
    let l = h.len();
    let d = h[0].len();
    let kappa = a[0].len();
    let mut r = vec![vec![0.0; kappa]; d];
    for dd in 0..d {
        for k in 0..kappa {
            let mut total = 0.0;
            for i in 0..l {
                total += h[i][dd] * a[i][k];
            }
            r[dd][k] = total;
        }
    }
    r
}

/// Per-dimension maxima over all `κ²` column pairs: `(s_mul, s_sub)`.
pub fn oracle_compare(rp: &Mat, rq: &Mat) -> (Vec<f64>, Vec<f64>) {
    let d = rp.len();
    let kappa = rp[0].len();
    let mut s_mul = vec![f64::NEG_INFINITY; d];
    let mut s_sub = vec![f64::NEG_INFINITY; d];
    for dd in 0..d {
        for i in 0..kappa {
            for j in 0..kappa {
                let m = rp[dd][i] * rq[dd][j];
                let diff = rp[dd][i] - rq[dd][j];
                let s = diff * diff;
                if m > s_mul[dd] {
                    s_mul[dd] = m;
                }
                if s > s_sub[dd] {
                    s_sub[dd] = s;
                }
            }
        }
    }
    (s_mul, s_sub)
}

pub fn oracle_max_pool(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vs[0].clone();
    for v in &vs[1..] {
        for (o, &x) in out.iter_mut().zip(v) {
            if x > *o {
                *o = x;
            }
        }
    }
    out
}

/// Macro-F1 through explicit precision and recall, counted pair by pair.
pub fn oracle_macro_f1(gold: &[Label], pred: &[Label]) -> (f64, [f64; 3]) {
    let mut f1 = [0.0; 3];
    for (c, class) in Label::ALL.iter().enumerate() {
        let mut tp = 0usize;
        let mut predicted = 0usize;
        let mut actual = 0usize;
        for (g, p) in gold.iter().zip(pred) {
            if p == class {
                predicted += 1;
            }
            if g == class {
                actual += 1;
            }
            if g == class && p == class {
                tp += 1;
            }
        }
        if tp == 0 {
            continue;
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / actual as f64;
        f1[c] = 2.0 * precision * recall / (precision + recall);
    }
    ((f1[0] + f1[1] + f1[2]) / 3.0, f1)
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize) -> Vec<Label> {
    (0..n)
        .map(|_| Label::from_index(rng.random_range(0..3)).expect("class"))
        .collect()
}

pub mod checks {
    //! Each check builds one random instance, runs the library and the
    //! oracle, and reports the first disagreement.

    use super::*;
    use rcn::comparator::compare_reasons;
    use rcn::reason::{attention_weights, pairwise_relatedness, reason_matrix, reason_scores};
    use rcn::tensor_math::{Graph, MASK_SURROGATE};

    fn exact(what: &str, got: &Mat, want: &Mat) -> Result<(), String> {
        if got.len() != want.len() {
            return Err(format!(
                "{what}: {} rows, expected {}",
                got.len(),
                want.len()
            ));
        }
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            if g.len() != w.len() {
                return Err(format!(
                    "{what}: row {i} has {} columns, expected {}",
                    g.len(),
                    w.len()
                ));
            }
            for (j, (x, y)) in g.iter().zip(w).enumerate() {
                if x != y {
                    return Err(format!("{what}[{i}][{j}] = {x:e}, oracle {y:e}"));
                }
            }
        }
        Ok(())
    }

    /// Bounds of the acceptance instances: `L ≤ 8`, `h ≤ 5`, `κ ≤ 3`.
    pub const MAX_L: usize = 8;
    pub const MAX_H: usize = 5;
    pub const MAX_KAPPA: usize = 3;

    pub fn relatedness(seed: u64) -> Result<(), String> {
        let inst = reason_instance(seed, MAX_L, MAX_H, MAX_KAPPA);
        let mut g = Graph::new();
        let h = g.constant(to_tensor(&inst.h));
        let c = pairwise_relatedness(&mut g, &inst.store, h, &inst.mask, &inst.params)
            .map_err(|e| e.to_string())?;
        exact(
            "c",
            &to_mat(g.value(c)),
            &oracle_relatedness(&inst.h, &inst.w1, &inst.mask),
        )
    }

    pub fn scores(seed: u64) -> Result<(), String> {
        let inst = reason_instance(seed, MAX_L, MAX_H, MAX_KAPPA);
        let mut r = rng(seed ^ 0xC);
        let l = inst.h.len();
        let mut c = random_mat(&mut r, l, l, 1.0);
        for i in 0..l {
            for j in 0..l {
                if !(inst.mask[i] && inst.mask[j]) {
                    c[i][j] = 0.0;
                }
            }
        }
        let mut g = Graph::new();
        let cn = g.constant(to_tensor(&c));
        let e = reason_scores(&mut g, &inst.store, cn, &inst.mask, &inst.params)
            .map_err(|e| e.to_string())?;
        exact(
            "e",
            &to_mat(g.value(e)),
            &oracle_scores(&c, &inst.w2, &inst.b, &inst.mask, MASK_SURROGATE),
        )
    }

    /// Full reason encoder from `H`: relatedness, scores, attention and `R`.
    pub fn reasons(seed: u64) -> Result<(), String> {
        let inst = reason_instance(seed, MAX_L, MAX_H, MAX_KAPPA);
        let mut g = Graph::new();
        let h = g.constant(to_tensor(&inst.h));
        let run = |g: &mut Graph| -> Result<_, rcn::tensor_math::TensorError> {
            let c = pairwise_relatedness(g, &inst.store, h, &inst.mask, &inst.params)?;
            let e = reason_scores(g, &inst.store, c, &inst.mask, &inst.params)?;
            let a = attention_weights(g, e, &inst.mask)?;
            let r = reason_matrix(g, h, a)?;
            Ok((a, r))
        };
        let (a, r) = run(&mut g).map_err(|e| e.to_string())?;
        let c_o = oracle_relatedness(&inst.h, &inst.w1, &inst.mask);
        let e_o = oracle_scores(&c_o, &inst.w2, &inst.b, &inst.mask, MASK_SURROGATE);
        let a_o = oracle_softmax_cols(&e_o, &inst.mask);
        exact("A", &to_mat(g.value(a)), &a_o)?;
        exact(
            "R",
            &to_mat(g.value(r)),
            &oracle_reason_matrix(&inst.h, &a_o),
        )
    }

    pub fn comparison(seed: u64) -> Result<(), String> {
        let mut r = rng(seed);
        let d = 2 * r.random_range(1..=MAX_H);
        let kappa = r.random_range(1..=MAX_KAPPA);
        let rp = random_mat(&mut r, d, kappa, 2.0);
        let rq = random_mat(&mut r, d, kappa, 2.0);
        let mut g = Graph::new();
        let (np, nq) = (g.constant(to_tensor(&rp)), g.constant(to_tensor(&rq)));
        let cmp = compare_reasons(&mut g, np, nq).map_err(|e| e.to_string())?;
        let (mul, sub) = oracle_compare(&rp, &rq);
        exact("s_mul", &to_mat(g.value(cmp.s_mul)), &vec![mul.clone()])?;
        exact("s_sub", &to_mat(g.value(cmp.s_sub)), &vec![sub.clone()])?;
        let mut s = mul;
        s.extend(sub);
        exact("s", &to_mat(g.value(cmp.s)), &vec![s])
    }
}

pub mod invariants {
    //! Structural properties of the full network. Each function returns the
    //! largest deviation it observed on one random desk-sized instance.

    use super::*;
    use rcn::model::{Architecture, EncodedPair, Model, ModelConfig};
    use rcn::synthetic::{desk_config, desk_instance, DeskInstance};
    use rcn::tensor_math::Graph;
    use rcn::text::PAD;

    pub const LOGIT_TOL: f64 = 1e-9;
    pub const SOFTMAX_TOL: f64 = 1e-12;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn instance(seed: u64, arch: Architecture) -> DeskInstance {
        let mut r = rng(seed);
        let config = ModelConfig {
            arch,
            ..desk_config(r.random_range(1..=3))
        };
        desk_instance(config, seed)
    }

    /// `|logits(P, Q) − logits(Q, P)|` for both architectures.
    pub fn swap_symmetry(seed: u64) -> Result<f64, String> {
        let mut worst: f64 = 0.0;
        for arch in [Architecture::Rcn, Architecture::BiLstm] {
            let inst = instance(seed, arch);
            for ex in &inst.batch {
                let a = inst
                    .model
                    .logits(&inst.embeddings, ex)
                    .map_err(|e| e.to_string())?;
                let b = inst
                    .model
                    .logits(&inst.embeddings, &ex.swapped())
                    .map_err(|e| e.to_string())?;
                worst = worst.max(max_abs_diff(a.data(), b.data()));
            }
        }
        Ok(worst)
    }

    /// Both sides of a pair read the same graph node for every parameter.
    pub fn shared_weights(seed: u64) -> Result<(), String> {
        let inst = instance(seed, Architecture::Rcn);
        let mut g = Graph::new();
        inst.model
            .forward(&mut g, &inst.embeddings, &inst.batch[0], None)
            .map_err(|e| e.to_string())?;
        let before = g.len();
        for id in inst.model.store.ids() {
            let node = g
                .param_node(id)
                .ok_or_else(|| format!("{} unused", inst.model.store.name(id)))?;
            if g.param(&inst.model.store, id) != node || g.param_of(node) != Some(id) {
                return Err(format!(
                    "{} has more than one node",
                    inst.model.store.name(id)
                ));
            }
        }
        if g.len() != before {
            return Err("parameter lookup created new nodes".into());
        }
        Ok(())
    }

    /// Indices stored under masked positions never reach the output.
    pub fn masked_slots_ignored(seed: u64) -> Result<f64, String> {
        let inst = instance(seed, Architecture::Rcn);
        let mut r = rng(seed ^ 0x5107);
        let mut worst: f64 = 0.0;
        for ex in &inst.batch {
            let mut noisy = ex.clone();
            for u in [&mut noisy.p, &mut noisy.q, &mut noisy.topic] {
                for i in 0..u.len() {
                    if !u.mask[i] {
                        u.indices[i] = r.random_range(0..inst.vocab.len());
                    }
                }
            }
            let a = inst
                .model
                .logits(&inst.embeddings, ex)
                .map_err(|e| e.to_string())?;
            let b = inst
                .model
                .logits(&inst.embeddings, &noisy)
                .map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(a.data(), b.data()));
        }
        Ok(worst)
    }

    /// Appending padding changes nothing: a model with a longer sequence
    /// length, identical parameters and arbitrary extra `W2` rows produces
    /// the same logits on the padded pair.
    pub fn padding_invariance(seed: u64) -> Result<f64, String> {
        let inst = instance(seed, Architecture::Rcn);
        let mut r = rng(seed ^ 0xAD);
        let extra = r.random_range(1..5);
        let long_cfg = ModelConfig {
            seq_len: inst.model.config.seq_len + extra,
            ..inst.model.config
        };
        let mut long = Model::new(long_cfg, seed);
        let rp = inst.model.parts.reason.expect("rcn");
        let long_w2 = long.parts.reason.expect("rcn").w2;
        for id in inst.model.store.ids() {
            let name = inst.model.store.name(id);
            let target = long
                .store
                .find(name)
                .ok_or_else(|| format!("{name} missing"))?;
            let src = inst.model.store.get(id).data().to_vec();
            let dst = long.store.get_mut(target).data_mut();
            if id == rp.w2 {
                assert_eq!(target, long_w2);
                dst[..src.len()].copy_from_slice(&src);
                for x in &mut dst[src.len()..] {
                    *x = r.random_range(-3.0..3.0);
                }
            } else {
                dst.copy_from_slice(&src);
            }
        }
        let pad = |u: &rcn::text::TokenizedUtterance| {
            let mut u = u.clone();
            u.indices.extend(std::iter::repeat_n(PAD, extra));
            u.mask.extend(std::iter::repeat_n(false, extra));
            u
        };
        let mut worst: f64 = 0.0;
        for ex in &inst.batch {
            let padded = EncodedPair {
                p: pad(&ex.p),
                q: pad(&ex.q),
                ..ex.clone()
            };
            let a = inst
                .model
                .logits(&inst.embeddings, ex)
                .map_err(|e| e.to_string())?;
            let b = long
                .logits(&inst.embeddings, &padded)
                .map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(a.data(), b.data()));
        }
        Ok(worst)
    }

    /// Every attention column sums to one over the real tokens and is
    /// exactly zero on padding.
    pub fn attention_columns(seed: u64) -> Result<f64, String> {
        let inst = instance(seed, Architecture::Rcn);
        let mut worst: f64 = 0.0;
        for ex in &inst.batch {
            let (ap, aq) = inst
                .model
                .attention(&inst.embeddings, ex)
                .map_err(|e| e.to_string())?
                .ok_or("no attention")?;
            for (a, mask) in [(ap, &ex.p.mask), (aq, &ex.q.mask)] {
                let a = to_mat(&a);
                for k in 0..a[0].len() {
                    let mut sum = 0.0;
                    for (i, row) in a.iter().enumerate() {
                        if mask[i] {
                            sum += row[k];
                        } else if row[k] != 0.0 {
                            return Err(format!("padded row {i} has weight {:e}", row[k]));
                        }
                    }
                    worst = worst.max((sum - 1.0).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Adding a constant to a column of scores leaves its softmax unchanged.
    pub fn softmax_shift(seed: u64) -> Result<f64, String> {
        let mut r = rng(seed);
        let l = r.random_range(1..=checks::MAX_L);
        let k = r.random_range(1..=checks::MAX_KAPPA);
        let real = r.random_range(1..=l);
        let mask: Vec<bool> = (0..l).map(|i| i < real).collect();
        let e = random_mat(&mut r, l, k, 3.0);
        let shifts: Vec<f64> = (0..k).map(|_| r.random_range(-50.0..50.0)).collect();
        let shifted: Mat = e
            .iter()
            .map(|row| row.iter().zip(&shifts).map(|(x, c)| x + c).collect())
            .collect();
        let mut g = Graph::new();
        let a = g.constant(to_tensor(&e));
        let b = g.constant(to_tensor(&shifted));
        let sa = g.softmax_cols(a, &mask).map_err(|e| e.to_string())?;
        let sb = g.softmax_cols(b, &mask).map_err(|e| e.to_string())?;
        Ok(max_abs_diff(g.value(sa).data(), g.value(sb).data()))
    }

    /// The batch objective equals the summed per-pair cross-entropy, with the
    /// probability floor, plus `λ Σ θ²`; returns the relative deviation.
    pub fn objective_decomposition(seed: u64) -> Result<f64, String> {
        let inst = instance(seed, Architecture::Rcn);
        let lambda = 1e-3;
        let mut g = Graph::new();
        let l = inst
            .model
            .batch_loss(&mut g, &inst.embeddings, &inst.batch, lambda, None)
            .map_err(|e| e.to_string())?;
        let got = g.value(l).item();
        let mut want = 0.0;
        for ex in &inst.batch {
            let p = inst
                .model
                .predict(&inst.embeddings, ex)
                .map_err(|e| e.to_string())?;
            want -= p.0[ex.label.index()].max(rcn::tensor_math::PROB_FLOOR).ln();
        }
        let mut squares = 0.0;
        for p in inst.model.store.iter() {
            for &x in p.value.data() {
                squares += x * x;
            }
        }
        want += lambda * squares;
        Ok((got - want).abs() / want.abs())
    }
}

pub mod tiny {
    //! A small keyword task for training-level tests.

    use rcn::corpus::{generate_pairs, split_dataset, PairCounts};
    use rcn::model::ModelConfig;
    use rcn::synthetic::{keyword_corpus, SyntheticSpec};
    use rcn::text::EmbeddingTable;
    use rcn::training::{encode_dataset, TrainConfig};

    use rcn::model::EncodedPair;

    pub struct Task {
        pub config: TrainConfig,
        pub embeddings: EmbeddingTable,
        pub train: Vec<EncodedPair>,
        pub validation: Vec<EncodedPair>,
        pub test: Vec<EncodedPair>,
    }

    pub fn task(seed: u64) -> Task {
        let config = TrainConfig {
            model: ModelConfig {
                hidden: 4,
                seq_len: 10,
                topic_len: 2,
                kappa: 2,
                ff_hidden: 6,
                ..ModelConfig::default()
            },
            lr: 1e-3,
            dropout: 0.2,
            batch_size: 16,
            max_epochs: 3,
            patience: 7,
            seed,
            runs: 2,
            pairs: PairCounts {
                agree: 40,
                disagree: 40,
                neither: 20,
            },
            ..TrainConfig::default()
        };
        let corpus = keyword_corpus(&SyntheticSpec {
            records_per_stance: 20,
            filler_len: 4,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let pairs = generate_pairs(&corpus.records, config.pairs, seed).unwrap();
        let split = split_dataset(&pairs, (0.8, 0.1, 0.1), seed).unwrap();
        let enc = |p| encode_dataset(p, &corpus.vocab, &config.model).unwrap();
        Task {
            train: enc(&split.train),
            validation: enc(&split.validation),
            test: enc(&split.test),
            embeddings: corpus.embeddings,
            config,
        }
    }
}
