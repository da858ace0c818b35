//! Siamese assembly: topic encoder, conditional utterance encoder, reason
//! encoder, comparator and classifier. P and Q pass through the same
//! parameter tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparator::{
    classify, compare_reasons, loss, ClassifierParams, PredictionDistribution,
};
use crate::corpus::{Label, UtterancePair};
use crate::encoder::{encode_topic, encode_utterance_conditional, BiLstmParams, EncodedSequence};
use crate::reason::{encode_reasons_from, ReasonAttentionParams, ReasonMatrix};
use crate::tensor_math::{Graph, NodeId, ParamStore, Tensor, TensorError};
use crate::text::{
    encode_text, EmbeddingTable, TextError, TokenizedUtterance, Vocabulary, EMBEDDING_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Reason encoder plus reason-wise comparison.
    Rcn,
    /// Encoder-only baseline comparing the final BiLSTM states.
    BiLstm,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Rcn => "rcn",
            Architecture::BiLstm => "bilstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rcn" => Some(Architecture::Rcn),
            "bilstm" => Some(Architecture::BiLstm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub hidden: usize,
    pub seq_len: usize,
    pub topic_len: usize,
    pub kappa: usize,
    pub ff_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Architecture::Rcn,
            hidden: 100,
            seq_len: 64,
            topic_len: 8,
            kappa: 2,
            ff_hidden: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelParts {
    pub topic: BiLstmParams,
    pub utterance: BiLstmParams,
    pub reason: Option<ReasonAttentionParams>,
    pub classifier: ClassifierParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub parts: ModelParts,
}

/// A pair ready for the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub p: TokenizedUtterance,
    pub q: TokenizedUtterance,
    pub topic: TokenizedUtterance,
    pub label: Label,
}

impl EncodedPair {
    pub fn swapped(&self) -> Self {
        EncodedPair {
            p: self.q.clone(),
            q: self.p.clone(),
            topic: self.topic.clone(),
            label: self.label,
        }
    }
}

pub fn encode_pair(
    pair: &UtterancePair,
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<EncodedPair, TextError> {
    Ok(EncodedPair {
        p: encode_text(&pair.p.text, vocab, config.seq_len)?,
        q: encode_text(&pair.q.text, vocab, config.seq_len)?,
        topic: encode_text(&pair.topic, vocab, config.topic_len)?,
        label: pair.label,
    })
}

/// Inverted dropout: kept activations are scaled by `1 / (1 − p)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!(
            (0.0..1.0).contains(&p),
            "drop probability must be in [0, 1)"
        );
        Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mask(&mut self, shape: &[usize]) -> Tensor {
        let keep = 1.0 / (1.0 - self.p);
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            if self.rng.random::<f64>() >= self.p {
                *x = keep;
            }
        }
        t
    }

    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId, TensorError> {
        if self.p == 0.0 {
            return Ok(x);
        }
        let m = self.mask(g.value(x).shape());
        let m = g.constant(m);
        g.mul(x, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideForward {
    pub encoded: EncodedSequence,
    pub reasons: Option<ReasonMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairForward {
    pub topic: EncodedSequence,
    pub p: SideForward,
    pub q: SideForward,
    pub s: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let topic = BiLstmParams::init(&mut store, "topic", EMBEDDING_DIM, h, &mut rng);
        let utterance = BiLstmParams::init(&mut store, "utterance", EMBEDDING_DIM, h, &mut rng);
        let reason = match config.arch {
            Architecture::Rcn => Some(ReasonAttentionParams::init(
                &mut store,
                "reason",
                2 * h,
                config.seq_len,
                config.kappa,
                &mut rng,
            )),
            Architecture::BiLstm => None,
        };
        let classifier =
            ClassifierParams::init(&mut store, "classifier", 4 * h, config.ff_hidden, &mut rng);
        Model {
            config,
            store,
            parts: ModelParts {
                topic,
                utterance,
                reason,
                classifier,
            },
        }
    }

    /// Builds the forward graph for one pair. `dropout` is `None` at
    /// evaluation time.
    pub fn forward(
        &self,
        g: &mut Graph,
        emb: &EmbeddingTable,
        ex: &EncodedPair,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<PairForward, TensorError> {
        let store = &self.store;
        let topic = encode_topic(g, store, &ex.topic, emb, &self.parts.topic)?;
        let enc_p =
            encode_utterance_conditional(g, store, &ex.p, &topic, emb, &self.parts.utterance)?;
        let enc_q =
            encode_utterance_conditional(g, store, &ex.q, &topic, emb, &self.parts.utterance)?;

        let mut drop = |g: &mut Graph, x: NodeId| -> Result<NodeId, TensorError> {
            match dropout.as_deref_mut() {
                Some(d) => d.apply(g, x),
                None => Ok(x),
            }
        };

        let (side_p, side_q, s) = match self.parts.reason {
            Some(rp) => {
                let hp = drop(g, enc_p.h)?;
                let hq = drop(g, enc_q.h)?;
                let reasons_p = encode_reasons_from(g, store, hp, &enc_p.mask, &rp)?;
                let reasons_q = encode_reasons_from(g, store, hq, &enc_q.mask, &rp)?;
                let cmp = compare_reasons(g, reasons_p.r, reasons_q.r)?;
                (Some(reasons_p), Some(reasons_q), cmp.s)
            }
            None => {
                let up = g.concat_cols(&[enc_p.final_forward.h, enc_p.final_backward.h])?;
                let uq = g.concat_cols(&[enc_q.final_forward.h, enc_q.final_backward.h])?;
                let up = drop(g, up)?;
                let uq = drop(g, uq)?;
                let mul = g.mul(up, uq)?;
                let sub = g.sub_square(up, uq)?;
                (None, None, g.concat_cols(&[mul, sub])?)
            }
        };
        let s = drop(g, s)?;
        let out = classify(g, store, s, &self.parts.classifier)?;
        Ok(PairForward {
            topic,
            p: SideForward {
                encoded: enc_p,
                reasons: side_p,
            },
            q: SideForward {
                encoded: enc_q,
                reasons: side_q,
            },
            s,
            logits: out.logits,
            probs: out.probs,
        })
    }

    pub fn predict(
        &self,
        emb: &EmbeddingTable,
        ex: &EncodedPair,
    ) -> Result<PredictionDistribution, TensorError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, emb, ex, None)?;
        Ok(PredictionDistribution::from_slice(g.value(f.probs).data()))
    }

    pub fn logits(&self, emb: &EmbeddingTable, ex: &EncodedPair) -> Result<Tensor, TensorError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, emb, ex, None)?;
        Ok(g.value(f.logits).clone())
    }

    /// Attention matrices `(A_P, A_Q)`, each `L x κ`, with dropout off.
    /// `None` for the baseline.
    pub fn attention(
        &self,
        emb: &EmbeddingTable,
        ex: &EncodedPair,
    ) -> Result<Option<(Tensor, Tensor)>, TensorError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, emb, ex, None)?;
        Ok(match (f.p.reasons, f.q.reasons) {
            (Some(rp), Some(rq)) => Some((g.value(rp.a).clone(), g.value(rq.a).clone())),
            _ => None,
        })
    }

    /// Whole-batch objective as a single graph, including the L2 term over
    /// every trainable parameter.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        emb: &EmbeddingTable,
        batch: &[EncodedPair],
        lambda: f64,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<NodeId, TensorError> {
        let mut probs = Vec::with_capacity(batch.len());
        for ex in batch {
            probs.push(self.forward(g, emb, ex, dropout.as_deref_mut())?.probs);
        }
        let labels: Vec<usize> = batch.iter().map(|e| e.label.index()).collect();
        let params: Vec<NodeId> = self
            .store
            .ids()
            .map(|id| g.param(&self.store, id))
            .collect();
        loss(g, &probs, &labels, &params, lambda).map_err(|e| match e {
            crate::comparator::LossError::Tensor(t) => t,
            other => panic!("{other}"),
        })
    }

    /// Cross-entropy and parameter gradients of a single pair (no L2 term).
    pub fn example_gradients(
        &self,
        emb: &EmbeddingTable,
        ex: &EncodedPair,
        dropout: Option<&mut Dropout>,
    ) -> Result<(f64, Vec<Tensor>), TensorError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, emb, ex, dropout)?;
        let l = g.cross_entropy(f.probs, ex.label.index())?;
        g.backward(l)?;
        Ok((g.value(l).item(), g.param_grads(&self.store)))
    }
}
