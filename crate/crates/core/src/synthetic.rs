//! Keyword-separable toy corpus. Each utterance is neutral filler with one
//! keyword from each of its stance's two reason families, so the stance
//! (and every pair label) is fully determined by those keywords.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Label, Stance, StanceRecord};
use crate::model::{EncodedPair, Model, ModelConfig};
use crate::tensor_math::{grad_check, GradCheckReport, TensorError};
use crate::text::{
    encode_tokens, tokenize, EmbeddingTable, TextError, Vocabulary, EMBEDDING_DIM, PAD,
};

pub const SYNTHETIC_TOPIC: &str = "harbour bridge";

/// Two reason families per stance.
pub const KEYWORD_FAMILIES: [(Stance, [&str; 3]); 6] = [
    (Stance::Favour, ["jobs", "growth", "trade"]),
    (Stance::Favour, ["safer", "faster", "cleaner"]),
    (Stance::Against, ["costly", "debt", "taxes"]),
    (Stance::Against, ["noise", "pollution", "traffic"]),
    (Stance::None, ["weather", "football", "pizza"]),
    (Stance::None, ["concert", "holiday", "movie"]),
];

pub const FILLER: [&str; 40] = [
    "people", "really", "think", "city", "today", "plan", "news", "read", "week", "council",
    "local", "morning", "heard", "update", "photo", "going", "talk", "friends", "family", "year",
    "said", "everyone", "probably", "maybe", "still", "thing", "story", "line", "street", "night",
    "garden", "post", "view", "place", "time", "window", "corner", "seems", "bakery", "lately",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub records_per_stance: usize,
    /// Filler words per utterance; two keywords are added on top.
    pub filler_len: usize,
    /// Standard deviation of the Gaussian word vectors.
    pub embedding_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            records_per_stance: 80,
            filler_len: 8,
            embedding_std: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<StanceRecord>,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
}

pub fn families_of(stance: Stance) -> impl Iterator<Item = &'static [&'static str; 3]> {
    KEYWORD_FAMILIES
        .iter()
        .filter(move |(s, _)| *s == stance)
        .map(|(_, f)| f)
}

pub fn is_keyword(word: &str) -> bool {
    KEYWORD_FAMILIES.iter().any(|(_, f)| f.contains(&word))
}

fn utterance<R: Rng>(stance: Stance, filler_len: usize, rng: &mut R) -> String {
    let mut words: Vec<&str> = (0..filler_len)
        .map(|_| *FILLER.choose(rng).expect("filler"))
        .collect();
    for family in families_of(stance) {
        let at = rng.random_range(0..=words.len());
        words.insert(at, family.choose(rng).expect("family"));
    }
    words.join(" ")
}

/// Seeded vectors for every vocabulary row; the PAD row stays zero.
pub fn random_embeddings(
    vocab: &Vocabulary,
    std: f64,
    seed: u64,
) -> Result<EmbeddingTable, TextError> {
    let normal = Normal::new(0.0, std).map_err(|e| TextError::Parse {
        line: 0,
        reason: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; vocab.len() * EMBEDDING_DIM];
    for (row, chunk) in data.chunks_mut(EMBEDDING_DIM).enumerate() {
        if row == PAD {
            continue;
        }
        for x in chunk {
            *x = normal.sample(&mut rng);
        }
    }
    EmbeddingTable::new(vocab.len(), data)
}

pub fn keyword_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, TextError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(3 * spec.records_per_stance);
    for stance in Stance::ALL {
        for k in 0..spec.records_per_stance {
            records.push(StanceRecord {
                id: format!("{}-{k}", stance.as_str().to_ascii_lowercase()),
                topic: SYNTHETIC_TOPIC.to_string(),
                text: utterance(stance, spec.filler_len, &mut rng),
                stance,
            });
        }
    }
    let mut corpus: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.text)).collect();
    corpus.push(tokenize(SYNTHETIC_TOPIC));
    let vocab = Vocabulary::build(&corpus, 1)?;
    let embeddings = random_embeddings(&vocab, spec.embedding_std, spec.seed.wrapping_add(1))?;
    Ok(SyntheticCorpus {
        records,
        vocab,
        embeddings,
    })
}

/// A tiny fully specified network and batch for gradient checks.
#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub model: Model,
    pub embeddings: EmbeddingTable,
    pub vocab: Vocabulary,
    pub batch: Vec<EncodedPair>,
}

/// L = 6, L_T = 3, h = 4, batch of 2 with partly padded utterances. Every
/// parameter is redrawn uniformly from [-0.5, 0.5] so that no gradient sits
/// at a special point such as the zero-initialized attention weights.
pub fn desk_instance(config: ModelConfig, seed: u64) -> DeskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build(std::slice::from_ref(&words), 1).expect("non-empty");
    let embeddings = random_embeddings(&vocab, 0.3, seed.wrapping_add(17)).expect("valid std");
    let mut model = Model::new(config, seed);
    for p in model.store.iter_mut() {
        for x in p.value.data_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
    }
    let mut sentence = |n: usize, len: usize| {
        let toks: Vec<&str> = (0..n)
            .map(|_| words.choose(&mut rng).expect("words").as_str())
            .collect();
        encode_tokens(&toks, &vocab, len).expect("non-empty")
    };
    let lens = [(4, 6, 2), (6, 3, 3)];
    let labels = [Label::Disagree, Label::Agree];
    let batch = lens
        .iter()
        .zip(labels)
        .map(|(&(np, nq, nt), label)| EncodedPair {
            p: sentence(np, config.seq_len),
            q: sentence(nq, config.seq_len),
            topic: sentence(nt, config.topic_len),
            label,
        })
        .collect();
    DeskInstance {
        model,
        embeddings,
        vocab,
        batch,
    }
}

pub fn desk_config(kappa: usize) -> ModelConfig {
    ModelConfig {
        hidden: 4,
        seq_len: 6,
        topic_len: 3,
        kappa,
        ff_hidden: 5,
        ..ModelConfig::default()
    }
}

/// Central-difference check of the whole batch objective, L2 term included,
/// over every trainable parameter.
pub fn desk_gradient_check(
    config: ModelConfig,
    seed: u64,
    lambda: f64,
    epsilon: f64,
) -> Result<GradCheckReport, TensorError> {
    let inst = desk_instance(config, seed);
    grad_check(&inst.model.store, epsilon, |g, store| {
        let model = Model {
            config: inst.model.config,
            store: store.clone(),
            parts: inst.model.parts,
        };
        model.batch_loss(g, &inst.embeddings, &inst.batch, lambda, None)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_utterance_carries_one_keyword_per_family() {
        let c = keyword_corpus(&SyntheticSpec::default()).unwrap();
        assert_eq!(c.records.len(), 240);
        for r in &c.records {
            let toks = tokenize(&r.text);
            assert_eq!(toks.len(), 10);
            for family in families_of(r.stance) {
                assert_eq!(
                    toks.iter().filter(|t| family.contains(&t.as_str())).count(),
                    1,
                    "{}",
                    r.text
                );
            }
            let foreign = KEYWORD_FAMILIES
                .iter()
                .filter(|(s, _)| *s != r.stance)
                .flat_map(|(_, f)| f.iter())
                .any(|k| toks.iter().any(|t| t == k));
            assert!(!foreign);
        }
    }

    #[test]
    fn filler_and_keywords_are_disjoint() {
        assert!(FILLER.iter().all(|w| !is_keyword(w)));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec::default();
        assert_eq!(
            keyword_corpus(&spec).unwrap(),
            keyword_corpus(&spec).unwrap()
        );
        let emb = keyword_corpus(&spec).unwrap().embeddings;
        assert!(emb.lookup(PAD).iter().all(|&x| x == 0.0));
    }
}
