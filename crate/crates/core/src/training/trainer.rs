use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Label, UtterancePair};
use crate::model::{encode_pair, Architecture, Dropout, EncodedPair, Model, ModelConfig};
use crate::tensor_math::{Tensor, TensorError};
use crate::text::{EmbeddingTable, Vocabulary};

use super::{
    adam_step, macro_f1, welch_ttest, AdamState, ClassificationReport, EarlyStopping, StopDecision,
    TTest,
};
use super::{TrainConfig, TrainError};

/// Batch items per gradient worker. Partial sums are combined in chunk
/// order, so results do not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub run: usize,
    pub arch: &'static str,
    pub epoch: usize,
    /// Mean per-pair cross-entropy over the epoch (dropout on, no L2).
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    /// Scores of the best-validation model on the test split, when given.
    pub test: Option<ClassificationReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub model: Model,
    pub metrics: RunMetrics,
}

pub fn encode_dataset(
    pairs: &[UtterancePair],
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Vec<EncodedPair>, TrainError> {
    Ok(pairs
        .iter()
        .map(|p| encode_pair(p, vocab, config))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn predict_labels(
    model: &Model,
    emb: &EmbeddingTable,
    data: &[EncodedPair],
) -> Result<Vec<Label>, TrainError> {
    let preds = data
        .par_iter()
        .map(|ex| model.predict(emb, ex).map(|p| p.argmax()))
        .collect::<Result<Vec<_>, TensorError>>()?;
    Ok(preds)
}

/// Macro-F1 report of `model` on `data` with dropout off.
pub fn evaluate(
    model: &Model,
    emb: &EmbeddingTable,
    data: &[EncodedPair],
) -> Result<ClassificationReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let gold: Vec<Label> = data.iter().map(|e| e.label).collect();
    Ok(macro_f1(&gold, &predict_labels(model, emb, data)?))
}

fn add_into(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.add_assign(g);
    }
}

/// Summed cross-entropy and gradients of one batch. Each item gets its own
/// dropout stream seeded from `seeds`.
fn batch_gradients(
    model: &Model,
    emb: &EmbeddingTable,
    batch: &[&EncodedPair],
    seeds: &[u64],
    drop_p: f64,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let items: Vec<(&EncodedPair, u64)> =
        batch.iter().copied().zip(seeds.iter().copied()).collect();
    let partials = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut total = 0.0;
            let mut acc = model.store.zeros_like();
            for &(ex, seed) in chunk {
                let mut d = Dropout::new(drop_p, seed);
                let (l, g) = model.example_gradients(emb, ex, Some(&mut d))?;
                total += l;
                add_into(&mut acc, &g);
            }
            Ok((total, acc))
        })
        .collect::<Result<Vec<_>, TensorError>>()?;
    let mut total = 0.0;
    let mut acc = model.store.zeros_like();
    for (l, g) in &partials {
        total += l;
        add_into(&mut acc, g);
    }
    Ok((total, acc))
}

/// Mini-batch Adam with early stopping on validation macro-F1.
///
/// The model is initialized from `config.seed`. `on_epoch` sees every epoch
/// record as soon as it is produced.
pub fn train(
    config: &TrainConfig,
    emb: &EmbeddingTable,
    train_set: &[EncodedPair],
    validation: &[EncodedPair],
    run: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut model = Model::new(config.model, config.seed);
    let mut adam = AdamState::new(&model.store);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_D47A);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedPair> = idx.iter().map(|&i| &train_set[i]).collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();
            let (l, mut grads) = batch_gradients(&model, emb, &batch, &seeds, config.dropout)?;
            if !l.is_finite() {
                return Err(TrainError::Divergence { epoch, loss: l });
            }
            epoch_loss += l;
            if config.lambda != 0.0 {
                for (g, p) in grads.iter_mut().zip(model.store.iter()) {
                    for (gk, &th) in g.data_mut().iter_mut().zip(p.value.data()) {
                        *gk += 2.0 * config.lambda * th;
                    }
                }
            }
            adam_step(&mut model.store, &grads, &mut adam, config.lr)?;
        }
        let report = evaluate(&model, emb, validation)?;
        let decision = stopper.observe(epoch, report.macro_f1);
        let record = EpochRecord {
            run,
            arch: config.model.arch.as_str(),
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_macro_f1: report.macro_f1,
            val_accuracy: report.accuracy,
            improved: decision == StopDecision::Improved,
        };
        on_epoch(&record);
        epochs.push(record);
        if decision == StopDecision::Improved {
            best = model.clone();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        metrics: RunMetrics {
            epochs,
            best_epoch: stopper.best_epoch,
            best_val_macro_f1: stopper.best.unwrap_or(0.0),
            test: None,
        },
    })
}

/// Trains `config.runs` models with seeds `config.seed, config.seed + 1, ...`
/// on a fixed split and scores each best-validation model on the test split.
pub fn multi_run(
    config: &TrainConfig,
    arch: Architecture,
    emb: &EmbeddingTable,
    train_set: &[EncodedPair],
    validation: &[EncodedPair],
    test: &[EncodedPair],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<RunMetrics>, TrainError> {
    let mut out = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let mut cfg = config.clone();
        cfg.model.arch = arch;
        cfg.seed = config.seed.wrapping_add(run as u64);
        let mut outcome = train(&cfg, emb, train_set, validation, run, &mut on_epoch)?;
        outcome.metrics.test = Some(evaluate(&outcome.model, emb, test)?);
        out.push(outcome.metrics);
    }
    Ok(out)
}

/// Welch test on the test macro-F1 of two sets of runs.
pub fn multi_run_ttest(a: &[RunMetrics], b: &[RunMetrics]) -> TTest {
    let score = |m: &RunMetrics| m.test.as_ref().map_or(0.0, |t| t.macro_f1);
    let a: Vec<f64> = a.iter().map(score).collect();
    let b: Vec<f64> = b.iter().map(score).collect();
    welch_ttest(&a, &b)
}
