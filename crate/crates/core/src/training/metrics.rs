use serde::Serialize;

use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; 3]; 3],
    pub per_class: [ClassScores; 3],
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 over Agree, Disagree, Neither and their
/// unweighted mean. A class with no true positives scores F1 = 0.
pub fn macro_f1(gold: &[Label], predicted: &[Label]) -> ClassificationReport {
    assert_eq!(
        gold.len(),
        predicted.len(),
        "gold and predicted lengths differ"
    );
    let mut confusion = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(predicted) {
        confusion[g.index()][p.index()] += 1;
    }
    let mut per_class = [ClassScores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    }; 3];
    for (c, scores) in per_class.iter_mut().enumerate() {
        let tp = confusion[c][c];
        let fp: usize = (0..3).filter(|&g| g != c).map(|g| confusion[g][c]).sum();
        let fn_: usize = (0..3).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        *scores = ClassScores {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        };
    }
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    ClassificationReport {
        confusion,
        per_class,
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / 3.0,
        accuracy: ratio(correct, gold.len()),
    }
}

/// Early stopping on a score to maximize.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1);
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
