use std::fmt::Write as _;

use crate::corpus::PairCounts;
use crate::model::{Architecture, ModelConfig};

use super::TrainError;

/// Every hyperparameter of a run. Parsed from and written to a flat
/// `key = value` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// L2 coefficient.
    pub lambda: f64,
    pub lr: f64,
    /// Drop probability.
    pub dropout: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub runs: usize,
    pub min_count: usize,
    pub pairs: PairCounts,
    pub embeddings: Option<String>,
    pub top_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lambda: 1e-5,
            lr: 1e-4,
            dropout: 0.8,
            patience: 7,
            batch_size: 64,
            max_epochs: 100,
            seed: 0,
            runs: 10,
            min_count: 1,
            pairs: PairCounts::FULL_SCALE,
            embeddings: None,
            top_n: 15,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, TrainError> {
    value.parse().map_err(|_| TrainError::Config {
        line,
        reason: format!("invalid value {value:?} for {key}"),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |reason: &str| {
            Err(TrainError::Config {
                line: 0,
                reason: reason.to_string(),
            })
        };
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        if !(1..=crate::reason::MAX_REASONS).contains(&self.model.kappa) {
            return bad("kappa must be in 1..=8");
        }
        if self.model.hidden < 1
            || self.model.seq_len < 1
            || self.model.topic_len < 1
            || self.model.ff_hidden < 1
        {
            return bad("hidden, seq_len, topic_len and ff_hidden must be at least 1");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), TrainError> {
        let value = value.trim().trim_matches('"');
        match key {
            "arch" => {
                self.model.arch = Architecture::parse(value).ok_or_else(|| TrainError::Config {
                    line,
                    reason: format!("unknown arch {value:?}"),
                })?
            }
            "hidden" => self.model.hidden = parse_num(key, value, line)?,
            "seq_len" => self.model.seq_len = parse_num(key, value, line)?,
            "topic_len" => self.model.topic_len = parse_num(key, value, line)?,
            "kappa" => self.model.kappa = parse_num(key, value, line)?,
            "ff_hidden" => self.model.ff_hidden = parse_num(key, value, line)?,
            "lambda" => self.lambda = parse_num(key, value, line)?,
            "lr" => self.lr = parse_num(key, value, line)?,
            "dropout" => self.dropout = parse_num(key, value, line)?,
            "patience" => self.patience = parse_num(key, value, line)?,
            "batch_size" => self.batch_size = parse_num(key, value, line)?,
            "max_epochs" => self.max_epochs = parse_num(key, value, line)?,
            "seed" => self.seed = parse_num(key, value, line)?,
            "runs" => self.runs = parse_num(key, value, line)?,
            "min_count" => self.min_count = parse_num(key, value, line)?,
            "agree_pairs" => self.pairs.agree = parse_num(key, value, line)?,
            "disagree_pairs" => self.pairs.disagree = parse_num(key, value, line)?,
            "neither_pairs" => self.pairs.neither = parse_num(key, value, line)?,
            "top_n" => self.top_n = parse_num(key, value, line)?,
            "embeddings" => self.embeddings = (!value.is_empty()).then(|| value.to_string()),
            _ => {
                return Err(TrainError::Config {
                    line,
                    reason: format!("unknown key {key:?}"),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TrainError::Config {
                line: n + 1,
                reason: "expected key = value".into(),
            })?;
            cfg.set(key.trim(), value, n + 1)?;
        }
        if cfg.min_count < 1 {
            return Err(TrainError::Config {
                line: 0,
                reason: "min_count must be at least 1".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "arch = {}", m.arch.as_str());
        let _ = writeln!(s, "hidden = {}", m.hidden);
        let _ = writeln!(s, "seq_len = {}", m.seq_len);
        let _ = writeln!(s, "topic_len = {}", m.topic_len);
        let _ = writeln!(s, "kappa = {}", m.kappa);
        let _ = writeln!(s, "ff_hidden = {}", m.ff_hidden);
        let _ = writeln!(s, "lambda = {:e}", self.lambda);
        let _ = writeln!(s, "lr = {:e}", self.lr);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "min_count = {}", self.min_count);
        let _ = writeln!(s, "agree_pairs = {}", self.pairs.agree);
        let _ = writeln!(s, "disagree_pairs = {}", self.pairs.disagree);
        let _ = writeln!(s, "neither_pairs = {}", self.pairs.neither);
        let _ = writeln!(s, "top_n = {}", self.top_n);
        if let Some(e) = &self.embeddings {
            let _ = writeln!(s, "embeddings = {e}");
        }
        s
    }
}
