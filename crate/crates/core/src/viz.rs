//! Attention heatmaps and reason-word rankings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Label, UtterancePair};
use crate::model::{encode_pair, EncodedPair, Model};
use crate::tensor_math::{Tensor, TensorError};
use crate::text::{EmbeddingTable, TextError, TokenizedUtterance, Vocabulary, UNK};

/// Function words removed from reason-word rankings.
pub const STOP_WORDS: [&str; 50] = [
    "the", "a", "an", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with",
    "about", "from", "as", "into", "is", "are", "was", "were", "be", "been", "am", "it", "its",
    "this", "that", "these", "those", "i", "me", "my", "we", "our", "you", "your", "he", "she",
    "they", "them", "his", "her", "their", "not", "no", "so", "do",
];

#[derive(Debug, Error)]
pub enum VizError {
    #[error("the model has no reason encoder to visualize")]
    NoAttention,
    #[error("every token of the pair is out of vocabulary or padding")]
    AllUnknown,
    #[error("no utterances to rank")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatToken {
    pub token: String,
    /// Attention rescaled by its column maximum, in [0, 1].
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceHeatmap {
    pub text: String,
    /// One row per reason column.
    pub reasons: Vec<Vec<HeatToken>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapDocument {
    pub topic: String,
    pub gold: Label,
    pub predicted: Label,
    pub p: UtteranceHeatmap,
    pub q: UtteranceHeatmap,
}

/// Columns of `a` restricted to the unmasked prefix, each divided by its
/// maximum.
pub fn rescaled_columns(a: &Tensor, u: &TokenizedUtterance) -> Vec<Vec<HeatToken>> {
    let kappa = a.shape()[1];
    let n = u.real_len();
    (0..kappa)
        .map(|k| {
            let col: Vec<f64> = (0..n).map(|i| a.get(i, k)).collect();
            let max = col.iter().copied().fold(0.0_f64, f64::max);
            col.iter()
                .zip(&u.tokens)
                .map(|(&w, t)| HeatToken {
                    token: t.clone(),
                    weight: if max > 0.0 { w / max } else { 0.0 },
                })
                .collect()
        })
        .collect()
}

pub fn heatmap_document(
    model: &Model,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    pair: &UtterancePair,
) -> Result<HeatmapDocument, VizError> {
    let ex = encode_pair(pair, vocab, &model.config)?;
    let known =
        |u: &TokenizedUtterance| u.indices.iter().zip(&u.mask).any(|(&i, &m)| m && i != UNK);
    if !known(&ex.p) && !known(&ex.q) {
        return Err(VizError::AllUnknown);
    }
    let (ap, aq) = model.attention(emb, &ex)?.ok_or(VizError::NoAttention)?;
    let predicted = model.predict(emb, &ex)?.argmax();
    Ok(HeatmapDocument {
        topic: pair.topic.clone(),
        gold: pair.label,
        predicted,
        p: UtteranceHeatmap {
            text: pair.p.text.clone(),
            reasons: rescaled_columns(&ap, &ex.p),
        },
        q: UtteranceHeatmap {
            text: pair.q.text.clone(),
            reasons: rescaled_columns(&aq, &ex.q),
        },
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn render_side(out: &mut String, title: &str, side: &UtteranceHeatmap) {
    let _ = writeln!(out, "<td><div class=\"utt\">{}</div>", escape(title));
    for (k, row) in side.reasons.iter().enumerate() {
        let _ = write!(out, "<p><b>Reason {}:</b>", k + 1);
        for t in row {
            let _ = write!(
                out,
                " <span style=\"background:rgba(220,20,60,{:.4});padding:1px 2px\" title=\"{:.4}\">{}</span>",
                t.weight,
                t.weight,
                escape(&t.token)
            );
        }
        out.push_str("</p>\n");
    }
    out.push_str("</td>\n");
}

impl HeatmapDocument {
    /// Self-contained HTML: inline styles, no scripts.
    pub fn to_html(&self) -> String {
        let mut s = String::new();
        s.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Reason attention</title></head>\n");
        s.push_str("<body style=\"font-family:sans-serif\">\n");
        let _ = writeln!(
            s,
            "<p>Topic: <b>{}</b> | gold: <b>{}</b> | predicted: <b>{}</b></p>",
            escape(&self.topic),
            self.gold,
            self.predicted
        );
        s.push_str("<table style=\"border-collapse:collapse\" cellpadding=\"6\"><tr>\n");
        render_side(&mut s, &format!("Utterance 1: {}", self.p.text), &self.p);
        render_side(&mut s, &format!("Utterance 2: {}", self.q.text), &self.q);
        s.push_str("</tr></table>\n</body></html>\n");
        s
    }
}

pub fn export_heatmap(
    model: &Model,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    pair: &UtterancePair,
    out: &Path,
) -> Result<HeatmapDocument, VizError> {
    let doc = heatmap_document(model, emb, vocab, pair)?;
    std::fs::write(out, doc.to_html())?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonWord {
    pub word: String,
    /// Largest raw attention weight the word received in any utterance.
    pub weight: f64,
    pub frequency: usize,
}

/// Ranks words by the largest attention weight they receive in any reason
/// column of any utterance of `data` (P and Q sides alike). Stop words and
/// single-character tokens are skipped. Ties fall back to frequency, then
/// to the word itself.
pub fn top_reason_words(
    model: &Model,
    emb: &EmbeddingTable,
    data: &[EncodedPair],
    top_n: usize,
) -> Result<Vec<ReasonWord>, VizError> {
    if data.is_empty() {
        return Err(VizError::EmptyDataset);
    }
    let mut table: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ex in data {
        let (ap, aq) = model.attention(emb, ex)?.ok_or(VizError::NoAttention)?;
        for (a, u) in [(&ap, &ex.p), (&aq, &ex.q)] {
            let kappa = a.shape()[1];
            for (i, tok) in u.tokens.iter().enumerate() {
                if tok.chars().count() < 2 || STOP_WORDS.contains(&tok.as_str()) {
                    continue;
                }
                let w = (0..kappa).map(|k| a.get(i, k)).fold(0.0_f64, f64::max);
                let entry = table.entry(tok.clone()).or_insert((0.0, 0));
                entry.0 = entry.0.max(w);
                entry.1 += 1;
            }
        }
    }
    let mut words: Vec<ReasonWord> = table
        .into_iter()
        .map(|(word, (weight, frequency))| ReasonWord {
            word,
            weight,
            frequency,
        })
        .collect();
    words.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(b.frequency.cmp(&a.frequency))
            .then_with(|| a.word.cmp(&b.word))
    });
    words.truncate(top_n);
    Ok(words)
}

/// `rank<TAB>word<TAB>weight` lines, rank starting at 1.
pub fn format_ranking(words: &[ReasonWord]) -> String {
    let mut s = String::new();
    for (r, w) in words.iter().enumerate() {
        let _ = writeln!(s, "{}\t{}\t{:.6}", r + 1, w.word, w.weight);
    }
    s
}
