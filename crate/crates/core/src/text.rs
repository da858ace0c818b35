//! Tokenizer, vocabulary, frozen word vectors and fixed-length index
//! sequences.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const URL_TOKEN: &str = "<url>";
pub const EMBEDDING_DIM: usize = 200;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("word vectors have dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

fn normalize_token(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    if is_url(&lower) {
        return Some(URL_TOKEN.to_string());
    }
    let trimmed = lower
        .trim_end_matches(|c: char| !c.is_alphanumeric())
        .trim_start_matches(|c: char| !c.is_alphanumeric() && c != '@' && c != '#');
    let trimmed = trimmed
        .trim_start_matches('#')
        .trim_start_matches(|c: char| !c.is_alphanumeric() && c != '@');
    let mention_body = trimmed.trim_start_matches('@');
    if mention_body.is_empty() {
        return None;
    }
    if trimmed.starts_with('@') {
        Some(format!("@{mention_body}"))
    } else {
        Some(trimmed.to_string())
    }
}

/// Lowercases, splits on whitespace, maps URLs to `<url>`, drops the `#` of
/// hashtags, keeps `@mentions`, and strips punctuation around each word.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(normalize_token)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Tokens with frequency `>= min_count`, ordered by descending frequency
    /// then lexicographically, after the two reserved entries.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self, TextError> {
        assert!(min_count >= 1, "min_count must be at least 1");
        if corpus.iter().all(|seq| seq.is_empty()) {
            return Err(TextError::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in corpus.iter().flatten() {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>index` lines.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TextError> {
        let mut tokens = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let (tok, idx) = line.rsplit_once('\t').ok_or_else(|| TextError::Parse {
                line: n + 1,
                reason: "expected token<TAB>index".into(),
            })?;
            let idx: usize = idx.parse().map_err(|_| TextError::Parse {
                line: n + 1,
                reason: format!("bad index {idx:?}"),
            })?;
            if idx != tokens.len() {
                return Err(TextError::Parse {
                    line: n + 1,
                    reason: format!("index {idx} out of sequence"),
                });
            }
            tokens.push(tok.to_string());
        }
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(TextError::Parse {
                line: 1,
                reason: "first entries must be <pad> and <unk>".into(),
            });
        }
        Ok(Self::from_tokens(tokens))
    }

    pub(crate) fn from_token_list(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

/// Frozen `|vocab| x 200` word-vector matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(rows: usize, data: Vec<f64>) -> Result<Self, TextError> {
        if data.len() != rows * EMBEDDING_DIM {
            return Err(TextError::Dimension {
                expected: rows * EMBEDDING_DIM,
                found: data.len(),
            });
        }
        let mut table = EmbeddingTable {
            data,
            dim: EMBEDDING_DIM,
        };
        table.data[..EMBEDDING_DIM].fill(0.0);
        Ok(table)
    }

    pub fn zeros(rows: usize) -> Self {
        EmbeddingTable {
            data: vec![0.0; rows * EMBEDDING_DIM],
            dim: EMBEDDING_DIM,
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_frozen(&self) -> bool {
        true
    }

    /// Reads GloVe text format. Rows of vocabulary words missing from the
    /// file stay zero.
    pub fn load_glove(path: &Path, vocab: &Vocabulary) -> Result<Self, TextError> {
        Self::read_glove(BufReader::new(File::open(path)?), vocab)
    }

    pub fn read_glove<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Self, TextError> {
        let mut table = EmbeddingTable::zeros(vocab.len());
        let mut expected_fields = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
            match expected_fields {
                None => {
                    if fields.len() != EMBEDDING_DIM + 1 {
                        return Err(TextError::Dimension {
                            expected: EMBEDDING_DIM,
                            found: fields.len().saturating_sub(1),
                        });
                    }
                    expected_fields = Some(fields.len());
                }
                Some(k) if k != fields.len() => {
                    return Err(TextError::Parse {
                        line: n + 1,
                        reason: format!("expected {k} fields, found {}", fields.len()),
                    });
                }
                Some(_) => {}
            }
            let Some(idx) = vocab.get(fields[0]) else {
                continue;
            };
            if idx == PAD {
                continue;
            }
            let row = &mut table.data[idx * EMBEDDING_DIM..(idx + 1) * EMBEDDING_DIM];
            for (slot, field) in row.iter_mut().zip(&fields[1..]) {
                *slot = field.parse().map_err(|_| TextError::Parse {
                    line: n + 1,
                    reason: format!("not a number: {field:?}"),
                })?;
            }
        }
        Ok(table)
    }
}

/// Index sequence padded or truncated to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedUtterance {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
    /// Tokens kept after truncation, aligned with the unmasked prefix.
    pub tokens: Vec<String>,
    pub text: String,
}

impl TokenizedUtterance {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn encode_tokens<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    len: usize,
) -> Result<TokenizedUtterance, TextError> {
    assert!(len >= 1, "sequence length must be at least 1");
    if tokens.is_empty() {
        return Err(TextError::EmptySequence);
    }
    let kept: Vec<String> = tokens
        .iter()
        .take(len)
        .map(|t| t.as_ref().to_string())
        .collect();
    let mut indices: Vec<usize> = kept.iter().map(|t| vocab.index_of(t)).collect();
    let mut mask = vec![true; kept.len()];
    indices.resize(len, PAD);
    mask.resize(len, false);
    Ok(TokenizedUtterance {
        indices,
        mask,
        text: kept.join(" "),
        tokens: kept,
    })
}

/// Tokenizes and encodes raw text in one step, keeping the original string.
pub fn encode_text(
    text: &str,
    vocab: &Vocabulary,
    len: usize,
) -> Result<TokenizedUtterance, TextError> {
    let mut u = encode_tokens(&tokenize(text), vocab, len)?;
    u.text = text.to_string();
    Ok(u)
}
