//! Stance corpus ingestion, labelled pair generation and stratified splits.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("row {row}: unknown stance {value:?}")]
    UnknownStance { row: usize, value: String },
    #[error("row {row}: unknown label {value:?}")]
    UnknownLabel { row: usize, value: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(&'static str),
    #[error("row {row}: expected {expected} fields, found {found}")]
    ShortRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot sample {class} pairs: no eligible records")]
    EmptyPool { class: Label },
    #[error("need at least 10 pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stance {
    Favour,
    Against,
    None,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Favour, Stance::Against, Stance::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favour => "Favour",
            Stance::Against => "Against",
            Stance::None => "None",
        }
    }
}

impl FromStr for Stance {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "favor" | "favour" => Ok(Stance::Favour),
            "against" => Ok(Stance::Against),
            "none" => Ok(Stance::None),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Agree,
    Disagree,
    Neither,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Agree, Label::Disagree, Label::Neither];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Agree => "Agree",
            Label::Disagree => "Disagree",
            Label::Neither => "Neither",
        }
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agree" => Ok(Label::Agree),
            "disagree" => Ok(Label::Disagree),
            "neither" | "unknown" => Ok(Label::Neither),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Matching stances agree; a Favour/Against opposition or exactly one None
/// disagrees; two Nones are neither.
pub fn pair_label(a: Stance, b: Stance) -> Label {
    use Stance::*;
    match (a, b) {
        (Favour, Favour) | (Against, Against) => Label::Agree,
        (None, None) => Label::Neither,
        _ => Label::Disagree,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StanceRecord {
    pub id: String,
    pub topic: String,
    pub text: String,
    pub stance: Stance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtterancePair {
    pub p: StanceRecord,
    pub q: StanceRecord,
    pub topic: String,
    pub label: Label,
}

/// Short codes for the five SemEval-2016 Task 6 targets.
pub const TOPIC_CODES: [(&str, &str); 5] = [
    ("CC", "Climate Change is a Real Concern"),
    ("HC", "Hillary Clinton"),
    ("FM", "Feminist Movement"),
    ("AT", "Atheism"),
    ("LA", "Legalization of Abortion"),
];

/// Expands a topic code to its target name; other strings pass through.
pub fn resolve_topic(topic: &str) -> &str {
    TOPIC_CODES
        .iter()
        .find(|(code, _)| code.eq_ignore_ascii_case(topic))
        .map_or(topic, |(_, name)| name)
}

/// Reads a tab-separated corpus with a header naming `ID`, `Target`,
/// `Tweet` and `Stance` (any order, extra columns ignored).
pub fn read_stance_corpus<R: BufRead>(reader: R) -> Result<Vec<StanceRecord>, CorpusError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(CorpusError::MissingColumn("ID")),
    };
    let cols: Vec<String> = header
        .trim_start_matches('\u{feff}')
        .split('\t')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let find = |name: &'static str| {
        cols.iter()
            .position(|c| c == &name.to_ascii_lowercase())
            .ok_or(CorpusError::MissingColumn(name))
    };
    let (id_col, target_col, tweet_col, stance_col) = (
        find("ID")?,
        find("Target")?,
        find("Tweet")?,
        find("Stance")?,
    );
    let needed = id_col.max(target_col).max(tweet_col).max(stance_col) + 1;

    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = n + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < needed {
            return Err(CorpusError::ShortRow {
                row,
                expected: needed,
                found: fields.len(),
            });
        }
        let stance = fields[stance_col]
            .parse()
            .map_err(|_| CorpusError::UnknownStance {
                row,
                value: fields[stance_col].to_string(),
            })?;
        records.push(StanceRecord {
            id: fields[id_col].trim().to_string(),
            topic: fields[target_col].trim().to_string(),
            text: fields[tweet_col].to_string(),
            stance,
        });
    }
    Ok(records)
}

pub fn load_stance_corpus(path: &std::path::Path) -> Result<Vec<StanceRecord>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_stance_corpus(io::BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub agree: usize,
    pub disagree: usize,
    pub neither: usize,
}

impl PairCounts {
    /// 20k agreeing, 20k disagreeing and 10k neither pairs.
    pub const FULL_SCALE: PairCounts = PairCounts {
        agree: 20_000,
        disagree: 20_000,
        neither: 10_000,
    };

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Agree => self.agree,
            Label::Disagree => self.disagree,
            Label::Neither => self.neither,
        }
    }

    pub fn total(&self) -> usize {
        self.agree + self.disagree + self.neither
    }
}

/// One eligible unordered stance combination within one topic.
struct Pool<'a> {
    left: &'a [usize],
    right: &'a [usize],
}

fn stance_combos(label: Label) -> &'static [(Stance, Stance)] {
    use Stance::*;
    match label {
        Label::Agree => &[(Favour, Favour), (Against, Against)],
        Label::Disagree => &[(Favour, Against), (Favour, None), (Against, None)],
        Label::Neither => &[(None, None)],
    }
}

/// Samples labelled pairs within each topic.
///
/// For each requested pair, an eligible (topic, stance combination) pool is
/// drawn uniformly, then one record from each side uniformly with
/// replacement, rejecting self-pairs. Member order is randomized. Output is
/// grouped by class, Agree first.
pub fn generate_pairs(
    records: &[StanceRecord],
    counts: PairCounts,
    seed: u64,
) -> Result<Vec<UtterancePair>, CorpusError> {
    let mut by_topic: BTreeMap<&str, BTreeMap<Stance, Vec<usize>>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_topic
            .entry(r.topic.as_str())
            .or_default()
            .entry(r.stance)
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.total());
    for label in Label::ALL {
        let wanted = counts.get(label);
        if wanted == 0 {
            continue;
        }
        let mut pools = Vec::new();
        for buckets in by_topic.values() {
            for &(a, b) in stance_combos(label) {
                let (Some(left), Some(right)) = (buckets.get(&a), buckets.get(&b)) else {
                    continue;
                };
                if a == b && left.len() < 2 {
                    continue;
                }
                pools.push(Pool { left, right });
            }
        }
        if pools.is_empty() {
            return Err(CorpusError::EmptyPool { class: label });
        }
        for _ in 0..wanted {
            let pool = &pools[rng.random_range(0..pools.len())];
            let (i, j) = loop {
                let i = pool.left[rng.random_range(0..pool.left.len())];
                let j = pool.right[rng.random_range(0..pool.right.len())];
                if i != j {
                    break (i, j);
                }
            };
            let (i, j) = if rng.random::<bool>() { (j, i) } else { (i, j) };
            let (p, q) = (&records[i], &records[j]);
            out.push(UtterancePair {
                p: p.clone(),
                q: q.clone(),
                topic: p.topic.clone(),
                label: pair_label(p.stance, q.stance),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Largest-remainder apportionment of `total` across classes proportional to
/// `sizes`, never exceeding `caps`.
fn apportion(total: usize, sizes: &[usize], caps: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(q, &c)| (q.floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if alloc[c] < caps[c] {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Stratified, seeded partition into train/validation/test.
pub fn split_dataset(
    pairs: &[UtterancePair],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit<UtterancePair>, CorpusError> {
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    let n = pairs.len();
    if n < 10 {
        return Err(CorpusError::TooFewPairs(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (i, p) in pairs.iter().enumerate() {
        classes[p.label.index()].push(i);
    }
    for c in &mut classes {
        c.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
    let n_val = (n as f64 * va).round() as usize;
    let n_test = (n as f64 * te).round() as usize;
    let val_alloc = apportion(n_val, &sizes, &sizes);
    let caps: Vec<usize> = sizes.iter().zip(&val_alloc).map(|(s, v)| s - v).collect();
    let test_alloc = apportion(n_test, &sizes, &caps);

    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut idx = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in classes.iter().enumerate() {
        let (v, t) = (val_alloc[c], test_alloc[c]);
        idx.validation.extend_from_slice(&members[..v]);
        idx.test.extend_from_slice(&members[v..v + t]);
        idx.train.extend_from_slice(&members[v + t..]);
    }
    for (ids, dst) in [
        (&mut idx.train, &mut split.train),
        (&mut idx.validation, &mut split.validation),
        (&mut idx.test, &mut split.test),
    ] {
        ids.shuffle(&mut rng);
        dst.extend(ids.iter().map(|&i| pairs[i].clone()));
    }
    Ok(split)
}

/// One line of the pair file. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLine {
    pub topic: String,
    pub p_text: String,
    pub q_text: String,
    pub p_stance: Stance,
    pub q_stance: Stance,
    pub label: Label,
}

impl From<&UtterancePair> for PairLine {
    fn from(p: &UtterancePair) -> Self {
        PairLine {
            topic: p.topic.clone(),
            p_text: p.p.text.clone(),
            q_text: p.q.text.clone(),
            p_stance: p.p.stance,
            q_stance: p.q.stance,
            label: p.label,
        }
    }
}

/// Writes one JSON object per line:
/// `{"topic","p_text","q_text","p_stance","q_stance","label"}`.
pub fn write_pairs<W: Write>(mut w: W, pairs: &[UtterancePair]) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, &PairLine::from(p))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(r: R) -> Result<Vec<UtterancePair>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairLine = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: n + 1,
            source,
        })?;
        let expected = pair_label(rec.p_stance, rec.q_stance);
        if expected != rec.label {
            return Err(CorpusError::UnknownLabel {
                row: n + 1,
                value: format!("{} for ({}, {})", rec.label, rec.p_stance, rec.q_stance),
            });
        }
        out.push(UtterancePair {
            p: StanceRecord {
                id: format!("{}:p", n + 1),
                topic: rec.topic.clone(),
                text: rec.p_text,
                stance: rec.p_stance,
            },
            q: StanceRecord {
                id: format!("{}:q", n + 1),
                topic: rec.topic.clone(),
                text: rec.q_text,
                stance: rec.q_stance,
            },
            topic: rec.topic,
            label: rec.label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, topic: &str, stance: Stance) -> StanceRecord {
        StanceRecord {
            id: id.to_string(),
            topic: topic.into(),
            text: format!("tweet {id}"),
            stance,
        }
    }

    fn sample_records() -> Vec<StanceRecord> {
        let mut v = Vec::new();
        for (i, s) in [Stance::Favour, Stance::Against, Stance::None]
            .iter()
            .cycle()
            .take(30)
            .enumerate()
        {
            v.push(rec(i, if i % 2 == 0 { "A" } else { "B" }, *s));
        }
        v
    }

    #[test]
    fn label_mapping() {
        assert_eq!(pair_label(Stance::Favour, Stance::Favour), Label::Agree);
        assert_eq!(pair_label(Stance::Against, Stance::Against), Label::Agree);
        assert_eq!(pair_label(Stance::Favour, Stance::None), Label::Disagree);
        assert_eq!(pair_label(Stance::Favour, Stance::Against), Label::Disagree);
        assert_eq!(pair_label(Stance::None, Stance::None), Label::Neither);
        for a in Stance::ALL {
            for b in Stance::ALL {
                assert_eq!(pair_label(a, b), pair_label(b, a));
            }
        }
    }

    #[test]
    fn parses_semeval_tsv() {
        let tsv = "ID\tTarget\tTweet\tStance\n\
                   1\tHillary Clinton\t@HillaryClinton lies\tAGAINST\n\
                   2\tAtheism\tGod is love\tFAVOR\n\
                   3\tAtheism\tno idea\tNONE\n";
        let recs = read_stance_corpus(tsv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].stance, Stance::Against);
        assert_eq!(recs[1].stance, Stance::Favour);
        assert_eq!(recs[2].topic, "Atheism");
    }

    #[test]
    fn rejects_unknown_stance_and_missing_column() {
        let tsv = "ID\tTarget\tTweet\tStance\n1\tAtheism\tx\tMAYBE\n";
        assert!(matches!(
            read_stance_corpus(tsv.as_bytes()),
            Err(CorpusError::UnknownStance { row: 2, .. })
        ));
        let tsv = "ID\tTarget\tTweet\n1\tAtheism\tx\n";
        assert!(matches!(
            read_stance_corpus(tsv.as_bytes()),
            Err(CorpusError::MissingColumn("Stance"))
        ));
    }

    #[test]
    fn counts_are_exact_and_topics_shared() {
        let recs = sample_records();
        let counts = PairCounts {
            agree: 40,
            disagree: 37,
            neither: 11,
        };
        let pairs = generate_pairs(&recs, counts, 7).unwrap();
        for label in Label::ALL {
            assert_eq!(
                pairs.iter().filter(|p| p.label == label).count(),
                counts.get(label)
            );
        }
        for p in &pairs {
            assert_eq!(p.p.topic, p.topic);
            assert_eq!(p.q.topic, p.topic);
            assert_ne!(p.p.id, p.q.id);
            assert_eq!(p.label, pair_label(p.p.stance, p.q.stance));
        }
    }

    #[test]
    fn empty_pool_names_the_class() {
        let recs: Vec<_> = sample_records()
            .into_iter()
            .filter(|r| r.stance != Stance::None)
            .collect();
        let err = generate_pairs(
            &recs,
            PairCounts {
                agree: 1,
                disagree: 1,
                neither: 1,
            },
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("Neither"), "{err}");
    }

    #[test]
    fn single_record_stance_cannot_self_pair() {
        let recs = vec![rec(0, "A", Stance::None), rec(1, "A", Stance::Favour)];
        let err = generate_pairs(
            &recs,
            PairCounts {
                agree: 0,
                disagree: 0,
                neither: 1,
            },
            0,
        );
        assert!(matches!(
            err,
            Err(CorpusError::EmptyPool {
                class: Label::Neither
            })
        ));
    }

    #[test]
    fn split_is_80_10_10_and_exhaustive() {
        let recs = sample_records();
        let pairs = generate_pairs(
            &recs,
            PairCounts {
                agree: 40,
                disagree: 40,
                neither: 20,
            },
            3,
        )
        .unwrap();
        let s = split_dataset(&pairs, (0.8, 0.1, 0.1), 11).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 10, 10)
        );
        let mut all: Vec<String> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .map(|p| format!("{:?}", PairLine::from(p)))
            .collect();
        let mut orig: Vec<String> = pairs
            .iter()
            .map(|p| format!("{:?}", PairLine::from(p)))
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(s, split_dataset(&pairs, (0.8, 0.1, 0.1), 11).unwrap());
    }

    #[test]
    fn split_rejects_tiny_input() {
        let pairs = generate_pairs(
            &sample_records(),
            PairCounts {
                agree: 9,
                disagree: 0,
                neither: 0,
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            split_dataset(&pairs, (0.8, 0.1, 0.1), 0),
            Err(CorpusError::TooFewPairs(9))
        ));
    }

    #[test]
    fn pair_file_round_trip() {
        let pairs = generate_pairs(
            &sample_records(),
            PairCounts {
                agree: 3,
                disagree: 3,
                neither: 3,
            },
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(first.starts_with("{\"topic\":"), "{first}");
        let back = read_pairs(&buf[..]).unwrap();
        let mut again = Vec::new();
        write_pairs(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn apportion_hits_total() {
        assert_eq!(
            apportion(10, &[34, 33, 33], &[34, 33, 33])
                .iter()
                .sum::<usize>(),
            10
        );
        assert_eq!(apportion(10, &[40, 40, 20], &[40, 40, 20]), vec![4, 4, 2]);
    }
}
