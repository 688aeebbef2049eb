//! Corpus data model: entity-annotated sentences, the frequency-thresholded
//! vocabulary, transactions for mining, and multi-instance bags.
//!
//! The sentence file format is one JSON object per line (UTF-8):
//!
//! ```text
//! {"tokens":["danay","works","at","eleftherotypia"],
//!  "mentions":[{"name":"danay","id":"m.0dan05","type":"PERSON","start":0,"end":1},
//!              {"name":"eleftherotypia","id":"m.0ele14","type":"ORGANIZATION","start":3,"end":4}],
//!  "head":0,"tail":1,"relation":"/business/person/company","provenance":"ORIGINAL"}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The distinguished "no relation" label.
pub const NA_LABEL: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PERSON")]
    Person,
    #[serde(rename = "LOCATION")]
    Location,
    #[serde(rename = "ORGANIZATION")]
    Organization,
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EntityType::Person => "PERSON",
            EntityType::Location => "LOCATION",
            EntityType::Organization => "ORGANIZATION",
        };
        f.write_str(s)
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PERSON" => Ok(EntityType::Person),
            "LOCATION" => Ok(EntityType::Location),
            "ORGANIZATION" => Ok(EntityType::Organization),
            other => Err(Error::Domain(format!("unknown entity type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "ORIGINAL")]
    Original,
    #[serde(rename = "GENERATED")]
    Generated,
}

/// An entity occurrence inside one sentence. `start..end` is a half-open
/// token span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityMention {
    pub name: String,
    pub id: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceInstance {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<EntityMention>,
    pub head: Option<usize>,
    pub tail: Option<usize>,
    pub relation: String,
    pub provenance: Provenance,
}

impl SentenceInstance {
    /// Check the record-level invariants; returns the offending field on failure.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.tokens.is_empty() {
            return Err(("tokens", "sentence has no tokens".into()));
        }
        for (i, m) in self.mentions.iter().enumerate() {
            if m.start >= m.end {
                return Err(("mentions", format!("mention {i} has empty span {}..{}", m.start, m.end)));
            }
            if m.end > self.tokens.len() {
                return Err((
                    "mentions",
                    format!("mention {i} span end {} exceeds token count {}", m.end, self.tokens.len()),
                ));
            }
        }
        for (field, idx) in [("head", self.head), ("tail", self.tail)] {
            if let Some(i) = idx {
                if i >= self.mentions.len() {
                    return Err((field, format!("mention index {i} out of range ({} mentions)", self.mentions.len())));
                }
            }
        }
        if self.relation != NA_LABEL {
            match (self.head, self.tail) {
                (Some(h), Some(t)) if h != t => {}
                (Some(_), Some(_)) => {
                    return Err(("tail", "head and tail refer to the same mention".into()));
                }
                _ => {
                    return Err(("relation", format!("relation `{}` requires head and tail mentions", self.relation)));
                }
            }
        }
        Ok(())
    }

    pub fn head_mention(&self) -> Option<&EntityMention> {
        self.head.map(|i| &self.mentions[i])
    }

    pub fn tail_mention(&self) -> Option<&EntityMention> {
        self.tail.map(|i| &self.mentions[i])
    }
}

/// Parse a sentence file from any reader. `path` is used in error messages only.
pub fn parse_corpus(reader: impl Read, path: &Path) -> Result<Vec<SentenceInstance>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: SentenceInstance = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, None, e.to_string()))?;
        inst.validate()
            .map_err(|(field, msg)| Error::parse(path, lineno, Some(field), msg))?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<SentenceInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(file, path)
}

/// Write instances in file order, one JSON object per line.
pub fn save_corpus(path: impl AsRef<Path>, instances: &[SentenceInstance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        let line = serde_json::to_string(inst).map_err(|e| Error::Domain(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Frequency-thresholded word list. Item ids are dense from 0, assigned by
/// (frequency descending, then lexicographic word order), so rebuilding from
/// the same corpus always yields the same ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    item_of_word: HashMap<String, u32>,
    words: Vec<String>,
    frequency: Vec<u64>,
    min_frequency: u64,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn min_frequency(&self) -> u64 {
        self.min_frequency
    }

    /// Item id of a word, if it survived the threshold. The lookup is
    /// case-sensitive; callers normalize with [`normalize_token`].
    pub fn item(&self, word: &str) -> Option<u32> {
        self.item_of_word.get(word).copied()
    }

    pub fn word(&self, item: u32) -> &str {
        &self.words[item as usize]
    }

    pub fn frequency(&self, item: u32) -> u64 {
        self.frequency[item as usize]
    }

    pub fn items(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.words.len() as u32).into_iter()
    }

    /// Tab-separated `word<TAB>item_id<TAB>frequency`, sorted by item id.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "#min_frequency={}", self.min_frequency).map_err(|e| Error::io(path, e))?;
        for (id, word) in self.words.iter().enumerate() {
            writeln!(w, "{word}\t{id}\t{}", self.frequency[id]).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        let mut frequency = Vec::new();
        let mut min_frequency = 1u64;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#min_frequency=") {
                min_frequency = rest
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, Some("min_frequency"), "not an integer"))?;
                continue;
            }
            let mut parts = line.split('\t');
            let word = parts
                .next()
                .ok_or_else(|| Error::parse(path, lineno, Some("word"), "missing"))?;
            let id: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(path, lineno, Some("item_id"), "missing or not an integer"))?;
            let freq: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(path, lineno, Some("frequency"), "missing or not an integer"))?;
            if id != words.len() {
                return Err(Error::parse(path, lineno, Some("item_id"), format!("expected id {}, found {id}", words.len())));
            }
            words.push(word.to_string());
            frequency.push(freq);
        }
        let item_of_word = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Vocabulary { item_of_word, words, frequency, min_frequency })
    }
}

/// Lowercase normalization applied before any vocabulary lookup or count.
pub fn normalize_token(token: &str) -> String {
    token.to_lowercase()
}

pub fn build_vocabulary(instances: &[SentenceInstance], min_frequency: u64) -> Vocabulary {
    build_vocabulary_filtered(instances, min_frequency, &HashSet::new())
}

/// Count lowercased tokens across the corpus and keep the words with total
/// count >= `min_frequency`, minus the stopwords.
pub fn build_vocabulary_filtered(
    instances: &[SentenceInstance],
    min_frequency: u64,
    stopwords: &HashSet<String>,
) -> Vocabulary {
    assert!(min_frequency >= 1, "min_frequency must be >= 1");
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for inst in instances {
        for tok in &inst.tokens {
            *counts.entry(normalize_token(tok)).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_frequency && !stopwords.contains(w))
        .collect();
    // Frequency descending, lexicographic ascending on ties.
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut item_of_word = HashMap::with_capacity(kept.len());
    let mut words = Vec::with_capacity(kept.len());
    let mut frequency = Vec::with_capacity(kept.len());
    for (id, (word, count)) in kept.into_iter().enumerate() {
        item_of_word.insert(word.clone(), id as u32);
        words.push(word);
        frequency.push(count);
    }
    Vocabulary { item_of_word, words, frequency, min_frequency }
}

// ---------------------------------------------------------------------------
// Transactions
// ---------------------------------------------------------------------------

/// The set of in-vocabulary words of one sentence, as strictly ascending
/// item ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    items: Vec<u32>,
    pub source: usize,
}

impl Transaction {
    /// `items` must be strictly ascending.
    pub fn new(items: Vec<u32>, source: usize) -> Result<Transaction> {
        if !items.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Contract(format!(
                "transaction items must be strictly ascending, got {items:?}"
            )));
        }
        Ok(Transaction { items, source })
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Convert each sentence to its deduplicated, sorted in-vocabulary item set.
/// Sentences with no in-vocabulary word yield no transaction.
pub fn to_transactions(instances: &[SentenceInstance], vocab: &Vocabulary) -> Vec<Transaction> {
    let mut out = Vec::new();
    for (idx, inst) in instances.iter().enumerate() {
        let mut items: Vec<u32> = inst
            .tokens
            .iter()
            .filter_map(|t| vocab.item(&normalize_token(t)))
            .collect();
        items.sort_unstable();
        items.dedup();
        if !items.is_empty() {
            out.push(Transaction { items, source: idx });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Bags
// ---------------------------------------------------------------------------

/// All sentences sharing one (head entity, tail entity, relation) triple; the
/// unit of multi-instance attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub head_id: String,
    pub tail_id: String,
    pub relation: String,
    pub sentence_indices: Vec<usize>,
}

/// Group instances with resolved head/tail mentions into bags, one per
/// distinct (head id, tail id, relation) triple, ordered lexicographically
/// on the triple. Sentences without a resolved pair are skipped.
pub fn group_bags(instances: &[SentenceInstance]) -> Vec<Bag> {
    let mut map: BTreeMap<(String, String, String), Vec<usize>> = BTreeMap::new();
    for (idx, inst) in instances.iter().enumerate() {
        let (Some(h), Some(t)) = (inst.head_mention(), inst.tail_mention()) else {
            continue;
        };
        map.entry((h.id.clone(), t.id.clone(), inst.relation.clone()))
            .or_default()
            .push(idx);
    }
    map.into_iter()
        .map(|((head_id, tail_id, relation), sentence_indices)| Bag {
            head_id,
            tail_id,
            relation,
            sentence_indices,
        })
        .collect()
}
