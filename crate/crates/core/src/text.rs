//! Text preprocessing, vocabularies, bag-of-words and TF-IDF similarity.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math::{ln, SparseVec};

/// Lowercases, deletes punctuation and splits on whitespace.
///
/// Punctuation is deleted rather than treated as a separator, so
/// `"Mars's"` becomes `"marss"`.
pub fn preprocess(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    pub const DEFAULT_MAX_SIZE: usize = 5000;

    /// The `max_size` most frequent tokens, ties broken lexicographically.
    pub fn build<T: AsRef<str>>(corpus: &[Vec<T>], max_size: usize) -> Self {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        // BTreeMap order is lexicographic; a stable sort by count keeps it for ties.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(max_size);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| String::from(t)).collect())
    }

    /// Index order follows `tokens`; later duplicates are ignored.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut index = BTreeMap::new();
        let mut kept = Vec::with_capacity(tokens.len());
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), kept.len() as u32);
                kept.push(t);
            }
        }
        Self { tokens: kept, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Counts of in-vocabulary tokens; out-of-vocabulary tokens are dropped.
    pub fn bow<T: AsRef<str>>(&self, tokens: &[T]) -> BowVector {
        BowVector(SparseVec::from_pairs(
            tokens
                .iter()
                .filter_map(|t| self.get(t.as_ref()))
                .map(|i| (i, 1.0))
                .collect(),
        ))
    }

    /// Fraction of token occurrences not covered by the vocabulary.
    pub fn oov_rate<T: AsRef<str>>(&self, corpus: &[Vec<T>]) -> f64 {
        let (mut total, mut missing) = (0usize, 0usize);
        for doc in corpus {
            for t in doc {
                total += 1;
                if self.get(t.as_ref()).is_none() {
                    missing += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            missing as f64 / total as f64
        }
    }
}

/// Bag-of-words counts keyed by vocabulary index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BowVector(pub SparseVec);

impl BowVector {
    pub fn as_sparse(&self) -> &SparseVec {
        &self.0
    }

    pub fn merge(&self, other: &BowVector) -> BowVector {
        BowVector(self.0.add(&other.0))
    }

    pub fn total(&self) -> f64 {
        self.0.entries().iter().map(|&(_, c)| c).sum()
    }
}

/// Smoothed inverse document frequencies:
/// `idf(t) = ln((1 + n) / (1 + df(t))) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    idf: Vec<f64>,
    doc_count: usize,
}

impl TfIdfIndex {
    pub fn build(docs: &[BowVector], vocab_size: usize) -> Self {
        let mut df = alloc::vec![0usize; vocab_size];
        for d in docs {
            for &(i, _) in d.0.entries() {
                df[i as usize] += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df
            .into_iter()
            .map(|f| ln((1.0 + n) / (1.0 + f as f64)) + 1.0)
            .collect();
        Self {
            idf,
            doc_count: docs.len(),
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn idf(&self, index: u32) -> f64 {
        self.idf.get(index as usize).copied().unwrap_or(0.0)
    }

    /// `tf * idf` with `tf` the raw count.
    pub fn vector(&self, bow: &BowVector) -> SparseVec {
        bow.0.map_values(|i, c| c * self.idf(i))
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Dense-vector cosine with the same zero-norm guard.
pub fn cosine_dense(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (crate::math::norm(a), crate::math::norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (crate::math::dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Vocabulary plus IDF table: everything needed to turn raw text into
/// network inputs and similarity queries.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub vocab: Vocabulary,
    pub tfidf: TfIdfIndex,
}

impl TextEncoder {
    /// Fits both tables on a training corpus of raw texts.
    pub fn fit<S: AsRef<str>>(texts: &[S], max_vocab: usize) -> Self {
        let tokenized: Vec<Vec<String>> = texts.iter().map(|t| preprocess(t.as_ref())).collect();
        let vocab = Vocabulary::build(&tokenized, max_vocab);
        let bows: Vec<BowVector> = tokenized.iter().map(|t| vocab.bow(t)).collect();
        let tfidf = TfIdfIndex::build(&bows, vocab.len());
        Self { vocab, tfidf }
    }

    pub fn bow(&self, text: &str) -> BowVector {
        self.vocab.bow(&preprocess(text))
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }
}
