use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Lowercases and splits on runs of non-alphanumeric characters, keeping
/// tokens of at least `min_len` characters.
pub fn tokenize(text: &str, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= min_len)
        .collect()
}

/// Sparse vector as `(index, value)` pairs with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec(pub Vec<(usize, f64)>);

impl SparseVec {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&(_, v)| v == 0.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|&(_, v)| v * v).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.0 {
            out[i] = v;
        }
        out
    }
}

/// Smoothed-idf tf-idf with L2-normalized rows.
///
/// `idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1`, term frequency is the raw
/// count, tokens shorter than two characters are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
}

pub const MIN_TOKEN_LEN: usize = 2;

impl TfidfVectorizer {
    /// Learns vocabulary and idf from `corpus`; `None` for an empty corpus.
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Option<Self> {
        if corpus.is_empty() {
            return None;
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let mut tokens = tokenize(doc.as_ref(), MIN_TOKEN_LEN);
            tokens.sort_unstable();
            tokens.dedup();
            for t in tokens {
                *df.entry(t).or_default() += 1;
            }
        }
        let n_docs = corpus.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (index, (term, count)) in df.into_iter().enumerate() {
            vocabulary.insert(term, index);
            idf.push(((1.0 + n_docs) / (1.0 + count as f64)).ln() + 1.0);
        }
        Some(TfidfVectorizer { vocabulary, idf })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Vectorizes one document; out-of-vocabulary tokens are ignored. A
    /// document without known tokens yields the zero vector.
    pub fn transform(&self, doc: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(doc, MIN_TOKEN_LEN) {
            if let Some(&i) = self.vocabulary.get(&token) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> =
            counts.into_iter().map(|(i, tf)| (i, tf * self.idf[i])).collect();
        let norm = entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut entries {
                *v /= norm;
            }
        }
        SparseVec(entries)
    }

    pub fn fit_transform<S: AsRef<str>>(corpus: &[S]) -> Option<(Self, Vec<SparseVec>)> {
        let vectorizer = Self::fit(corpus)?;
        let rows = corpus.iter().map(|d| vectorizer.transform(d.as_ref())).collect();
        Some((vectorizer, rows))
    }
}
