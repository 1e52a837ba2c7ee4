use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NgramRange {
    /// (1, 1)
    Unigram,
    /// (1, 2)
    UnigramBigram,
}

impl NgramRange {
    pub fn as_str(self) -> &'static str {
        match self {
            NgramRange::Unigram => "unigram",
            NgramRange::UnigramBigram => "unigram+bigram",
        }
    }
}

impl fmt::Display for NgramRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NgramRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "unigram" | "1,1" | "(1,1)" => Ok(NgramRange::Unigram),
            "unigram+bigram" | "bigram" | "1,2" | "(1,2)" => Ok(NgramRange::UnigramBigram),
            other => Err(format!("unknown ngram range `{other}`")),
        }
    }
}

/// Lowercased runs of alphanumeric characters at least two characters
/// long, followed (for [`NgramRange::UnigramBigram`]) by adjacent pairs
/// joined with a single space.
pub fn tokenize(text: &str, range: NgramRange) -> Vec<String> {
    let mut unigrams = Vec::new();
    let mut current = String::new();
    let mut len = 0usize;
    let mut flush = |current: &mut String, len: &mut usize| {
        if *len >= 2 {
            unigrams.push(current.to_lowercase());
        }
        current.clear();
        *len = 0;
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
            len += 1;
        } else {
            flush(&mut current, &mut len);
        }
    }
    flush(&mut current, &mut len);

    if range == NgramRange::UnigramBigram && unigrams.len() > 1 {
        let bigrams: Vec<String> = unigrams
            .windows(2)
            .map(|w| format!("{} {}", w[0], w[1]))
            .collect();
        unigrams.extend(bigrams);
    }
    unigrams
}

/// Token → column map with document frequencies. Columns follow
/// lexicographic token order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub ngram_range: NgramRange,
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    n_documents: usize,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its persisted parts; `tokens` must be
    /// sorted and unique.
    pub fn from_parts(
        ngram_range: NgramRange,
        tokens: Vec<String>,
        document_frequency: Vec<usize>,
        n_documents: usize,
    ) -> Option<Self> {
        let sorted = tokens.windows(2).all(|w| w[0] < w[1]);
        let df_ok = document_frequency.len() == tokens.len()
            && document_frequency.iter().all(|&df| df >= 1 && df <= n_documents);
        if !sorted || !df_ok {
            return None;
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Some(Self {
            ngram_range,
            tokens,
            document_frequency,
            n_documents,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn document_frequency(&self) -> &[usize] {
        &self.document_frequency
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfTransform {
    pub vocabulary: Vocabulary,
    pub idf: Vec<f64>,
}

impl TfidfTransform {
    pub fn from_vocabulary(vocabulary: Vocabulary) -> Self {
        let n = vocabulary.n_documents() as f64;
        let idf = vocabulary
            .document_frequency()
            .iter()
            .map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
            .collect();
        Self { vocabulary, idf }
    }

    pub fn n_features(&self) -> usize {
        self.idf.len()
    }

    pub fn transform<S: AsRef<str> + Sync>(&self, docs: &[S]) -> FeatureMatrix {
        apply_tfidf(self, docs)
    }
}

/// Fits the vocabulary and smoothed idf `ln((1 + N) / (1 + df)) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(docs: &[S], range: NgramRange) -> Result<TfidfTransform> {
    if docs.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let mut tokens = tokenize(doc.as_ref(), range);
        tokens.sort_unstable();
        tokens.dedup();
        for t in tokens {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(FeatureError::NoTokens);
    }
    let (tokens, counts): (Vec<String>, Vec<usize>) = df.into_iter().unzip();
    let vocabulary = Vocabulary::from_parts(range, tokens, counts, docs.len())
        .expect("btree order yields sorted unique tokens");
    Ok(TfidfTransform::from_vocabulary(vocabulary))
}

/// Raw counts times idf, each row L2-normalized. Unknown tokens are ignored
/// and documents without known tokens map to zero rows.
pub fn apply_tfidf<S: AsRef<str> + Sync>(transform: &TfidfTransform, docs: &[S]) -> FeatureMatrix {
    let d = transform.n_features();
    let rows: Vec<Vec<f64>> = docs
        .par_iter()
        .map(|doc| {
            let mut row = vec![0.0; d];
            for token in tokenize(doc.as_ref(), transform.vocabulary.ngram_range) {
                if let Some(col) = transform.vocabulary.column(&token) {
                    row[col] += 1.0;
                }
            }
            for (v, idf) in row.iter_mut().zip(&transform.idf) {
                *v *= idf;
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    let mut out = FeatureMatrix::zeros(docs.len(), d);
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&row);
    }
    out
}
