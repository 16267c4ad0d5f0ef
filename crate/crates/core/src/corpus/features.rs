use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    /// Builds from entries that are already sorted by index with no duplicates.
    pub fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, w)| dense[i as usize] * w)
            .sum()
    }

    /// Elementwise product; only indices present in both survive.
    pub fn hadamard(&self, other: &SparseVec) -> SparseVec {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push((a[i].0, a[i].1 * b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        SparseVec { entries: out }
    }

    /// `self - other`, dropping exact zeros.
    pub fn sub(&self, other: &SparseVec) -> SparseVec {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let next = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    i += 1;
                    j += 1;
                    (x.0, x.1 - y.1)
                }
                (Some(x), Some(y)) if x.0 < y.0 => {
                    i += 1;
                    *x
                }
                (Some(x), None) => {
                    i += 1;
                    *x
                }
                (_, Some(y)) => {
                    j += 1;
                    (y.0, -y.1)
                }
                (None, None) => unreachable!(),
            };
            if next.1 != 0.0 {
                out.push(next);
            }
        }
        SparseVec { entries: out }
    }
}

/// L2-normalized term-frequency vector over a [`Vocabulary`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(SparseVec);

impl FeatureVector {
    pub fn empty() -> Self {
        FeatureVector::default()
    }

    pub fn as_sparse(&self) -> &SparseVec {
        &self.0
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        self.0.entries()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    doc_freq: Vec<u32>,
}

/// Token index space shared by question, answer and sentence features.
///
/// Indices follow document-frequency rank: index 0 is the most frequent token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<u32>,
    index: HashMap<String, u32>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let index = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens: r.tokens,
            doc_freq: r.doc_freq,
            index,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            doc_freq: v.doc_freq,
        }
    }
}

impl Vocabulary {
    /// Keeps the `max_size` tokens with the highest document frequency, ties
    /// broken lexicographically. Each item of `documents` is one document.
    pub fn from_documents<'a, D, T>(documents: D, max_size: usize) -> Result<Self>
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        if max_size < 1 {
            return Err(Error::InvalidArgument(
                "vocabulary max_size must be at least 1".into(),
            ));
        }
        let mut df: BTreeMap<&str, u32> = BTreeMap::new();
        let mut seen: Vec<&str> = Vec::new();
        for doc in documents {
            seen.clear();
            seen.extend(doc.into_iter().map(String::as_str));
            seen.sort_unstable();
            seen.dedup();
            for &t in &seen {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u32)> = df.into_iter().collect();
        // BTreeMap order is lexicographic; a stable sort on df keeps it for ties.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(max_size);
        Ok(VocabRepr {
            tokens: ranked.iter().map(|(t, _)| t.to_string()).collect(),
            doc_freq: ranked.iter().map(|&(_, d)| d).collect(),
        }
        .into())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> &str {
        &self.tokens[index as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, index: u32) -> u32 {
        self.doc_freq[index as usize]
    }

    /// Term-frequency vector, L2-normalized; out-of-vocabulary tokens are dropped.
    pub fn featurize<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.index_of(t.as_ref()) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return FeatureVector::empty();
        }
        FeatureVector(SparseVec::from_sorted(
            counts.into_iter().map(|(i, c)| (i, c / norm)).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::text::tokenize;
    use proptest::prelude::*;

    fn docs(raw: &[&[&str]]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|d| d.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn vocabulary_under_cap_keeps_everything() {
        let d = docs(&[&["a", "b"], &["c", "a"]]);
        let v = Vocabulary::from_documents(&d, 10).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.index_of("a"), Some(0));
        assert_eq!(v.doc_freq(0), 2);
    }

    #[test]
    fn vocabulary_ties_break_lexicographically() {
        let mut d = Vec::new();
        for _ in 0..5 {
            d.push(vec!["b".to_string(), "a".to_string()]);
        }
        d.push(vec!["c".to_string()]);
        let v = Vocabulary::from_documents(&d, 2).unwrap();
        assert_eq!(v.tokens(), ["a", "b"]);
    }

    #[test]
    fn vocabulary_cap_binds() {
        let d: Vec<Vec<String>> = (0..10_000).map(|i| vec![format!("t{i}")]).collect();
        let v = Vocabulary::from_documents(&d, 5000).unwrap();
        assert_eq!(v.len(), 5000);
        assert!(Vocabulary::from_documents(&d, 0).is_err());
    }

    #[test]
    fn featurize_normalizes_term_frequency() {
        let v = Vocabulary::from_documents(&docs(&[&["good", "lens"], &["good"]]), 10).unwrap();
        assert_eq!(v.index_of("good"), Some(0));
        let f = v.featurize(&["good", "good", "lens"]);
        let s5 = 5f64.sqrt();
        assert_eq!(f.entries().len(), 2);
        assert!((f.entries()[0].1 - 2.0 / s5).abs() < 1e-15);
        assert!((f.entries()[1].1 - 1.0 / s5).abs() < 1e-15);
        assert!(v.featurize(&["zzz"]).is_empty());
        assert_eq!(v.featurize(&["lens"]).entries(), &[(1, 1.0)]);
    }

    #[test]
    fn sparse_difference_and_product() {
        let a = SparseVec::from_sorted(vec![(0, 1.0), (2, 0.5), (4, 1.0)]);
        let b = SparseVec::from_sorted(vec![(2, 0.5), (3, 2.0)]);
        assert_eq!(a.sub(&b).entries(), &[(0, 1.0), (3, -2.0), (4, 1.0)]);
        assert_eq!(a.hadamard(&b).entries(), &[(2, 0.25)]);
    }

    proptest! {
        #[test]
        fn feature_vectors_have_unit_norm(words in prop::collection::vec("[a-e]{1,2}", 0..30)) {
            let vocab = Vocabulary::from_documents(std::iter::once(&words), 12).unwrap();
            let f = vocab.featurize(&words);
            if f.is_empty() {
                prop_assert!(words.iter().all(|w| vocab.index_of(w).is_none()));
            } else {
                prop_assert!((f.norm() - 1.0).abs() < 1e-9);
                prop_assert!(f.entries().windows(2).all(|w| w[0].0 < w[1].0));
                prop_assert!(f.entries().iter().all(|&(i, w)| w > 0.0 && (i as usize) < vocab.len()));
            }
        }

        #[test]
        fn featurize_stable_under_retokenization(text in "[a-zA-Z0-9 ,.!?-]{0,120}") {
            let tokens = tokenize(&text);
            let vocab = Vocabulary::from_documents(std::iter::once(&tokens), 50).unwrap();
            let again = tokenize(&tokens.join(" "));
            prop_assert_eq!(vocab.featurize(&tokens), vocab.featurize(&again));
        }

        #[test]
        fn vocabulary_is_deterministic(d in prop::collection::vec(prop::collection::vec("[a-h]", 1..6), 1..20), cap in 1usize..8) {
            let a = Vocabulary::from_documents(&d, cap).unwrap();
            let b = Vocabulary::from_documents(&d, cap).unwrap();
            prop_assert_eq!(a.tokens(), b.tokens());
        }
    }
}
