//! Question/sentence similarity: Okapi BM25 and Rouge-L.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

/// Collection statistics for BM25, computed over expert sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_sentences: u32,
    pub doc_freq: BTreeMap<String, u32>,
    pub avg_sentence_length: f64,
}

impl CorpusStats {
    pub fn from_sentences<'a, I>(sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut n = 0u32;
        let mut total_len = 0usize;
        let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
        for tokens in sentences {
            n += 1;
            total_len += tokens.len();
            let mut distinct: Vec<&String> = tokens.iter().collect();
            distinct.sort_unstable();
            distinct.dedup();
            for t in distinct {
                *doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        if n == 0 || total_len == 0 {
            return Err(Error::InvalidArgument(
                "corpus statistics need at least one non-empty sentence".into(),
            ));
        }
        Ok(CorpusStats {
            total_sentences: n,
            doc_freq,
            avg_sentence_length: total_len as f64 / f64::from(n),
        })
    }

    pub fn df(&self, token: &str) -> u32 {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }
}

/// One [`CorpusStats`] per product category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub by_category: BTreeMap<String, CorpusStats>,
}

impl StatsTable {
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let mut groups: BTreeMap<&str, Vec<&[String]>> = BTreeMap::new();
        for p in &corpus.products {
            let group = groups.entry(p.category.as_str()).or_default();
            group.extend(p.sentences.iter().map(|&i| corpus.sentences[i].tokens.as_slice()));
        }
        let mut by_category = BTreeMap::new();
        for (cat, sentences) in groups {
            if sentences.is_empty() {
                continue;
            }
            by_category.insert(cat.to_string(), CorpusStats::from_sentences(sentences)?);
        }
        Ok(StatsTable { by_category })
    }

    pub fn get(&self, category: &str) -> Option<&CorpusStats> {
        self.by_category.get(category)
    }
}

/// `ln((N - n + 0.5) / (n + 0.5))`, clamped at zero.
pub fn idf(token: &str, stats: &CorpusStats) -> f64 {
    idf_from_counts(stats.total_sentences, stats.df(token))
}

pub fn idf_from_counts(total: u32, df: u32) -> f64 {
    let (n_total, n) = (f64::from(total), f64::from(df));
    ((n_total - n + 0.5) / (n + 0.5)).ln().max(0.0)
}

pub fn bm25(question: &[String], sentence: &[String], stats: &CorpusStats) -> f64 {
    let mut tf: HashMap<&str, u32> = HashMap::with_capacity(sentence.len());
    for t in sentence {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    let length_norm =
        BM25_K1 * (1.0 - BM25_B + BM25_B * sentence.len() as f64 / stats.avg_sentence_length);
    let mut distinct: Vec<&str> = question.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    distinct
        .into_iter()
        .filter_map(|q| tf.get(q).map(|&f| (q, f64::from(f))))
        .map(|(q, f)| idf(q, stats) * f * (BM25_K1 + 1.0) / (f + length_norm))
        .sum()
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// Rouge-L F-measure with `beta = P / R`; zero when nothing is shared.
pub fn rouge_l<T: PartialEq>(question: &[T], sentence: &[T]) -> f64 {
    let lcs = lcs_len(question, sentence);
    if lcs == 0 {
        return 0.0;
    }
    let r = lcs as f64 / question.len() as f64;
    let p = lcs as f64 / sentence.len() as f64;
    // (1 + b^2) R P / (R + b^2 P) with b = P/R, rearranged so that it is
    // exactly symmetric in P and R.
    p * r * (p * p + r * r) / (p * p * p + r * r * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub bm25: f64,
    pub rouge_l: f64,
}

impl SimilarityVector {
    pub fn as_array(&self) -> [f64; 2] {
        [self.bm25, self.rouge_l]
    }
}

pub fn similarity_vector(
    question: &[String],
    sentence: &[String],
    stats: &CorpusStats,
) -> SimilarityVector {
    SimilarityVector {
        bm25: bm25(question, sentence, stats),
        rouge_l: rouge_l(question, sentence),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn three_sentence_stats() -> CorpusStats {
        let s = [toks("alpha b c"), toks("d e f"), toks("g h i j")];
        CorpusStats::from_sentences(s.iter().map(Vec::as_slice)).unwrap()
    }

    #[test]
    fn idf_values() {
        assert!((idf_from_counts(3, 1) - (2.5f64 / 1.5).ln()).abs() < 1e-15);
        assert!((idf_from_counts(3, 1) - 0.5108).abs() < 1e-4);
        assert_eq!(idf_from_counts(3, 2), 0.0);
        assert!((idf_from_counts(1000, 0) - 7.601).abs() < 1e-3);
    }

    #[test]
    fn bm25_single_match() {
        let stats = three_sentence_stats();
        assert!((stats.avg_sentence_length - 10.0 / 3.0).abs() < 1e-12);
        let score = bm25(&toks("alpha"), &toks("alpha b c"), &stats);
        assert!((score - 0.5349).abs() < 1e-4, "{score}");
        assert_eq!(bm25(&toks("zzz"), &toks("alpha b c"), &stats), 0.0);
    }

    #[test]
    fn bm25_clamped_token_contributes_nothing() {
        let s = [toks("x a"), toks("x b"), toks("c d"), toks("e f")];
        let stats = CorpusStats::from_sentences(s.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(idf("x", &stats), 0.0);
        let both = bm25(&toks("x a"), &toks("x a"), &stats);
        let one = bm25(&toks("a"), &toks("x a"), &stats);
        assert_eq!(both, one);
    }

    #[test]
    fn rouge_l_values() {
        let q = toks("is it waterproof");
        assert_eq!(rouge_l(&q, &q), 1.0);
        assert_eq!(rouge_l(&q, &toks("no overlap here")), 0.0);
        let f = rouge_l(&q, &toks("it is waterproof and rugged"));
        assert!((f - 0.4474).abs() < 1e-4, "{f}");
        let empty: Vec<String> = Vec::new();
        assert_eq!(rouge_l(&empty, &q), 0.0);
    }

    #[test]
    fn similarity_vector_components() {
        let stats = three_sentence_stats();
        let v = similarity_vector(&toks("alpha b c"), &toks("alpha b c"), &stats);
        assert!(v.bm25 > 0.0);
        assert_eq!(v.rouge_l, 1.0);
        let d = similarity_vector(&toks("zzz"), &toks("alpha b c"), &stats);
        assert_eq!(d.as_array(), [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn rouge_l_symmetric_and_bounded(a in prop::collection::vec(0u8..6, 0..12), b in prop::collection::vec(0u8..6, 0..12)) {
            let f = rouge_l(&a, &b);
            prop_assert_eq!(f.to_bits(), rouge_l(&b, &a).to_bits());
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f == 1.0, !a.is_empty() && a == b);
        }

        #[test]
        fn bm25_monotone_in_match_count(extra in 0usize..5, len in 6usize..12) {
            let stats = three_sentence_stats();
            let q = toks("alpha");
            let mut s1: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
            let mut s2 = s1.clone();
            for k in 0..extra { s1[k] = "alpha".into(); }
            for k in 0..=extra { s2[k] = "alpha".into(); }
            let (a, b) = (bm25(&q, &s1, &stats), bm25(&q, &s2, &stats));
            prop_assert!(a >= 0.0 && b >= a);
        }
    }
}
