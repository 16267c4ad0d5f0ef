//! Products, questions, answers and review sentences, loaded from JSONL.
//!
//! Every review is split into sentences and each sentence becomes one
//! expert. A question's experts are all sentences of its product.

mod features;
mod text;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use features::{FeatureVector, SparseVec, Vocabulary};
pub use text::{remove_stopwords, split_sentences, tokenize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 5000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRow {
    pub product_id: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub review_id: String,
    pub product_id: String,
    pub reviewer_id: String,
    pub text: String,
    pub rating: u8,
    pub helpful_yes: u32,
    pub helpful_total: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub question_id: String,
    pub product_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asker_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRow {
    pub answer_id: String,
    pub question_id: String,
    pub text: String,
    pub top_voted: bool,
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Binary,
    Open,
}

/// One review sentence acting as an expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSentence {
    pub sentence_id: String,
    pub review_id: String,
    pub product_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub features: FeatureVector,
    pub rating: u8,
    /// Fractions of voters who did / did not find the review helpful.
    pub helpfulness: (f64, f64),
    pub reviewer_id: String,
}

impl ExpertSentence {
    /// Star rating mapped to [-1, 1] with 3 stars neutral.
    pub fn centered_rating(&self) -> f64 {
        (f64::from(self.rating) - 3.0) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub answer_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub features: FeatureVector,
    pub top_voted: bool,
    pub label: Option<u8>,
    pub label_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub product_id: String,
    /// Parsed for completeness; no scoring term uses it.
    pub asker_id: Option<String>,
    pub text: String,
    pub tokens: Vec<String>,
    pub features: FeatureVector,
    pub qtype: QuestionType,
    pub answers: Vec<AnswerRecord>,
    pub n_pos: u32,
    pub n_neg: u32,
    pub n_total: u32,
    pub ambiguous: bool,
}

impl QuestionRecord {
    /// Fraction of positive labels, `None` without labels.
    pub fn pos_fraction(&self) -> Option<f64> {
        (self.n_total > 0).then(|| f64::from(self.n_pos) / f64::from(self.n_total))
    }

    /// Label of the top-voted answer (falls back to the first answer when none is flagged).
    pub fn top_voted_label(&self) -> Option<u8> {
        self.top_voted_answer().and_then(|a| a.label)
    }

    pub fn top_voted_answer(&self) -> Option<&AnswerRecord> {
        self.answers
            .iter()
            .find(|a| a.top_voted)
            .or_else(|| self.answers.first())
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.answers.iter().filter_map(|a| a.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: String,
    pub category: String,
    /// Indices into [`Corpus::sentences`].
    pub sentences: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub reviews: usize,
    pub questions: usize,
    pub answers: usize,
}

#[derive(Debug, Clone)]
pub struct IngestPaths {
    pub products: PathBuf,
    pub questions: PathBuf,
    pub answers: PathBuf,
    pub reviews: PathBuf,
}

impl IngestPaths {
    /// The four standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        IngestPaths {
            products: dir.join("products.jsonl"),
            questions: dir.join("questions.jsonl"),
            answers: dir.join("answers.jsonl"),
            reviews: dir.join("reviews.jsonl"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub drop_stopwords: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Sorted by product id.
    pub products: Vec<Product>,
    pub sentences: Vec<ExpertSentence>,
    pub questions: Vec<QuestionRecord>,
    pub dropped: DropCounts,
}

fn check_unique<'a>(kind: &'static str, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId {
                kind,
                id: id.to_string(),
            });
        }
    }
    Ok(())
}

impl Corpus {
    pub fn ingest(paths: &IngestPaths, options: IngestOptions) -> Result<Corpus> {
        let products: Vec<ProductRow> = read_jsonl(&paths.products)?;
        let reviews: Vec<ReviewRow> = read_jsonl(&paths.reviews)?;
        let questions: Vec<QuestionRow> = read_jsonl(&paths.questions)?;
        let answers: Vec<AnswerRow> = read_jsonl(&paths.answers)?;
        for (i, r) in reviews.iter().enumerate() {
            if !(1..=5).contains(&r.rating) || r.helpful_yes > r.helpful_total {
                return Err(Error::Parse {
                    path: paths.reviews.clone(),
                    line: i + 1,
                    message: format!(
                        "review `{}`: rating must be 1-5 and helpful_yes <= helpful_total",
                        r.review_id
                    ),
                });
            }
        }
        Corpus::from_rows(&products, &reviews, &questions, &answers, options)
    }

    /// Links rows into a corpus. Reviews and questions naming an unknown
    /// product, and answers naming an unknown question, are dropped and counted.
    pub fn from_rows(
        products: &[ProductRow],
        reviews: &[ReviewRow],
        questions: &[QuestionRow],
        answers: &[AnswerRow],
        options: IngestOptions,
    ) -> Result<Corpus> {
        check_unique("product", products.iter().map(|p| p.product_id.as_str()))?;
        check_unique("review", reviews.iter().map(|r| r.review_id.as_str()))?;
        check_unique("question", questions.iter().map(|q| q.question_id.as_str()))?;
        check_unique("answer", answers.iter().map(|a| a.answer_id.as_str()))?;

        let tok = |s: &str| {
            let t = tokenize(s);
            if options.drop_stopwords {
                remove_stopwords(t)
            } else {
                t
            }
        };

        let mut corpus = Corpus {
            products: products
                .iter()
                .map(|p| Product {
                    product_id: p.product_id.clone(),
                    category: p.category.clone(),
                    sentences: Vec::new(),
                })
                .collect(),
            ..Corpus::default()
        };
        corpus
            .products
            .sort_by(|a, b| a.product_id.cmp(&b.product_id));

        for r in reviews {
            let Some(pi) = corpus.product_index(&r.product_id) else {
                corpus.dropped.reviews += 1;
                continue;
            };
            let helpfulness = if r.helpful_total == 0 {
                (0.0, 0.0)
            } else {
                let total = f64::from(r.helpful_total);
                (
                    f64::from(r.helpful_yes) / total,
                    f64::from(r.helpful_total - r.helpful_yes) / total,
                )
            };
            for (k, sentence) in split_sentences(&r.text).into_iter().enumerate() {
                let tokens = tok(&sentence);
                if tokens.is_empty() {
                    continue;
                }
                corpus.products[pi].sentences.push(corpus.sentences.len());
                corpus.sentences.push(ExpertSentence {
                    sentence_id: format!("{}#{k}", r.review_id),
                    review_id: r.review_id.clone(),
                    product_id: r.product_id.clone(),
                    text: sentence,
                    tokens,
                    features: FeatureVector::empty(),
                    rating: r.rating,
                    helpfulness,
                    reviewer_id: r.reviewer_id.clone(),
                });
            }
        }

        let mut by_question: BTreeMap<&str, usize> = BTreeMap::new();
        for q in questions {
            if corpus.product_index(&q.product_id).is_none() {
                corpus.dropped.questions += 1;
                continue;
            }
            by_question.insert(&q.question_id, corpus.questions.len());
            corpus.questions.push(QuestionRecord {
                question_id: q.question_id.clone(),
                product_id: q.product_id.clone(),
                asker_id: q.asker_id.clone(),
                text: q.text.clone(),
                tokens: tok(&q.text),
                features: FeatureVector::empty(),
                qtype: QuestionType::Open,
                answers: Vec::new(),
                n_pos: 0,
                n_neg: 0,
                n_total: 0,
                ambiguous: false,
            });
        }

        for a in answers {
            let Some(&qi) = by_question.get(a.question_id.as_str()) else {
                corpus.dropped.answers += 1;
                continue;
            };
            corpus.questions[qi].answers.push(AnswerRecord {
                answer_id: a.answer_id.clone(),
                text: a.text.clone(),
                tokens: tok(&a.text),
                features: FeatureVector::empty(),
                top_voted: a.top_voted,
                label: None,
                label_confidence: 0.0,
            });
        }
        Ok(corpus)
    }

    pub fn product_index(&self, product_id: &str) -> Option<usize> {
        self.products
            .binary_search_by(|p| p.product_id.as_str().cmp(product_id))
            .ok()
    }

    pub fn product(&self, product_id: &str) -> Option<&Product> {
        self.product_index(product_id).map(|i| &self.products[i])
    }

    pub fn category_of(&self, product_id: &str) -> Option<&str> {
        self.product(product_id).map(|p| p.category.as_str())
    }

    /// The expert sentences `R_q` of a product, in ingestion order.
    pub fn experts(&self, product_id: &str) -> Vec<&ExpertSentence> {
        self.product(product_id)
            .map(|p| p.sentences.iter().map(|&i| &self.sentences[i]).collect())
            .unwrap_or_default()
    }

    /// Vocabulary ranked by document frequency over review sentences.
    pub fn build_vocabulary(&self, max_size: usize) -> Result<Vocabulary> {
        Vocabulary::from_documents(self.sentences.iter().map(|s| &s.tokens), max_size)
    }

    /// Fills every feature vector from `vocab`.
    pub fn apply_vocabulary(&mut self, vocab: &Vocabulary) {
        use rayon::prelude::*;
        self.sentences
            .par_iter_mut()
            .for_each(|s| s.features = vocab.featurize(&s.tokens));
        self.questions.par_iter_mut().for_each(|q| {
            q.features = vocab.featurize(&q.tokens);
            for a in &mut q.answers {
                a.features = vocab.featurize(&a.tokens);
            }
        });
    }

    pub fn question_index(&self, question_id: &str) -> Option<usize> {
        self.questions
            .iter()
            .position(|q| q.question_id == question_id)
    }

    /// Per-category counts: products, questions, answers, reviews.
    pub fn category_counts(&self) -> BTreeMap<String, CategoryCounts> {
        let mut out: BTreeMap<String, CategoryCounts> = BTreeMap::new();
        for p in &self.products {
            let c = out.entry(p.category.clone()).or_default();
            c.products += 1;
            c.sentences += p.sentences.len();
            let reviews: HashSet<&str> = p
                .sentences
                .iter()
                .map(|&i| self.sentences[i].review_id.as_str())
                .collect();
            c.reviews += reviews.len();
        }
        for q in &self.questions {
            if let Some(cat) = self.category_of(&q.product_id) {
                let c = out.entry(cat.to_string()).or_default();
                c.questions += 1;
                c.answers += q.answers.len();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub products: usize,
    pub questions: usize,
    pub answers: usize,
    pub reviews: usize,
    pub sentences: usize,
}
