use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use opqa::corpus::{
    read_jsonl, remove_stopwords, tokenize, write_jsonl, Corpus, ExpertSentence, IngestOptions,
    IngestPaths, QuestionRecord, QuestionType,
};
use opqa::eval::{evaluate, split_questions, MetricsRecord};
use opqa::labeling::{
    apply_labels, bundled_seeds, is_binary_question, run_pipeline, summarize,
    train_answer_labeler, LabelReport, LabeledAnswer, SeedAnswer, DEFAULT_LABELER_LAMBDA,
};
use opqa::moe::{predict_binary, rank_reviews};
use opqa::similarity::StatsTable;
use opqa::synth::{generate, SynthSpec};
use opqa::train::{train, TrainConfig};
use opqa::ModelArtifact;
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, IngestArgs, LabelArgs, QueryArgs, SynthArgs, TrainArgs};
use crate::cache::CorpusCache;
use crate::error::{CliError, Result};

pub const DEFAULT_SYNTH_AMBIGUITY: f64 = 0.14;

/// Optional `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthSpec>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub struct Globals {
    pub seed: Option<u64>,
    pub config: ConfigFile,
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let base = args.data.as_deref().map(IngestPaths::in_dir);
    let pick = |explicit: &Option<PathBuf>, from_dir: Option<PathBuf>, flag: &str| {
        explicit
            .clone()
            .or(from_dir)
            .ok_or_else(|| CliError::usage(format!("pass --data or --{flag}")))
    };
    let paths = IngestPaths {
        products: pick(&args.products, base.as_ref().map(|b| b.products.clone()), "products")?,
        questions: pick(&args.questions, base.as_ref().map(|b| b.questions.clone()), "questions")?,
        answers: pick(&args.answers, base.as_ref().map(|b| b.answers.clone()), "answers")?,
        reviews: pick(&args.reviews, base.as_ref().map(|b| b.reviews.clone()), "reviews")?,
    };
    let options = IngestOptions {
        drop_stopwords: args.drop_stopwords,
    };
    let corpus = Corpus::ingest(&paths, options)?;
    print_category_counts(&corpus);
    let d = &corpus.dropped;
    if d.reviews + d.questions + d.answers > 0 {
        println!(
            "dropped: {} reviews, {} questions, {} answers with unknown parents",
            d.reviews, d.questions, d.answers
        );
    }
    CorpusCache::new(corpus, args.drop_stopwords).save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_category_counts(corpus: &Corpus) {
    println!(
        "{:<24} {:>9} {:>10} {:>9} {:>9} {:>10}",
        "category", "products", "questions", "answers", "reviews", "sentences"
    );
    let mut total = opqa::corpus::CategoryCounts::default();
    for (cat, c) in corpus.category_counts() {
        println!(
            "{:<24} {:>9} {:>10} {:>9} {:>9} {:>10}",
            cat, c.products, c.questions, c.answers, c.reviews, c.sentences
        );
        total.products += c.products;
        total.questions += c.questions;
        total.answers += c.answers;
        total.reviews += c.reviews;
        total.sentences += c.sentences;
    }
    println!(
        "{:<24} {:>9} {:>10} {:>9} {:>9} {:>10}",
        "total", total.products, total.questions, total.answers, total.reviews, total.sentences
    );
}

pub fn label(args: &LabelArgs) -> Result<()> {
    let mut cache = CorpusCache::load(&args.corpus)?;
    let (labels, report) = match &args.from_labels {
        Some(path) => {
            let labels: Vec<LabeledAnswer> = read_jsonl(path)?;
            if let Some(bad) = labels.iter().find(|l| l.label > 1) {
                return Err(CliError::Data(format!(
                    "{}: answer `{}` has label {}, expected 0 or 1",
                    path.display(),
                    bad.answer_id,
                    bad.label
                )));
            }
            let report = apply_labels(&mut cache.corpus, &labels);
            (labels, report)
        }
        None => {
            let seeds: Vec<SeedAnswer> = match &args.seeds {
                Some(path) => read_jsonl(path)?,
                None => bundled_seeds(),
            };
            let labeler = train_answer_labeler(&seeds, DEFAULT_LABELER_LAMBDA)?;
            run_pipeline(&mut cache.corpus, &labeler, args.keep_fraction, args.per_category)?
        }
    };
    print_label_report(&cache.corpus, &report);
    if let Some(path) = &args.labels_out {
        write_jsonl(path, &labels)?;
    }
    let out = args.out.as_ref().unwrap_or(&args.corpus);
    cache.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn print_label_report(corpus: &Corpus, report: &LabelReport) {
    println!("yes/no questions:   {}", report.binary_questions);
    println!("candidate answers:  {}", report.candidate_answers);
    println!("labeled answers:    {}", report.labeled_answers);
    println!("labeled questions:  {}", report.labeled_questions);
    println!("positive share:     {:.1}%", 100.0 * report.positive_share);
    println!(
        "ambiguous:          {} of {} ({:.1}%)",
        report.ambiguous_questions,
        report.labeled_questions,
        100.0 * report.ambiguous_rate
    );
    let mut per_count: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for q in corpus.questions.iter().filter(|q| q.n_total > 0) {
        let e = per_count.entry(q.n_total).or_default();
        e.0 += 1;
        e.1 += usize::from(q.ambiguous);
    }
    println!("{:>7} {:>10} {:>10}", "labels", "questions", "ambiguous");
    for (n, (count, ambiguous)) in per_count {
        println!(
            "{n:>7} {count:>10} {:>9.1}%",
            100.0 * ambiguous as f64 / count as f64
        );
    }
}

pub fn train_cmd(args: &TrainArgs, globals: &Globals) -> Result<()> {
    let mut config = globals.config.train.clone().unwrap_or_default();
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(m) = args.max_iters {
        config.lbfgs_max_iters = m;
    }
    if let Some(r) = args.em_rounds {
        config.em_max_rounds = r;
    }
    if let Some(s) = globals.seed {
        config.rng_seed = s;
    }
    config.validate()?;

    let mut corpus = CorpusCache::load(&args.corpus)?.corpus;
    let vocab = corpus.build_vocabulary(args.vocab_size)?;
    corpus.apply_vocabulary(&vocab);
    let stats = StatsTable::from_corpus(&corpus)?;
    let (train_idx, test_idx) = split_questions(&corpus);
    info!(
        "{} training and {} test questions, vocabulary {}",
        train_idx.len(),
        test_idx.len(),
        vocab.len()
    );
    let outcome = train(&corpus, &stats, &train_idx, vocab.len(), &config)?;
    let metrics = match evaluate(
        &corpus,
        &stats,
        &outcome.params,
        &test_idx,
        config.neg_samples_per_answer,
        config.rng_seed,
    ) {
        Ok(m) => m,
        Err(e) => {
            warn!("skipping held-out metrics: {e}");
            Vec::new()
        }
    };
    println!("variant:     {}", config.variant);
    println!("questions:   {}", outcome.questions_used);
    println!("objective:   {:.6}", outcome.objective);
    if let Some(em) = &outcome.em {
        println!("em rounds:   {}", em.observed_loglik.len().saturating_sub(1));
    }
    let vocab_len = vocab.len();
    let mut artifact = ModelArtifact::new(
        vocab,
        stats,
        outcome.params,
        config,
        outcome.objective,
        outcome.em,
    );
    artifact.metrics = metrics;
    print_metrics(&artifact.metrics);
    artifact.save(&args.out)?;
    println!("wrote {} ({vocab_len} features)", args.out.display());
    Ok(())
}

fn print_metrics(records: &[MetricsRecord]) {
    if records.is_empty() {
        return;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:<20} {:<9} {:<7} {:>7} {:>8} {:>7} {:>7}",
        "category", "variant", "std", "auc_b", "acc@0.5", "auc_o", "n"
    );
    for r in records {
        let acc = r.accuracy_at.as_ref().and_then(|m| m.get("0.5").copied());
        println!(
            "{:<20} {:<9} {:<7} {:>7} {:>8} {:>7} {:>7}",
            r.category,
            r.variant,
            r.standard.map_or("-", |s| s.name()),
            fmt(r.auc_b),
            fmt(acc),
            fmt(r.auc_o),
            r.n_test
        );
    }
}

pub fn eval_cmd(args: &EvalArgs, globals: &Globals) -> Result<()> {
    let artifact = ModelArtifact::load(&args.model)?;
    let mut corpus = CorpusCache::load(&args.corpus)?.corpus;
    corpus.apply_vocabulary(&artifact.vocabulary);
    let (_, test_idx) = split_questions(&corpus);
    let seed = globals.seed.unwrap_or(artifact.train_config.rng_seed);
    let records = evaluate(
        &corpus,
        &artifact.corpus_stats,
        &artifact.model_params,
        &test_idx,
        args.neg_samples,
        seed,
    )?;
    if records.is_empty() {
        let what = if artifact.model_params.variant.is_open() {
            "open-ended questions with answers"
        } else {
            "labeled yes/no questions"
        };
        return Err(CliError::Data(format!(
            "{}: no {what} in the test split",
            args.corpus.display()
        )));
    }
    print_metrics(&records);
    let mut json = serde_json::to_string_pretty(&records).map_err(opqa::Error::from)?;
    json.push('\n');
    fs::write(&args.out, json).map_err(|e| CliError::io(&args.out, e))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// One ranked sentence in a query report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRow {
    pub rank: usize,
    pub sentence_id: String,
    pub relevance: f64,
    /// The sentence's own yes-vote `sigmoid(w)`.
    pub vote: f64,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryReport {
    pub product_id: String,
    pub question: String,
    pub variant: String,
    pub yes_no: bool,
    /// Predicted probability of "yes", for models trained on yes/no labels.
    pub p_yes: Option<f64>,
    pub supporting: Vec<QueryRow>,
    pub opposing: Vec<QueryRow>,
}

pub fn query(args: &QueryArgs) -> Result<()> {
    if args.top_k == 0 {
        return Err(CliError::usage("--top-k must be at least 1"));
    }
    let artifact = ModelArtifact::load(&args.model)?;
    let cache = CorpusCache::load(&args.corpus)?;
    let report = build_query_report(&artifact, &cache, args)?;
    if args.json {
        let text = serde_json::to_string_pretty(&report).map_err(opqa::Error::from)?;
        println!("{text}");
    } else {
        print_query_report(&report);
    }
    Ok(())
}

fn build_query_report(
    artifact: &ModelArtifact,
    cache: &CorpusCache,
    args: &QueryArgs,
) -> Result<QueryReport> {
    let corpus = &cache.corpus;
    let category = corpus.category_of(&args.product_id).ok_or_else(|| {
        CliError::Data(format!(
            "{}: unknown product `{}`",
            args.corpus.display(),
            args.product_id
        ))
    })?;
    let stats = artifact.corpus_stats.get(category).ok_or_else(|| {
        CliError::Data(format!("model has no statistics for category `{category}`"))
    })?;
    let vocab = &artifact.vocabulary;
    let experts: Vec<ExpertSentence> = corpus
        .experts(&args.product_id)
        .into_iter()
        .map(|s| ExpertSentence {
            features: vocab.featurize(&s.tokens),
            ..s.clone()
        })
        .collect();
    let experts: Vec<&ExpertSentence> = experts.iter().collect();

    let mut tokens = tokenize(&args.question);
    if cache.drop_stopwords {
        tokens = remove_stopwords(tokens);
    }
    let yes_no = is_binary_question(&args.question);
    let question = QuestionRecord {
        question_id: String::new(),
        product_id: args.product_id.clone(),
        asker_id: None,
        text: args.question.clone(),
        features: vocab.featurize(&tokens),
        tokens,
        qtype: if yes_no {
            QuestionType::Binary
        } else {
            QuestionType::Open
        },
        answers: Vec::new(),
        n_pos: 0,
        n_neg: 0,
        n_total: 0,
        ambiguous: false,
    };
    let params = &artifact.model_params;
    let mixture = predict_binary(&question, &experts, stats, params)?;
    let ranked = rank_reviews(&question, &experts, stats, params, args.top_k)?;
    let (mut supporting, mut opposing) = (Vec::new(), Vec::new());
    for (rank, r) in ranked.into_iter().enumerate() {
        let vote = mixture.expert_preds[r.position];
        let row = QueryRow {
            rank: rank + 1,
            sentence_id: r.sentence_id,
            relevance: r.weight,
            vote,
            text: experts[r.position].text.clone(),
        };
        if vote >= 0.5 {
            supporting.push(row);
        } else {
            opposing.push(row);
        }
    }
    Ok(QueryReport {
        product_id: args.product_id.clone(),
        question: args.question.clone(),
        variant: params.variant.name().to_string(),
        yes_no,
        p_yes: (!params.variant.is_open()).then_some(mixture.combined),
        supporting,
        opposing,
    })
}

fn print_query_report(report: &QueryReport) {
    println!("question: {}", report.question);
    println!("product:  {}", report.product_id);
    println!("model:    {}", report.variant);
    match report.p_yes {
        Some(p) if report.yes_no => {
            println!("answer:   {} (p_yes = {p:.3})", if p >= 0.5 { "yes" } else { "no" })
        }
        Some(p) => println!("p_yes:    {p:.3} (question does not look like a yes/no question)"),
        None => {}
    }
    for (title, rows) in [("supporting", &report.supporting), ("opposing", &report.opposing)] {
        println!("{title}:");
        if rows.is_empty() {
            println!("  (none)");
        }
        for r in rows {
            println!(
                "  {:>2}. [{:.3} | vote {:.2}] {} {}",
                r.rank, r.relevance, r.vote, r.sentence_id, r.text
            );
        }
    }
}

pub fn synth(args: &SynthArgs, globals: &Globals) -> Result<()> {
    let from_config = globals.config.synth.clone();
    let mut spec = from_config.clone().unwrap_or_default();
    spec.target_ambiguity_rate = match args.ambiguity {
        Some(rate) => rate.0,
        None if from_config.is_some() => spec.target_ambiguity_rate,
        None => Some(DEFAULT_SYNTH_AMBIGUITY),
    };
    if let Some(n) = args.questions {
        spec.n_questions = n;
    }
    if let Some(n) = args.sentences {
        spec.sentences_per_question = n;
    }
    if let Some(n) = args.vocab {
        spec.vocab_size = n;
    }
    if let Some(a) = args.alpha {
        spec.planted_alpha = a;
    }
    if let Some(b) = args.beta {
        spec.planted_beta = b;
    }
    if let Some(f) = args.open_fraction {
        spec.open_fraction = f;
    }
    if let Some(s) = globals.seed {
        spec.rng_seed = s;
    }
    let synth = generate(&spec)?;
    synth.write(&args.out)?;
    let report = summarize(&synth.corpus()?);
    println!("questions:          {}", synth.questions.len());
    println!("reviews:            {}", synth.reviews.len());
    println!("answers:            {}", synth.answers.len());
    println!("labels:             {}", synth.labels.len());
    println!(
        "ambiguous:          {:.1}% (expected {:.1}%)",
        100.0 * report.ambiguous_rate,
        100.0 * synth.analytic_ambiguity_rate
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
