//! Automatic evaluation: retrieval accuracy under an evaluative listener,
//! language-model perplexity, and the accuracy/perplexity tradeoff sweep.

mod lm;

pub use lm::{caption_perplexity, train_bigram_lm, BigramLm, LanguageModelScorer, UniformLm};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::decoding::{decode, Method, MethodSpec, Scorers};
use crate::listeners::{listener_posterior, SimilarityScorer};
use crate::speakers::{ProblemSet, SpeakerScorer};
use crate::{Caption, DecodeConfig, Error, ItemId, RefGameContext, Result, Token, Vocabulary};

/// The evaluative listener's verdict on one caption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub chosen: ItemId,
    /// 1-based rank of the target under the same ordering used for `chosen`.
    pub target_rank: usize,
    pub correct: bool,
}

/// Ranks the context's items by listener posterior for `text`. Ties go to
/// the smaller item id, so the verdict does not depend on distractor order.
pub fn retrieve(eval_listener: &dyn SimilarityScorer, context: &RefGameContext, text: &str) -> Result<Retrieval> {
    let posterior = listener_posterior(eval_listener, context, text)?;
    let logp = posterior.logp();
    let items = context.items();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then_with(|| items[a].cmp(&items[b])));
    let target_rank = order.iter().position(|&i| i == 0).expect("target is in the context") + 1;
    Ok(Retrieval { chosen: items[order[0]].clone(), target_rank, correct: target_rank == 1 })
}

/// Fraction of problems whose caption makes the evaluative listener pick the target.
pub fn retrieval_accuracy(
    eval_listener: &dyn SimilarityScorer,
    vocab: &Vocabulary,
    problems: &[(RefGameContext, Caption)],
) -> Result<f64> {
    if problems.is_empty() {
        return Err(Error::EmptyProblems);
    }
    let mut correct = 0usize;
    for (context, caption) in problems {
        if !caption.is_complete() {
            return Err(Error::InvalidCaption("retrieval needs complete captions".into()));
        }
        if retrieve(eval_listener, context, &vocab.detokenize(caption.tokens())?)?.correct {
            correct += 1;
        }
    }
    Ok(correct as f64 / problems.len() as f64)
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemEval {
    pub set_id: String,
    pub target: ItemId,
    pub caption: String,
    pub tokens: Vec<Token>,
    pub chosen: ItemId,
    pub target_rank: usize,
    pub correct: bool,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: Method,
    pub lambda: f64,
    pub retrieval_accuracy: f64,
    /// Arithmetic mean of the per-caption perplexities.
    pub mean_perplexity: f64,
    pub problems: Vec<ProblemEval>,
}

impl EvalReport {
    fn from_problems(spec: &MethodSpec, problems: Vec<ProblemEval>) -> Result<Self> {
        if problems.is_empty() {
            return Err(Error::EmptyProblems);
        }
        let correct = problems.iter().filter(|p| p.correct).count();
        Ok(Self {
            method: spec.method,
            lambda: spec.lambda,
            retrieval_accuracy: correct as f64 / problems.len() as f64,
            mean_perplexity: mean(problems.iter().map(|p| p.perplexity)),
            problems,
        })
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        csv_line(&mut out, self.method, self.lambda, Some(self.retrieval_accuracy), Some(self.mean_perplexity));
        out
    }
}

pub const CSV_HEADER: &str = "method,lambda,accuracy,mean_ppl\n";

fn csv_line(out: &mut String, method: Method, lambda: f64, accuracy: Option<f64>, ppl: Option<f64>) {
    let field = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(out, "{method},{lambda},{},{}", field(accuracy), field(ppl)).expect("writing to a String");
}

/// Everything needed to decode and score a problem list under any method.
/// Reports are memoized per `(method, λ)`, so sweeps and tuning runs that
/// share a harness never decode the same grid point twice.
pub struct Harness<'a> {
    pub speaker: &'a dyn SpeakerScorer,
    pub listener: &'a dyn SimilarityScorer,
    pub eval_listener: &'a dyn SimilarityScorer,
    pub lm: &'a dyn LanguageModelScorer,
    pub problems: &'a [ProblemSet],
    pub config: DecodeConfig,
    cache: Mutex<HashMap<(Method, u64), Arc<EvalReport>>>,
}

impl<'a> Harness<'a> {
    pub fn new(
        speaker: &'a dyn SpeakerScorer,
        listener: &'a dyn SimilarityScorer,
        eval_listener: &'a dyn SimilarityScorer,
        lm: &'a dyn LanguageModelScorer,
        problems: &'a [ProblemSet],
        config: DecodeConfig,
    ) -> Result<Self> {
        config.validate()?;
        if problems.is_empty() {
            return Err(Error::EmptyProblems);
        }
        let config = DecodeConfig { trace: false, ..config };
        Ok(Self { speaker, listener, eval_listener, lm, problems, config, cache: Mutex::default() })
    }

    fn scorers(&self) -> Scorers<'_> {
        Scorers { speaker: self.speaker, listener: self.listener, prior: None }
    }

    /// Decodes every problem in order.
    pub fn decode_all(&self, spec: &MethodSpec) -> Result<Vec<crate::decoding::DecodeResult>> {
        let scorers = self.scorers();
        let results: Vec<Result<_>> = self
            .problems
            .par_iter()
            .map(|p| decode(spec, &scorers, &p.context(), &self.config))
            .collect();
        results.into_iter().collect()
    }

    /// Decodes and scores every problem; memoized.
    pub fn evaluate(&self, spec: &MethodSpec) -> Result<Arc<EvalReport>> {
        let spec = match spec.method {
            Method::Base => MethodSpec::base(),
            _ => MethodSpec::new(spec.method, spec.lambda)?,
        };
        let key = (spec.method, spec.lambda.to_bits());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let vocab = self.speaker.vocabulary();
        let scorers = self.scorers();
        let rows: Vec<Result<ProblemEval>> = self
            .problems
            .par_iter()
            .map(|p| {
                let context = p.context();
                let result = decode(&spec, &scorers, &context, &self.config)?;
                let caption = vocab.detokenize(result.tokens())?;
                let verdict = retrieve(self.eval_listener, &context, &caption)?;
                Ok(ProblemEval {
                    set_id: p.set_id.clone(),
                    target: p.target.clone(),
                    caption,
                    tokens: result.tokens().to_vec(),
                    chosen: verdict.chosen,
                    target_rank: verdict.target_rank,
                    correct: verdict.correct,
                    perplexity: caption_perplexity(self.lm, &result.caption)?,
                })
            })
            .collect();
        let report = Arc::new(EvalReport::from_problems(&spec, rows.into_iter().collect::<Result<_>>()?)?);
        self.cache.lock().expect("cache lock").insert(key, Arc::clone(&report));
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub lambda: f64,
    pub retrieval_accuracy: Option<f64>,
    pub mean_perplexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Evaluates every `(method, λ)` pair. A failing grid point becomes a row
/// with its failure reason; rows are sorted by method, then λ.
pub fn tradeoff_sweep(harness: &Harness<'_>, methods: &[Method], grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || methods.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one method and one lambda".into()));
    }
    let mut points = Vec::with_capacity(methods.len() * grid.len());
    for &method in methods {
        for &lambda in grid {
            points.push(MethodSpec::new(method, lambda)?);
        }
    }
    points.sort_by(|a, b| a.method.cmp(&b.method).then(a.lambda.total_cmp(&b.lambda)));
    Ok(points
        .par_iter()
        .map(|spec| match harness.evaluate(spec) {
            Ok(report) => SweepRow {
                method: spec.method,
                lambda: spec.lambda,
                retrieval_accuracy: Some(report.retrieval_accuracy),
                mean_perplexity: Some(report.mean_perplexity),
                failure: None,
            },
            Err(e) => SweepRow {
                method: spec.method,
                lambda: spec.lambda,
                retrieval_accuracy: None,
                mean_perplexity: None,
                failure: Some(e.to_string()),
            },
        })
        .collect())
}

/// CSV with header `method,lambda,accuracy,mean_ppl`; failed rows leave the
/// metric fields empty.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    for row in rows {
        csv_line(&mut out, row.method, row.lambda, row.retrieval_accuracy, row.mean_perplexity);
    }
    out
}
