use std::collections::HashMap;

use super::search::{expand, run, select_top, speaker_order, beam_order, Beam};
use super::{check_lambda, DecodeResult, Method};
use crate::audit::DistKind;
use crate::listeners::{posterior_from_similarities, SimilarityScorer};
use crate::speakers::SpeakerScorer;
use crate::{DecodeConfig, ItemId, LogDistribution, RefGameContext, Result, Token};

#[derive(Clone, Copy, PartialEq, Eq)]
enum ListenerTerm {
    /// Softmax over the context's items.
    Context,
    /// Softmax over the candidate pool of the target similarity alone.
    PoolTargetOnly,
}

/// Incremental pragmatic decoding with a similarity listener.
///
/// Each step takes the `pool_size` best one-token extensions of the live
/// beams under the speaker objective, rescores every such prefix with
/// `λ·log L(i⁺ | prefix) + (1-λ)·S(prefix)`, and keeps the best `beam_width`.
pub fn picl_decode(
    speaker: &dyn SpeakerScorer,
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    check_lambda(Method::Picl, config.lambda)?;
    pragmatic(speaker, sim, context, config, ListenerTerm::Context)
}

/// [`picl_decode`] without distractors: the listener term is the softmax,
/// over the candidate pool, of each prefix's similarity to the target.
pub fn picl_no_distractors(
    speaker: &dyn SpeakerScorer,
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    check_lambda(Method::PiclNoDistractors, config.lambda)?;
    pragmatic(speaker, sim, context, config, ListenerTerm::PoolTargetOnly)
}

fn pragmatic(
    speaker: &dyn SpeakerScorer,
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
    term: ListenerTerm,
) -> Result<DecodeResult> {
    let vocab = speaker.vocabulary();
    let eos = vocab.eos();
    let target = context.target();
    let lambda = config.lambda;
    let mut traces = config.trace.then(Vec::new);
    let completed = run(config, eos, Beam::root(), traces.as_mut(), |live, last, record| {
        let queries: Vec<(&ItemId, &[Token])> = live.iter().map(|b| (target, b.tokens.as_slice())).collect();
        let dists = speaker.next_token_logprobs_batch(&queries)?;
        let mut cands = expand(live, &dists, eos, last);
        select_top(&mut cands, config.pool_size, |a, b| speaker_order(live, a, b));
        let mut pool: Vec<Beam> = cands.iter().map(|c| c.materialize(live)).collect();
        let texts = pool.iter().map(|b| vocab.detokenize(&b.tokens)).collect::<Result<Vec<_>>>()?;
        let log_listener = match term {
            ListenerTerm::Context => context_log_targets(sim, context, &texts)?,
            ListenerTerm::PoolTargetOnly => pool_log_targets(sim, target, &texts)?,
        };
        for (beam, l) in pool.iter_mut().zip(log_listener) {
            beam.listener = Some(l);
            beam.score = lambda * l + (1.0 - lambda) * beam.speaker_logp;
        }
        if let Some(record) = record {
            record.pool = pool.iter().map(Beam::entry).collect();
        }
        select_top(&mut pool, config.beam_width, beam_order);
        Ok(pool)
    })?;
    let mut best = completed.into_iter().next().expect("run returns a non-empty pool").into_result(eos)?;
    best.trace = traces;
    Ok(best)
}

fn unique_texts(texts: &[String]) -> (Vec<&str>, Vec<usize>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut unique = Vec::new();
    let slots = texts
        .iter()
        .map(|t| {
            *index.entry(t.as_str()).or_insert_with(|| {
                unique.push(t.as_str());
                unique.len() - 1
            })
        })
        .collect();
    (unique, slots)
}

/// `log L(i⁺ | text)` under the item softmax, one value per text.
pub(crate) fn context_log_targets(
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    texts: &[String],
) -> Result<Vec<f64>> {
    let (unique, slots) = unique_texts(texts);
    let sims = sim.similarities_batch(context.items(), &unique)?;
    let targets = sims
        .iter()
        .map(|s| Ok(posterior_from_similarities(s, sim.temperature(), context.len())?.log_target()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(slots.into_iter().map(|i| targets[i]).collect())
}

fn pool_log_targets(sim: &dyn SimilarityScorer, target: &ItemId, texts: &[String]) -> Result<Vec<f64>> {
    let (unique, slots) = unique_texts(texts);
    let sims = sim.similarities_batch(std::slice::from_ref(target), &unique)?;
    let tau = sim.temperature();
    let weights = slots
        .into_iter()
        .map(|i| match sims[i].as_slice() {
            [s] if s.is_finite() => Ok(s / tau),
            other => Err(crate::Error::Scorer(format!("expected one finite similarity, got {other:?}"))),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LogDistribution::from_log_weights(weights, DistKind::Listener)?.logp().to_vec())
}
