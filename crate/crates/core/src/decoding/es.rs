use super::search::{cand_order, run, select_top, Beam, Cand};
use super::{check_lambda, DecodeResult, Method};
use crate::audit::DistKind;
use crate::logspace::{logsumexp, scale_log};
use crate::speakers::SpeakerScorer;
use crate::{DecodeConfig, Error, ItemId, LogDistribution, RefGameContext, Result, Token};

/// Stand-in probability for a suppressor zero.
pub const SUPPRESSOR_FLOOR: f64 = 1e-10;

/// Probability-space mean of the distractors' next-token distributions.
pub fn suppressor(distractor_dists: &[LogDistribution]) -> Result<LogDistribution> {
    let first = distractor_dists.first().ok_or(Error::EmptyDistribution)?;
    let ln_m = (distractor_dists.len() as f64).ln();
    let mut column = Vec::with_capacity(distractor_dists.len());
    let mixed = (0..first.len())
        .map(|t| {
            column.clear();
            column.extend(distractor_dists.iter().map(|d| d.get(t)));
            Ok(logsumexp(&column)? - ln_m)
        })
        .collect::<Result<Vec<f64>>>()?;
    LogDistribution::checked(mixed, DistKind::Suppressor)
}

/// Emitter-suppressor beam search: each token scores
/// `log P(o | i⁺) - λ·log P_sup(o)`, where `P_sup` is the mean next-token
/// distribution over the distractors; scores accumulate along the prefix.
pub fn es_decode(
    speaker: &dyn SpeakerScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    check_lambda(Method::Es, config.lambda)?;
    let eos = speaker.vocabulary().eos();
    let lambda = config.lambda;
    let items = context.items();
    let n = items.len();
    let floor = SUPPRESSOR_FLOOR.ln();
    let mut traces = config.trace.then(Vec::new);
    let completed = run(config, eos, Beam::root(), traces.as_mut(), |live, last, record| {
        let queries: Vec<(&ItemId, &[Token])> = live
            .iter()
            .flat_map(|b| items.iter().map(move |i| (i, b.tokens.as_slice())))
            .collect();
        let dists = speaker.next_token_logprobs_batch(&queries)?;
        let mut cands = Vec::new();
        for (parent, beam) in live.iter().enumerate() {
            let emit = &dists[parent * n];
            let sup = suppressor(&dists[parent * n + 1..(parent + 1) * n])?;
            for (id, &lp) in emit.logp().iter().enumerate() {
                let token = Token(id as u32);
                if lp == f64::NEG_INFINITY || (last && token != eos) {
                    continue;
                }
                let ls = match sup.get(id) {
                    f64::NEG_INFINITY => floor,
                    v => v,
                };
                cands.push(Cand {
                    parent,
                    token,
                    speaker_logp: beam.speaker_logp + lp,
                    score: beam.score + (lp - scale_log(lambda, ls)),
                    listener: None,
                });
            }
        }
        select_top(&mut cands, config.beam_width, |a, b| cand_order(live, a, b));
        if let Some(record) = record {
            record.pool = cands.iter().map(|c| c.entry(live)).collect();
        }
        Ok(cands.iter().map(|c| c.materialize(live)).collect())
    })?;
    let mut best = completed.into_iter().next().expect("non-empty").into_result(eos)?;
    best.trace = traces;
    Ok(best)
}
