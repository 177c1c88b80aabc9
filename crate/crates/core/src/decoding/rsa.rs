use super::search::{cand_order, run, select_top, Beam, Cand};
use super::{check_lambda, DecodeResult, Method};
use crate::listeners::{bayes_normalize, ListenerPosterior};
use crate::logspace::scale_log;
use crate::speakers::SpeakerScorer;
use crate::{DecodeConfig, Error, ItemId, RefGameContext, Result, Token};

/// Incremental RSA: candidate prefixes score `S(prefix) + λ·log L(i⁺ | prefix)`
/// where `L` is the Bayesian inversion of the speaker under `prior`. The
/// per-item likelihoods are carried along each beam, which equals
/// recomputing them from the full prefix.
pub fn incre_rsa_decode(
    speaker: &dyn SpeakerScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
    prior: &ListenerPosterior,
) -> Result<DecodeResult> {
    check_lambda(Method::IncreRsa, config.lambda)?;
    if prior.len() != context.len() {
        return Err(Error::InvalidContext(format!(
            "prior has {} entries for {} items",
            prior.len(),
            context.len()
        )));
    }
    let eos = speaker.vocabulary().eos();
    let lambda = config.lambda;
    let items = context.items();
    let n = items.len();
    let log_prior = prior.logp();
    let root = Beam { item_logp: vec![0.0; n], ..Beam::root() };
    let mut traces = config.trace.then(Vec::new);
    let completed = run(config, eos, root, traces.as_mut(), |live, last, record| {
        let queries: Vec<(&ItemId, &[Token])> = live
            .iter()
            .flat_map(|b| items.iter().map(move |i| (i, b.tokens.as_slice())))
            .collect();
        let dists = speaker.next_token_logprobs_batch(&queries)?;
        let mut cands = Vec::new();
        let mut weights = vec![0.0; n];
        for (parent, beam) in live.iter().enumerate() {
            let row = &dists[parent * n..(parent + 1) * n];
            for (id, &lp) in row[0].logp().iter().enumerate() {
                let token = Token(id as u32);
                if lp == f64::NEG_INFINITY || (last && token != eos) {
                    continue;
                }
                for i in 0..n {
                    weights[i] = log_prior[i] + (beam.item_logp[i] + row[i].get(id));
                }
                let listener = bayes_normalize(weights.clone())?.log_target();
                let speaker_logp = beam.speaker_logp + lp;
                cands.push(Cand {
                    parent,
                    token,
                    speaker_logp,
                    score: speaker_logp + scale_log(lambda, listener),
                    listener: Some(listener),
                });
            }
        }
        select_top(&mut cands, config.beam_width, |a, b| cand_order(live, a, b));
        if let Some(record) = record {
            record.pool = cands.iter().map(|c| c.entry(live)).collect();
        }
        Ok(cands
            .iter()
            .map(|c| {
                let mut beam = c.materialize(live);
                let row = &dists[c.parent * n..(c.parent + 1) * n];
                beam.item_logp = (0..n)
                    .map(|i| live[c.parent].item_logp[i] + row[i].get(c.token.index()))
                    .collect();
                beam
            })
            .collect())
    })?;
    let mut best = completed.into_iter().next().expect("non-empty").into_result(eos)?;
    best.trace = traces;
    Ok(best)
}
