use super::search::{expand, run, select_top, speaker_order, Beam};
use super::DecodeResult;
use crate::speakers::SpeakerScorer;
use crate::{DecodeConfig, ItemId, Result, Token};

/// Plain beam search on accumulated speaker log-probability, no length
/// normalization. Returns the best `beam_width` completed captions, best first.
/// The trace, when requested, is attached to the first result.
pub fn beam_search_base(
    speaker: &dyn SpeakerScorer,
    item: &ItemId,
    config: &DecodeConfig,
) -> Result<Vec<DecodeResult>> {
    let eos = speaker.vocabulary().eos();
    let mut traces = config.trace.then(Vec::new);
    let completed = run(config, eos, Beam::root(), traces.as_mut(), |live, last, record| {
        let queries: Vec<(&ItemId, &[Token])> = live.iter().map(|b| (item, b.tokens.as_slice())).collect();
        let dists = speaker.next_token_logprobs_batch(&queries)?;
        let mut cands = expand(live, &dists, eos, last);
        select_top(&mut cands, config.beam_width, |a, b| speaker_order(live, a, b));
        if let Some(record) = record {
            record.pool = cands.iter().map(|c| c.entry(live)).collect();
        }
        Ok(cands.iter().map(|c| c.materialize(live)).collect())
    })?;
    let mut results = completed
        .into_iter()
        .take(config.beam_width)
        .map(|b| b.into_result(eos))
        .collect::<Result<Vec<_>>>()?;
    results[0].trace = traces;
    Ok(results)
}
