use super::{check_lambda, DecodeResult, Hypothesis, Method};
use crate::listeners::{listener_posterior, SimilarityScorer};
use crate::logspace::compare_ranked;
use crate::speakers::SpeakerScorer;
use crate::{Caption, DecodeConfig, Error, RefGameContext, Result};

/// Largest number of prefixes the exact decoder will score in one step.
pub const EXACT_GUARD: usize = 100_000;

/// Reference decoder for the pragmatic objective: the same beam procedure
/// as [`picl_decode`](super::picl_decode) but every live beam is expanded
/// over the full vocabulary and scored one prefix at a time. Written
/// independently of the pooled implementation so the two can check each other.
pub fn exact_pragmatic_decode(
    speaker: &dyn SpeakerScorer,
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    config.validate()?;
    check_lambda(Method::Picl, config.lambda)?;
    let vocab = speaker.vocabulary();
    let requested = config.beam_width.saturating_mul(vocab.len());
    if requested > EXACT_GUARD {
        return Err(Error::GuardExceeded { requested, limit: EXACT_GUARD });
    }
    let eos = vocab.eos();
    let lambda = config.lambda;
    let rank = |a: &Hypothesis, b: &Hypothesis| {
        compare_ranked(
            (a.combined_score, a.speaker_logp, &a.tokens),
            (b.combined_score, b.speaker_logp, &b.tokens),
        )
    };

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        speaker_logp: 0.0,
        listener_log_target: None,
        combined_score: 0.0,
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    for step in 1..=config.max_len {
        let mut scored = Vec::new();
        for hyp in &live {
            let dist = speaker.next_token_logprobs(context.target(), &hyp.tokens)?;
            for token in vocab.tokens() {
                if step == config.max_len && token != eos {
                    continue;
                }
                let lp = dist.get(token.index());
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                let speaker_logp = hyp.speaker_logp + lp;
                let text = vocab.detokenize(&tokens)?;
                let listener = listener_posterior(sim, context, &text)?.log_target();
                scored.push(Hypothesis {
                    tokens,
                    speaker_logp,
                    listener_log_target: Some(listener),
                    combined_score: lambda * listener + (1.0 - lambda) * speaker_logp,
                    finished: token == eos,
                });
            }
        }
        scored.sort_by(rank);
        scored.truncate(config.beam_width);
        live.clear();
        for hyp in scored {
            if hyp.finished {
                done.push(hyp);
            } else {
                live.push(hyp);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    done.sort_by(rank);
    let best = done.into_iter().next().ok_or(Error::NoCompletedCaption)?;
    Ok(DecodeResult {
        caption: Caption::new(best.tokens, eos)?,
        combined_score: best.combined_score,
        speaker_logp: best.speaker_logp,
        listener_log_target: best.listener_log_target,
        trace: None,
    })
}
