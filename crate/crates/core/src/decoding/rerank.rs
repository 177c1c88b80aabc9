use super::picl::context_log_targets;
use super::{beam_search_base, check_lambda, DecodeResult, Method, StepTrace, TraceEntry};
use crate::listeners::SimilarityScorer;
use crate::logspace::compare_ranked;
use crate::speakers::SpeakerScorer;
use crate::{DecodeConfig, RefGameContext, Result};

/// Non-incremental ablation: decode `pool_size` complete captions with a
/// base beam of width `pool_size`, then pick the one maximizing
/// `λ·log L(i⁺ | caption) + (1-λ)·S(caption)`.
pub fn picl_full_rerank(
    speaker: &dyn SpeakerScorer,
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    check_lambda(Method::PiclFullRerank, config.lambda)?;
    config.validate()?;
    let wide = DecodeConfig {
        beam_width: config.pool_size,
        pool_size: config.pool_size,
        trace: false,
        ..config.clone()
    };
    let mut pool = beam_search_base(speaker, context.target(), &wide)?;
    let vocab = speaker.vocabulary();
    let texts = pool.iter().map(|r| vocab.detokenize(r.tokens())).collect::<Result<Vec<_>>>()?;
    let listener = context_log_targets(sim, context, &texts)?;
    let lambda = config.lambda;
    for (r, l) in pool.iter_mut().zip(listener) {
        r.listener_log_target = Some(l);
        r.combined_score = lambda * l + (1.0 - lambda) * r.speaker_logp;
    }
    pool.sort_by(|a, b| {
        compare_ranked(
            (a.combined_score, a.speaker_logp, a.tokens()),
            (b.combined_score, b.speaker_logp, b.tokens()),
        )
    });
    let trace = config.trace.then(|| {
        let entry = |r: &DecodeResult| TraceEntry {
            tokens: r.tokens().to_vec(),
            speaker_logp: r.speaker_logp,
            score: r.combined_score,
        };
        vec![StepTrace { step: 1, pool: pool.iter().map(entry).collect(), survivors: vec![entry(&pool[0])] }]
    });
    let mut best = pool.swap_remove(0);
    best.trace = trace;
    Ok(best)
}
