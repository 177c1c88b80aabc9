//! Base speakers: next-token distributions conditioned on a single item.

mod toy;
mod world;

pub use toy::ToyLexiconSpeaker;
pub use world::{generate_toy_world, ProblemSet, ToyWorld, WorldParams, SET_SIZE};

use crate::{Caption, Error, ItemId, LogDistribution, Result, Token, Vocabulary};

/// Next-token scorer for one item. Implementations must be deterministic for
/// a fixed `(item, prefix)` and safe to call from several threads.
pub trait SpeakerScorer: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Distribution over the next token (EOS included) after `prefix`.
    /// `prefix` must not contain EOS.
    fn next_token_logprobs(&self, item: &ItemId, prefix: &[Token]) -> Result<LogDistribution>;

    /// Batched form; answers in query order.
    fn next_token_logprobs_batch(
        &self,
        queries: &[(&ItemId, &[Token])],
    ) -> Result<Vec<LogDistribution>> {
        queries.iter().map(|(item, prefix)| self.next_token_logprobs(item, prefix)).collect()
    }
}

/// Rejects prefixes containing EOS or out-of-vocabulary ids.
pub fn check_prefix(vocab: &Vocabulary, prefix: &[Token]) -> Result<()> {
    for &t in prefix {
        if t == vocab.eos() {
            return Err(Error::CompletedPrefix);
        }
        if t.index() >= vocab.len() {
            return Err(Error::UnknownToken(t.0));
        }
    }
    Ok(())
}

/// Chain-rule log-probability of `tokens` (which may end in EOS), built from
/// one `next_token_logprobs` call per step. Returns `-inf` as soon as a step
/// has zero probability.
pub fn prefix_logprob(speaker: &dyn SpeakerScorer, item: &ItemId, tokens: &[Token]) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..tokens.len() {
        let dist = speaker.next_token_logprobs(item, &tokens[..t])?;
        let step = *dist.logp().get(tokens[t].index()).ok_or(Error::UnknownToken(tokens[t].0))?;
        total += step;
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(total)
}

/// Log-probability of a complete caption, EOS step included.
pub fn sequence_logprob(speaker: &dyn SpeakerScorer, item: &ItemId, caption: &Caption) -> Result<f64> {
    if !caption.is_complete() {
        return Err(Error::InvalidCaption("sequence_logprob needs a complete caption".into()));
    }
    prefix_logprob(speaker, item, caption.tokens())
}

/// Draws one caption by ancestral sampling; truncated captions get EOS at
/// `max_len`.
pub fn sample_caption(
    speaker: &dyn SpeakerScorer,
    item: &ItemId,
    max_len: usize,
    rng: &mut impl rand::Rng,
) -> Result<Caption> {
    let eos = speaker.vocabulary().eos();
    let mut tokens = Vec::new();
    while tokens.len() + 1 < max_len {
        let dist = speaker.next_token_logprobs(item, &tokens)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = eos;
        for (id, p) in dist.probs().into_iter().enumerate() {
            acc += p;
            if p > 0.0 {
                pick = Token(id as u32);
            }
            if u < acc && p > 0.0 {
                break;
            }
        }
        if pick == eos {
            break;
        }
        tokens.push(pick);
    }
    tokens.push(eos);
    Caption::new(tokens, eos)
}
