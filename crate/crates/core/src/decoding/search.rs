//! Beam bookkeeping shared by the incremental decoders.

use std::cmp::Ordering;

use super::{DecodeResult, StepTrace, TraceEntry};
use crate::{Caption, DecodeConfig, Error, LogDistribution, Result, Token};

#[derive(Debug, Clone)]
pub(crate) struct Beam {
    pub tokens: Vec<Token>,
    pub speaker_logp: f64,
    pub score: f64,
    pub listener: Option<f64>,
    /// Per-item accumulated speaker log-likelihoods (Incre-RSA only).
    pub item_logp: Vec<f64>,
}

impl Beam {
    pub fn root() -> Self {
        Self { tokens: Vec::new(), speaker_logp: 0.0, score: 0.0, listener: None, item_logp: Vec::new() }
    }

    pub fn entry(&self) -> TraceEntry {
        TraceEntry { tokens: self.tokens.clone(), speaker_logp: self.speaker_logp, score: self.score }
    }

    pub fn into_result(self, eos: Token) -> Result<DecodeResult> {
        Ok(DecodeResult {
            caption: Caption::new(self.tokens, eos)?,
            combined_score: self.score,
            speaker_logp: self.speaker_logp,
            listener_log_target: self.listener,
            trace: None,
        })
    }
}

/// `(score, speaker, tokens)` best-first.
pub(crate) fn beam_order(a: &Beam, b: &Beam) -> Ordering {
    crate::logspace::compare_ranked(
        (a.score, a.speaker_logp, &a.tokens),
        (b.score, b.speaker_logp, &b.tokens),
    )
}

/// One-token extension of a live beam, kept unmaterialized until selected.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cand {
    pub parent: usize,
    pub token: Token,
    pub speaker_logp: f64,
    pub score: f64,
    pub listener: Option<f64>,
}

impl Cand {
    pub fn materialize(&self, live: &[Beam]) -> Beam {
        let parent = &live[self.parent];
        let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
        tokens.extend_from_slice(&parent.tokens);
        tokens.push(self.token);
        Beam {
            tokens,
            speaker_logp: self.speaker_logp,
            score: self.score,
            listener: self.listener,
            item_logp: Vec::new(),
        }
    }

    pub fn entry(&self, live: &[Beam]) -> TraceEntry {
        let mut tokens = live[self.parent].tokens.clone();
        tokens.push(self.token);
        TraceEntry { tokens, speaker_logp: self.speaker_logp, score: self.score }
    }
}

fn cand_tokens_cmp(live: &[Beam], a: &Cand, b: &Cand) -> Ordering {
    let (pa, pb) = (&live[a.parent].tokens, &live[b.parent].tokens);
    pa.iter()
        .chain(std::slice::from_ref(&a.token))
        .cmp(pb.iter().chain(std::slice::from_ref(&b.token)))
}

/// `(speaker, tokens)` best-first: the base-speaker beam objective.
pub(crate) fn speaker_order(live: &[Beam], a: &Cand, b: &Cand) -> Ordering {
    b.speaker_logp.total_cmp(&a.speaker_logp).then_with(|| cand_tokens_cmp(live, a, b))
}

/// `(score, speaker, tokens)` best-first.
pub(crate) fn cand_order(live: &[Beam], a: &Cand, b: &Cand) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.speaker_logp.total_cmp(&a.speaker_logp))
        .then_with(|| cand_tokens_cmp(live, a, b))
}

/// Keeps the best `k` items, sorted best-first.
pub(crate) fn select_top<T>(items: &mut Vec<T>, k: usize, mut cmp: impl FnMut(&T, &T) -> Ordering) {
    if k == 0 {
        items.clear();
        return;
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, &mut cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
}

/// All finite-probability one-token extensions, scored by the speaker; on
/// the last step only EOS.
pub(crate) fn expand(live: &[Beam], dists: &[LogDistribution], eos: Token, last: bool) -> Vec<Cand> {
    let mut out = Vec::new();
    for (parent, (beam, dist)) in live.iter().zip(dists).enumerate() {
        for (id, &lp) in dist.logp().iter().enumerate() {
            let token = Token(id as u32);
            if lp == f64::NEG_INFINITY || (last && token != eos) {
                continue;
            }
            let speaker_logp = beam.speaker_logp + lp;
            out.push(Cand { parent, token, speaker_logp, score: speaker_logp, listener: None });
        }
    }
    out
}

/// Drives a beam search. `step` receives the live beams and whether this is
/// the final step, and returns the beams selected at this step (sorted,
/// at most `beam_width`). Finished beams retire into the completed pool.
/// Returns the completed pool sorted best-first.
pub(crate) fn run<F>(
    config: &DecodeConfig,
    eos: Token,
    root: Beam,
    mut traces: Option<&mut Vec<StepTrace>>,
    mut step: F,
) -> Result<Vec<Beam>>
where
    F: FnMut(&[Beam], bool, Option<&mut StepTrace>) -> Result<Vec<Beam>>,
{
    config.validate()?;
    let mut live = vec![root];
    let mut completed = Vec::new();
    for t in 1..=config.max_len {
        let mut record = traces.as_ref().map(|_| StepTrace { step: t, pool: Vec::new(), survivors: Vec::new() });
        let selected = step(&live, t == config.max_len, record.as_mut())?;
        if let (Some(traces), Some(mut record)) = (traces.as_deref_mut(), record) {
            record.survivors = selected.iter().map(Beam::entry).collect();
            traces.push(record);
        }
        live.clear();
        for beam in selected {
            if beam.tokens.last() == Some(&eos) {
                completed.push(beam);
            } else {
                live.push(beam);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    if completed.is_empty() {
        return Err(Error::NoCompletedCaption);
    }
    completed.sort_by(beam_order);
    Ok(completed)
}
