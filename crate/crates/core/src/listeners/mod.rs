//! Listeners: distributions over the items of a reference game given text.

mod toy;

pub use toy::{make_eval_listener, SimilarityMode, ToySimilarity};

use crate::audit::DistKind;
use crate::speakers::{prefix_logprob, SpeakerScorer};
use crate::{Error, ItemId, LogDistribution, RefGameContext, Result, Token};

/// Item/text similarity `c(i, text)`. The text is the detokenized caption or
/// prefix. Implementations must be deterministic and thread-safe.
pub trait SimilarityScorer: Send + Sync {
    fn similarities(&self, items: &[ItemId], text: &str) -> Result<Vec<f64>>;

    fn similarities_batch(&self, items: &[ItemId], texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.similarities(items, t)).collect()
    }

    /// Similarities are divided by this before the softmax.
    fn temperature(&self) -> f64 {
        1.0
    }
}

/// Posterior over a context's items, target first.
#[derive(Debug, Clone, PartialEq)]
pub struct ListenerPosterior {
    dist: LogDistribution,
}

impl ListenerPosterior {
    /// Softmax of arbitrary log-weights (`-inf` entries get probability 0).
    pub fn from_log_weights(weights: Vec<f64>) -> Result<Self> {
        Ok(Self { dist: LogDistribution::from_log_weights(weights, DistKind::Listener)? })
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let logp = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { dist: LogDistribution::checked(logp, DistKind::Listener)? })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_log_weights(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn logp(&self) -> &[f64] {
        self.dist.logp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.dist.probs()
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.dist.prob(index)
    }

    pub fn log_target(&self) -> f64 {
        self.dist.get(0)
    }
}

/// Softmax over items of `c(i, text) / temperature`.
pub fn listener_posterior(
    sim: &dyn SimilarityScorer,
    context: &RefGameContext,
    text: &str,
) -> Result<ListenerPosterior> {
    let sims = sim.similarities(context.items(), text)?;
    posterior_from_similarities(&sims, sim.temperature(), context.len())
}

pub(crate) fn posterior_from_similarities(
    sims: &[f64],
    temperature: f64,
    expected: usize,
) -> Result<ListenerPosterior> {
    if sims.len() != expected {
        return Err(Error::Scorer(format!(
            "similarity scorer returned {} values for {expected} items",
            sims.len()
        )));
    }
    if let Some(bad) = sims.iter().find(|s| !s.is_finite()) {
        return Err(Error::Scorer(format!("non-finite similarity {bad}")));
    }
    ListenerPosterior::from_log_weights(sims.iter().map(|s| s / temperature).collect())
}

/// Bayesian inversion of the speaker: `P(i | prefix) ∝ prior(i) · P_S0(prefix | i)`.
pub fn bayesian_posterior(
    speaker: &dyn SpeakerScorer,
    context: &RefGameContext,
    prefix: &[Token],
    prior: &ListenerPosterior,
) -> Result<ListenerPosterior> {
    if prefix.is_empty() {
        return Err(Error::InvalidCaption("bayesian_posterior needs a non-empty prefix".into()));
    }
    if prior.len() != context.len() {
        return Err(Error::InvalidContext(format!(
            "prior has {} entries for {} items",
            prior.len(),
            context.len()
        )));
    }
    let weights = context
        .items()
        .iter()
        .zip(prior.logp())
        .map(|(item, lp)| Ok(lp + prefix_logprob(speaker, item, prefix)?))
        .collect::<Result<Vec<f64>>>()?;
    bayes_normalize(weights)
}

/// Normalizes `log prior + log likelihood` weights.
pub(crate) fn bayes_normalize(weights: Vec<f64>) -> Result<ListenerPosterior> {
    if weights.iter().all(|w| *w == f64::NEG_INFINITY) {
        return Err(Error::PrefixImpossible);
    }
    ListenerPosterior::from_log_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Vocabulary, ItemId};
    use proptest::prelude::*;

    /// Similarities given directly per item index.
    struct Fixed(Vec<f64>, f64);

    impl SimilarityScorer for Fixed {
        fn similarities(&self, items: &[ItemId], _text: &str) -> Result<Vec<f64>> {
            Ok(self.0[..items.len()].to_vec())
        }
        fn temperature(&self) -> f64 {
            self.1
        }
    }

    fn ctx(n: usize) -> RefGameContext {
        RefGameContext::new(ItemId::new("t"), (1..n).map(|i| ItemId::new(format!("d{i}"))).collect())
            .unwrap()
    }

    #[test]
    fn softmax_closed_forms() {
        let p = listener_posterior(&Fixed(vec![0.3; 3], 1.0), &ctx(3), "x").unwrap().probs();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = listener_posterior(&Fixed(vec![1.0, 0.0], 1.0), &ctx(2), "x").unwrap().probs();
        assert!((p[0] - 0.731059).abs() < 1e-6);
        assert!((p[1] - 0.268941).abs() < 1e-6);
        let mut sims = vec![0.0; 10];
        sims[0] = 2.0;
        let p = listener_posterior(&Fixed(sims, 1.0), &ctx(10), "x").unwrap();
        let e2 = 2f64.exp();
        assert!((p.prob(0) - e2 / (e2 + 9.0)).abs() < 1e-12);
        assert!((p.prob(0) - 0.45085).abs() < 1e-5);
    }

    /// Item `ti` emits token `ti` with probability `lik[ti]`, other mass on EOS.
    struct Likelihoods {
        vocab: Vocabulary,
        lik: Vec<f64>,
    }

    impl SpeakerScorer for Likelihoods {
        fn vocabulary(&self) -> &Vocabulary {
            &self.vocab
        }
        fn next_token_logprobs(&self, item: &ItemId, _prefix: &[Token]) -> Result<LogDistribution> {
            let i: usize = item.as_str()[1..].parse().unwrap_or(0);
            let p = self.lik[i];
            LogDistribution::new(vec![p.ln(), (1.0 - p).ln()])
        }
    }

    fn two_items() -> RefGameContext {
        RefGameContext::new(ItemId::new("i0"), vec![ItemId::new("i1")]).unwrap()
    }

    fn lik_speaker(lik: Vec<f64>) -> Likelihoods {
        Likelihoods { vocab: Vocabulary::new(vec!["w".into(), "<eos>".into()], Token(1)).unwrap(), lik }
    }

    #[test]
    fn bayes_rule_examples() {
        let uniform = ListenerPosterior::uniform(2).unwrap();
        let p = bayesian_posterior(&lik_speaker(vec![0.3, 0.3]), &two_items(), &[Token(0)], &uniform)
            .unwrap()
            .probs();
        assert!((p[0] - 0.5).abs() < 1e-12);
        let p = bayesian_posterior(&lik_speaker(vec![0.2, 0.05]), &two_items(), &[Token(0)], &uniform)
            .unwrap()
            .probs();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        let prior = ListenerPosterior::from_probs(&[0.9, 0.1]).unwrap();
        let p = bayesian_posterior(&lik_speaker(vec![0.4, 0.4]), &two_items(), &[Token(0)], &prior)
            .unwrap()
            .probs();
        assert!((p[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn bayes_zero_likelihood_items() {
        let uniform = ListenerPosterior::uniform(2).unwrap();
        let p = bayesian_posterior(&lik_speaker(vec![0.5, 0.0]), &two_items(), &[Token(0)], &uniform)
            .unwrap();
        assert_eq!(p.probs(), vec![1.0, 0.0]);
        let err = bayesian_posterior(&lik_speaker(vec![0.0, 0.0]), &two_items(), &[Token(0)], &uniform);
        assert_eq!(err.unwrap_err(), Error::PrefixImpossible);
        assert!(bayesian_posterior(&lik_speaker(vec![0.5, 0.5]), &two_items(), &[], &uniform).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            sims in proptest::collection::vec(-5.0f64..5.0, 2..10),
            c in -20.0f64..20.0,
        ) {
            let n = sims.len();
            let a = listener_posterior(&Fixed(sims.clone(), 1.0), &ctx(n), "x").unwrap().probs();
            let shifted = sims.iter().map(|s| s + c).collect();
            let b = listener_posterior(&Fixed(shifted, 1.0), &ctx(n), "x").unwrap().probs();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn argmax_mass_is_non_increasing_in_temperature(
            sims in proptest::collection::vec(-5.0f64..5.0, 2..10),
            t1 in 0.05f64..5.0,
            dt in 0.0f64..5.0,
        ) {
            let n = sims.len();
            let best = (0..n).max_by(|&a, &b| sims[a].total_cmp(&sims[b])).unwrap();
            prop_assume!(sims.iter().enumerate().all(|(i, s)| i == best || *s < sims[best] - 1e-6));
            let mut order = sims.clone();
            order.swap(0, best);
            let lo = listener_posterior(&Fixed(order.clone(), t1), &ctx(n), "x").unwrap().prob(0);
            let hi = listener_posterior(&Fixed(order, t1 + dt), &ctx(n), "x").unwrap().prob(0);
            prop_assert!(hi <= lo + 1e-12);
        }
    }
}
