//! Lexicon speaker over a [`ToyWorld`].
//!
//! The next-token distribution for item `x` after `prefix` mixes a lexicon
//! component with uniform noise:
//!
//! * lexicon: uniform over `x`'s true attribute words not yet emitted; once at
//!   least one true attribute word has been emitted, `p_stop` of that mass
//!   moves to EOS (all of it when nothing true is left to say);
//! * noise: uniform over every token except already-emitted attribute words,
//!   and except EOS at the empty prefix.
//!
//! `P = (1 - noise) * lexicon + noise * uniform`.

use std::sync::Arc;

use super::{check_prefix, SpeakerScorer, ToyWorld};
use crate::{Error, ItemId, LogDistribution, Result, Token, Vocabulary};

#[derive(Debug, Clone)]
pub struct ToyLexiconSpeaker {
    world: Arc<ToyWorld>,
    noise: f64,
    p_stop: f64,
}

impl ToyLexiconSpeaker {
    pub fn new(world: Arc<ToyWorld>, noise: f64, p_stop: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&noise) {
            return Err(Error::InvalidConfig(format!("speaker noise {noise} must lie in [0, 1)")));
        }
        if !(p_stop > 0.0 && p_stop < 1.0) {
            return Err(Error::InvalidConfig(format!("p_stop {p_stop} must lie in (0, 1)")));
        }
        Ok(Self { world, noise, p_stop })
    }

    pub fn world(&self) -> &Arc<ToyWorld> {
        &self.world
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn p_stop(&self) -> f64 {
        self.p_stop
    }

    /// Probability-space next-token vector (before taking logs).
    pub fn next_token_probs(&self, item: &ItemId, prefix: &[Token]) -> Result<Vec<f64>> {
        let attrs = self.world.item_attributes(item)?;
        let vocab = self.world.vocabulary();
        check_prefix(vocab, prefix)?;
        let n_attr = self.world.n_attributes();
        let eos = vocab.eos().index();

        let mut emitted = vec![false; n_attr];
        for &t in prefix {
            if let Some(a) = self.world.attribute_of(t) {
                emitted[a] = true;
            }
        }
        let said_true = (0..n_attr).any(|a| attrs[a] && emitted[a]);
        let remaining: Vec<usize> = (0..n_attr).filter(|&a| attrs[a] && !emitted[a]).collect();

        let mut lexicon = vec![0.0; vocab.len()];
        if !said_true {
            let share = 1.0 / remaining.len() as f64;
            for &a in &remaining {
                lexicon[a] = share;
            }
        } else if remaining.is_empty() {
            lexicon[eos] = 1.0;
        } else {
            let share = (1.0 - self.p_stop) / remaining.len() as f64;
            for &a in &remaining {
                lexicon[a] = share;
            }
            lexicon[eos] = self.p_stop;
        }

        let admissible = |t: usize| {
            let repeat = t < n_attr && emitted[t];
            let early_eos = t == eos && prefix.is_empty();
            !repeat && !early_eos
        };
        let support = (0..vocab.len()).filter(|&t| admissible(t)).count();
        let uniform = self.noise / support as f64;
        Ok((0..vocab.len())
            .map(|t| {
                let noise = if admissible(t) { uniform } else { 0.0 };
                (1.0 - self.noise) * lexicon[t] + noise
            })
            .collect())
    }
}

impl SpeakerScorer for ToyLexiconSpeaker {
    fn vocabulary(&self) -> &Vocabulary {
        self.world.vocabulary()
    }

    fn next_token_logprobs(&self, item: &ItemId, prefix: &[Token]) -> Result<LogDistribution> {
        let probs = self.next_token_probs(item, prefix)?;
        LogDistribution::new(probs.into_iter().map(f64::ln).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speakers::{generate_toy_world, prefix_logprob, sequence_logprob, WorldParams};
    use crate::Caption;
    use proptest::prelude::*;

    fn world() -> Arc<ToyWorld> {
        generate_toy_world(6, 9, 2, 11).unwrap().into_shared()
    }

    fn true_tokens(w: &ToyWorld, item: &ItemId) -> Vec<Token> {
        let attrs = w.item_attributes(item).unwrap();
        (0..w.n_attributes()).filter(|&a| attrs[a]).map(|a| Token(a as u32)).collect()
    }

    /// First item with exactly two attributes, built by hand if needed.
    fn two_attribute_world() -> (Arc<ToyWorld>, ItemId) {
        let json = serde_json::json!({
            "params": WorldParams { n_sets: 1, n_attributes: 4, overlap_min: 0, ..WorldParams::default() },
            "attributes": ["red", "ball", "green", "cube"],
            "fillers": ["photo"],
            "items": {
                "s000-i0": [1, 1, 0, 0], "s000-i1": [1, 0, 0, 0], "s000-i2": [0, 1, 0, 0],
                "s000-i3": [0, 0, 1, 0], "s000-i4": [0, 0, 0, 1], "s000-i5": [1, 0, 1, 0],
                "s000-i6": [0, 1, 0, 1], "s000-i7": [0, 0, 1, 1], "s000-i8": [1, 0, 0, 1],
                "s000-i9": [0, 1, 1, 0]
            },
            "sets": [{
                "set_id": "s000",
                "items": ["s000-i0", "s000-i1", "s000-i2", "s000-i3", "s000-i4",
                          "s000-i5", "s000-i6", "s000-i7", "s000-i8", "s000-i9"],
                "target": "s000-i0"
            }],
            "reference_captions": { "s000-i0": "red ball" }
        });
        let w = ToyWorld::from_json(&json.to_string()).unwrap();
        (w.into_shared(), ItemId::new("s000-i0"))
    }

    #[test]
    fn noiseless_empty_prefix_is_uniform_over_true_attributes() {
        let (w, item) = two_attribute_world();
        let s = ToyLexiconSpeaker::new(w, 0.0, 0.3).unwrap();
        let d = s.next_token_logprobs(&item, &[]).unwrap();
        let p = d.probs();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 0.5);
        assert!(p[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn after_one_attribute_mass_splits_with_eos() {
        let (w, item) = two_attribute_world();
        let eos = w.vocabulary().eos().index();
        let s = ToyLexiconSpeaker::new(w, 0.0, 0.3).unwrap();
        let p = s.next_token_logprobs(&item, &[Token(0)]).unwrap().probs();
        assert!((p[1] - 0.7).abs() < 1e-15);
        assert!((p[eos] - 0.3).abs() < 1e-15);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn noisy_distribution_matches_hand_mixture() {
        let (w, item) = two_attribute_world();
        let v = w.vocabulary().len();
        let eos = w.vocabulary().eos().index();
        let s = ToyLexiconSpeaker::new(w, 0.2, 0.3).unwrap();

        // Empty prefix: lexicon 0.5/0.5 on red/ball, noise over the 5 non-EOS tokens.
        let p = s.next_token_logprobs(&item, &[]).unwrap().probs();
        let mut expected = vec![0.2 / (v - 1) as f64; v];
        expected[eos] = 0.0;
        expected[0] += 0.8 * 0.5;
        expected[1] += 0.8 * 0.5;
        for t in 0..v {
            assert!((p[t] - expected[t]).abs() < 1e-12, "token {t}");
        }

        // After "red": lexicon 0.7 on ball, 0.3 on EOS; noise excludes "red".
        let p = s.next_token_logprobs(&item, &[Token(0)]).unwrap().probs();
        let mut expected = vec![0.2 / (v - 1) as f64; v];
        expected[0] = 0.0;
        expected[1] += 0.8 * 0.7;
        expected[eos] += 0.8 * 0.3;
        for t in 0..v {
            assert!((p[t] - expected[t]).abs() < 1e-12, "token {t}");
        }
    }

    #[test]
    fn errors() {
        let (w, item) = two_attribute_world();
        let eos = w.vocabulary().eos();
        let s = ToyLexiconSpeaker::new(w, 0.1, 0.3).unwrap();
        assert!(matches!(
            s.next_token_logprobs(&ItemId::new("nope"), &[]),
            Err(Error::UnknownItem(_))
        ));
        assert_eq!(s.next_token_logprobs(&item, &[Token(0), eos]), Err(Error::CompletedPrefix));
        assert!(ToyLexiconSpeaker::new(s.world().clone(), 1.0, 0.3).is_err());
        assert!(ToyLexiconSpeaker::new(s.world().clone(), 0.1, 1.0).is_err());
    }

    #[test]
    fn eos_only_caption_is_impossible() {
        let (w, item) = two_attribute_world();
        let eos = w.vocabulary().eos();
        let s = ToyLexiconSpeaker::new(w, 0.15, 0.3).unwrap();
        let c = Caption::new(vec![eos], eos).unwrap();
        assert_eq!(sequence_logprob(&s, &item, &c).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn deterministic_single_attribute_path() {
        // Item s000-i1 has only "red": the argmax path is red, EOS with
        // per-step maxima 1.0 and 1.0.
        let (w, _) = two_attribute_world();
        let eos = w.vocabulary().eos();
        let item = ItemId::new("s000-i1");
        let s = ToyLexiconSpeaker::new(w, 0.0, 0.3).unwrap();
        let c = Caption::new(vec![Token(0), eos], eos).unwrap();
        assert_eq!(sequence_logprob(&s, &item, &c).unwrap(), 0.0);
        // Two-attribute item, path red ball EOS: 0.5 * 0.7 * 1.0.
        let item = ItemId::new("s000-i0");
        let c = Caption::new(vec![Token(0), Token(1), eos], eos).unwrap();
        let lp = sequence_logprob(&s, &item, &c).unwrap();
        assert!((lp - (0.5f64 * 0.7).ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn distributions_normalize_and_sequence_is_sum_of_steps(
            item_idx in 0usize..60,
            raw in proptest::collection::vec(0u32..11, 0..5),
            noise in prop_oneof![Just(0.0), 0.01f64..0.5],
        ) {
            let w = world();
            let item = w.items().keys().nth(item_idx).unwrap().clone();
            let s = ToyLexiconSpeaker::new(w.clone(), noise, 0.3).unwrap();
            let prefix: Vec<Token> = raw.into_iter().map(Token).collect();
            let d = s.next_token_logprobs(&item, &prefix).unwrap();
            prop_assert!(crate::logspace::normalization_error(d.logp()) <= 1e-9);
            if noise == 0.0 {
                let allowed = true_tokens(&w, &item);
                for t in w.vocabulary().tokens() {
                    if t != w.vocabulary().eos() && !allowed.contains(&t) {
                        prop_assert_eq!(d.get(t.index()), f64::NEG_INFINITY);
                    }
                }
            }
            let mut full = prefix.clone();
            full.push(w.vocabulary().eos());
            let cap = Caption::new(full.clone(), w.vocabulary().eos()).unwrap();
            let mut manual = 0.0;
            for t in 0..full.len() {
                manual += s.next_token_logprobs(&item, &full[..t]).unwrap().get(full[t].index());
                if manual == f64::NEG_INFINITY { break; }
            }
            prop_assert_eq!(sequence_logprob(&s, &item, &cap).unwrap(), manual);
            prop_assert_eq!(prefix_logprob(&s, &item, &full).unwrap(), manual);
        }
    }
}
