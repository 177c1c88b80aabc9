use serde::{Deserialize, Serialize};

use crate::{Caption, Error, Result, Token, Vocabulary};

/// Fluency judge: per-token log-likelihoods of a complete caption, EOS
/// included as the final scored token.
pub trait LanguageModelScorer: Send + Sync {
    fn token_logprobs(&self, caption: &Caption) -> Result<Vec<f64>>;
}

fn check_complete(caption: &Caption, vocab_len: usize) -> Result<()> {
    if !caption.is_complete() {
        return Err(Error::InvalidCaption("language model scoring needs a complete caption".into()));
    }
    match caption.tokens().iter().find(|t| t.index() >= vocab_len) {
        Some(t) => Err(Error::UnknownToken(t.0)),
        None => Ok(()),
    }
}

/// Every token, EOS included, has probability `1/|V|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniformLm {
    vocab_len: usize,
}

impl UniformLm {
    pub fn new(vocab_len: usize) -> Result<Self> {
        if vocab_len == 0 {
            return Err(Error::InvalidVocabulary("empty vocabulary".into()));
        }
        Ok(Self { vocab_len })
    }
}

impl LanguageModelScorer for UniformLm {
    fn token_logprobs(&self, caption: &Caption) -> Result<Vec<f64>> {
        check_complete(caption, self.vocab_len)?;
        Ok(vec![-(self.vocab_len as f64).ln(); caption.len()])
    }
}

/// Add-k smoothed bigram model. The first token is conditioned on a start
/// context; EOS is predicted like any other token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    vocab_len: usize,
    k: f64,
    /// `counts[prev * vocab_len + next]`; `prev == vocab_len` is the start context.
    counts: Vec<f64>,
    context_counts: Vec<f64>,
}

impl BigramLm {
    pub fn k(&self) -> f64 {
        self.k
    }

    fn context_index(prev: Option<Token>, vocab_len: usize) -> usize {
        prev.map_or(vocab_len, Token::index)
    }

    /// Count of the bigram `prev → next`; `None` is the start context.
    pub fn count(&self, prev: Option<Token>, next: Token) -> f64 {
        self.counts[Self::context_index(prev, self.vocab_len) * self.vocab_len + next.index()]
    }

    /// `(c(prev, next) + k) / (c(prev) + k·|V|)` in log space.
    pub fn logprob(&self, prev: Option<Token>, next: Token) -> f64 {
        let ctx = Self::context_index(prev, self.vocab_len);
        let num = self.counts[ctx * self.vocab_len + next.index()] + self.k;
        let den = self.context_counts[ctx] + self.k * self.vocab_len as f64;
        (num / den).ln()
    }
}

/// Fits a [`BigramLm`] to complete captions.
pub fn train_bigram_lm(vocab: &Vocabulary, captions: &[Caption], k: f64) -> Result<BigramLm> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothing k must be positive, got {k}")));
    }
    if captions.is_empty() {
        return Err(Error::InvalidConfig("empty language model corpus".into()));
    }
    let v = vocab.len();
    let mut counts = vec![0.0; (v + 1) * v];
    let mut context_counts = vec![0.0; v + 1];
    for caption in captions {
        check_complete(caption, v)?;
        let mut prev = v;
        for t in caption.tokens() {
            counts[prev * v + t.index()] += 1.0;
            context_counts[prev] += 1.0;
            prev = t.index();
        }
    }
    Ok(BigramLm { vocab_len: v, k, counts, context_counts })
}

impl LanguageModelScorer for BigramLm {
    fn token_logprobs(&self, caption: &Caption) -> Result<Vec<f64>> {
        check_complete(caption, self.vocab_len)?;
        let mut prev = None;
        Ok(caption
            .tokens()
            .iter()
            .map(|&t| {
                let lp = self.logprob(prev, t);
                prev = Some(t);
                lp
            })
            .collect())
    }
}

/// `exp(-mean log-likelihood)` over the caption's tokens, EOS included.
/// A zero-probability token yields `+inf`.
pub fn caption_perplexity(lm: &dyn LanguageModelScorer, caption: &Caption) -> Result<f64> {
    let lls = lm.token_logprobs(caption)?;
    if lls.is_empty() {
        return Err(Error::InvalidCaption("empty caption".into()));
    }
    if let Some(bad) = lls.iter().find(|v| v.is_nan() || **v > 0.0) {
        return Err(Error::Scorer(format!("invalid token log-likelihood {bad}")));
    }
    Ok((-lls.iter().sum::<f64>() / lls.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let words = ["a", "b", "c", "<eos>"].iter().map(|s| s.to_string()).collect();
        Vocabulary::new(words, Token(3)).unwrap()
    }

    fn cap(ids: &[u32]) -> Caption {
        Caption::new(ids.iter().map(|&i| Token(i)).collect(), Token(3)).unwrap()
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let lm = UniformLm::new(8).unwrap();
        let eos = Token(7);
        for len in 1..6 {
            let mut t: Vec<Token> = (0..len - 1).map(|i| Token(i % 7)).collect();
            t.push(eos);
            // exp(ln 8) is one ulp below 8 in binary64.
            let ppl = caption_perplexity(&lm, &Caption::new(t, eos).unwrap()).unwrap();
            assert!((ppl - 8.0).abs() <= 8.0 * 1e-12, "{ppl}");
        }
    }

    #[test]
    fn hand_bigram_chain_rule() {
        // Corpus: "a b", "a c", "b". |V| = 4, k = 0.5.
        let lm = train_bigram_lm(&vocab(), &[cap(&[0, 1, 3]), cap(&[0, 2, 3]), cap(&[1, 3])], 0.5).unwrap();
        // P(a|start) = (2+.5)/(3+2), P(b|a) = (1+.5)/(2+2), P(eos|b) = (2+.5)/(2+2)
        let expected = [2.5f64 / 5.0, 1.5 / 4.0, 2.5 / 4.0];
        let lls = lm.token_logprobs(&cap(&[0, 1, 3])).unwrap();
        for (l, e) in lls.iter().zip(expected) {
            assert!((l - e.ln()).abs() < 1e-12);
        }
        let ppl = caption_perplexity(&lm, &cap(&[0, 1, 3])).unwrap();
        let hand = (expected.iter().product::<f64>()).powf(-1.0 / 3.0);
        assert!((ppl - hand).abs() < 1e-9);
        // Unseen bigram c → a: k / (c(c) + k|V|).
        assert!((lm.logprob(Some(Token(2)), Token(0)) - (0.5f64 / (1.0 + 2.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn large_k_approaches_uniform() {
        let lm = train_bigram_lm(&vocab(), &[cap(&[0, 1, 3])], 1e12).unwrap();
        let ppl = caption_perplexity(&lm, &cap(&[2, 2, 3])).unwrap();
        assert!((ppl - 4.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(train_bigram_lm(&vocab(), &[], 1.0).is_err());
        assert!(train_bigram_lm(&vocab(), &[cap(&[3])], 0.0).is_err());
        let open = Caption::new(vec![Token(0)], Token(3)).unwrap();
        assert!(UniformLm::new(4).unwrap().token_logprobs(&open).is_err());
    }

    struct Certain;
    impl LanguageModelScorer for Certain {
        fn token_logprobs(&self, caption: &Caption) -> Result<Vec<f64>> {
            Ok(vec![0.0; caption.len()])
        }
    }

    struct Zero;
    impl LanguageModelScorer for Zero {
        fn token_logprobs(&self, caption: &Caption) -> Result<Vec<f64>> {
            Ok(vec![f64::NEG_INFINITY; caption.len()])
        }
    }

    #[test]
    fn identity_and_zero_probability_cases() {
        assert_eq!(caption_perplexity(&Certain, &cap(&[0, 1, 3])).unwrap(), 1.0);
        assert_eq!(caption_perplexity(&Zero, &cap(&[0, 3])).unwrap(), f64::INFINITY);
    }
}
