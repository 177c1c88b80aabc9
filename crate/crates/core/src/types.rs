//! Shared domain types.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audit::{self, DistKind};
use crate::logspace::{logsumexp, normalization_error};
use crate::{Error, Result};

/// Probability-space tolerance every distribution must meet.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Token alphabet. Surface forms are unique and exactly one of them is EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    eos: Token,
    index: HashMap<String, Token>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyRepr {
    words: Vec<String>,
    eos: u32,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(r.words, Token(r.eos))
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { words: v.words, eos: v.eos.0 }
    }
}

impl Vocabulary {
    pub fn new(words: Vec<String>, eos: Token) -> Result<Self> {
        if eos.index() >= words.len() {
            return Err(Error::InvalidVocabulary(format!(
                "eos id {} out of range for {} words",
                eos.0,
                words.len()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!(
                    "surface form {w:?} is empty or contains whitespace"
                )));
            }
            if index.insert(w.clone(), Token(i as u32)).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate surface form {w:?}")));
            }
        }
        Ok(Self { words, eos, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, token: Token) -> Result<&str> {
        self.words.get(token.index()).map(String::as_str).ok_or(Error::UnknownToken(token.0))
    }

    pub fn lookup(&self, word: &str) -> Option<Token> {
        self.index.get(word).copied()
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.words.len() as u32).map(Token)
    }

    /// Space-joined surface forms with EOS stripped.
    pub fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            if t == self.eos {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.word(t)?);
        }
        Ok(out)
    }

    /// Inverse of [`detokenize`](Self::detokenize) for prefixes (never yields EOS).
    pub fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        text.split_whitespace()
            .map(|w| match self.lookup(w) {
                Some(t) if t != self.eos => Ok(t),
                _ => Err(Error::InvalidCaption(format!("unknown word {w:?}"))),
            })
            .collect()
    }
}

/// A token sequence. EOS may only appear last; `complete` records whether it does.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Caption {
    tokens: Vec<Token>,
    complete: bool,
}

impl Caption {
    pub fn new(tokens: Vec<Token>, eos: Token) -> Result<Self> {
        let complete = tokens.last() == Some(&eos);
        let body = if complete { &tokens[..tokens.len() - 1] } else { &tokens[..] };
        if body.contains(&eos) {
            return Err(Error::InvalidCaption("EOS before the final position".into()));
        }
        Ok(Self { tokens, complete })
    }

    /// Builds a complete caption from EOS-free words.
    pub fn from_words(words: &[Token], eos: Token) -> Result<Self> {
        let mut tokens = words.to_vec();
        tokens.push(eos);
        Self::new(tokens, eos)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens without the trailing EOS.
    pub fn words(&self) -> &[Token] {
        if self.complete {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One target among `m >= 1` distractors. Items are always listed target-first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ContextRepr", into = "ContextRepr")]
pub struct RefGameContext {
    items: Vec<ItemId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRepr {
    target: ItemId,
    distractors: Vec<ItemId>,
}

impl TryFrom<ContextRepr> for RefGameContext {
    type Error = Error;
    fn try_from(r: ContextRepr) -> Result<Self> {
        RefGameContext::new(r.target, r.distractors)
    }
}

impl From<RefGameContext> for ContextRepr {
    fn from(c: RefGameContext) -> Self {
        let mut items = c.items.into_iter();
        let target = items.next().expect("context has a target");
        ContextRepr { target, distractors: items.collect() }
    }
}

impl RefGameContext {
    pub fn new(target: ItemId, distractors: Vec<ItemId>) -> Result<Self> {
        if distractors.is_empty() {
            return Err(Error::InvalidContext("at least one distractor is required".into()));
        }
        let mut items = Vec::with_capacity(distractors.len() + 1);
        items.push(target);
        items.extend(distractors);
        let mut seen = std::collections::HashSet::new();
        for id in &items {
            if !seen.insert(id) {
                return Err(Error::InvalidContext(format!("item `{id}` appears twice")));
            }
        }
        Ok(Self { items })
    }

    pub fn target(&self) -> &ItemId {
        &self.items[0]
    }

    pub fn distractors(&self) -> &[ItemId] {
        &self.items[1..]
    }

    /// Target first, then distractors in the given order.
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    /// Number of items, `m + 1`.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Normalized log-probabilities indexed by position (token id, or item index).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogDistribution {
    logp: Vec<f64>,
}

impl LogDistribution {
    /// Validates an already-normalized vector and records it as a speaker
    /// distribution in the audit.
    pub fn new(logp: Vec<f64>) -> Result<Self> {
        Self::checked(logp, DistKind::Speaker)
    }

    pub fn checked(mut logp: Vec<f64>, kind: DistKind) -> Result<Self> {
        if logp.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        for (index, v) in logp.iter_mut().enumerate() {
            if v.is_nan() || *v == f64::INFINITY || *v > NORMALIZATION_TOL {
                return Err(Error::InvalidLogProb { index, value: *v });
            }
            // log(1) computed as a difference can land a hair above zero.
            *v = v.min(0.0);
        }
        let deviation = normalization_error(&logp);
        audit::record(kind, deviation);
        if deviation > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(Self { logp })
    }

    /// Normalizes arbitrary log-weights (`-inf` allowed, not all of them).
    pub fn from_log_weights(weights: Vec<f64>, kind: DistKind) -> Result<Self> {
        let z = logsumexp(&weights)?;
        if z == f64::NEG_INFINITY {
            return Err(Error::NotNormalized { deviation: 1.0 });
        }
        Self::checked(weights.into_iter().map(|w| w - z).collect(), kind)
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    pub fn get(&self, index: usize) -> f64 {
        self.logp[index]
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.logp[index].exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.logp.iter().map(|v| v.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }
}

pub const DEFAULT_BEAM_WIDTH: usize = 16;
pub const DEFAULT_POOL_SIZE: usize = 256;
pub const DEFAULT_MAX_LEN: usize = 20;

/// Search parameters shared by every decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub lambda: f64,
    pub beam_width: usize,
    pub pool_size: usize,
    /// Maximum caption length, EOS included.
    pub max_len: usize,
    pub seed: u64,
    /// Record per-step pool/survivor traces in results.
    pub trace: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            beam_width: DEFAULT_BEAM_WIDTH,
            pool_size: DEFAULT_POOL_SIZE,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
            trace: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam_width must be positive".into()));
        }
        if self.pool_size < self.beam_width {
            return Err(Error::InvalidConfig(format!(
                "pool_size ({}) must be >= beam_width ({})",
                self.pool_size, self.beam_width
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be positive".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be finite".into()));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(vec!["red".into(), "ball".into(), "<eos>".into()], Token(2)).unwrap()
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_bad_eos() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], Token(0)).is_err());
        assert!(Vocabulary::new(vec!["a".into()], Token(3)).is_err());
        assert!(Vocabulary::new(vec!["a b".into(), "c".into()], Token(1)).is_err());
    }

    #[test]
    fn detokenize_strips_eos_and_round_trips() {
        let v = vocab();
        let text = v.detokenize(&[Token(0), Token(1), Token(2)]).unwrap();
        assert_eq!(text, "red ball");
        assert_eq!(v.tokenize(&text).unwrap(), vec![Token(0), Token(1)]);
        assert_eq!(v.detokenize(&[]).unwrap(), "");
    }

    #[test]
    fn caption_eos_only_final() {
        let eos = Token(2);
        assert!(Caption::new(vec![Token(0), eos, Token(1)], eos).is_err());
        let c = Caption::new(vec![Token(0), eos], eos).unwrap();
        assert!(c.is_complete());
        assert_eq!(c.words(), &[Token(0)]);
        assert!(!Caption::new(vec![Token(0)], eos).unwrap().is_complete());
    }

    #[test]
    fn context_validation() {
        let a = ItemId::new("a");
        assert!(RefGameContext::new(a.clone(), vec![]).is_err());
        assert!(RefGameContext::new(a.clone(), vec![a.clone()]).is_err());
        let b = ItemId::new("b");
        let c = ItemId::new("c");
        assert!(RefGameContext::new(a.clone(), vec![b.clone(), b.clone()]).is_err());
        let ctx = RefGameContext::new(a.clone(), vec![b, c]).unwrap();
        assert_eq!(ctx.target(), &a);
        assert_eq!(ctx.len(), 3);
        let json = serde_json::to_string(&ctx).unwrap();
        assert_eq!(serde_json::from_str::<RefGameContext>(&json).unwrap(), ctx);
    }

    #[test]
    fn log_distribution_checks() {
        assert!(LogDistribution::new(vec![]).is_err());
        assert!(LogDistribution::new(vec![0.5f64.ln(), 0.4f64.ln()]).is_err());
        assert!(LogDistribution::new(vec![0.0, f64::NAN]).is_err());
        let d = LogDistribution::new(vec![0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(d.prob(0), 1.0);
        let d = LogDistribution::from_log_weights(vec![1.0, 1.0], DistKind::Listener).unwrap();
        assert!((d.prob(1) - 0.5).abs() < 1e-15);
        assert!(LogDistribution::from_log_weights(
            vec![f64::NEG_INFINITY; 2],
            DistKind::Listener
        )
        .is_err());
    }

    #[test]
    fn decode_config_defaults_and_validation() {
        let c = DecodeConfig::default();
        assert_eq!((c.beam_width, c.pool_size), (16, 256));
        c.validate().unwrap();
        let bad = DecodeConfig { pool_size: 8, ..c.clone() };
        assert!(bad.validate().is_err());
        assert!(DecodeConfig { beam_width: 0, ..c }.validate().is_err());
    }
}
