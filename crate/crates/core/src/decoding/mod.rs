//! Caption decoders.
//!
//! Every decoder is a deterministic beam search over token prefixes. They
//! differ in how a candidate prefix is scored:
//!
//! | method                | candidate score                                           |
//! |-----------------------|-----------------------------------------------------------|
//! | base                  | `S(o_1:t)`, the accumulated speaker log-probability       |
//! | PICL                  | `λ·log L(i⁺ | o_1:t) + (1-λ)·S(o_1:t)` on an `N`-pool       |
//! | PICL, no distractors  | as PICL, listener softmax taken over the pool, target only |
//! | PICL, full rerank     | base beam of width `N`, whole captions rescored as PICL    |
//! | E-S                   | `Σ log P(o | i⁺) - λ·log mean_j P(o | i⁻_j)`                |
//! | Incre-RSA             | `S(o_1:t) + λ·log L_bayes(i⁺ | o_1:t)`                     |
//!
//! Finished hypotheses leave the beam with their score frozen. Ties are
//! broken by speaker log-probability, then by token ids.

mod base;
mod es;
mod exact;
mod picl;
mod rerank;
mod rsa;
mod search;

pub use base::beam_search_base;
pub use es::{es_decode, suppressor, SUPPRESSOR_FLOOR};
pub use exact::{exact_pragmatic_decode, EXACT_GUARD};
pub use picl::{picl_decode, picl_no_distractors};
pub use rerank::picl_full_rerank;
pub use rsa::incre_rsa_decode;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::listeners::{ListenerPosterior, SimilarityScorer};
use crate::speakers::SpeakerScorer;
use crate::{Caption, DecodeConfig, Error, RefGameContext, Result, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Base,
    Picl,
    Es,
    IncreRsa,
    PiclFullRerank,
    PiclNoDistractors,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Base,
        Method::Picl,
        Method::Es,
        Method::IncreRsa,
        Method::PiclFullRerank,
        Method::PiclNoDistractors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Picl => "picl",
            Method::Es => "es",
            Method::IncreRsa => "incre-rsa",
            Method::PiclFullRerank => "picl-full-rerank",
            Method::PiclNoDistractors => "picl-no-distractors",
        }
    }

    /// Legal informativity range; `None` for the base speaker.
    pub fn lambda_range(self) -> Option<(f64, f64)> {
        match self {
            Method::Base => None,
            Method::IncreRsa => Some((0.0, 2.0)),
            _ => Some((0.0, 1.0)),
        }
    }

    pub fn needs_listener(self) -> bool {
        matches!(self, Method::Picl | Method::PiclFullRerank | Method::PiclNoDistractors)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// A method and its informativity weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    pub lambda: f64,
}

impl MethodSpec {
    pub fn new(method: Method, lambda: f64) -> Result<Self> {
        check_lambda(method, lambda)?;
        Ok(Self { method, lambda })
    }

    pub fn base() -> Self {
        Self { method: Method::Base, lambda: 0.0 }
    }
}

pub(crate) fn check_lambda(method: Method, lambda: f64) -> Result<()> {
    match method.lambda_range() {
        Some((lo, hi)) if !(lo..=hi).contains(&lambda) => Err(Error::InvalidConfig(format!(
            "lambda {lambda} outside [{lo}, {hi}] for {method}"
        ))),
        _ => Ok(()),
    }
}

/// A scored partial caption.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub tokens: Vec<Token>,
    pub speaker_logp: f64,
    /// Listener log-probability of the target for the current prefix, when
    /// the method has a listener.
    pub listener_log_target: Option<f64>,
    pub combined_score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub tokens: Vec<Token>,
    pub speaker_logp: f64,
    pub score: f64,
}

/// One decode step: the candidates scored by the method's objective and the
/// ones kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub pool: Vec<TraceEntry>,
    pub survivors: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    pub caption: Caption,
    pub combined_score: f64,
    pub speaker_logp: f64,
    pub listener_log_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StepTrace>>,
}

impl DecodeResult {
    pub fn tokens(&self) -> &[Token] {
        self.caption.tokens()
    }
}

/// The scorers a decode may consult.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub speaker: &'a dyn SpeakerScorer,
    pub listener: &'a dyn SimilarityScorer,
    /// Incre-RSA item prior; uniform when absent.
    pub prior: Option<&'a ListenerPosterior>,
}

/// Runs `spec` on one reference game. `config.lambda` is replaced by `spec.lambda`.
pub fn decode(
    spec: &MethodSpec,
    scorers: &Scorers<'_>,
    context: &RefGameContext,
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    let config = config.with_lambda(spec.lambda);
    match spec.method {
        Method::Base => Ok(beam_search_base(scorers.speaker, context.target(), &config)?.remove(0)),
        Method::Picl => picl_decode(scorers.speaker, scorers.listener, context, &config),
        Method::Es => es_decode(scorers.speaker, context, &config),
        Method::IncreRsa => {
            let uniform;
            let prior = match scorers.prior {
                Some(p) => p,
                None => {
                    uniform = ListenerPosterior::uniform(context.len())?;
                    &uniform
                }
            };
            incre_rsa_decode(scorers.speaker, context, &config, prior)
        }
        Method::PiclFullRerank => picl_full_rerank(scorers.speaker, scorers.listener, context, &config),
        Method::PiclNoDistractors => {
            picl_no_distractors(scorers.speaker, scorers.listener, context, &config)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("foo".parse::<Method>().is_err());
    }

    #[test]
    fn lambda_ranges() {
        assert!(MethodSpec::new(Method::Picl, 1.0).is_ok());
        assert!(MethodSpec::new(Method::Picl, 1.2).is_err());
        assert!(MethodSpec::new(Method::Es, -0.1).is_err());
        assert!(MethodSpec::new(Method::IncreRsa, 2.0).is_ok());
        assert!(MethodSpec::new(Method::IncreRsa, 2.01).is_err());
        assert!(MethodSpec::new(Method::Base, 7.0).is_ok());
    }
}
