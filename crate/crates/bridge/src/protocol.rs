//! Wire types of protocol version 1. See `PROTOCOL.md` at the repository root.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use pragcap_core::logspace::logsumexp;
use pragcap_core::{LogDistribution, Vocabulary};

use crate::BridgeError;

pub const PROTOCOL_VERSION: u64 = 1;

/// Largest deviation from 1 a sparse speaker response may have.
pub const SPARSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Handshake,
    SpeakerNext,
    Similarity,
    LmScore,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Handshake => "handshake",
            Kind::SpeakerNext => "speaker_next",
            Kind::Similarity => "similarity",
            Kind::LmScore => "lm_score",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Kind::Handshake, Kind::SpeakerNext, Kind::Similarity, Kind::LmScore].into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One request line. `kind` stays a string so servers can answer unknown
/// kinds with an error instead of failing to parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: u64,
    pub kind: String,
    pub payload: Value,
}

/// One response line: exactly one of `result` and `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandshakePayload {
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandshakeResult {
    pub version: u64,
    pub capabilities: Vec<Kind>,
    /// Required when `speaker_next` is offered: token ids in responses index it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vocabulary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerQuery {
    pub item: String,
    /// Detokenized prefix, EOS excluded.
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerNextPayload {
    pub queries: Vec<SpeakerQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

/// Top-K `(token id, log-prob)` pairs plus the log-mass of every other
/// token. `null` stands for `-inf` in both places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseDistribution {
    pub top: Vec<(u32, Option<f64>)>,
    pub other: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityQuery {
    pub items: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityPayload {
    pub queries: Vec<SimilarityQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmQuery {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmScorePayload {
    pub queries: Vec<LmQuery>,
}

fn neg_inf(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NEG_INFINITY)
}

impl SparseDistribution {
    /// Keeps the `k` most probable tokens (ties to the smaller id).
    pub fn from_dense(dist: &LogDistribution, k: usize) -> Self {
        let logp = dist.logp();
        let mut order: Vec<usize> = (0..logp.len()).collect();
        order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
        let k = k.min(logp.len());
        let finite = |v: f64| (v > f64::NEG_INFINITY).then_some(v);
        let top = order[..k].iter().map(|&i| (i as u32, finite(logp[i]))).collect();
        let rest: Vec<f64> = order[k..].iter().map(|&i| logp[i]).collect();
        let other = if rest.is_empty() { None } else { logsumexp(&rest).ok().and_then(finite) };
        Self { top, other }
    }

    /// Expands to a full distribution over `vocab_len` tokens. Tokens outside
    /// the top-K share the remainder uniformly. Responses within
    /// [`SPARSE_TOLERANCE`] but not within 1e-9 of total mass 1 are renormalized.
    pub fn to_dense(&self, vocab_len: usize) -> Result<Vec<f64>, BridgeError> {
        let k = self.top.len();
        if k > vocab_len {
            return Err(BridgeError::Malformed(format!("top-{k} for a vocabulary of {vocab_len}")));
        }
        let fill = if k == vocab_len { f64::NEG_INFINITY } else { neg_inf(self.other) - ((vocab_len - k) as f64).ln() };
        let mut dense = vec![fill; vocab_len];
        let mut seen = vec![false; vocab_len];
        let mut masses = Vec::with_capacity(k + 1);
        for &(id, lp) in &self.top {
            let i = id as usize;
            if i >= vocab_len || seen[i] {
                return Err(BridgeError::Malformed(format!("bad or repeated token id {id}")));
            }
            let lp = neg_inf(lp);
            if lp.is_nan() || lp > 0.0 {
                return Err(BridgeError::Malformed(format!("invalid log-prob {lp} for token {id}")));
            }
            seen[i] = true;
            dense[i] = lp;
            masses.push(lp);
        }
        masses.push(neg_inf(self.other));
        let total = logsumexp(&masses).map_err(|e| BridgeError::Malformed(e.to_string()))?;
        let deviation = (total.exp() - 1.0).abs();
        if deviation.is_nan() || deviation > SPARSE_TOLERANCE {
            return Err(BridgeError::Malformed(format!("speaker response mass deviates from 1 by {deviation:e}")));
        }
        if deviation > pragcap_core::types::NORMALIZATION_TOL {
            dense.iter_mut().for_each(|v| *v -= total);
        }
        Ok(dense)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_line_is_byte_exact() {
        let req = Request {
            id: 0,
            kind: Kind::Handshake.to_string(),
            payload: serde_json::to_value(HandshakePayload { version: 1 }).unwrap(),
        };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"id":0,"kind":"handshake","payload":{"version":1}}"#);
    }

    #[test]
    fn full_sparse_round_trip_is_exact() {
        let d = LogDistribution::new(vec![0.5f64.ln(), f64::NEG_INFINITY, 0.3f64.ln(), 0.2f64.ln()]).unwrap();
        let s = SparseDistribution::from_dense(&d, 4);
        assert_eq!(s.other, None);
        let line = serde_json::to_string(&s).unwrap();
        let back: SparseDistribution = serde_json::from_str(&line).unwrap();
        assert_eq!(back.to_dense(4).unwrap(), d.logp());
    }

    #[test]
    fn remainder_spreads_uniformly() {
        let d = LogDistribution::new(vec![0.5f64.ln(), 0.1f64.ln(), 0.3f64.ln(), 0.1f64.ln()]).unwrap();
        let s = SparseDistribution::from_dense(&d, 2);
        assert_eq!(s.top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 2]);
        let dense = s.to_dense(4).unwrap();
        assert!((dense[1].exp() - 0.1).abs() < 1e-12 && (dense[3].exp() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn normalization_bounds() {
        let slightly_off = SparseDistribution { top: vec![(0, Some((0.5f64 + 4e-7).ln()))], other: Some(0.5f64.ln()) };
        let dense = slightly_off.to_dense(2).unwrap();
        assert!((logsumexp(&dense).unwrap()).abs() < 1e-12);
        let way_off = SparseDistribution { top: vec![(0, Some(0.6f64.ln()))], other: Some(0.5f64.ln()) };
        assert!(way_off.to_dense(2).is_err());
        let repeated = SparseDistribution { top: vec![(0, Some(0.5f64.ln())), (0, Some(0.5f64.ln()))], other: None };
        assert!(repeated.to_dense(2).is_err());
    }
}
