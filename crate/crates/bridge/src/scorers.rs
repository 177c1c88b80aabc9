//! Engine scorer traits served over a [`BridgeClient`].

use std::sync::Arc;

use pragcap_core::evaluation::LanguageModelScorer;
use pragcap_core::listeners::SimilarityScorer;
use pragcap_core::speakers::{check_prefix, SpeakerScorer};
use pragcap_core::{Caption, Error, ItemId, LogDistribution, Result, Token, Vocabulary};

use crate::client::BridgeClient;
use crate::protocol::{Kind, SimilarityQuery, SpeakerQuery};

/// Speaker backed by `speaker_next`. Token ids index the vocabulary the
/// server advertised in its handshake.
pub struct BridgeSpeaker {
    client: Arc<BridgeClient>,
    vocab: Vocabulary,
    top_k: Option<usize>,
}

impl BridgeSpeaker {
    /// `top_k = None` leaves K to the server.
    pub fn new(client: Arc<BridgeClient>, top_k: Option<usize>) -> Result<Self> {
        client.require(Kind::SpeakerNext)?;
        let vocab = client.info().vocabulary.clone().ok_or_else(|| Error::Scorer("no vocabulary in handshake".into()))?;
        Ok(Self { client, vocab, top_k })
    }
}

impl SpeakerScorer for BridgeSpeaker {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_logprobs(&self, item: &ItemId, prefix: &[Token]) -> Result<LogDistribution> {
        Ok(self.next_token_logprobs_batch(&[(item, prefix)])?.remove(0))
    }

    fn next_token_logprobs_batch(&self, queries: &[(&ItemId, &[Token])]) -> Result<Vec<LogDistribution>> {
        let wire = queries
            .iter()
            .map(|(item, prefix)| {
                check_prefix(&self.vocab, prefix)?;
                Ok(SpeakerQuery { item: item.as_str().to_string(), prefix: self.vocab.detokenize(prefix)? })
            })
            .collect::<Result<Vec<_>>>()?;
        self.client
            .speaker_next(wire, self.top_k)?
            .iter()
            .map(|sparse| LogDistribution::new(sparse.to_dense(self.vocab.len())?))
            .collect()
    }
}

/// Similarity scorer backed by `similarity`.
pub struct BridgeSimilarity {
    client: Arc<BridgeClient>,
    temperature: f64,
}

impl BridgeSimilarity {
    pub fn new(client: Arc<BridgeClient>, temperature: f64) -> Result<Self> {
        client.require(Kind::Similarity)?;
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
        }
        Ok(Self { client, temperature })
    }
}

impl SimilarityScorer for BridgeSimilarity {
    fn similarities(&self, items: &[ItemId], text: &str) -> Result<Vec<f64>> {
        Ok(self.similarities_batch(items, &[text])?.remove(0))
    }

    fn similarities_batch(&self, items: &[ItemId], texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let ids: Vec<String> = items.iter().map(|i| i.as_str().to_string()).collect();
        let queries = texts.iter().map(|t| SimilarityQuery { items: ids.clone(), text: t.to_string() }).collect();
        Ok(self.client.similarity(queries)?)
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Language model backed by `lm_score`; captions are sent detokenized.
pub struct BridgeLm {
    client: Arc<BridgeClient>,
    vocab: Vocabulary,
}

impl BridgeLm {
    pub fn new(client: Arc<BridgeClient>, vocab: Vocabulary) -> Result<Self> {
        client.require(Kind::LmScore)?;
        Ok(Self { client, vocab })
    }
}

impl LanguageModelScorer for BridgeLm {
    fn token_logprobs(&self, caption: &Caption) -> Result<Vec<f64>> {
        if !caption.is_complete() {
            return Err(Error::InvalidCaption("language model scoring needs a complete caption".into()));
        }
        let text = self.vocab.detokenize(caption.tokens())?;
        let lls = self.client.lm_score(vec![text])?.remove(0);
        if lls.is_empty() {
            return Err(Error::Scorer("lm_score returned no tokens".into()));
        }
        Ok(lls)
    }
}
