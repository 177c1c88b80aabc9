//! Bag-of-attributes similarity over a [`ToyWorld`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimilarityScorer;
use crate::speakers::ToyWorld;
use crate::{Error, ItemId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    #[default]
    Dot,
    Cosine,
}

/// Text is embedded as the vector of attribute-word counts, scaled per
/// attribute by `weights`; similarity is the inner product with the item's
/// binary attribute vector (cosine mode normalizes both, a zero vector scores 0).
#[derive(Debug, Clone)]
pub struct ToySimilarity {
    world: Arc<ToyWorld>,
    mode: SimilarityMode,
    weights: Vec<f64>,
    temperature: f64,
}

impl ToySimilarity {
    pub fn new(world: Arc<ToyWorld>, mode: SimilarityMode) -> Self {
        let weights = vec![1.0; world.n_attributes()];
        Self { world, mode, weights, temperature: 1.0 }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Multiplies every attribute weight by an independent factor
    /// `1 + scale * u`, `u ~ U(-1, 1)`, drawn from `seed`.
    pub fn perturbed(&self, scale: f64, seed: u64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("perturb_scale {scale} must be >= 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = self
            .weights
            .iter()
            .map(|w| w * (1.0 + scale * rng.random_range(-1.0..=1.0)))
            .collect();
        Ok(Self { weights, ..self.clone() })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> SimilarityMode {
        self.mode
    }

    pub fn world(&self) -> &Arc<ToyWorld> {
        &self.world
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let vocab = self.world.vocabulary();
        let mut counts = vec![0.0; self.world.n_attributes()];
        for word in text.split_whitespace() {
            if let Some(a) = vocab.lookup(word).and_then(|t| self.world.attribute_of(t)) {
                counts[a] += 1.0;
            }
        }
        counts.iter_mut().zip(&self.weights).for_each(|(c, w)| *c *= w);
        counts
    }

    fn score(&self, embedded: &[f64], attrs: &[bool]) -> f64 {
        let dot: f64 = embedded.iter().zip(attrs).filter(|(_, &a)| a).map(|(e, _)| e).sum();
        match self.mode {
            SimilarityMode::Dot => dot,
            SimilarityMode::Cosine => {
                let text_norm = embedded.iter().map(|e| e * e).sum::<f64>().sqrt();
                let item_norm = (attrs.iter().filter(|&&a| a).count() as f64).sqrt();
                if text_norm == 0.0 || item_norm == 0.0 {
                    0.0
                } else {
                    dot / (text_norm * item_norm)
                }
            }
        }
    }
}

impl SimilarityScorer for ToySimilarity {
    fn similarities(&self, items: &[ItemId], text: &str) -> Result<Vec<f64>> {
        let embedded = self.embed(text);
        items.iter().map(|i| Ok(self.score(&embedded, self.world.item_attributes(i)?))).collect()
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Held-out evaluative listener: the default dot-product scorer with
/// perturbed attribute weights. `perturb_scale = 0` gives the decoding
/// listener back unchanged.
pub fn make_eval_listener(world: Arc<ToyWorld>, perturb_scale: f64, seed: u64) -> Result<ToySimilarity> {
    ToySimilarity::new(world, SimilarityMode::Dot).perturbed(perturb_scale, seed)
}
