//! Builds the scorers a run uses from its manifest and config.

use std::sync::Arc;

use anyhow::{bail, Context};

use pragcap_bridge::{BridgeClient, BridgeLm, BridgeSimilarity, BridgeSpeaker, Kind};
use pragcap_core::bench::{derive_seed, ToyScorers};
use pragcap_core::evaluation::{Harness, LanguageModelScorer};
use pragcap_core::listeners::SimilarityScorer;
use pragcap_core::speakers::{ProblemSet, SpeakerScorer};

use crate::config::{BridgeConfig, RunConfig};
use crate::manifest::{ItemSource, ProblemManifest};

pub struct Wiring {
    pub speaker: Box<dyn SpeakerScorer>,
    pub listener: Box<dyn SimilarityScorer>,
    pub eval_listener: Option<Box<dyn SimilarityScorer>>,
    pub lm: Option<Box<dyn LanguageModelScorer>>,
    pub problems: Vec<ProblemSet>,
}

fn connect(cfg: &BridgeConfig) -> anyhow::Result<Arc<BridgeClient>> {
    let endpoint = cfg.endpoint()?;
    let client = BridgeClient::connect(&endpoint, cfg.client_options()?)
        .with_context(|| format!("connecting to bridge {endpoint}"))?;
    Ok(Arc::new(client))
}

impl Wiring {
    pub fn build(config: &RunConfig, manifest: &ProblemManifest) -> anyhow::Result<Self> {
        let toy = match &manifest.source {
            ItemSource::ToyWorld(world) => Some(ToyScorers::build(
                world.clone(),
                &config.scorers,
                derive_seed(config.seed, "scorers"),
                config.decode.max_len,
            )?),
            ItemSource::Bridge => None,
        };
        let bridge = config.bridge.as_ref().map(connect).transpose()?;
        let eval_bridge = config.eval_bridge.as_ref().map(connect).transpose()?;

        let mut speaker: Option<Box<dyn SpeakerScorer>> = None;
        let mut listener: Option<Box<dyn SimilarityScorer>> = None;
        let mut eval_listener: Option<Box<dyn SimilarityScorer>> = None;
        let mut lm: Option<Box<dyn LanguageModelScorer>> = None;
        if let Some(t) = toy {
            speaker = Some(Box::new(t.speaker));
            listener = Some(Box::new(t.listener));
            eval_listener = Some(Box::new(t.eval_listener));
            lm = Some(Box::new(t.lm));
        }
        if let (Some(client), Some(cfg)) = (&bridge, &config.bridge) {
            if client.has(Kind::SpeakerNext) {
                speaker = Some(Box::new(BridgeSpeaker::new(client.clone(), cfg.top_k)?));
            }
            if client.has(Kind::Similarity) {
                listener = Some(Box::new(BridgeSimilarity::new(client.clone(), cfg.temperature)?));
            }
            if client.has(Kind::LmScore) {
                let vocab = speaker.as_ref().context("bridge lm_score needs a speaker vocabulary")?.vocabulary().clone();
                lm = Some(Box::new(BridgeLm::new(client.clone(), vocab)?));
            }
        }
        if let (Some(client), Some(cfg)) = (&eval_bridge, &config.eval_bridge) {
            eval_listener = Some(Box::new(BridgeSimilarity::new(client.clone(), cfg.temperature)?));
        }
        let Some(speaker) = speaker else { bail!("no speaker: the bridge does not offer speaker_next") };
        let Some(listener) = listener else { bail!("no listener: the bridge does not offer similarity") };
        Ok(Self { speaker, listener, eval_listener, lm, problems: manifest.problems() })
    }

    pub fn harness(&self, config: &RunConfig) -> anyhow::Result<Harness<'_>> {
        let eval = self.eval_listener.as_deref().context("evaluation needs an evaluative listener (eval_bridge)")?;
        let lm = self.lm.as_deref().context("evaluation needs a language model (bridge lm_score)")?;
        Ok(Harness::new(self.speaker.as_ref(), self.listener.as_ref(), eval, lm, &self.problems, config.decode.clone())?)
    }
}
