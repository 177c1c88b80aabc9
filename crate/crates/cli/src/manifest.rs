//! Problem manifests: reference-game sets plus where their items come from.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use pragcap_core::speakers::{ProblemSet, ToyWorld, SET_SIZE};
use pragcap_core::ItemId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSet {
    pub set_id: String,
    pub items: Vec<String>,
    pub target: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Path of a world file, relative to the manifest.
    ToyWorld(PathBuf),
    /// Item ids are resolved by the configured bridge.
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    source: SourceSpec,
    sets: Vec<ManifestSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ItemSource {
    ToyWorld(Arc<ToyWorld>),
    Bridge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemManifest {
    pub source: ItemSource,
    pub sets: Vec<ManifestSet>,
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> anyhow::Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("{what}: field `{}`: {}", e.path(), e.inner()))
}

impl ProblemManifest {
    /// Every set of `world`, with its reference caption.
    pub fn from_world(world: Arc<ToyWorld>) -> anyhow::Result<Self> {
        let vocab = world.vocabulary();
        let sets = world
            .problem_sets()
            .iter()
            .map(|s| {
                let reference = world.reference_captions().get(&s.target).context("missing reference caption")?;
                Ok(ManifestSet {
                    set_id: s.set_id.clone(),
                    items: s.items.iter().map(|i| i.0.clone()).collect(),
                    target: s.target.0.clone(),
                    reference: vocab.detokenize(reference.tokens())?,
                })
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(Self { source: ItemSource::ToyWorld(world), sets })
    }

    /// Loads a manifest file or a world file written by `gen-world`.
    /// `bridge_configured` says whether bridge-resolved ids can be served.
    pub fn load(path: &Path, bridge_configured: bool) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("manifest {} is not valid JSON", path.display()))?;
        let manifest = if value.get("params").is_some() {
            let world = ToyWorld::from_json(&text).with_context(|| format!("world file {}", path.display()))?;
            Self::from_world(world.into_shared())?
        } else {
            let file: ManifestFile = parse_json(&text, &format!("manifest {}", path.display()))?;
            let source = match file.source {
                SourceSpec::Bridge => ItemSource::Bridge,
                SourceSpec::ToyWorld(rel) => {
                    let world_path = path.parent().unwrap_or(Path::new(".")).join(rel);
                    let world_text = std::fs::read_to_string(&world_path)
                        .with_context(|| format!("reading world {}", world_path.display()))?;
                    ItemSource::ToyWorld(ToyWorld::from_json(&world_text)?.into_shared())
                }
            };
            Self { source, sets: file.sets }
        };
        manifest.validate(bridge_configured).with_context(|| format!("manifest {}", path.display()))?;
        Ok(manifest)
    }

    pub fn validate(&self, bridge_configured: bool) -> anyhow::Result<()> {
        if self.sets.is_empty() {
            bail!("no problem sets");
        }
        if self.source == ItemSource::Bridge && !bridge_configured {
            bail!("sets use bridge-resolved item ids but no bridge is configured");
        }
        let mut ids = BTreeSet::new();
        for set in &self.sets {
            let name = &set.set_id;
            if !ids.insert(name.as_str()) {
                bail!("duplicate set id `{name}`");
            }
            if set.items.len() != SET_SIZE {
                bail!("set `{name}` has {} items, expected {SET_SIZE}", set.items.len());
            }
            if set.items.iter().collect::<BTreeSet<_>>().len() != SET_SIZE {
                bail!("set `{name}` repeats an item");
            }
            if !set.items.contains(&set.target) {
                bail!("set `{name}`: target `{}` is not among its items", set.target);
            }
            if set.reference.trim().is_empty() {
                bail!("set `{name}` has an empty reference caption");
            }
            if let ItemSource::ToyWorld(world) = &self.source {
                if let Some(missing) = set.items.iter().find(|i| !world.items().contains_key(&ItemId::new(i.as_str()))) {
                    bail!("set `{name}`: item `{missing}` is not in the world");
                }
            }
        }
        Ok(())
    }

    /// Manifest file text for these sets, with items resolved through `source`.
    pub fn to_json(&self, source: SourceSpec) -> anyhow::Result<String> {
        let file = ManifestFile { source, sets: self.sets.clone() };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn world(&self) -> Option<&Arc<ToyWorld>> {
        match &self.source {
            ItemSource::ToyWorld(w) => Some(w),
            ItemSource::Bridge => None,
        }
    }

    pub fn problems(&self) -> Vec<ProblemSet> {
        self.sets
            .iter()
            .map(|s| ProblemSet {
                set_id: s.set_id.clone(),
                items: s.items.iter().map(|i| ItemId::new(i.as_str())).collect(),
                target: ItemId::new(s.target.as_str()),
            })
            .collect()
    }
}
