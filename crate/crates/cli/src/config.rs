//! Declarative run configuration (TOML) resolved with command-line overrides.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use pragcap_bridge::{ClientOptions, Endpoint};
use pragcap_core::bench::{BenchmarkSpec, ScorerParams};
use pragcap_core::decoding::Method;
use pragcap_core::speakers::WorldParams;
use pragcap_core::tuning::DEFAULT_STEPS;
use pragcap_core::DecodeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    /// `tcp://host:port` or `exec:<command>`.
    pub endpoint: String,
    pub timeout_secs: f64,
    pub window: usize,
    /// K requested from `speaker_next`; the server's choice when unset.
    pub top_k: Option<usize>,
    /// Listener softmax temperature applied to bridged similarities.
    pub temperature: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { endpoint: String::new(), timeout_secs: 30.0, window: 32, top_k: None, temperature: 1.0 }
    }
}

impl BridgeConfig {
    pub fn endpoint(&self) -> anyhow::Result<Endpoint> {
        Ok(self.endpoint.parse()?)
    }

    pub fn client_options(&self) -> anyhow::Result<ClientOptions> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            bail!("bridge timeout_secs must be positive");
        }
        Ok(ClientOptions { timeout: Duration::from_secs_f64(self.timeout_secs), window: self.window })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub steps: Vec<f64>,
    pub exhaustive: bool,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS.to_vec(), exhaustive: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Picl, Method::Es, Method::IncreRsa],
            grid: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
        }
    }
}

/// Everything a run depends on. Serialized verbatim into provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; world, scorer and listener seeds derive from it.
    pub seed: u64,
    /// Generation parameters for `gen-world`; `world.seed` is derived.
    pub world: WorldParams,
    pub scorers: ScorerParams,
    pub decode: DecodeConfig,
    pub method: Method,
    pub lambda: f64,
    pub bridge: Option<BridgeConfig>,
    /// Evaluative listener served over a separate bridge.
    pub eval_bridge: Option<BridgeConfig>,
    pub tuning: TuningConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchmarkSpec::default();
        Self {
            seed: bench.seed,
            world: bench.world,
            scorers: bench.scorers,
            decode: bench.decode,
            method: Method::Picl,
            lambda: 0.0,
            bridge: None,
            eval_bridge: None,
            tuning: TuningConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML config; unknown keys are errors that name the key path.
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let de = toml::Deserializer::parse(text).context("config is not valid TOML")?;
        serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.decode.validate()?;
        pragcap_core::decoding::MethodSpec::new(self.method, self.lambda)?;
        for b in self.bridge.iter().chain(&self.eval_bridge) {
            b.endpoint()?;
            b.client_options()?;
        }
        if self.sweep.methods.is_empty() || self.sweep.grid.is_empty() {
            bail!("sweep needs at least one method and one lambda");
        }
        Ok(())
    }
}
