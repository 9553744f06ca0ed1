//! Pipeline configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the file.
//! Credentials never appear here: the HTTP backend reads its bearer token
//! from the environment variable named by `endpoint.token_env`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use attrib_core::distractor::{DEFAULT_POOL_SIZE, MAX_PER_SOURCE};
use attrib_core::leakage::LeakConfig;
use attrib_core::llmgate::{
    Backend, Gateway, GatewayConfig, HttpBackend, Mode, RetryPolicy, DEFAULT_TOKEN_ENV,
};
use attrib_core::offline::OfflineBackend;
use attrib_core::synthesis::GenerationSettings;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub backend: BackendKind,
    pub mode: String,
    pub chat_url: Option<String>,
    pub embed_url: Option<String>,
    pub embed_model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub cassette: Option<PathBuf>,
    /// Transport attempts per request, including the first.
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub embed_batch_limit: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            backend: BackendKind::Http,
            mode: "live".into(),
            chat_url: None,
            embed_url: None,
            embed_model: "embedding".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            timeout_secs: 120,
            cassette: None,
            attempts: retry.max_attempts,
            base_delay_ms: retry.base_delay_ms,
            max_delay_ms: retry.max_delay_ms,
            embed_batch_limit: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub multi_hop_chains: usize,
    pub dialogue_contexts: usize,
    pub max_hops: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { multi_hop_chains: 100, dialogue_contexts: 20, max_hops: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let g = GenerationSettings::default();
        Self { model: g.model, temperature: g.temperature, max_tokens: g.max_tokens, max_retries: g.max_retries }
    }
}

impl GenerationConfig {
    pub fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorConfig {
    pub pool_size: usize,
    pub per_source: usize,
    pub batch_size: usize,
    pub for_dialogue: bool,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self { pool_size: DEFAULT_POOL_SIZE, per_source: MAX_PER_SOURCE, batch_size: 32, for_dialogue: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageConfig {
    pub threshold: f64,
    pub num_perms: usize,
    pub bands: usize,
    pub shingle_size: usize,
    /// Drop samples citing or including any flagged training article.
    pub drop_flagged: bool,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        let d = LeakConfig::default();
        Self { threshold: d.threshold, num_perms: d.num_perms, bands: d.bands, shingle_size: d.shingle_size, drop_flagged: true }
    }
}

impl LeakageConfig {
    pub fn leak_config(&self, seed: u64) -> LeakConfig {
        LeakConfig {
            threshold: self.threshold,
            num_perms: self.num_perms,
            bands: self.bands,
            shingle_size: self.shingle_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MethodKind {
    Random {
        #[serde(default)]
        p: Option<f64>,
    },
    EmbedThreshold {
        #[serde(default)]
        threshold: Option<f64>,
    },
    Prompt {
        model: String,
        #[serde(default)]
        temperature: f64,
    },
    Ensemble { members: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: MethodKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub threshold_grid: Vec<f64>,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self { threshold_grid: (0..=18).map(|i| 0.05 * i as f64).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub parallelism: usize,
    pub work_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    pub sampling: SamplingConfig,
    pub generation: GenerationConfig,
    pub distractors: DistractorConfig,
    pub leakage: LeakageConfig,
    pub attribution: AttributionConfig,
    pub methods: Vec<MethodConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 4,
            work_dir: PathBuf::from("work"),
            corpus: None,
            test_corpus: None,
            endpoint: EndpointConfig::default(),
            sampling: SamplingConfig::default(),
            generation: GenerationConfig::default(),
            distractors: DistractorConfig::default(),
            leakage: LeakageConfig::default(),
            attribution: AttributionConfig::default(),
            methods: Vec::new(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.work_dir);
        for p in [&mut self.corpus, &mut self.test_corpus, &mut self.endpoint.cassette].into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |field: &str, why: &str| Err(CliError::Usage(format!("{field}: {why}")));
        if self.parallelism == 0 {
            return usage("parallelism", "must be at least 1");
        }
        if self.endpoint.mode.parse::<Mode>().is_err() {
            return usage("endpoint.mode", "must be live, record or replay");
        }
        if self.endpoint.attempts == 0 {
            return usage("endpoint.attempts", "must be at least 1");
        }
        if self.endpoint.embed_batch_limit == 0 {
            return usage("endpoint.embed_batch_limit", "must be at least 1");
        }
        if !(1..=2).contains(&self.sampling.max_hops) {
            return usage("sampling.max_hops", "must be 1 or 2");
        }
        if self.generation.max_retries == 0 {
            return usage("generation.max_retries", "must be at least 1");
        }
        if self.distractors.per_source > MAX_PER_SOURCE {
            return usage("distractors.per_source", "must be at most 3");
        }
        if self.distractors.pool_size < self.distractors.per_source {
            return usage("distractors.pool_size", "must be at least distractors.per_source");
        }
        if self.distractors.batch_size == 0 {
            return usage("distractors.batch_size", "must be at least 1");
        }
        if !(self.leakage.threshold > 0.0 && self.leakage.threshold <= 1.0) {
            return usage("leakage.threshold", "must lie in (0, 1]");
        }
        if self.leakage.bands == 0 || self.leakage.num_perms % self.leakage.bands != 0 {
            return usage("leakage.bands", "must divide leakage.num_perms");
        }
        if self.leakage.shingle_size == 0 {
            return usage("leakage.shingle_size", "must be at least 1");
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.methods {
            if !names.insert(m.name.as_str()) {
                return usage("methods.name", &format!("`{}` is defined twice", m.name));
            }
            match &m.kind {
                MethodKind::Random { p: Some(p) } if !(0.0..=1.0).contains(p) => {
                    return usage("methods.p", "must lie in [0, 1]");
                }
                MethodKind::Ensemble { members } if members.len() < 2 => {
                    return usage("methods.members", "an ensemble needs at least 2 members");
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.endpoint.mode.parse().expect("validated")
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(attrib_core::llmgate::canonical_json(&value).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn method(&self, name: &str) -> Result<&MethodConfig, CliError> {
        self.methods
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| CliError::Usage(format!("methods: no method named `{name}`")))
    }

    /// Builds the gateway. Live and record modes with the HTTP backend need
    /// the endpoint URLs; replay needs only the cassette.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let e = &self.endpoint;
        let mode = self.mode();
        let config = GatewayConfig {
            embed_model: e.embed_model.clone(),
            max_in_flight: self.parallelism,
            retry: RetryPolicy { max_attempts: e.attempts, base_delay_ms: e.base_delay_ms, max_delay_ms: e.max_delay_ms },
            embed_batch_limit: e.embed_batch_limit,
        };
        if mode != Mode::Live && e.cassette.is_none() {
            return Err(CliError::Usage(format!("endpoint.cassette: required in {} mode", e.mode)));
        }
        let backend: Option<Arc<dyn Backend>> = match (mode, e.backend) {
            (Mode::Replay, _) => None,
            (_, BackendKind::Offline) => Some(Arc::new(OfflineBackend)),
            (_, BackendKind::Http) => {
                if e.chat_url.is_none() && e.embed_url.is_none() {
                    return Err(CliError::Usage(format!(
                        "endpoint.chat_url: required in {} mode with the http backend",
                        e.mode
                    )));
                }
                Some(Arc::new(HttpBackend::new(
                    e.chat_url.clone(),
                    e.embed_url.clone(),
                    &e.token_env,
                    Duration::from_secs(e.timeout_secs),
                )))
            }
        };
        Gateway::with_mode(mode, backend, config, e.cassette.clone()).map_err(CliError::from_gate)
    }
}
