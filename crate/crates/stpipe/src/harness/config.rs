//! Experiment configuration, loadable from a TOML file and overridable from
//! the CLI. Section keys mirror the component knobs: `vad.*`, `la2.*`,
//! `text.*`, `backend.*`, `noise.*`, `corpus.*`.

use crate::backend::{Backend, CostModel, NoiseModel};
use crate::harness::corpus::CorpusParams;
use crate::speech::{La2Config, SpeechConfig, VadConfig};
use crate::text::TextConfig;
use crate::types::{SessionGraph, StabilityMode};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelinePath {
    /// Speech recognition followed by machine translation.
    Cascaded,
    /// One speech translation model.
    E2e,
}

impl std::fmt::Display for PipelinePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelinePath::Cascaded => write!(f, "cascaded"),
            PipelinePath::E2e => write!(f, "e2e"),
        }
    }
}

impl std::fmt::Display for StabilityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StabilityMode::Fixed => write!(f, "fixed"),
            StabilityMode::Revision => write!(f, "revision"),
        }
    }
}

/// `la2` section: chunk size defaults to the experiment-level value, the
/// mode to the experiment-level mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct La2Section {
    pub chunk_size_s: Option<f64>,
    pub mode: Option<StabilityMode>,
    pub max_input_s: f64,
}

impl Default for La2Section {
    fn default() -> Self {
        La2Section { chunk_size_s: None, mode: None, max_input_s: 8.0 }
    }
}

/// `text` section: the mode defaults to the experiment-level mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextSection {
    pub mode: Option<StabilityMode>,
    pub trigger_words: usize,
    pub terminators: String,
}

impl Default for TextSection {
    fn default() -> Self {
        TextSection { mode: None, trigger_words: 1, terminators: ".!?".into() }
    }
}

/// `backend.cost` section. `base_s`/`per_unit_s` drive the speech models
/// (ASR and ST share one model), `mt_*` the translation model;
/// `batch_discount` is shared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSection {
    pub base_s: f64,
    pub per_unit_s: f64,
    pub batch_discount: f64,
    pub mt_base_s: f64,
    pub mt_per_unit_s: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection { base_s: 0.1, per_unit_s: 0.05, batch_discount: 0.5, mt_base_s: 0.05, mt_per_unit_s: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub cost: CostSection,
    pub max_batch: usize,
    pub replicas: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection { cost: CostSection::default(), max_batch: 8, replicas: 1 }
    }
}

/// `noise` section. The optional `st_*` overrides give the end-to-end model
/// its own (usually harsher) noise, a labeled modeling knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub horizon_s: f64,
    pub perturb_period: u64,
    pub seed: u64,
    pub st_horizon_s: Option<f64>,
    pub st_perturb_period: Option<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { horizon_s: 0.6, perturb_period: 3, seed: 7, st_horizon_s: None, st_perturb_period: None }
    }
}

/// One experiment cell: a pipeline shape, stability mode, chunk size, worker
/// and session counts, plus every component knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: StabilityMode,
    pub path: PipelinePath,
    pub chunk_size_s: f64,
    pub workers: usize,
    pub parallel_sessions: usize,
    pub seed: u64,
    /// Synthetic latency per output word for the model-independent metric.
    pub word_duration_s: f64,
    pub vad: VadConfig,
    pub la2: La2Section,
    pub text: TextSection,
    pub backend: BackendSection,
    pub noise: NoiseSection,
    pub corpus: CorpusParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: StabilityMode::Fixed,
            path: PipelinePath::Cascaded,
            chunk_size_s: 1.0,
            workers: 1,
            parallel_sessions: 1,
            seed: 17,
            word_duration_s: 0.3,
            vad: VadConfig::default(),
            la2: La2Section::default(),
            text: TextSection::default(),
            backend: BackendSection::default(),
            noise: NoiseSection::default(),
            corpus: CorpusParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(content: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(content).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.workers < 1 || self.parallel_sessions < 1 {
            return Err("workers and parallel_sessions must be at least 1".into());
        }
        if self.chunk_size_s <= 0.0 {
            return Err("chunk_size_s must be positive".into());
        }
        if self.backend.max_batch < 1 || self.backend.replicas < 1 {
            return Err("backend.max_batch and backend.replicas must be at least 1".into());
        }
        if self.noise.perturb_period < 1 {
            return Err("noise.perturb_period must be at least 1".into());
        }
        self.vad.validate()?;
        self.la2_config().validate()?;
        self.text_config().validate()?;
        self.corpus.validate()?;
        Ok(())
    }

    pub fn la2_config(&self) -> La2Config {
        La2Config {
            chunk_size_s: self.la2.chunk_size_s.unwrap_or(self.chunk_size_s),
            mode: self.la2.mode.unwrap_or(self.mode),
            max_input_s: self.la2.max_input_s,
        }
    }

    pub fn speech_config(&self) -> SpeechConfig {
        SpeechConfig { vad: self.vad.clone(), la2: self.la2_config() }
    }

    pub fn text_config(&self) -> TextConfig {
        TextConfig {
            mode: self.text.mode.unwrap_or(self.mode),
            trigger_words: self.text.trigger_words,
            terminators: self.text.terminators.clone(),
        }
    }

    pub fn backend_instance(&self) -> Backend {
        let noise = NoiseModel {
            horizon_s: self.noise.horizon_s,
            perturb_period: self.noise.perturb_period,
            seed: self.noise.seed,
        };
        let st_noise = match (self.noise.st_horizon_s, self.noise.st_perturb_period) {
            (None, None) => None,
            (h, p) => Some(NoiseModel {
                horizon_s: h.unwrap_or(self.noise.horizon_s),
                perturb_period: p.unwrap_or(self.noise.perturb_period),
                seed: self.noise.seed,
            }),
        };
        Backend {
            speech_cost: CostModel {
                base_s: self.backend.cost.base_s,
                per_unit_s: self.backend.cost.per_unit_s,
                batch_discount: self.backend.cost.batch_discount,
            },
            mt_cost: CostModel {
                base_s: self.backend.cost.mt_base_s,
                per_unit_s: self.backend.cost.mt_per_unit_s,
                batch_discount: self.backend.cost.batch_discount,
            },
            noise,
            st_noise,
            max_batch: self.backend.max_batch,
            replicas: self.backend.replicas,
        }
    }

    pub fn graph(&self) -> SessionGraph {
        match self.path {
            PipelinePath::Cascaded => SessionGraph::cascaded(self.mode),
            PipelinePath::E2e => SessionGraph::end_to_end(self.mode),
        }
    }

    /// Origin node of the stream the primary metrics score (the
    /// translation), and of the transcript stream when the path has one.
    pub fn primary_origin(&self) -> &'static str {
        match self.path {
            PipelinePath::Cascaded => "text",
            PipelinePath::E2e => "speech",
        }
    }

    pub fn transcript_origin(&self) -> Option<&'static str> {
        match self.path {
            PipelinePath::Cascaded => Some("speech"),
            PipelinePath::E2e => None,
        }
    }
}
