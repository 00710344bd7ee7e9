//! Strict experiment configuration: TOML sections `[corpus] [model]
//! [train] [phase] [metrics] [output]`, unknown keys rejected, every
//! tunable of the pipeline representable and seed-complete.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GenerationMode, PipelineParams};
use crate::error::{Error, Result};
use crate::phases::{Phase, PhaseConfig};
use crate::recmodel::{
    EarlyStopMetric, ModelConfig, TextMode, TrainConfig, Variant,
};
use crate::textrep::{EmbeddingTable, OovPolicy};

/// Corpus files plus impression-pipeline parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub news_path: Option<PathBuf>,
    pub interactions_path: Option<PathBuf>,
    pub min_interactions: usize,
    pub h_min: usize,
    pub h_max: usize,
    pub per_user_cap: usize,
    pub k: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let p = PipelineParams::default();
        CorpusSection {
            news_path: None,
            interactions_path: None,
            min_interactions: p.min_interactions,
            h_min: p.h_min,
            h_max: p.h_max,
            per_user_cap: p.per_user_cap,
            k: p.k,
            val_frac: p.val_frac,
            test_frac: p.test_frac,
            seed: p.seed,
        }
    }
}

impl CorpusSection {
    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            min_interactions: self.min_interactions,
            h_min: self.h_min,
            h_max: self.h_max,
            per_user_cap: self.per_user_cap,
            k: self.k,
            val_frac: self.val_frac,
            test_frac: self.test_frac,
            seed: self.seed,
        }
    }

    pub fn news_path(&self) -> Result<&Path> {
        self.news_path
            .as_deref()
            .ok_or_else(|| Error::Config("corpus.news_path is required".to_string()))
    }

    pub fn interactions_path(&self) -> Result<&Path> {
        self.interactions_path
            .as_deref()
            .ok_or_else(|| Error::Config("corpus.interactions_path is required".to_string()))
    }
}

/// Architecture plus text-representation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub input_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub cnn_filters: usize,
    pub cnn_window: usize,
    pub attention_query_dim: usize,
    pub dropout: f64,
    pub user_mask_prob: f64,
    pub max_history: usize,
    pub user_buckets: usize,
    pub seed: u64,
    pub text_mode: TextMode,
    pub max_tokens: usize,
    /// Hash-embedder bucket count; ignored when an embedding file is set.
    pub vocab_buckets: u64,
    /// Precomputed embedding text file; absent means hash embeddings.
    pub embedding_path: Option<PathBuf>,
    /// Seed for hash fallback on out-of-vocabulary tokens; absent means
    /// unknown tokens are an error.
    pub oov_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            variant: m.variant,
            input_dim: m.input_dim,
            heads: m.heads,
            head_dim: m.head_dim,
            cnn_filters: m.cnn_filters,
            cnn_window: m.cnn_window,
            attention_query_dim: m.attention_query_dim,
            dropout: m.dropout,
            user_mask_prob: m.user_mask_prob,
            max_history: m.max_history,
            user_buckets: m.user_buckets,
            seed: m.seed,
            text_mode: TextMode::TitleOnly,
            max_tokens: 30,
            vocab_buckets: 1 << 20,
            embedding_path: None,
            oov_seed: None,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            input_dim: self.input_dim,
            heads: self.heads,
            head_dim: self.head_dim,
            cnn_filters: self.cnn_filters,
            cnn_window: self.cnn_window,
            attention_query_dim: self.attention_query_dim,
            dropout: self.dropout,
            user_mask_prob: self.user_mask_prob,
            max_history: self.max_history,
            user_buckets: self.user_buckets,
            seed: self.seed,
        }
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        match &self.embedding_path {
            Some(path) => {
                let oov = match self.oov_seed {
                    Some(seed) => OovPolicy::HashFallback { seed },
                    None => OovPolicy::Reject,
                };
                EmbeddingTable::from_text_file(path, oov)
            }
            None => Ok(EmbeddingTable::hash(
                self.input_dim,
                self.seed,
                self.vocab_buckets,
            )),
        }
    }
}

/// Optimization settings; a non-empty `lr_grid` requests grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub lr_grid: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            seed: t.seed,
            lr_grid: Vec::new(),
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            early_stop_metric: EarlyStopMetric::TargetMrr,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

/// Phase condition; `sweep` lists the t values a sweep run visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSection {
    pub phase: String,
    pub generator: Option<String>,
    pub faking_level: Option<String>,
    pub llm_ratio: Option<f64>,
    pub sweep: Vec<f64>,
    pub seed: u64,
}

impl Default for PhaseSection {
    fn default() -> Self {
        PhaseSection {
            phase: "P0".to_string(),
            generator: None,
            faking_level: None,
            llm_ratio: None,
            sweep: Vec::new(),
            seed: 0,
        }
    }
}

impl PhaseSection {
    pub fn parsed_phase(&self) -> Result<Phase> {
        Phase::parse(&self.phase)
            .ok_or_else(|| Error::Config(format!("unknown phase `{}`", self.phase)))
    }

    pub fn parsed_level(&self) -> Result<Option<GenerationMode>> {
        match &self.faking_level {
            None => Ok(None),
            Some(s) => GenerationMode::parse(s)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("unknown faking_level `{s}`"))),
        }
    }

    pub fn phase_config(&self) -> Result<PhaseConfig> {
        let cfg = PhaseConfig {
            phase: self.parsed_phase()?,
            generator: self.generator.clone(),
            faking_level: self.parsed_level()?,
            llm_ratio: self.llm_ratio,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Condition for one sweep point: the configured phase at ratio t.
    pub fn phase_config_at(&self, t: f64) -> Result<PhaseConfig> {
        let cfg = PhaseConfig {
            phase: self.parsed_phase()?,
            generator: self.generator.clone(),
            faking_level: self.parsed_level()?,
            llm_ratio: Some(t),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Report cutoffs and familiarity-analysis knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub ks: Vec<usize>,
    pub ppl_order: usize,
    pub ppl_alpha: f64,
    /// Precomputed `news_id perplexity` file; absent trains an n-gram LM
    /// on the human items.
    pub ppl_file: Option<PathBuf>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            ks: vec![5, 10],
            ppl_order: 2,
            ppl_alpha: 0.1,
            ppl_file: None,
        }
    }
}

/// Where outputs land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

/// Seed-complete description of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub phase: PhaseSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.corpus.pipeline_params();
        if p.h_min < 1 || p.h_max < p.h_min {
            return Err(Error::Config(format!(
                "history window {}..{} is invalid",
                p.h_min, p.h_max
            )));
        }
        if p.k < 2 || !p.k.is_multiple_of(2) {
            return Err(Error::Config(format!("k {} must be even and >= 2", p.k)));
        }
        if !(p.val_frac >= 0.0 && p.test_frac >= 0.0 && p.val_frac + p.test_frac < 1.0) {
            return Err(Error::Config(format!(
                "split fractions {}/{} must be nonnegative and sum below 1",
                p.val_frac, p.test_frac
            )));
        }
        self.model.model_config().validate()?;
        if self.model.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".to_string()));
        }
        self.train.train_config().validate()?;
        for &lr in &self.train.lr_grid {
            if lr.is_nan() || lr <= 0.0 {
                return Err(Error::Config(format!("lr_grid entry {lr} must be positive")));
            }
        }
        self.phase.phase_config()?;
        for &t in &self.phase.sweep {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return Err(Error::Config(format!("sweep entry {t} outside [0, 1]")));
            }
        }
        if self.metrics.ks.is_empty() || self.metrics.ks.contains(&0) {
            return Err(Error::Config(
                "metrics.ks must be a nonempty list of positive cutoffs".to_string(),
            ));
        }
        if !(1..=3).contains(&self.metrics.ppl_order) {
            return Err(Error::Config(format!(
                "ppl_order {} outside 1..=3",
                self.metrics.ppl_order
            )));
        }
        if self.metrics.ppl_alpha.is_nan() || self.metrics.ppl_alpha <= 0.0 {
            return Err(Error::Config(format!(
                "ppl_alpha {} must be positive",
                self.metrics.ppl_alpha
            )));
        }
        Ok(())
    }

    /// Replace every section seed, making one flag reseed the whole run.
    pub fn override_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.phase.seed = seed;
    }

    /// SHA-256 over the canonical serialized form, hex-encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let out: [u8; 32] = Sha256::digest(&bytes).into();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
