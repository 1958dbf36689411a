//! Per-stage training configuration.

use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Pretrain,
    Asr,
    ZeroShot,
    FewShotClusterPrompt,
    FullFinetune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageKind,
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// (audio-only, visual-only, both) per-utterance probabilities; pretrain.
    pub modality_dropout: (f64, f64, f64),
    /// Expected fraction of frames covered by mask spans; pretrain.
    pub mask_coverage: f64,
    /// Contiguous span length in frames; pretrain.
    pub mask_span: usize,
    /// Cluster/train alternations; pretrain.
    pub pretrain_rounds: usize,
    pub kmeans_iters: usize,
    /// Tunable groups; full fine-tune.
    pub layer_selectors: Vec<String>,
    /// Cluster-prompt N override; few-shot.
    pub prompt_clusters: Option<usize>,
    /// Frozen-encoder contract for the ASR stage; false reproduces the
    /// collapse ablation.
    pub encoder_frozen: bool,
    pub train_modality: Modality,
    pub val_modality: Modality,
    pub val_interval: usize,
    pub log_interval: usize,
}

impl StageConfig {
    pub fn pretrain(seed: u64) -> Self {
        StageConfig {
            stage: StageKind::Pretrain,
            steps: 4000,
            batch_size: 16,
            peak_lr: 5e-4,
            warmup_fraction: 0.5,
            seed,
            modality_dropout: (0.25, 0.25, 0.5),
            mask_coverage: 0.3,
            mask_span: 3,
            pretrain_rounds: 2,
            kmeans_iters: 25,
            layer_selectors: Vec::new(),
            prompt_clusters: None,
            encoder_frozen: true,
            train_modality: Modality::AudioVisual,
            val_modality: Modality::AudioVisual,
            val_interval: 500,
            log_interval: 50,
        }
    }

    pub fn asr(seed: u64) -> Self {
        StageConfig {
            stage: StageKind::Asr,
            steps: 3000,
            train_modality: Modality::Audio,
            val_modality: Modality::Audio,
            ..StageConfig::pretrain(seed)
        }
    }

    pub fn cluster_prompt(seed: u64) -> Self {
        StageConfig {
            stage: StageKind::FewShotClusterPrompt,
            steps: 1000,
            train_modality: Modality::Visual,
            val_modality: Modality::Visual,
            ..StageConfig::pretrain(seed)
        }
    }

    pub fn full_finetune(seed: u64) -> Self {
        StageConfig {
            stage: StageKind::FullFinetune,
            steps: 2000,
            train_modality: Modality::Visual,
            val_modality: Modality::Visual,
            ..StageConfig::pretrain(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return Err(Error::Config("warmup fraction must be in (0, 1]".into()));
        }
        let (a, v, b) = self.modality_dropout;
        for p in [a, v, b] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("modality dropout probabilities must be in [0,1]".into()));
            }
        }
        if (a + v + b - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "modality dropout cases must sum to 1, got {}",
                a + v + b
            )));
        }
        if self.mask_span == 0 {
            return Err(Error::Config("mask span must be positive".into()));
        }
        if self.pretrain_rounds == 0 {
            return Err(Error::Config("pretraining needs at least one round".into()));
        }
        // Validation is only meaningful in the modality the stage trains on.
        if matches!(
            self.stage,
            StageKind::Asr | StageKind::FewShotClusterPrompt | StageKind::FullFinetune
        ) && self.val_modality != self.train_modality
        {
            return Err(Error::Config(format!(
                "validation modality {} differs from training modality {}",
                self.val_modality.as_str(),
                self.train_modality.as_str()
            )));
        }
        Ok(())
    }
}
