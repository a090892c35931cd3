//! Flat TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Phase;
use crate::error::{Error, Result};
use crate::noising::{NoiseParams, ObjectiveMix};
use crate::relations::Relation;
use crate::training::PhaseConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub score_threshold: f64,

    pub mask_rate: f64,
    pub delete_rate: f64,
    pub infill_fraction: f64,
    pub infill_mean_span: f64,
    pub mix_mask: f64,
    pub mix_delete: f64,
    pub mix_infill: f64,
    pub mix_permute: f64,

    pub backend: String,
    pub bigram_alpha: f64,

    pub phase1_epochs: u32,
    pub phase1_learning_rate: f64,
    pub phase1_batch_size: usize,
    pub phase2_epochs: u32,
    pub phase2_learning_rate: f64,
    pub phase2_batch_size: usize,
    pub validation_fraction: f64,
    pub phase1_scripted_losses: Option<Vec<f64>>,
    pub phase2_scripted_losses: Option<Vec<f64>>,

    pub beam_width: usize,
    pub num_return: usize,
    pub max_len: usize,
    pub relations: Option<Vec<String>>,

    pub top_k: usize,
    pub embed_dim: usize,
    pub embed_seed: u64,

    pub extrinsic_epochs: u32,
    pub extrinsic_learning_rate: f64,
    pub extrinsic_batch_size: usize,
    pub extrinsic_validation_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let noise = NoiseParams::default();
        let p1 = PhaseConfig::phase1();
        let p2 = PhaseConfig::phase2();
        let ex = PhaseConfig::extrinsic();
        RunConfig {
            seed: 0,
            score_threshold: crate::corpus::DEFAULT_SCORE_THRESHOLD,
            mask_rate: noise.mask_rate,
            delete_rate: noise.delete_rate,
            infill_fraction: noise.infill_fraction,
            infill_mean_span: noise.infill_mean_span,
            mix_mask: noise.mix.mask,
            mix_delete: noise.mix.delete,
            mix_infill: noise.mix.infill,
            mix_permute: noise.mix.permute,
            backend: "bigram".into(),
            bigram_alpha: 0.1,
            phase1_epochs: p1.epochs,
            phase1_learning_rate: p1.learning_rate,
            phase1_batch_size: p1.batch_size,
            phase2_epochs: p2.epochs,
            phase2_learning_rate: p2.learning_rate,
            phase2_batch_size: p2.batch_size,
            validation_fraction: p1.validation_fraction,
            phase1_scripted_losses: None,
            phase2_scripted_losses: None,
            beam_width: crate::inference::DEFAULT_NUM_RETURN,
            num_return: crate::inference::DEFAULT_NUM_RETURN,
            max_len: 16,
            relations: None,
            top_k: crate::inference::DEFAULT_TOP_K,
            embed_dim: 64,
            embed_seed: 0,
            extrinsic_epochs: ex.epochs,
            extrinsic_learning_rate: 0.5,
            extrinsic_batch_size: ex.batch_size,
            extrinsic_validation_fraction: ex.validation_fraction,
            seeds: vec![1, 2, 3],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::in_file(path, e.into()))?;
        Self::from_toml(&text).map_err(|e| Error::in_file(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            ));
        }
        if self.backend != "bigram" {
            return bad(format!("unsupported backend `{}`", self.backend));
        }
        if self.bigram_alpha <= 0.0 {
            return bad("bigram_alpha must be positive".into());
        }
        if self.num_return < 1 || self.beam_width < self.num_return {
            return bad("need beam_width >= num_return >= 1".into());
        }
        if self.max_len < 1 || self.top_k < 1 {
            return bad("max_len and top_k must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        self.noise_params().validate()?;
        self.relation_list()?;
        for phase in [Phase::Pretrain, Phase::Knowledge, Phase::Extrinsic] {
            self.phase_config(phase)
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        crate::backend::make_hash_embedder(self.embed_dim, self.embed_seed)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams {
            mask_rate: self.mask_rate,
            delete_rate: self.delete_rate,
            infill_fraction: self.infill_fraction,
            infill_mean_span: self.infill_mean_span,
            mix: ObjectiveMix {
                mask: self.mix_mask,
                delete: self.mix_delete,
                infill: self.mix_infill,
                permute: self.mix_permute,
            },
        }
    }

    pub fn phase_config(&self, phase: Phase) -> PhaseConfig {
        match phase {
            Phase::Pretrain => PhaseConfig {
                phase,
                epochs: self.phase1_epochs,
                learning_rate: self.phase1_learning_rate,
                batch_size: self.phase1_batch_size,
                validation_fraction: self.validation_fraction,
                seed: self.seed,
            },
            Phase::Knowledge => PhaseConfig {
                phase,
                epochs: self.phase2_epochs,
                learning_rate: self.phase2_learning_rate,
                batch_size: self.phase2_batch_size,
                validation_fraction: self.validation_fraction,
                seed: self.seed,
            },
            Phase::Extrinsic => PhaseConfig {
                phase,
                epochs: self.extrinsic_epochs,
                learning_rate: self.extrinsic_learning_rate,
                batch_size: self.extrinsic_batch_size,
                validation_fraction: self.extrinsic_validation_fraction,
                seed: self.seed,
            },
        }
    }

    pub fn relation_list(&self) -> Result<Vec<Relation>> {
        match &self.relations {
            None => Ok(Relation::ALL.to_vec()),
            Some(names) if names.is_empty() => {
                Err(Error::Config("relations must not be empty".into()))
            }
            Some(names) => names.iter().map(|n| Relation::from_name(n)).collect(),
        }
    }
}
