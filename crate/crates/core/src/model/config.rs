//! Model and training configuration.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Side length of a square patch, shared by every tokenizer and head.
/// Part of the checkpoint contract.
pub const PATCH: usize = 16;

/// How per-patch fusion weights are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Linear form over the concatenated token pair, shared across branches.
    Content,
    /// One free logit per patch index, separate per branch.
    Positional,
}

/// Architecture shape. Defaults are the desk-scale setup; `d = 384`
/// matches the full-size configuration the design is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub backbone_blocks: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub window: Option<usize>,
    pub template_size: usize,
    pub search_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 96,
            heads: 4,
            backbone_blocks: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            window: None,
            template_size: 64,
            search_size: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding size {} must be a positive multiple of {} heads",
                self.d, self.heads
            )));
        }
        for (name, size) in [("template_size", self.template_size), ("search_size", self.search_size)] {
            if size == 0 || size % PATCH != 0 {
                return Err(Error::Config(format!(
                    "{name} = {size} is not a positive multiple of the patch size {PATCH}"
                )));
            }
        }
        if let Some(w) = self.window {
            for (name, grid) in [("template", self.template_grid()), ("search", self.search_grid())] {
                if w == 0 || grid % w != 0 {
                    return Err(Error::Config(format!(
                        "window {w} does not divide the {name} grid side {grid}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Patch-grid side of the template crop.
    pub fn template_grid(&self) -> usize {
        self.template_size / PATCH
    }

    /// Patch-grid side of the search crop.
    pub fn search_grid(&self) -> usize {
        self.search_size / PATCH
    }

    pub fn template_tokens(&self) -> usize {
        self.template_grid() * self.template_grid()
    }

    pub fn search_tokens(&self) -> usize {
        self.search_grid() * self.search_grid()
    }
}

/// Full training recipe as read from JSON. The key set is fixed; unknown
/// or missing keys are rejected so configs cannot silently drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub heads: usize,
    pub backbone_blocks: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub window: Option<usize>,
    pub template_size: usize,
    pub search_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub gate_mode: GateMode,
    pub lambda_iou: f64,
    pub lambda_l1: f64,
}

impl TrainConfig {
    /// Desk-scale recipe used by the synthetic experiments.
    pub fn desk() -> Self {
        TrainConfig {
            d: 16,
            heads: 4,
            backbone_blocks: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            window: None,
            template_size: 64,
            search_size: 128,
            lr: 0.05,
            momentum: 0.9,
            epochs: 3,
            seed: 7,
            gate_mode: GateMode::Content,
            lambda_iou: 2.0,
            lambda_l1: 5.0,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            backbone_blocks: self.backbone_blocks,
            encoder_blocks: self.encoder_blocks,
            decoder_blocks: self.decoder_blocks,
            window: self.window,
            template_size: self.template_size,
            search_size: self.search_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive and finite", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum = {} must lie in [0, 1)", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.lambda_iou < 0.0 || self.lambda_l1 < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
