use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterKind;
use crate::error::TrainError;
use crate::model::{Component, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Speech-to-text alignment: transcribe the instruction from audio.
    Stage1,
    /// Response training on top of a stage-1 bundle.
    Stage2,
    /// The stage-2 objective from scratch.
    EndToEnd,
}

impl Stage {
    /// Tag recorded on a bundle that finished this stage.
    pub fn tag(&self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.tag())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "stage1" => Ok(Stage::Stage1),
            "2" | "stage2" => Ok(Stage::Stage2),
            "e2e" | "end_to_end" => Ok(Stage::EndToEnd),
            other => Err(format!("unknown stage `{other}` (expected 1, 2 or e2e)")),
        }
    }
}

/// Instruction modality used for the response objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainModality {
    Speech,
    Text,
    /// Alternates speech and text by sample position.
    Mixed,
}

impl FromStr for TrainModality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speech" => Ok(TrainModality::Speech),
            "text" => Ok(TrainModality::Text),
            "mixed" => Ok(TrainModality::Mixed),
            other => Err(format!("unknown modality `{other}` (expected speech, text or mixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeFlags {
    pub audio_encoder: bool,
    pub visual_encoder: bool,
    pub audio_adapter: bool,
    pub visual_adapter: bool,
    pub lm: bool,
}

impl FreezeFlags {
    pub fn is_frozen(&self, c: Component) -> bool {
        match c {
            Component::AudioEncoder => self.audio_encoder,
            Component::VisualEncoder => self.visual_encoder,
            Component::AudioAdapter => self.audio_adapter,
            Component::VisualAdapter => self.visual_adapter,
            Component::Lm => self.lm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub min_lr: f64,
    pub warmup_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stage: Stage,
    pub adapter: AdapterKind,
    pub freeze: FreezeFlags,
    pub modality: TrainModality,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Stop once this many steps (counted from the start of the run) are done.
    /// The schedule still spans all epochs, so a later call resumes exactly.
    pub max_steps: Option<usize>,
    /// Let stage 2 start from a bundle without the stage-1 tag.
    pub allow_missing_stage1: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_lr: 1e-5,
            min_lr: 1e-5,
            warmup_lr: 1e-5,
            warmup_steps: 1000,
            weight_decay: 0.05,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            stage: Stage::Stage1,
            adapter: AdapterKind::Linear,
            freeze: FreezeFlags::default(),
            modality: TrainModality::Speech,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
            max_steps: None,
            allow_missing_stage1: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.init_lr > 0.0) {
            return bad(format!("init_lr must be positive, got {}", self.init_lr));
        }
        if !(self.min_lr >= 0.0 && self.warmup_lr >= 0.0) {
            return bad("min_lr and warmup_lr must be non-negative".into());
        }
        if self.min_lr > self.init_lr {
            return bad(format!("min_lr {} exceeds init_lr {}", self.min_lr, self.init_lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive".into());
            }
        }
        Ok(())
    }

    /// Components updated in this run: those used by the stage, minus frozen ones.
    pub fn trainable(&self) -> Trainable {
        let visual = self.stage != Stage::Stage1;
        let f = &self.freeze;
        Trainable {
            audio_encoder: !f.audio_encoder,
            visual_encoder: visual && !f.visual_encoder,
            audio_adapter: !f.audio_adapter,
            visual_adapter: visual && !f.visual_adapter,
            lm: !f.lm,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, TrainError> {
        toml::from_str(s).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
