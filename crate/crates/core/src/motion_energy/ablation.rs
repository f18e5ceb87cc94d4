use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum V1Nonlinearity {
    #[default]
    Square,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MtNonlinearity {
    #[default]
    RectifiedSquare,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Channel,
    Instance,
    None,
}

/// How a layer group of the motion energy model is treated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Reference weights, no gradient.
    #[default]
    Fix,
    /// Start from the reference weights and train.
    Finetune,
    /// Seeded random initialization, trained.
    Scratch,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fix" => Ok(TrainMode::Fix),
            "finetune" => Ok(TrainMode::Finetune),
            "scratch" => Ok(TrainMode::Scratch),
            other => Err(Error::Config(format!("invalid training mode `{other}`"))),
        }
    }
}

impl TrainMode {
    pub fn is_trainable(self) -> bool {
        self != TrainMode::Fix
    }
}

/// Training mode of each layer group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LayerModes {
    pub v1_linear: TrainMode,
    pub v1_blur: TrainMode,
    pub mt_linear: TrainMode,
    pub mt_blur: TrainMode,
}

impl LayerModes {
    pub fn any_trainable(&self) -> bool {
        [self.v1_linear, self.v1_blur, self.mt_linear, self.mt_blur]
            .iter()
            .any(|m| m.is_trainable())
    }
}

/// Layer replacements and removals for the motion energy model.
///
/// With `include_mt_stage == false` the MT switches are ignored and the V1
/// output is the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub v1_nonlinearity: V1Nonlinearity,
    pub mt_nonlinearity: MtNonlinearity,
    pub norm_kind: NormKind,
    pub include_v1_blur: bool,
    pub include_mt_blur: bool,
    pub include_mt_linear: bool,
    pub include_mt_stage: bool,
    pub training: LayerModes,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            v1_nonlinearity: V1Nonlinearity::Square,
            mt_nonlinearity: MtNonlinearity::RectifiedSquare,
            norm_kind: NormKind::Channel,
            include_v1_blur: true,
            include_mt_blur: true,
            include_mt_linear: true,
            include_mt_stage: true,
            training: LayerModes::default(),
        }
    }
}

impl AblationConfig {
    /// Output channel count for a bank with the given channel counts.
    pub fn output_channels(&self, n_v1: usize, n_mt: usize) -> usize {
        if self.include_mt_stage && self.include_mt_linear {
            n_mt
        } else {
            n_v1
        }
    }
}
