//! Visual, temporal and text feature extractors.
//!
//! Each extractor comes in two forms: a graph builder that records onto a
//! caller-owned [`Tape`] (used by the model for training), and a plain
//! function over a [`ParamSet`] returning a typed feature (used for
//! inspection and inference).

mod temporal;
mod text;
mod visual;

pub use temporal::{encode_sequence, temporal_graph, TemporalFeature, TemporalParams};
pub use text::{
    encode_text, fnv1a64, text_graph, tokenize, CaptionFeaturizer, HashedBagOfWords, TextFeature,
    TextParams,
};
pub use visual::{
    encode_image, visual_graph, FrozenBackbone, GridProjectionBackbone, VisualFeature,
    VisualParams,
};

use crate::sketch::SUB_SKETCH_COUNT;
use crate::tensor::{ParamId, ParamSet, TensorError};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[cfg(doc)]
use crate::tensor::Tape;

/// How the 12-step temporal sequence is reduced to one fusion vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Final timestep (the complete sketch).
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Trainable stride-2 CNN followed by 2×2 max pooling.
    #[default]
    Reference,
    /// Frozen backbone producing a `(channels, 7, 7)` map, pooled to 3×3.
    GridProjection { channels: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: u32,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub flatten_dim: usize,
    pub lstm_hidden: usize,
    pub temporal_dim: usize,
    pub text_dim: usize,
    pub text_buckets: usize,
    #[serde(default)]
    pub fusion: Fusion,
    #[serde(default)]
    pub variant: EncoderVariant,
}

pub const LSTM_LAYERS: usize = 2;

impl EncoderConfig {
    /// 96×96 input, four conv blocks 16→32→64→128, pooled to (128, 3, 3).
    pub fn reference() -> Self {
        EncoderConfig {
            image_size: 96,
            channels: vec![16, 32, 64, 128],
            flatten_dim: 128 * 9,
            lstm_hidden: 128,
            temporal_dim: 100,
            text_dim: 128,
            text_buckets: 4096,
            fusion: Fusion::Last,
            variant: EncoderVariant::Reference,
        }
    }

    /// Reduced configuration for single-core training runs: 24×24 input, two
    /// conv blocks 8→16 pooled to (16, 3, 3), LSTM hidden 32. Temporal and
    /// text dimensions are unchanged, so the decoder input stays 228.
    pub fn desk() -> Self {
        EncoderConfig {
            image_size: 24,
            channels: vec![8, 16],
            flatten_dim: 16 * 9,
            lstm_hidden: 32,
            ..EncoderConfig::reference()
        }
    }

    /// Spatial size and channel count of the pooled visual feature.
    pub fn visual_output(&self) -> Result<(usize, usize), TensorError> {
        match &self.variant {
            EncoderVariant::Reference => {
                let mut s = self.image_size as usize;
                for _ in &self.channels {
                    s = (s - 1) / 2 + 1;
                }
                if s < 2 {
                    return Err(TensorError::InvalidConfig(format!(
                        "image size {} too small for {} conv blocks",
                        self.image_size,
                        self.channels.len()
                    )));
                }
                let c = *self.channels.last().unwrap_or(&3);
                Ok((c, s / 2))
            }
            EncoderVariant::GridProjection { channels, .. } => Ok((*channels, 3)),
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| Err(TensorError::InvalidConfig(msg));
        if self.image_size < 16 {
            return bad(format!("image_size {} below 16", self.image_size));
        }
        if matches!(self.variant, EncoderVariant::Reference) && self.channels.is_empty() {
            return bad("reference encoder needs at least one conv block".into());
        }
        if self.channels.contains(&0)
            || matches!(self.variant, EncoderVariant::GridProjection { channels: 0, .. })
        {
            return bad("channel counts must be positive".into());
        }
        let (c, s) = self.visual_output()?;
        if c * s * s != self.flatten_dim {
            return bad(format!(
                "flatten_dim {} does not match encoder output {c}x{s}x{s} = {}",
                self.flatten_dim,
                c * s * s
            ));
        }
        for (name, v) in [
            ("lstm_hidden", self.lstm_hidden),
            ("temporal_dim", self.temporal_dim),
            ("text_dim", self.text_dim),
            ("text_buckets", self.text_buckets),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Handles for every encoder parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub visual: VisualParams,
    pub temporal: TemporalParams,
    pub text: TextParams,
}

impl EncoderParams {
    pub fn init(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self, TensorError> {
        cfg.validate()?;
        Ok(EncoderParams {
            visual: VisualParams::init(params, cfg, rng),
            temporal: TemporalParams::init(params, cfg, rng),
            text: TextParams::init(params, cfg, rng),
        })
    }

    pub fn resolve(params: &ParamSet, cfg: &EncoderConfig) -> Result<Self, TensorError> {
        cfg.validate()?;
        Ok(EncoderParams {
            visual: VisualParams::resolve(params, cfg)?,
            temporal: TemporalParams::resolve(params)?,
            text: TextParams::resolve(params)?,
        })
    }
}

pub(crate) fn lookup(params: &ParamSet, name: &str) -> Result<ParamId, TensorError> {
    params
        .id(name)
        .ok_or_else(|| TensorError::InvalidConfig(format!("missing parameter `{name}`")))
}

pub(crate) fn expect_steps(n: usize) -> Result<(), TensorError> {
    if n != SUB_SKETCH_COUNT {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "encode_sequence",
            detail: format!("expected {SUB_SKETCH_COUNT} timesteps, got {n}"),
        });
    }
    Ok(())
}
