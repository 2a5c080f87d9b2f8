use super::{LossKind, ModelConfig, ModelError};
use crate::encoders::EncoderVariant;
use serde::{Deserialize, Serialize};

/// Branch removals and substitutions applied on top of a base configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AblationSwitches {
    #[serde(default)]
    pub no_caption: bool,
    #[serde(default)]
    pub no_temporal: bool,
    #[serde(default)]
    pub loss_variant: Option<LossKind>,
    #[serde(default)]
    pub encoder_variant: Option<EncoderVariant>,
}

impl AblationSwitches {
    pub fn apply(&self, base: &ModelConfig) -> Result<ModelConfig, ModelError> {
        let mut cfg = base.clone();
        cfg.no_caption |= self.no_caption;
        cfg.no_temporal |= self.no_temporal;
        if let Some(loss) = self.loss_variant {
            cfg.loss = loss;
        }
        if let Some(variant) = &self.encoder_variant {
            cfg.encoder.variant = variant.clone();
            let (c, s) = cfg
                .encoder
                .visual_output()
                .map_err(|e| ModelError::InvalidSwitchCombination(e.to_string()))?;
            cfg.encoder.flatten_dim = c * s * s;
        }
        if cfg.no_caption && cfg.freeze_text {
            return Err(ModelError::InvalidSwitchCombination(
                "freeze_text has no effect when the caption branch is removed".into(),
            ));
        }
        cfg.validate()
            .map_err(|e| ModelError::InvalidSwitchCombination(e.to_string()))?;
        Ok(cfg)
    }
}

/// The standard comparison rows, in table order: caption branch removed,
/// temporal branch removed, cross-entropy instead of focal loss, full model.
pub fn ablation_rows() -> Vec<(&'static str, AblationSwitches)> {
    vec![
        (
            "no_caption",
            AblationSwitches {
                no_caption: true,
                loss_variant: Some(LossKind::Focal),
                ..Default::default()
            },
        ),
        (
            "no_temporal",
            AblationSwitches {
                no_temporal: true,
                loss_variant: Some(LossKind::Focal),
                ..Default::default()
            },
        ),
        (
            "ce",
            AblationSwitches {
                loss_variant: Some(LossKind::Ce),
                ..Default::default()
            },
        ),
        (
            "full",
            AblationSwitches {
                loss_variant: Some(LossKind::Focal),
                ..Default::default()
            },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_rows_in_order() {
        let names: Vec<_> = ablation_rows().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["no_caption", "no_temporal", "ce", "full"]);
        let base = ModelConfig::desk();
        for (_, sw) in ablation_rows() {
            sw.apply(&base).unwrap();
        }
        let ce = ablation_rows()[2].1.apply(&base).unwrap();
        assert_eq!(ce.loss, LossKind::Ce);
        assert!(!ce.no_caption && !ce.no_temporal);
    }

    #[test]
    fn encoder_variant_recomputes_flatten() {
        let sw = AblationSwitches {
            encoder_variant: Some(EncoderVariant::GridProjection { channels: 512, seed: 3 }),
            ..Default::default()
        };
        let cfg = sw.apply(&ModelConfig::desk()).unwrap();
        assert_eq!(cfg.encoder.flatten_dim, 4608);
    }

    #[test]
    fn invalid_combinations() {
        let base = ModelConfig {
            freeze_text: true,
            ..ModelConfig::desk()
        };
        let sw = AblationSwitches {
            no_caption: true,
            ..Default::default()
        };
        assert!(matches!(sw.apply(&base), Err(ModelError::InvalidSwitchCombination(_))));
        let zero = AblationSwitches {
            encoder_variant: Some(EncoderVariant::GridProjection { channels: 0, seed: 1 }),
            ..Default::default()
        };
        assert!(zero.apply(&ModelConfig::desk()).is_err());
    }
}
