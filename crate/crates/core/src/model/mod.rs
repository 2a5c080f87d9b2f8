//! The full classifier: sub-sketch decomposition, shared CNN over 12 frames,
//! temporal LSTM, caption encoder, and a three-layer decoder.

mod ablation;
mod train;

pub use ablation::{ablation_rows, AblationSwitches};
pub use train::{train, EpochLog, TrainLog};

use crate::encoders::{
    temporal_graph, text_graph, visual_graph, CaptionFeaturizer, EncoderConfig, Fusion, HashedBagOfWords,
    TemporalParams, TextParams, VisualParams,
};
use crate::sketch::{decompose, rasterize, Sketch, SketchError, SUB_SKETCH_COUNT};
use crate::tensor::{
    read_checkpoint, softmax, write_checkpoint, AdamConfig, FocalLossConfig, ParamId, ParamSet, Tape, Tensor,
    TensorError, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch} on sample `{sample_id}`")]
    NonFiniteLoss { epoch: usize, sample_id: String, loss: f64 },
    #[error("invalid ablation switches: {0}")]
    InvalidSwitchCombination(String),
    #[error("checkpoint does not match its configuration: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Focal,
    Ce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder_dims: Vec<usize>,
    pub loss: LossKind,
    pub gamma: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a lower mean training loss.
    pub patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub freeze_text: bool,
    #[serde(default)]
    pub no_caption: bool,
    #[serde(default)]
    pub no_temporal: bool,
}

impl ModelConfig {
    /// 96×96 reference encoder, decoder 228→128→64→2.
    pub fn reference() -> Self {
        ModelConfig {
            encoder: EncoderConfig::reference(),
            decoder_dims: vec![228, 128, 64, 2],
            loss: LossKind::Focal,
            gamma: 2.0,
            alpha: None,
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: 100,
            patience: 20,
            seed: 7,
            freeze_text: false,
            no_caption: false,
            no_temporal: false,
        }
    }

    /// Reference decoder on the reduced [`EncoderConfig::desk`] encoder.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(),
            ..ModelConfig::reference()
        }
    }

    /// Smallest configuration that still exercises every component.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                image_size: 16,
                channels: vec![2, 4],
                flatten_dim: 16,
                lstm_hidden: 8,
                temporal_dim: 100,
                text_dim: 8,
                text_buckets: 64,
                fusion: Fusion::Last,
                variant: Default::default(),
            },
            decoder_dims: vec![108, 16, 8, 2],
            ..ModelConfig::reference()
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.encoder.temporal_dim + self.encoder.text_dim
    }

    pub fn focal(&self) -> FocalLossConfig {
        FocalLossConfig {
            gamma: self.gamma,
            alpha: self.alpha,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: String| Err(TensorError::InvalidConfig(m));
        self.encoder.validate()?;
        self.adam.validate()?;
        self.focal().validate()?;
        if self.decoder_dims.len() < 2 || self.decoder_dims.contains(&0) {
            return bad(format!("decoder dims {:?} need at least two positive sizes", self.decoder_dims));
        }
        if self.decoder_dims[0] != self.fused_dim() {
            return bad(format!(
                "decoder input {} != temporal {} + text {}",
                self.decoder_dims[0], self.encoder.temporal_dim, self.encoder.text_dim
            ));
        }
        if self.decoder_dims.last() != Some(&2) {
            return bad("decoder must end in 2 classes".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLabel {
    NotDepressed,
    Depressed,
}

impl PredictedLabel {
    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            PredictedLabel::Depressed
        } else {
            PredictedLabel::NotDepressed
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Cache key of the caption an assessment was computed with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRef {
    pub sketch_hash: String,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub sketch_id: String,
    pub logits: [f64; 2],
    pub probability_depressed: f64,
    pub predicted_label: PredictedLabel,
    pub caption_used: Option<CaptionRef>,
}

impl Assessment {
    pub fn from_logits(sketch_id: impl Into<String>, logits: [f64; 2]) -> Self {
        let p = softmax(&logits);
        // ties go to the first class
        let label = if logits[1] > logits[0] { 1 } else { 0 };
        Assessment {
            sketch_id: sketch_id.into(),
            logits,
            probability_depressed: p[1],
            predicted_label: PredictedLabel::from_index(label),
            caption_used: None,
        }
    }
}

/// Model inputs computed once per sketch: 12 rasterized frames and the
/// featurized caption.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sketch_id: String,
    /// Twelve `(3, S, S)` frames.
    pub frames: Vec<Tensor>,
    pub caption_input: Vec<f64>,
    /// 1 = depressed. Ignored at inference.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Handles {
    visual: VisualParams,
    temporal: Option<TemporalParams>,
    mean_proj: Option<(ParamId, ParamId)>,
    text: TextParams,
    decoder: Vec<(ParamId, ParamId)>,
}

impl Handles {
    fn init(params: &mut ParamSet, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let enc = &cfg.encoder;
        let visual = VisualParams::init(params, enc, &mut rng);
        let (temporal, mean_proj) = if cfg.no_temporal {
            let w = params.add(
                "temporal.mean_proj.weight",
                Tensor::fan_in_uniform(&[enc.temporal_dim, enc.flatten_dim], enc.flatten_dim, &mut rng),
            );
            let b = params.add(
                "temporal.mean_proj.bias",
                Tensor::fan_in_uniform(&[enc.temporal_dim], enc.flatten_dim, &mut rng),
            );
            (None, Some((w, b)))
        } else {
            (Some(TemporalParams::init(params, enc, &mut rng)), None)
        };
        let text = TextParams::init(params, enc, &mut rng);
        let decoder = cfg
            .decoder_dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let w = params.add(
                    format!("decoder.{i}.weight"),
                    Tensor::fan_in_uniform(&[d[1], d[0]], d[0], &mut rng),
                );
                let b = params.add(format!("decoder.{i}.bias"), Tensor::fan_in_uniform(&[d[1]], d[0], &mut rng));
                (w, b)
            })
            .collect();
        Handles {
            visual,
            temporal,
            mean_proj,
            text,
            decoder,
        }
    }
}

/// Parameters plus the configuration that shaped them.
#[derive(Clone)]
pub struct VsLlm {
    config: ModelConfig,
    params: ParamSet,
    handles: Handles,
    featurizer: Arc<dyn CaptionFeaturizer>,
}

impl std::fmt::Debug for VsLlm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VsLlm")
            .field("config", &self.config)
            .field("parameters", &self.params.scalar_count())
            .finish_non_exhaustive()
    }
}

impl VsLlm {
    /// Freshly initialized model, seeded from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let handles = Handles::init(&mut params, &config);
        let featurizer = Arc::new(HashedBagOfWords::new(config.encoder.text_buckets));
        let mut model = VsLlm {
            config,
            params,
            handles,
            featurizer,
        };
        model.apply_freeze();
        Ok(model)
    }

    fn apply_freeze(&mut self) {
        let frozen = self.config.freeze_text;
        self.params.set_trainable(self.handles.text.weight, !frozen);
        self.params.set_trainable(self.handles.text.bias, !frozen);
    }

    /// Swap the caption featurizer; its input dimension must equal
    /// `text_buckets`.
    pub fn with_featurizer(mut self, featurizer: Arc<dyn CaptionFeaturizer>) -> Result<Self, ModelError> {
        if featurizer.input_dim() != self.config.encoder.text_buckets {
            return Err(TensorError::InvalidConfig(format!(
                "featurizer input {} != text_buckets {}",
                featurizer.input_dim(),
                self.config.encoder.text_buckets
            ))
            .into());
        }
        self.featurizer = featurizer;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Handles of the final decoder layer.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        *self.handles.decoder.last().expect("decoder has layers")
    }

    pub fn text_params(&self) -> TextParams {
        self.handles.text
    }

    pub fn prepare(&self, sketch: &Sketch, caption: &str, label: usize) -> Result<PreparedSample, ModelError> {
        let size = self.config.encoder.image_size;
        let seq = decompose(sketch)?;
        let frames = seq
            .sub_sketches
            .iter()
            .map(|s| {
                let img = rasterize(s, size, size)?;
                Ok(Tensor::new(vec![3, size as usize, size as usize], img.to_chw())?)
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(PreparedSample {
            sketch_id: sketch.id().to_string(),
            frames,
            caption_input: self.featurizer.featurize(caption),
            label,
        })
    }

    /// Record the fused `(temporal, text)` vector on `tape`.
    pub fn fused_graph(&self, tape: &mut Tape<'_>, sample: &PreparedSample) -> Result<Var, ModelError> {
        if sample.frames.len() != SUB_SKETCH_COUNT {
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                detail: format!("expected {SUB_SKETCH_COUNT} frames, got {}", sample.frames.len()),
            }
            .into());
        }
        let h = &self.handles;
        let mut flats = Vec::with_capacity(SUB_SKETCH_COUNT);
        for frame in &sample.frames {
            let x = tape.constant(frame.clone());
            let pooled = visual_graph(tape, &h.visual, x)?;
            flats.push(tape.flatten(pooled));
        }
        let temporal = match (&h.temporal, h.mean_proj) {
            (Some(tp), _) => {
                let seq = tape.stack(&flats)?;
                let steps = temporal_graph(tape, tp, seq)?;
                match self.config.encoder.fusion {
                    Fusion::Last => tape.row(steps, SUB_SKETCH_COUNT - 1)?,
                    Fusion::Mean => {
                        let rows = (0..SUB_SKETCH_COUNT)
                            .map(|t| tape.row(steps, t))
                            .collect::<Result<Vec<_>, _>>()?;
                        tape.mean(&rows)?
                    }
                }
            }
            (None, Some((w, b))) => {
                let avg = tape.mean(&flats)?;
                let (wv, bv) = (tape.param(w), tape.param(b));
                tape.linear(avg, wv, Some(bv))?
            }
            (None, None) => unreachable!("temporal branch always initialized"),
        };
        let text = if self.config.no_caption {
            tape.constant(Tensor::zeros(&[self.config.encoder.text_dim]))
        } else {
            let bag = tape.constant(Tensor::vector(sample.caption_input.clone()));
            text_graph(tape, &h.text, bag)?
        };
        Ok(tape.concat(&[temporal, text])?)
    }

    /// Record the decoder on a fused vector, returning `[2]` logits.
    pub fn decoder_graph(&self, tape: &mut Tape<'_>, fused: Var) -> Result<Var, ModelError> {
        let mut x = fused;
        let last = self.handles.decoder.len() - 1;
        for (i, &(w, b)) in self.handles.decoder.iter().enumerate() {
            let (wv, bv) = (tape.param(w), tape.param(b));
            x = tape.linear(x, wv, Some(bv))?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn logits_graph(&self, tape: &mut Tape<'_>, sample: &PreparedSample) -> Result<Var, ModelError> {
        let fused = self.fused_graph(tape, sample)?;
        self.decoder_graph(tape, fused)
    }

    /// Scalar training loss for one sample under the configured loss.
    pub fn loss_graph(&self, tape: &mut Tape<'_>, sample: &PreparedSample) -> Result<(Var, Var), ModelError> {
        let logits = self.logits_graph(tape, sample)?;
        let row = tape.reshape(logits, &[1, 2])?;
        let loss = match self.config.loss {
            LossKind::Focal => tape.focal_loss(row, &[sample.label], &self.config.focal())?,
            LossKind::Ce => tape.softmax_cross_entropy(row, &[sample.label])?,
        };
        Ok((loss, logits))
    }

    pub fn fused_features(&self, sample: &PreparedSample) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::with_params(&self.params);
        let v = self.fused_graph(&mut tape, sample)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Decoder applied to an arbitrary fused vector.
    pub fn decode(&self, fused: &[f64]) -> Result<[f64; 2], ModelError> {
        let mut tape = Tape::with_params(&self.params);
        let x = tape.constant(Tensor::vector(fused.to_vec()));
        let y = self.decoder_graph(&mut tape, x)?;
        let d = tape.value(y).data();
        Ok([d[0], d[1]])
    }

    pub fn logits(&self, sample: &PreparedSample) -> Result<[f64; 2], ModelError> {
        let mut tape = Tape::with_params(&self.params);
        let y = self.logits_graph(&mut tape, sample)?;
        let d = tape.value(y).data();
        Ok([d[0], d[1]])
    }

    pub fn forward(&self, sketch: &Sketch, caption: &str) -> Result<Assessment, ModelError> {
        let sample = self.prepare(sketch, caption, 0)?;
        Ok(Assessment::from_logits(sketch.id(), self.logits(&sample)?))
    }

    pub fn save(&self, out: impl Write) -> Result<(), ModelError> {
        let cfg = serde_json::to_value(&self.config).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        write_checkpoint(out, &self.params, Some(&cfg))?;
        Ok(())
    }

    /// Read a checkpoint written by [`VsLlm::save`]; every tensor must match
    /// the stored configuration in name and shape.
    pub fn load(input: impl BufRead) -> Result<Self, ModelError> {
        let ckpt = read_checkpoint(input)?;
        let cfg_value = ckpt
            .model_config
            .ok_or_else(|| ModelError::CheckpointMismatch("no model_config in header".into()))?;
        let config: ModelConfig = serde_json::from_value(cfg_value)
            .map_err(|e| ModelError::CheckpointMismatch(format!("bad model_config: {e}")))?;
        let mut model = VsLlm::new(config)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        let got: Vec<(String, Vec<usize>)> = ckpt
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        if expected != got {
            let first = expected
                .iter()
                .zip(&got)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {a:?}, found {b:?}"))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), got.len()));
            return Err(ModelError::CheckpointMismatch(first));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            *model.params.get_mut(id) = ckpt.params.get(id).clone();
        }
        Ok(model)
    }
}
