use super::{lookup, EncoderConfig, EncoderVariant};
use crate::sketch::RasterImage;
use crate::tensor::{shape_err, ParamId, ParamSet, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pooled CNN output of one frame, shape `(C, 3, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeature(Tensor);

impl VisualFeature {
    pub fn new(tensor: Tensor) -> Result<Self, TensorError> {
        match tensor.shape() {
            [_, 3, 3] => Ok(VisualFeature(tensor)),
            s => Err(shape_err("visual_feature", format!("expected (C, 3, 3), got {s:?}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn flatten(&self) -> &[f64] {
        self.0.data()
    }
}

/// Externally supplied feature extractor producing a `(C, 7, 7)` map.
/// Its weights are never trained.
pub trait FrozenBackbone {
    fn channels(&self) -> usize;
    /// `image` is `(3, H, W)` in `[0, 1]`.
    fn features(&self, image: &Tensor) -> Result<Tensor, TensorError>;
}

/// Deterministic stand-in for a pretrained backbone: average-pools the image
/// onto a 7×7 grid and applies a fixed random 1×1 projection plus ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct GridProjectionBackbone {
    channels: usize,
    /// `[channels, 3]` projection followed by `[channels]` bias.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl GridProjectionBackbone {
    pub const GRID: usize = 7;

    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = (0..channels * 3).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let bias = (0..channels).map(|_| rng.random_range(-0.1..=0.1)).collect();
        GridProjectionBackbone { channels, weight, bias }
    }
}

impl FrozenBackbone for GridProjectionBackbone {
    fn channels(&self) -> usize {
        self.channels
    }

    fn features(&self, image: &Tensor) -> Result<Tensor, TensorError> {
        let g = Self::GRID;
        let (h, w) = match image.shape() {
            [3, h, w] if *h >= g && *w >= g => (*h, *w),
            s => return Err(shape_err("grid_backbone", format!("expected (3, H>=7, W>=7), got {s:?}"))),
        };
        let data = image.data();
        let mut cells = vec![0.0; 3 * g * g];
        for gy in 0..g {
            let (y0, y1) = (gy * h / g, (gy + 1) * h / g);
            for gx in 0..g {
                let (x0, x1) = (gx * w / g, (gx + 1) * w / g);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                for c in 0..3 {
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let row = &data[c * h * w + y * w..];
                        acc += row[x0..x1].iter().sum::<f64>();
                    }
                    cells[c * g * g + gy * g + gx] = acc / area;
                }
            }
        }
        let mut out = vec![0.0; self.channels * g * g];
        for k in 0..self.channels {
            for i in 0..g * g {
                let v = self.bias[k]
                    + (0..3).map(|c| self.weight[k * 3 + c] * cells[c * g * g + i]).sum::<f64>();
                out[k * g * g + i] = v.max(0.0);
            }
        }
        Tensor::new(vec![self.channels, g, g], out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualParams {
    /// `(weight, bias)` per conv block; empty for a frozen backbone.
    pub convs: Vec<(ParamId, ParamId)>,
    pub backbone: Option<GridProjectionBackbone>,
    pub image_size: usize,
}

impl VisualParams {
    pub fn init(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let backbone = match cfg.variant {
            EncoderVariant::Reference => {
                let mut c_in = 3;
                for (i, &c_out) in cfg.channels.iter().enumerate() {
                    let fan_in = c_in * 9;
                    let w = params.add(
                        format!("visual.conv{i}.weight"),
                        Tensor::fan_in_uniform(&[c_out, c_in, 3, 3], fan_in, rng),
                    );
                    let b = params.add(
                        format!("visual.conv{i}.bias"),
                        Tensor::fan_in_uniform(&[c_out], fan_in, rng),
                    );
                    convs.push((w, b));
                    c_in = c_out;
                }
                None
            }
            EncoderVariant::GridProjection { channels, seed } => Some(GridProjectionBackbone::new(channels, seed)),
        };
        VisualParams {
            convs,
            backbone,
            image_size: cfg.image_size as usize,
        }
    }

    pub fn resolve(params: &ParamSet, cfg: &EncoderConfig) -> Result<Self, TensorError> {
        let (convs, backbone) = match cfg.variant {
            EncoderVariant::Reference => {
                let convs = (0..cfg.channels.len())
                    .map(|i| {
                        Ok((
                            lookup(params, &format!("visual.conv{i}.weight"))?,
                            lookup(params, &format!("visual.conv{i}.bias"))?,
                        ))
                    })
                    .collect::<Result<Vec<_>, TensorError>>()?;
                (convs, None)
            }
            EncoderVariant::GridProjection { channels, seed } => {
                (Vec::new(), Some(GridProjectionBackbone::new(channels, seed)))
            }
        };
        Ok(VisualParams {
            convs,
            backbone,
            image_size: cfg.image_size as usize,
        })
    }
}

/// Record the visual encoder on `tape` for an image of shape `(3, S, S)`,
/// returning the pooled `(C, 3, 3)` map.
pub fn visual_graph(tape: &mut Tape<'_>, vp: &VisualParams, image: Var) -> Result<Var, TensorError> {
    let s = vp.image_size;
    if tape.shape(image) != [3, s, s] {
        return Err(shape_err(
            "encode_image",
            format!("expected (3, {s}, {s}), got {:?}", tape.shape(image)),
        ));
    }
    if let Some(backbone) = &vp.backbone {
        let map = backbone.features(tape.value(image))?;
        let map = tape.constant(map);
        return tape.max_pool2d(map, 3, 2);
    }
    let mut x = image;
    for &(w, b) in &vp.convs {
        let (wv, bv) = (tape.param(w), tape.param(b));
        let y = tape.conv2d(x, wv, Some(bv), 2, 1)?;
        x = tape.relu(y);
    }
    tape.max_pool2d(x, 2, 2)
}

/// Encode one rasterized frame; pixel values are scaled to `[0, 1]`.
pub fn encode_image(image: &RasterImage, params: &ParamSet, vp: &VisualParams) -> Result<VisualFeature, TensorError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let input = Tensor::new(vec![3, h, w], image.to_chw())?;
    let mut tape = Tape::with_params(params);
    let x = tape.constant(input);
    let y = visual_graph(&mut tape, vp, x)?;
    VisualFeature::new(tape.value(y).clone())
}
