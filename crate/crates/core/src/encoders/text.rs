use super::{lookup, EncoderConfig};
use crate::tensor::{shape_err, ParamId, ParamSet, Tape, Tensor, TensorError, Var};
use rand::Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Turns a caption into a fixed-length input vector for the text projection.
/// Implementations must be pure functions of the text.
pub trait CaptionFeaturizer: Send + Sync {
    fn input_dim(&self) -> usize;
    fn featurize(&self, caption: &str) -> Vec<f64>;
}

/// Hashed bag of words: each token lands in bucket `fnv1a64(token) % buckets`,
/// counts are mean-pooled and the result L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagOfWords {
    pub buckets: usize,
}

impl HashedBagOfWords {
    pub fn new(buckets: usize) -> Self {
        HashedBagOfWords { buckets }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.buckets as u64) as usize
    }
}

impl CaptionFeaturizer for HashedBagOfWords {
    fn input_dim(&self) -> usize {
        self.buckets
    }

    fn featurize(&self, caption: &str) -> Vec<f64> {
        let mut bag = vec![0.0; self.buckets];
        for token in tokenize(caption) {
            bag[self.bucket(&token)] += 1.0;
        }
        let norm = bag.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            bag.iter_mut().for_each(|v| *v /= norm);
        }
        bag
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature(Vec<f64>);

impl TextFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TextParams {
    pub fn init(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        // bags are unit-norm with few nonzeros; fan-in scaling over 4096
        // buckets would leave the projection nearly silent
        let bound = 1.0;
        TextParams {
            weight: params.add(
                "text.proj.weight",
                Tensor::uniform(&[cfg.text_dim, cfg.text_buckets], bound, rng),
            ),
            bias: params.add("text.proj.bias", Tensor::uniform(&[cfg.text_dim], 0.1, rng)),
        }
    }

    pub fn resolve(params: &ParamSet) -> Result<Self, TensorError> {
        Ok(TextParams {
            weight: lookup(params, "text.proj.weight")?,
            bias: lookup(params, "text.proj.bias")?,
        })
    }
}

/// `tanh(W bag + b)`.
pub fn text_graph(tape: &mut Tape<'_>, tp: &TextParams, bag: Var) -> Result<Var, TensorError> {
    let (w, b) = (tape.param(tp.weight), tape.param(tp.bias));
    let y = tape.linear(bag, w, Some(b))?;
    Ok(tape.tanh(y))
}

pub fn encode_text(
    caption: &str,
    featurizer: &dyn CaptionFeaturizer,
    params: &ParamSet,
    tp: &TextParams,
) -> Result<TextFeature, TensorError> {
    let bag = featurizer.featurize(caption);
    let expected = params.get(tp.weight).shape()[1];
    if bag.len() != expected {
        return Err(shape_err(
            "encode_text",
            format!("featurizer produced {} inputs, projection expects {expected}", bag.len()),
        ));
    }
    let mut tape = Tape::with_params(params);
    let x = tape.constant(Tensor::vector(bag));
    let y = text_graph(&mut tape, tp, x)?;
    Ok(TextFeature(tape.value(y).data().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderParams;
    use crate::tensor::check_param_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line FNV-1a written independently of the fold above.
    fn fnv_oracle(s: &str) -> u64 {
        let mut h: u64 = 14695981039346656037;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        h
    }

    fn setup() -> (ParamSet, TextParams, HashedBagOfWords) {
        let cfg = EncoderConfig::desk();
        let mut params = ParamSet::new();
        let ep = EncoderParams::init(&mut params, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        (params, ep.text, HashedBagOfWords::new(cfg.text_buckets))
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn buckets_match_oracle() {
        let bow = HashedBagOfWords::new(4096);
        let tokens = tokenize("dull colors low space usage");
        assert_eq!(tokens, ["dull", "colors", "low", "space", "usage"]);
        let bag = bow.featurize("dull colors low space usage");
        for t in &tokens {
            let b = (fnv_oracle(t) % 4096) as usize;
            assert_eq!(bow.bucket(t), b);
            assert!(bag[b] > 0.0);
        }
        let norm: f64 = bag.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Uses 1 color; LOW-space!"), ["uses", "1", "color", "low", "space"]);
        assert!(tokenize("  ,,  ").is_empty());
    }

    #[test]
    fn empty_caption_gives_tanh_bias() {
        let (params, tp, bow) = setup();
        let f = encode_text("", &bow, &params, &tp).unwrap();
        let expected: Vec<f64> = params.get(tp.bias).data().iter().map(|b| b.tanh()).collect();
        assert_eq!(f.as_slice(), expected.as_slice());
    }

    #[test]
    fn repetition_is_normalized_away() {
        let (params, tp, bow) = setup();
        let once = encode_text("dark", &bow, &params, &tp).unwrap();
        let thrice = encode_text("dark dark DARK", &bow, &params, &tp).unwrap();
        assert_eq!(once, thrice);
        assert_eq!(once.as_slice().len(), 128);
    }

    #[test]
    fn deterministic() {
        let (params, tp, bow) = setup();
        let a = encode_text("dull colors low space usage", &bow, &params, &tp).unwrap();
        let b = encode_text("dull colors low space usage", &bow, &params, &tp).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut params = ParamSet::new();
        let cfg = EncoderConfig {
            text_dim: 4,
            text_buckets: 32,
            ..EncoderConfig::desk()
        };
        let tp = TextParams::init(&mut params, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let bag = HashedBagOfWords::new(32).featurize("small faint lines in one corner");
        let report = check_param_gradients(
            &params,
            |t| {
                let x = t.constant(Tensor::vector(bag.clone()));
                let y = text_graph(t, &tp, x)?;
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
            16,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
