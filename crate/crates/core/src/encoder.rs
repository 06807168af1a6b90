//! Shared sentence encoder: token and positional embeddings, stacked
//! multi-head self-attention and feed-forward layers with residual
//! connections and layer normalization, then masked mean pooling.
//!
//! Both towers of the biencoder use one [`EncoderParams`] value, so sharing
//! is by construction. Pad tokens are stripped before encoding: the pad
//! suffix of a [`TokenSequence`] never enters attention or pooling, which is
//! equivalent to masking it out.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{mix_seed, seeded_init, InitScheme, Tensor};
use crate::tokenizer::TokenSequence;

/// Embedding of one text: a length-`model_dim` vector.
pub type Embedding = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_sequence_length: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults; `vocab_size` must still be set from the actual
    /// vocabulary.
    pub fn with_defaults(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            model_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ff_dim: 128,
            max_sequence_length: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = self.vocab_size > 0
            && self.model_dim > 0
            && self.num_layers > 0
            && self.num_heads > 0
            && self.ff_dim > 0
            && self.max_sequence_length > 0;
        if !all_positive {
            return Err(Error::invalid("encoder config fields must be positive"));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Learnable weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w_ff1: Tensor,
    pub b_ff1: Tensor,
    pub w_ff2: Tensor,
    pub b_ff2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// The complete learnable parameter set of the shared encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embeddings: Tensor,
    pub positional_embeddings: Tensor,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Seeded initialization: weight matrices and embedding tables use the
    /// scaled-uniform scheme, layer-norm gains start at 1, all biases at 0.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut stream = 0u64;
        let mut next = |shape: &[usize]| {
            stream += 1;
            seeded_init(shape, InitScheme::UniformScaled, mix_seed(seed, stream))
        };
        let token_embeddings = next(&[config.vocab_size, d]);
        let positional_embeddings = next(&[config.max_sequence_length, d]);
        let ones = |n: usize| Tensor::matrix(1, n, vec![1.0; n]).unwrap();
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                wq: next(&[d, d]),
                wk: next(&[d, d]),
                wv: next(&[d, d]),
                wo: next(&[d, d]),
                w_ff1: next(&[d, config.ff_dim]),
                b_ff1: Tensor::zeros(vec![1, config.ff_dim]),
                w_ff2: next(&[config.ff_dim, d]),
                b_ff2: Tensor::zeros(vec![1, d]),
                ln1_gain: ones(d),
                ln1_bias: Tensor::zeros(vec![1, d]),
                ln2_gain: ones(d),
                ln2_bias: Tensor::zeros(vec![1, d]),
            })
            .collect();
        Ok(EncoderParams {
            config,
            token_embeddings,
            positional_embeddings,
            layers,
        })
    }

    /// All parameters in a stable order, for checkpoints and optimizers.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            (
                "positional_embeddings".to_string(),
                &self.positional_embeddings,
            ),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let fields: [(&str, &Tensor); 12] = [
                ("wq", &layer.wq),
                ("wk", &layer.wk),
                ("wv", &layer.wv),
                ("wo", &layer.wo),
                ("w_ff1", &layer.w_ff1),
                ("b_ff1", &layer.b_ff1),
                ("w_ff2", &layer.w_ff2),
                ("b_ff2", &layer.b_ff2),
                ("ln1_gain", &layer.ln1_gain),
                ("ln1_bias", &layer.ln1_bias),
                ("ln2_gain", &layer.ln2_gain),
                ("ln2_bias", &layer.ln2_bias),
            ];
            out.extend(
                fields
                    .into_iter()
                    .map(|(name, t)| (format!("layer{i}.{name}"), t)),
            );
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("token_embeddings".to_string(), &mut self.token_embeddings),
            (
                "positional_embeddings".to_string(),
                &mut self.positional_embeddings,
            ),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let fields: [(&str, &mut Tensor); 12] = [
                ("wq", &mut layer.wq),
                ("wk", &mut layer.wk),
                ("wv", &mut layer.wv),
                ("wo", &mut layer.wo),
                ("w_ff1", &mut layer.w_ff1),
                ("b_ff1", &mut layer.b_ff1),
                ("w_ff2", &mut layer.w_ff2),
                ("b_ff2", &mut layer.b_ff2),
                ("ln1_gain", &mut layer.ln1_gain),
                ("ln1_bias", &mut layer.ln1_bias),
                ("ln2_gain", &mut layer.ln2_gain),
                ("ln2_bias", &mut layer.ln2_bias),
            ];
            out.extend(
                fields
                    .into_iter()
                    .map(|(name, t)| (format!("layer{i}.{name}"), t)),
            );
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.zero_grad();
        }
    }

    /// Records every parameter as a leaf on `tape`, in `named_tensors`
    /// order.
    pub fn vars<'t>(&self, tape: &'t Tape) -> EncoderVars<'t> {
        let all: Vec<Var<'t>> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t))
            .collect();
        EncoderVars {
            config: self.config,
            all,
        }
    }

    /// Adds the tape gradients of `vars` into the parameter `grad` buffers.
    pub fn accumulate_grads(&mut self, vars: &EncoderVars<'_>, grads: &crate::autodiff::Gradients) {
        for ((_, tensor), var) in self.named_tensors_mut().into_iter().zip(&vars.all) {
            let g = grads.grad(*var);
            let acc = tensor.grad_mut();
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
}

/// Tape handles to a parameter set, valid for one forward/backward pass.
pub struct EncoderVars<'t> {
    config: EncoderConfig,
    all: Vec<Var<'t>>,
}

impl<'t> EncoderVars<'t> {
    /// Wraps externally recorded parameter handles, in `named_tensors`
    /// order. Needed when the caller owns the tape leaves, e.g. for
    /// finite-difference checks.
    pub fn from_vars(config: EncoderConfig, all: Vec<Var<'t>>) -> Result<Self> {
        let expected = 2 + 12 * config.num_layers;
        if all.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameter handles, got {}",
                all.len()
            )));
        }
        Ok(EncoderVars { config, all })
    }

    fn token_embeddings(&self) -> Var<'t> {
        self.all[0]
    }
    fn positional_embeddings(&self) -> Var<'t> {
        self.all[1]
    }
    fn layer(&self, i: usize) -> &[Var<'t>] {
        &self.all[2 + i * 12..2 + (i + 1) * 12]
    }
}

/// Encodes a token sequence into a `1 x model_dim` embedding on the tape,
/// so gradients flow back to every parameter.
pub fn encode_on_tape<'t>(
    tape: &'t Tape,
    vars: &EncoderVars<'t>,
    seq: &TokenSequence,
) -> Result<Var<'t>> {
    let cfg = &vars.config;
    if seq.length == 0 || seq.length > seq.ids.len() {
        return Err(Error::invalid(format!(
            "sequence length {} inconsistent with {} ids",
            seq.length,
            seq.ids.len()
        )));
    }
    if seq.length > cfg.max_sequence_length {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds max {}",
            seq.length, cfg.max_sequence_length
        )));
    }
    let ids = &seq.ids[..seq.length];
    for &id in ids {
        if id >= cfg.vocab_size {
            return Err(Error::invalid(format!(
                "token id {id} out of range for vocabulary of size {}",
                cfg.vocab_size
            )));
        }
    }
    let positions: Vec<usize> = (0..ids.len()).collect();

    let tok = tape.lookup_rows(vars.token_embeddings(), ids)?;
    let pos = tape.lookup_rows(vars.positional_embeddings(), &positions)?;
    let mut x = tok.add(pos)?;

    let head_dim = cfg.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();
    for i in 0..cfg.num_layers {
        let [wq, wk, wv, wo, w_ff1, b_ff1, w_ff2, b_ff2, ln1_g, ln1_b, ln2_g, ln2_b]: [Var<'t>;
            12] = vars.layer(i).try_into().expect("layer has 12 tensors");

        let q = x.matmul(wq)?;
        let k = x.matmul(wk)?;
        let v = x.matmul(wv)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = q.slice_cols(lo, hi)?;
            let kh = k.slice_cols(lo, hi)?;
            let vh = v.slice_cols(lo, hi)?;
            let scores = qh.matmul(kh.transpose()?)?.scale(scale)?;
            let attn = scores.row_softmax()?;
            heads.push(attn.matmul(vh)?);
        }
        let attended = tape.concat_cols(&heads)?.matmul(wo)?;
        x = x
            .add(attended)?
            .layer_norm_rows()?
            .mul_row_broadcast(ln1_g)?
            .add_row_broadcast(ln1_b)?;

        let hidden = x.matmul(w_ff1)?.add_row_broadcast(b_ff1)?.gelu()?;
        let ff = hidden.matmul(w_ff2)?.add_row_broadcast(b_ff2)?;
        x = x
            .add(ff)?
            .layer_norm_rows()?
            .mul_row_broadcast(ln2_g)?
            .add_row_broadcast(ln2_b)?;
    }

    x.mean_rows_masked(&vec![1.0; ids.len()])
}

/// Encodes a sequence with frozen parameters.
pub fn encode(params: &EncoderParams, seq: &TokenSequence) -> Result<Embedding> {
    let tape = Tape::new();
    let vars = params.vars(&tape);
    let pooled = encode_on_tape(&tape, &vars, seq)?;
    Ok(pooled.value().data().to_vec())
}

/// Element-wise [`encode`] over a batch.
pub fn encode_batch(params: &EncoderParams, seqs: &[TokenSequence]) -> Result<Vec<Embedding>> {
    seqs.iter().map(|s| encode(params, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 10,
            model_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ff_dim: 16,
            max_sequence_length: 12,
        }
    }

    fn seq(ids: &[usize], max_len: usize) -> TokenSequence {
        let mut v = ids.to_vec();
        let length = v.len();
        v.resize(max_len, 0);
        TokenSequence { ids: v, length }
    }

    #[test]
    fn init_is_deterministic() {
        let a = EncoderParams::init(small_config(), 3).unwrap();
        let b = EncoderParams::init(small_config(), 3).unwrap();
        assert_eq!(a, b);
        let c = EncoderParams::init(small_config(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_indivisible_heads() {
        let mut cfg = small_config();
        cfg.model_dim = 16;
        cfg.num_heads = 3;
        assert!(EncoderParams::init(cfg, 0).is_err());
    }

    #[test]
    fn biases_start_at_zero() {
        let p = EncoderParams::init(small_config(), 1).unwrap();
        for layer in &p.layers {
            assert!(layer.b_ff1.data().iter().all(|&v| v == 0.0));
            assert!(layer.b_ff2.data().iter().all(|&v| v == 0.0));
            assert!(layer.ln1_bias.data().iter().all(|&v| v == 0.0));
            assert!(layer.ln1_gain.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn encode_has_model_dim_and_is_deterministic() {
        let p = EncoderParams::init(small_config(), 5).unwrap();
        let s = seq(&[2, 5, 7], 12);
        let a = encode(&p, &s).unwrap();
        let b = encode(&p, &s).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn trailing_pad_does_not_change_embedding() {
        let p = EncoderParams::init(small_config(), 5).unwrap();
        let short = seq(&[2, 5, 7], 3);
        let padded = seq(&[2, 5, 7], 12);
        let a = encode(&p, &short).unwrap();
        let b = encode(&p, &padded).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn token_order_matters() {
        let p = EncoderParams::init(small_config(), 5).unwrap();
        let a = encode(&p, &seq(&[2, 5, 7], 12)).unwrap();
        let b = encode(&p, &seq(&[5, 2, 7], 12)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn batch_equals_elementwise_encode() {
        let p = EncoderParams::init(small_config(), 9).unwrap();
        let seqs = vec![seq(&[1, 2], 12), seq(&[3, 4, 5, 6], 12)];
        let batch = encode_batch(&p, &seqs).unwrap();
        assert_eq!(batch[0], encode(&p, &seqs[0]).unwrap());
        assert_eq!(batch[1], encode(&p, &seqs[1]).unwrap());
        assert!(encode_batch(&p, &[]).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_id_rejected() {
        let p = EncoderParams::init(small_config(), 5).unwrap();
        assert!(encode(&p, &seq(&[99], 12)).is_err());
    }

    #[test]
    fn sequence_longer_than_max_rejected() {
        let p = EncoderParams::init(small_config(), 5).unwrap();
        let ids: Vec<usize> = (0..13).map(|i| i % 9).collect();
        let s = TokenSequence {
            length: ids.len(),
            ids,
        };
        assert!(encode(&p, &s).is_err());
    }
}
