//! Multiple Negatives Ranking training: in-batch negatives, the softmax
//! probability model over cosine similarities, Adam optimization, and
//! hyperparameter selection by validation mean reciprocal rank.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint;
use crate::corpus::CorpusSplit;
use crate::encoder::{encode_on_tape, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::scoring;
use crate::tokenizer::{TokenSequence, Vocabulary};

/// Which side of the exchange queries the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Similarity scale applied to cosines inside the softmax.
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub anchor: Anchor,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Checkpoint to fine-tune from; fresh seeded initialization when absent.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 20.0,
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 20,
            seed: 0,
            anchor: Anchor::Question,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            init_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::invalid("alpha must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_mrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub wall_secs: f64,
}

/// Row-stochastic matrix of softmax probabilities over scaled cosines:
/// entry (i, j) is the modeled probability that candidate j answers
/// anchor i.
pub fn batch_probabilities_on_tape<'t>(
    tape: &'t Tape,
    anchors: &[Var<'t>],
    candidates: &[Var<'t>],
    alpha: f64,
) -> Result<Var<'t>> {
    scaled_cosine_matrix(tape, anchors, candidates, alpha)?.row_softmax()
}

fn scaled_cosine_matrix<'t>(
    tape: &'t Tape,
    anchors: &[Var<'t>],
    candidates: &[Var<'t>],
    alpha: f64,
) -> Result<Var<'t>> {
    if anchors.is_empty() || anchors.len() != candidates.len() {
        return Err(Error::invalid(format!(
            "batch needs equally many anchors and candidates, got {} and {}",
            anchors.len(),
            candidates.len()
        )));
    }
    let a = tape.concat_rows(anchors)?.row_l2_normalize()?;
    let b = tape.concat_rows(candidates)?.row_l2_normalize()?;
    a.matmul(b.transpose()?)?.scale(alpha)
}

/// Mean negative log probability of the correct pair, computed in
/// log-sum-exp form: `(1/K) sum_i [logsumexp_j(alpha cos_ij) - alpha
/// cos_ii]`.
pub fn mnr_loss_on_tape<'t>(
    tape: &'t Tape,
    anchors: &[Var<'t>],
    candidates: &[Var<'t>],
    alpha: f64,
) -> Result<Var<'t>> {
    let scaled = scaled_cosine_matrix(tape, anchors, candidates, alpha)?;
    let lse = scaled.row_log_sum_exp()?;
    let diag = scaled.take_diag()?;
    lse.sub(diag)?.mean()
}

/// [`batch_probabilities_on_tape`] over plain vectors.
pub fn batch_probabilities(
    anchors: &[Vec<f64>],
    candidates: &[Vec<f64>],
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let (a, c) = embed_rows(&tape, anchors, candidates);
    let probs = batch_probabilities_on_tape(&tape, &a, &c, alpha)?.value();
    let k = anchors.len();
    Ok((0..k)
        .map(|i| probs.data()[i * k..(i + 1) * k].to_vec())
        .collect())
}

/// [`mnr_loss_on_tape`] over plain vectors.
pub fn mnr_loss(anchors: &[Vec<f64>], candidates: &[Vec<f64>], alpha: f64) -> Result<f64> {
    let tape = Tape::new();
    let (a, c) = embed_rows(&tape, anchors, candidates);
    mnr_loss_on_tape(&tape, &a, &c, alpha)?.scalar()
}

fn embed_rows<'t>(
    tape: &'t Tape,
    anchors: &[Vec<f64>],
    candidates: &[Vec<f64>],
) -> (Vec<Var<'t>>, Vec<Var<'t>>) {
    let to_vars = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|r| tape.constant(crate::tensor::Tensor::row(r.clone())))
            .collect()
    };
    (to_vars(anchors), to_vars(candidates))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut EncoderParams, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (slot, (_, tensor)) in params.named_tensors_mut().into_iter().enumerate() {
            let Some(grad) = tensor.grad.take() else {
                continue;
            };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
            tensor.grad = Some(grad);
        }
    }
}

fn encode_texts(
    vocab: &Vocabulary,
    texts: impl Iterator<Item = String>,
    max_len: usize,
) -> Result<Vec<TokenSequence>> {
    texts.map(|t| vocab.encode(&t, max_len)).collect()
}

/// Trains the encoder on the split's train set and returns the parameters
/// of the epoch with the highest validation MRR.
pub fn train(
    split: &CorpusSplit,
    vocab: &Vocabulary,
    enc_config: EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainReport)> {
    cfg.validate()?;
    enc_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    if split.validation.is_empty() {
        return Err(Error::invalid(
            "validation split is empty; model selection needs validation exchanges",
        ));
    }
    if enc_config.vocab_size != vocab.size() {
        return Err(Error::invalid(format!(
            "config vocab_size {} disagrees with vocabulary size {}",
            enc_config.vocab_size,
            vocab.size()
        )));
    }

    let start = Instant::now();
    let max_len = enc_config.max_sequence_length;
    let q_seqs = encode_texts(
        vocab,
        split.train.iter().map(|x| x.question_text.clone()),
        max_len,
    )?;
    let a_seqs = encode_texts(
        vocab,
        split.train.iter().map(|x| x.answer_text.clone()),
        max_len,
    )?;

    let mut params = match &cfg.init_checkpoint {
        Some(path) => {
            let (loaded, loaded_vocab) = checkpoint::load_from_path(path)?;
            if loaded_vocab != *vocab {
                return Err(Error::invalid(
                    "init checkpoint vocabulary differs from the supplied vocabulary",
                ));
            }
            if loaded.config != enc_config {
                return Err(Error::invalid(
                    "init checkpoint config differs from the requested encoder config",
                ));
            }
            loaded
        }
        None => EncoderParams::init(enc_config, cfg.seed)?,
    };

    let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let k = cfg.batch_size;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EncoderParams)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::tensor::mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut losses = Vec::new();
        // A trailing short batch is dropped.
        for (batch_idx, batch) in order.chunks_exact(k).enumerate() {
            let tape = Tape::new();
            let vars = params.vars(&tape);
            let mut q_emb = Vec::with_capacity(k);
            let mut a_emb = Vec::with_capacity(k);
            for &i in batch {
                q_emb.push(encode_on_tape(&tape, &vars, &q_seqs[i])?);
                a_emb.push(encode_on_tape(&tape, &vars, &a_seqs[i])?);
            }
            let (anchors, candidates) = match cfg.anchor {
                Anchor::Question => (&q_emb, &a_emb),
                Anchor::Answer => (&a_emb, &q_emb),
            };
            let loss = mnr_loss_on_tape(&tape, anchors, candidates, cfg.alpha)?;
            let loss_value = loss.scalar()?;
            if !loss_value.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            losses.push(loss_value);
            let grads = tape.backward(loss)?;
            params.zero_grads();
            params.accumulate_grads(&vars, &grads);
            adam.step(&mut params, cfg);
        }
        if losses.is_empty() {
            return Err(Error::invalid(format!(
                "train split of {} exchanges yields no full batch of {k}",
                split.train.len()
            )));
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;

        let eval = scoring::evaluate_retrieval(
            &params,
            vocab,
            &split.validation,
            cfg.anchor,
            scoring::DEFAULT_CUTOFF,
        )?;
        epochs.push(EpochStats {
            epoch,
            mean_loss,
            val_mrr: eval.mrr,
        });
        let improved = best.as_ref().map_or(true, |(mrr, _, _)| eval.mrr > *mrr);
        if improved {
            best = Some((eval.mrr, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok((
        best_params,
        TrainReport {
            epochs,
            best_epoch,
            wall_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Trains every configuration in `grid` and returns the index of the best
/// one by validation MRR (earliest wins ties) along with every
/// per-configuration result.
pub fn grid_search(
    split: &CorpusSplit,
    vocab: &Vocabulary,
    enc_config: EncoderConfig,
    grid: &[TrainConfig],
) -> Result<(usize, Vec<(TrainConfig, f64)>)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut results = Vec::with_capacity(grid.len());
    for cfg in grid {
        let (_, report) = train(split, vocab, enc_config, cfg)?;
        let best_mrr = report
            .epochs
            .iter()
            .map(|e| e.val_mrr)
            .fold(f64::NEG_INFINITY, f64::max);
        results.push((cfg.clone(), best_mrr));
    }
    let mut best_idx = 0;
    for (i, (_, mrr)) in results.iter().enumerate() {
        if *mrr > results[best_idx].1 {
            best_idx = i;
        }
    }
    Ok((best_idx, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn identical_candidates_give_uniform_rows() {
        let e = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let p = batch_probabilities(&e, &e, 20.0).unwrap();
        for row in &p {
            for &v in row {
                assert!((v - 1.0 / 3.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn alpha_zero_collapses_to_uniform() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = vec![vec![0.3, 0.7], vec![-0.9, 0.1]];
        // alpha = 0 is outside TrainConfig's domain but the primitive
        // accepts it; every row becomes uniform regardless of embeddings.
        let p = batch_probabilities(&a, &c, 0.0).unwrap();
        for row in &p {
            for &v in row {
                assert!((v - 0.5).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_diagonal_case_alpha_20() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = batch_probabilities(&a, &a, 20.0).unwrap();
        let expected = (20.0f64).exp() / ((20.0f64).exp() + 1.0);
        assert!((p[0][0] - expected).abs() <= 1e-12);
        let loss = mnr_loss(&a, &a, 20.0).unwrap();
        let expected_loss = (1.0 + (-20.0f64).exp()).ln();
        assert!((loss - expected_loss).abs() <= 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let a = vec![unit(vec![0.2, -0.5, 0.9]), unit(vec![1.0, 1.0, 0.0])];
        let c = vec![unit(vec![0.4, 0.1, -0.2]), unit(vec![-0.3, 0.8, 0.5])];
        let p = batch_probabilities(&a, &c, 7.5).unwrap();
        for row in &p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let a = vec![vec![0.3, 0.4]];
        assert_eq!(mnr_loss(&a, &a, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn identical_embeddings_loss_is_ln_k() {
        for k in [2usize, 4, 8] {
            let e = vec![vec![0.5, -0.1, 0.7]; k];
            let loss = mnr_loss(&e, &e, 20.0).unwrap();
            assert!(
                (loss - (k as f64).ln()).abs() <= 1e-9,
                "K={k}: {loss} vs {}",
                (k as f64).ln()
            );
        }
    }

    #[test]
    fn zero_norm_embedding_rejected() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(mnr_loss(&a, &a, 20.0).is_err());
        assert!(batch_probabilities(&a, &a, 20.0).is_err());
    }

    #[test]
    fn joint_permutation_preserves_loss() {
        let a = vec![
            unit(vec![0.2, -0.5, 0.9]),
            unit(vec![1.0, 1.0, 0.0]),
            unit(vec![-0.4, 0.3, 0.3]),
        ];
        let c = vec![
            unit(vec![0.4, 0.1, -0.2]),
            unit(vec![-0.3, 0.8, 0.5]),
            unit(vec![0.9, -0.9, 0.1]),
        ];
        let base = mnr_loss(&a, &c, 20.0).unwrap();
        let perm = [2usize, 0, 1];
        let ap: Vec<_> = perm.iter().map(|&i| a[i].clone()).collect();
        let cp: Vec<_> = perm.iter().map(|&i| c[i].clone()).collect();
        let permuted = mnr_loss(&ap, &cp, 20.0).unwrap();
        assert!((base - permuted).abs() <= 1e-12);
    }

    #[test]
    fn cosine_scale_invariance_of_loss() {
        let a = vec![vec![0.2, -0.5, 0.9], vec![1.0, 1.0, 0.0]];
        let c = vec![vec![0.4, 0.1, -0.2], vec![-0.3, 0.8, 0.5]];
        let base = mnr_loss(&a, &c, 20.0).unwrap();
        let scaled_a: Vec<Vec<f64>> = a
            .iter()
            .map(|r| r.iter().map(|v| v * 3.5).collect())
            .collect();
        let scaled = mnr_loss(&scaled_a, &c, 20.0).unwrap();
        assert!((base - scaled).abs() <= 1e-12);
    }

    #[test]
    fn loss_is_positive_for_k_at_least_two() {
        let a = vec![unit(vec![1.0, 0.1]), unit(vec![-0.2, 1.0])];
        let c = vec![unit(vec![0.9, 0.2]), unit(vec![-0.1, 0.8])];
        assert!(mnr_loss(&a, &c, 20.0).unwrap() > 0.0);
    }
}
