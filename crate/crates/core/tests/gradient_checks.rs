//! Finite-difference verification of the reverse-mode gradients, from
//! individual primitives up to the full encoder under the ranking loss.

use replyrank_core::autodiff::{grad_check, Tape, Var};
use replyrank_core::encoder::{encode_on_tape, EncoderConfig, EncoderParams, EncoderVars};
use replyrank_core::tensor::{seeded_init, InitScheme, Tensor};
use replyrank_core::tokenizer::TokenSequence;
use replyrank_core::training::mnr_loss_on_tape;

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;

fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    seeded_init(&[rows, cols], InitScheme::UniformScaled, seed)
}

fn check(mut params: Vec<Tensor>, loss: impl for<'t> FnMut(&'t Tape, &[Var<'t>]) -> replyrank_core::Result<Var<'t>>) {
    let err = grad_check(loss, &mut params, EPS).unwrap();
    assert!(err <= TOL, "max relative gradient error {err}");
}

#[test]
fn matmul_and_add_chain() {
    let params = vec![rand_matrix(3, 4, 1), rand_matrix(4, 2, 2), rand_matrix(3, 2, 3)];
    check(params, |_tape, vars| {
        vars[0].matmul(vars[1])?.add(vars[2])?.mul(vars[2])?.sum()
    });
}

#[test]
fn softmax_rows() {
    let params = vec![rand_matrix(3, 5, 4), rand_matrix(3, 5, 5)];
    check(params, |_tape, vars| {
        vars[0].row_softmax()?.mul(vars[1])?.sum()
    });
}

#[test]
fn layer_norm_rows() {
    let params = vec![rand_matrix(4, 6, 6), rand_matrix(4, 6, 7)];
    check(params, |_tape, vars| {
        vars[0].layer_norm_rows()?.mul(vars[1])?.sum()
    });
}

#[test]
fn gelu_activation() {
    let params = vec![rand_matrix(3, 7, 8)];
    check(params, |_tape, vars| vars[0].gelu()?.mean());
}

#[test]
fn masked_mean_pooling() {
    let params = vec![rand_matrix(5, 4, 9), rand_matrix(1, 4, 10)];
    check(params, |_tape, vars| {
        let mask = [1.0, 1.0, 1.0, 0.0, 0.0];
        vars[0].mean_rows_masked(&mask)?.mul(vars[1])?.sum()
    });
}

#[test]
fn row_l2_normalize_and_diag() {
    let params = vec![rand_matrix(4, 6, 11), rand_matrix(6, 4, 12)];
    check(params, |_tape, vars| {
        vars[0]
            .row_l2_normalize()?
            .matmul(vars[1].transpose()?.row_l2_normalize()?.transpose()?)?
            .take_diag()?
            .mean()
    });
}

#[test]
fn row_log_sum_exp() {
    let params = vec![rand_matrix(3, 5, 13)];
    check(params, |_tape, vars| {
        vars[0].scale(3.0)?.row_log_sum_exp()?.mean()
    });
}

#[test]
fn column_slicing_and_concatenation() {
    let params = vec![rand_matrix(3, 8, 14), rand_matrix(3, 8, 15)];
    check(params, |tape, vars| {
        let left = vars[0].slice_cols(0, 4)?;
        let right = vars[0].slice_cols(4, 8)?;
        tape.concat_cols(&[right, left])?.mul(vars[1])?.sum()
    });
}

#[test]
fn row_lookup_and_broadcasts() {
    let params = vec![rand_matrix(6, 4, 16), rand_matrix(1, 4, 17), rand_matrix(1, 4, 18)];
    check(params, |tape, vars| {
        tape.lookup_rows(vars[0], &[2, 0, 5, 2])?
            .mul_row_broadcast(vars[1])?
            .add_row_broadcast(vars[2])?
            .gelu()?
            .sum()
    });
}

#[test]
fn full_encoder_under_ranking_loss() {
    let config = EncoderConfig {
        vocab_size: 12,
        model_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ff_dim: 12,
        max_sequence_length: 6,
    };
    let model = EncoderParams::init(config, 42).unwrap();
    let params: Vec<Tensor> = model
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    let seq = |ids: Vec<usize>| TokenSequence {
        length: ids.len(),
        ids,
    };
    let questions = [seq(vec![2, 5, 7]), seq(vec![3, 4]), seq(vec![9, 10, 11, 8])];
    let answers = [seq(vec![6, 2]), seq(vec![7, 8, 3]), seq(vec![4, 11])];

    check(params, |tape, vars| {
        let enc = EncoderVars::from_vars(config, vars.to_vec())?;
        let q: Vec<Var> = questions
            .iter()
            .map(|s| encode_on_tape(tape, &enc, s))
            .collect::<replyrank_core::Result<_>>()?;
        let a: Vec<Var> = answers
            .iter()
            .map(|s| encode_on_tape(tape, &enc, s))
            .collect::<replyrank_core::Result<_>>()?;
        mnr_loss_on_tape(tape, &q, &a, 20.0)
    });
}
