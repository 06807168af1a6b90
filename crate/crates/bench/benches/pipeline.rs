//! Hot-path benchmarks: single-sequence encoding, one training step
//! (forward, ranking loss, backward), and retrieval evaluation.

use criterion::{criterion_group, criterion_main, Criterion};

use replyrank_core::autodiff::Tape;
use replyrank_core::encoder::{encode, encode_on_tape, EncoderConfig, EncoderParams};
use replyrank_core::scoring::evaluate_retrieval;
use replyrank_core::synthetic::{make_synthetic, SyntheticConfig};
use replyrank_core::tokenizer::Vocabulary;
use replyrank_core::training::{mnr_loss_on_tape, Anchor};

struct Setup {
    params: EncoderParams,
    vocab: Vocabulary,
    corpus: Vec<replyrank_core::Exchange>,
}

fn setup() -> Setup {
    let corpus = make_synthetic(&SyntheticConfig {
        n_pairs: 64,
        n_topics: 8,
        cross_frac: 0.0,
        intermediate_frac: 0.0,
        seed: 3,
    })
    .unwrap();
    let texts: Vec<String> = corpus
        .iter()
        .flat_map(|x| [x.question_text.clone(), x.answer_text.clone()])
        .collect();
    let vocab = Vocabulary::build(&texts, 1, 10_000).unwrap();
    let params =
        EncoderParams::init(EncoderConfig::with_defaults(vocab.size()), 5).unwrap();
    Setup {
        params,
        vocab,
        corpus,
    }
}

fn bench_encode(c: &mut Criterion) {
    let s = setup();
    let seq = s
        .vocab
        .encode(&s.corpus[0].question_text, s.params.config.max_sequence_length)
        .unwrap();
    c.bench_function("encode_one_sequence", |b| {
        b.iter(|| encode(&s.params, &seq).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let s = setup();
    let max_len = s.params.config.max_sequence_length;
    let batch: Vec<_> = s.corpus[..16]
        .iter()
        .map(|x| {
            (
                s.vocab.encode(&x.question_text, max_len).unwrap(),
                s.vocab.encode(&x.answer_text, max_len).unwrap(),
            )
        })
        .collect();
    c.bench_function("train_step_batch16", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let vars = s.params.vars(&tape);
            let q: Vec<_> = batch
                .iter()
                .map(|(q, _)| encode_on_tape(&tape, &vars, q).unwrap())
                .collect();
            let a: Vec<_> = batch
                .iter()
                .map(|(_, a)| encode_on_tape(&tape, &vars, a).unwrap())
                .collect();
            let loss = mnr_loss_on_tape(&tape, &q, &a, 20.0).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

fn bench_eval(c: &mut Criterion) {
    let s = setup();
    c.bench_function("evaluate_retrieval_64", |b| {
        b.iter(|| {
            evaluate_retrieval(&s.params, &s.vocab, &s.corpus, Anchor::Question, 10).unwrap()
        })
    });
}

criterion_group!(benches, bench_encode, bench_train_step, bench_eval);
criterion_main!(benches);
