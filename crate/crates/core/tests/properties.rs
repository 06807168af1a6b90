//! Randomized invariants over parsing, splitting, tokenization, and the
//! loss and statistics primitives.

use chrono::NaiveDate;
use proptest::prelude::*;

use replyrank_core::analysis::pearson;
use replyrank_core::corpus::{
    hansard_escape, parse_transcripts, save_corpus, split_corpus, Exchange, Party, ReplyLabel,
    Role, TranscriptFormat,
};
use replyrank_core::scoring::cosine;
use replyrank_core::tokenizer::{tokenize, Vocabulary, PAD_ID, UNK_ID};
use replyrank_core::training::mnr_loss;

fn arb_party() -> impl Strategy<Value = Party> {
    prop_oneof![
        Just(Party::BQ),
        Just(Party::CPC),
        Just(Party::LPC),
        Just(Party::NDP),
        Just(Party::Other),
    ]
}

fn arb_role() -> impl Strategy<Value = Role> {
    prop_oneof![
        Just(Role::Opposition),
        Just(Role::GovernmentBackbench),
        Just(Role::Independent),
    ]
}

fn arb_label() -> impl Strategy<Value = Option<ReplyLabel>> {
    prop_oneof![
        Just(None),
        Just(Some(ReplyLabel::FullReply)),
        Just(Some(ReplyLabel::IntermediateReply)),
        Just(Some(ReplyLabel::NonReply)),
    ]
}

// Non-empty text with letters, digits, accents, and punctuation the
// serializers must survive.
fn arb_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9éàç&<>\"' .,!?-]{1,60}".prop_filter("needs a word", |s| {
        s.chars().any(|c| c.is_alphanumeric())
    })
}

fn arb_exchange(idx: usize) -> impl Strategy<Value = Exchange> {
    (
        arb_text(),
        arb_text(),
        arb_party(),
        arb_role(),
        38u32..45,
        0i64..3000,
        arb_label(),
    )
        .prop_map(move |(q, a, party, role, leg, day, label)| Exchange {
            id: format!("x-{idx:04}"),
            question_text: q,
            answer_text: a,
            asker_party: party,
            asker_role: role,
            legislature: leg,
            date: NaiveDate::from_ymd_opt(2006, 1, 23).unwrap() + chrono::Duration::days(day),
            label,
        })
}

fn arb_corpus(max: usize) -> impl Strategy<Value = Vec<Exchange>> {
    prop::collection::vec(any::<u8>(), 1..=max).prop_flat_map(|picks| {
        picks
            .into_iter()
            .enumerate()
            .map(|(i, _)| arb_exchange(i))
            .collect::<Vec<_>>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips_through_line_format(corpus in arb_corpus(12)) {
        let mut buf = Vec::new();
        save_corpus(&corpus, &mut buf).unwrap();
        let parsed = parse_transcripts(&buf[..], TranscriptFormat::ExchangeLines).unwrap();
        prop_assert_eq!(parsed, corpus);
    }

    #[test]
    fn split_partitions_and_is_deterministic(
        corpus in arb_corpus(20),
        seed in any::<u64>(),
        train_frac in 0.1f64..0.7,
        val_frac in 0.0f64..0.25,
    ) {
        let s1 = split_corpus(&corpus, train_frac, val_frac, seed).unwrap();
        let s2 = split_corpus(&corpus, train_frac, val_frac, seed).unwrap();
        prop_assert_eq!(&s1.train, &s2.train);
        prop_assert_eq!(&s1.validation, &s2.validation);
        prop_assert_eq!(&s1.inference, &s2.inference);

        let n = corpus.len();
        prop_assert_eq!(s1.train.len(), (train_frac * n as f64).floor() as usize);
        prop_assert_eq!(s1.validation.len(), (val_frac * n as f64).floor() as usize);
        prop_assert_eq!(s1.train.len() + s1.validation.len() + s1.inference.len(), n);

        // Every exchange lands in exactly one split.
        let mut ids: Vec<&str> = s1.train.iter()
            .chain(&s1.validation)
            .chain(&s1.inference)
            .map(|x| x.id.as_str())
            .collect();
        ids.sort_unstable();
        let mut expected: Vec<&str> = corpus.iter().map(|x| x.id.as_str()).collect();
        expected.sort_unstable();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn tokens_are_lowercase_alphanumeric(text in ".{0,80}") {
        for tok in tokenize(&text) {
            prop_assert!(!tok.is_empty());
            prop_assert!(tok.chars().all(|c| c.is_alphanumeric()));
            // Some uppercase letters (e.g. mathematical capitals) have no
            // lowercase mapping; the invariant is that lowercasing is
            // already applied, i.e. idempotent.
            prop_assert_eq!(tok.to_lowercase(), tok.clone());
        }
    }

    #[test]
    fn encoded_ids_are_in_range(texts in prop::collection::vec("[a-z ]{1,40}", 1..6), max_len in 2usize..16) {
        let owned: Vec<String> = texts.clone();
        if let Ok(vocab) = Vocabulary::build(&owned, 1, 64) {
            for t in &owned {
                if let Ok(seq) = vocab.encode(t, max_len) {
                    prop_assert_eq!(seq.ids.len(), max_len);
                    prop_assert!(seq.length >= 1 && seq.length <= max_len);
                    for (i, &id) in seq.ids.iter().enumerate() {
                        prop_assert!(id < vocab.size());
                        if i >= seq.length {
                            prop_assert_eq!(id, PAD_ID);
                        } else {
                            prop_assert_ne!(id, PAD_ID);
                        }
                    }
                    let _ = UNK_ID;
                }
            }
        }
    }

    #[test]
    fn cosine_is_scale_invariant(
        x in prop::collection::vec(-5.0f64..5.0, 3..8),
        c in 0.1f64..50.0,
    ) {
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        if let (Ok(a), Ok(b)) = (cosine(&x, &y), cosine(&scaled, &y)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_is_invariant_under_joint_permutation(
        seed in any::<u64>(),
        k in 2usize..6,
    ) {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = 5;
        let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0 + 0.01).collect()
        };
        let anchors: Vec<Vec<f64>> = (0..k).map(|_| sample(&mut rng)).collect();
        let candidates: Vec<Vec<f64>> = (0..k).map(|_| sample(&mut rng)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let pa: Vec<Vec<f64>> = perm.iter().map(|&i| anchors[i].clone()).collect();
        let pc: Vec<Vec<f64>> = perm.iter().map(|&i| candidates[i].clone()).collect();
        let l1 = mnr_loss(&anchors, &candidates, 20.0).unwrap();
        let l2 = mnr_loss(&pa, &pc, 20.0).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-9, "{} vs {}", l1, l2);
    }

    #[test]
    fn pearson_is_invariant_under_affine_maps(
        x in prop::collection::vec(-10.0f64..10.0, 4..12),
        a in 0.1f64..5.0,
        b in -10.0f64..10.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.5 + (i as f64).sin()).collect();
        let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        if let (Ok(r1), Ok(r2)) = (pearson(&x, &y), pearson(&xt, &y)) {
            prop_assert!((r1 - r2).abs() <= 1e-9);
        }
    }

    #[test]
    fn markup_escaping_round_trips(text in arb_text()) {
        let escaped = hansard_escape(&text);
        prop_assert!(!escaped.contains('<'));
        let doc = format!(
            "<transcript>\n<exchange id=\"e1\">\n\
             <question speaker-party=\"LPC\" speaker-role=\"Opposition\" \
             legislature=\"40\" date=\"2010-01-01\">{escaped}</question>\n\
             <answer>{escaped}</answer>\n\
             </exchange>\n</transcript>\n"
        );
        let parsed = parse_transcripts(doc.as_bytes(), TranscriptFormat::HansardLike).unwrap();
        prop_assert_eq!(parsed.len(), 1);
        // The parser trims surrounding whitespace from element text.
        prop_assert_eq!(&parsed[0].question_text, text.trim());
        prop_assert_eq!(&parsed[0].answer_text, text.trim());
    }
}
