//! Cosine similarity, corpus scoring, candidate ranking, truncated mean
//! reciprocal rank, and hit-rate diagnostics over frozen encoder
//! parameters.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{Exchange, Party, ReplyLabel, Role};
use crate::encoder::{encode, Embedding, EncoderParams};
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;
use crate::training::Anchor;

/// Ranks worse than this contribute zero reciprocal rank.
pub const DEFAULT_CUTOFF: usize = 10;

/// An exchange id with its question-answer cosine similarity and copied
/// speaker metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub exchange_id: String,
    pub cosine: f64,
    pub party: Party,
    pub role: Role,
    pub legislature: u32,
    pub label: Option<ReplyLabel>,
}

/// Rank of the correct candidate for one exchange. `reciprocal_rank` is
/// `1/rank` when the rank is within the cutoff and 0 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub exchange_id: String,
    pub rank: usize,
    pub reciprocal_rank: f64,
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]` against
/// rounding.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::numeric("cosine of a zero-norm vector is undefined"));
    }
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// Scores every exchange by the cosine between its question and answer
/// embeddings, preserving input order.
pub fn score_corpus(
    params: &EncoderParams,
    vocab: &Vocabulary,
    exchanges: &[Exchange],
) -> Result<Vec<ScoredPair>> {
    let max_len = params.config.max_sequence_length;
    exchanges
        .par_iter()
        .map(|x| {
            let q = encode(params, &vocab.encode(&x.question_text, max_len)?)?;
            let a = encode(params, &vocab.encode(&x.answer_text, max_len)?)?;
            Ok(ScoredPair {
                exchange_id: x.id.clone(),
                cosine: cosine(&q, &a)?,
                party: x.asker_party,
                role: x.asker_role,
                legislature: x.legislature,
                label: x.label,
            })
        })
        .collect()
}

/// Pessimistic-ties rank of the correct candidate:
/// `rank = 1 + |{j != correct : cos_j >= cos_correct}|`.
pub fn rank_correct(
    anchor: &[f64],
    candidates: &[Vec<f64>],
    correct_index: usize,
    cutoff: usize,
) -> Result<(usize, f64)> {
    if correct_index >= candidates.len() {
        return Err(Error::invalid(format!(
            "correct_index {correct_index} out of range for {} candidates",
            candidates.len()
        )));
    }
    if cutoff < 1 {
        return Err(Error::invalid("cutoff must be at least 1"));
    }
    let correct_cos = cosine(anchor, &candidates[correct_index])?;
    let mut rank = 1;
    for (j, c) in candidates.iter().enumerate() {
        if j != correct_index && cosine(anchor, c)? >= correct_cos {
            rank += 1;
        }
    }
    let rr = if rank <= cutoff { 1.0 / rank as f64 } else { 0.0 };
    Ok((rank, rr))
}

/// Arithmetic mean of reciprocal ranks.
pub fn mrr(ranks: &[RankResult]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::invalid("mrr of an empty list"));
    }
    Ok(ranks.iter().map(|r| r.reciprocal_rank).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalEval {
    pub mrr: f64,
    pub ranks: Vec<RankResult>,
    /// Fraction of exchanges whose correct candidate ranks within k, for
    /// k in {1, 5, 10}.
    pub hit_rate_at: BTreeMap<usize, f64>,
}

/// Ranks every exchange's correct counterpart against the counterpart texts
/// of the whole evaluation set.
pub fn evaluate_retrieval(
    params: &EncoderParams,
    vocab: &Vocabulary,
    eval_set: &[Exchange],
    anchor: Anchor,
    cutoff: usize,
) -> Result<RetrievalEval> {
    if eval_set.is_empty() {
        return Err(Error::invalid("evaluate_retrieval on an empty set"));
    }
    let max_len = params.config.max_sequence_length;
    let embed = |texts: Vec<&str>| -> Result<Vec<Embedding>> {
        texts
            .into_par_iter()
            .map(|t| encode(params, &vocab.encode(t, max_len)?))
            .collect()
    };
    let questions = embed(eval_set.iter().map(|x| x.question_text.as_str()).collect())?;
    let answers = embed(eval_set.iter().map(|x| x.answer_text.as_str()).collect())?;
    let (anchors, candidates) = match anchor {
        Anchor::Question => (&questions, &answers),
        Anchor::Answer => (&answers, &questions),
    };
    rank_embeddings(anchors, candidates, eval_set, cutoff)
}

/// Ranking core shared by retrieval evaluation and rank-validity curves.
pub fn rank_embeddings(
    anchors: &[Embedding],
    candidates: &[Embedding],
    eval_set: &[Exchange],
    cutoff: usize,
) -> Result<RetrievalEval> {
    let ranks: Vec<RankResult> = eval_set
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (rank, rr) = rank_correct(&anchors[i], candidates, i, cutoff)?;
            Ok(RankResult {
                exchange_id: x.id.clone(),
                rank,
                reciprocal_rank: rr,
            })
        })
        .collect::<Result<_>>()?;
    let mrr_value = mrr(&ranks)?;
    let n = ranks.len() as f64;
    let hit_rate_at = [1usize, 5, 10]
        .into_iter()
        .map(|k| {
            let hits = ranks.iter().filter(|r| r.rank <= k).count();
            (k, hits as f64 / n)
        })
        .collect();
    Ok(RetrievalEval {
        mrr: mrr_value,
        ranks,
        hit_rate_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Exchange;
    use chrono::NaiveDate;

    fn rr(rank: usize, rrv: f64) -> RankResult {
        RankResult {
            exchange_id: format!("x{rank}"),
            rank,
            reciprocal_rank: rrv,
        }
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974632).abs() <= 1e-6);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_self_and_negation() {
        let x = [0.3, -0.8, 0.4];
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() <= 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine(&x, &neg).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn strictly_best_candidate_ranks_first() {
        let cands = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let (rank, rrv) = rank_correct(&[1.0, 0.1], &cands, 0, 10).unwrap();
        assert_eq!(rank, 1);
        assert_eq!(rrv, 1.0);
    }

    #[test]
    fn rank_beyond_cutoff_scores_zero() {
        // Build 12 candidates where the correct one is the worst.
        let mut cands: Vec<Vec<f64>> = Vec::new();
        for i in 0..11 {
            let angle = 0.05 * (i as f64 + 1.0);
            cands.push(vec![angle.cos(), angle.sin()]);
        }
        cands.push(vec![0.0, 1.0]); // orthogonal, correct
        let (rank, rrv) = rank_correct(&[1.0, 0.0], &cands, 11, 10).unwrap();
        assert_eq!(rank, 12);
        assert_eq!(rrv, 0.0);
    }

    #[test]
    fn pessimistic_ties_count_against_correct() {
        // scores 0.9, 0.9, 0.5 against the anchor; correct index 0.
        let cands = vec![
            vec![0.9, (1.0f64 - 0.81).sqrt()],
            vec![0.9, (1.0f64 - 0.81).sqrt()],
            vec![0.5, (1.0f64 - 0.25).sqrt()],
        ];
        let (rank, rrv) = rank_correct(&[1.0, 0.0], &cands, 0, 10).unwrap();
        assert_eq!(rank, 2);
        assert_eq!(rrv, 0.5);
    }

    #[test]
    fn mrr_arithmetic() {
        assert_eq!(mrr(&[rr(1, 1.0), rr(1, 1.0)]).unwrap(), 1.0);
        let m = mrr(&[rr(2, 0.5), rr(4, 0.25), rr(5, 0.2)]).unwrap();
        assert!((m - 0.316667).abs() <= 1e-6);
        let truncated = mrr(&[rr(1, 1.0), rr(11, 0.0)]).unwrap();
        assert_eq!(truncated, 0.5);
        assert!(mrr(&[]).is_err());
    }

    fn exchange(id: &str, q: &str, a: &str) -> Exchange {
        Exchange {
            id: id.to_string(),
            question_text: q.to_string(),
            answer_text: a.to_string(),
            asker_party: Party::LPC,
            asker_role: Role::GovernmentBackbench,
            legislature: 40,
            date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
            label: None,
        }
    }

    #[test]
    fn identical_question_and_answer_scores_one() {
        let vocab = Vocabulary::build(
            &["budget measures today".to_string()],
            1,
            100,
        )
        .unwrap();
        let params = EncoderParams::init(
            crate::encoder::EncoderConfig {
                vocab_size: vocab.size(),
                model_dim: 8,
                num_layers: 1,
                num_heads: 2,
                ff_dim: 16,
                max_sequence_length: 8,
            },
            3,
        )
        .unwrap();
        let scored = score_corpus(
            &params,
            &vocab,
            &[exchange("e1", "budget measures today", "budget measures today")],
        )
        .unwrap();
        assert!((scored[0].cosine - 1.0).abs() <= 1e-9);
        assert!(score_corpus(&params, &vocab, &[]).unwrap().is_empty());
    }

    #[test]
    fn eval_set_of_one_has_mrr_one() {
        let vocab = Vocabulary::build(&["a b c".to_string()], 1, 100).unwrap();
        let params = EncoderParams::init(
            crate::encoder::EncoderConfig {
                vocab_size: vocab.size(),
                model_dim: 8,
                num_layers: 1,
                num_heads: 2,
                ff_dim: 16,
                max_sequence_length: 8,
            },
            3,
        )
        .unwrap();
        let eval = evaluate_retrieval(
            &params,
            &vocab,
            &[exchange("e1", "a b", "c a")],
            Anchor::Question,
            10,
        )
        .unwrap();
        assert_eq!(eval.mrr, 1.0);
        assert_eq!(eval.hit_rate_at[&1], 1.0);
    }
}
