//! Deterministic synthetic corpus generator for end-to-end checks. Each
//! exchange plants two topic tokens shared (or not) between question and
//! answer, so retrieval quality and label separation are controllable.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Exchange, Party, ReplyLabel, Role};
use crate::error::{Error, Result};
use crate::tensor::mix_seed;

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub n_pairs: usize,
    /// Topic tokens per family; each pair plants one `alpha*` and one
    /// `beta*` token, cycling through the family.
    pub n_topics: usize,
    /// Fraction of pairs whose answer shares neither topic token with its
    /// question (labelled NonReply).
    pub cross_frac: f64,
    /// Fraction of pairs whose answer shares only the `alpha*` token
    /// (labelled IntermediateReply).
    pub intermediate_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_pairs: 500,
            n_topics: 25,
            cross_frac: 0.0,
            intermediate_frac: 0.0,
            seed: 7,
        }
    }
}

const FILLER: &[&str] = &[
    "minister", "house", "member", "government", "committee", "motion",
    "order", "measure", "province", "region", "program", "funding",
    "support", "families", "workers", "economy", "budget", "report",
    "question", "answer", "plan", "policy", "review", "session",
];

const PARTIES: [Party; 4] = [Party::BQ, Party::CPC, Party::LPC, Party::NDP];

fn sentence(rng: &mut ChaCha8Rng, topic_a: &str, topic_b: &str, n_filler: usize) -> String {
    let mut words: Vec<String> = (0..n_filler)
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
        .collect();
    words.push(topic_a.to_string());
    words.push(topic_b.to_string());
    words.shuffle(rng);
    words.join(" ")
}

/// Generates `n_pairs` labelled exchanges. Label counts use the floor rule:
/// `floor(cross_frac * n)` NonReply, `floor(intermediate_frac * n)`
/// IntermediateReply, remainder FullReply; which pairs get which label is a
/// seeded uniform choice.
pub fn make_synthetic(config: &SyntheticConfig) -> Result<Vec<Exchange>> {
    if config.n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be at least 1"));
    }
    if config.n_topics == 0 {
        return Err(Error::invalid("n_topics must be at least 1"));
    }
    if !(0.0..=1.0).contains(&config.cross_frac)
        || !(0.0..=1.0).contains(&config.intermediate_frac)
        || config.cross_frac + config.intermediate_frac > 1.0
    {
        return Err(Error::invalid(
            "cross_frac and intermediate_frac must be in [0,1] and sum to at most 1",
        ));
    }

    let n = config.n_pairs;
    let n_cross = (config.cross_frac * n as f64).floor() as usize;
    let n_inter = (config.intermediate_frac * n as f64).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut label_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    order.shuffle(&mut label_rng);
    let mut labels = vec![ReplyLabel::FullReply; n];
    for &i in &order[..n_cross] {
        labels[i] = ReplyLabel::NonReply;
    }
    for &i in &order[n_cross..n_cross + n_inter] {
        labels[i] = ReplyLabel::IntermediateReply;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 2));
    let base_date = NaiveDate::from_ymd_opt(2006, 1, 23).unwrap();
    // Offset coprime families so the (alpha, beta) pair cycles through all
    // combinations instead of locking together.
    let beta_topics = config.n_topics + 1;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = format!("alpha{}", i % config.n_topics);
        let beta = format!("beta{}", i % beta_topics);
        let (ans_alpha, ans_beta) = match labels[i] {
            ReplyLabel::FullReply => (alpha.clone(), beta.clone()),
            // Shared broad topic, different specifics.
            ReplyLabel::IntermediateReply => {
                (alpha.clone(), format!("beta{}", (i + 1) % beta_topics))
            }
            ReplyLabel::NonReply => (
                format!("alpha{}", (i + 1) % config.n_topics),
                format!("beta{}", (i + 1) % beta_topics),
            ),
        };
        let question_text = sentence(&mut rng, &alpha, &beta, 6);
        let answer_text = sentence(&mut rng, &ans_alpha, &ans_beta, 8);
        out.push(Exchange {
            id: format!("synthetic-{i:05}"),
            question_text,
            answer_text,
            asker_party: PARTIES[i % 4],
            asker_role: if i % 4 == 3 {
                Role::GovernmentBackbench
            } else {
                Role::Opposition
            },
            legislature: 39 + (i as u32 % 5),
            date: base_date + chrono::Duration::days(i as i64),
            label: Some(labels[i]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SyntheticConfig {
            n_pairs: 40,
            n_topics: 5,
            cross_frac: 0.25,
            intermediate_frac: 0.25,
            seed: 11,
        };
        let a = make_synthetic(&cfg).unwrap();
        let b = make_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        for x in &a {
            x.validate().unwrap();
        }
        let cross = a
            .iter()
            .filter(|x| x.label == Some(ReplyLabel::NonReply))
            .count();
        let inter = a
            .iter()
            .filter(|x| x.label == Some(ReplyLabel::IntermediateReply))
            .count();
        assert_eq!(cross, 10);
        assert_eq!(inter, 10);
    }

    #[test]
    fn full_replies_share_both_topics() {
        let cfg = SyntheticConfig {
            n_pairs: 30,
            n_topics: 7,
            cross_frac: 0.3,
            intermediate_frac: 0.3,
            seed: 3,
        };
        for x in make_synthetic(&cfg).unwrap() {
            let q: Vec<&str> = x.question_text.split(' ').collect();
            let a: Vec<&str> = x.answer_text.split(' ').collect();
            let planted = |words: &[&str], prefix: &str| {
                words
                    .iter()
                    .find(|w| w.starts_with(prefix))
                    .unwrap()
                    .to_string()
            };
            let (qa, qb) = (planted(&q, "alpha"), planted(&q, "beta"));
            let (aa, ab) = (planted(&a, "alpha"), planted(&a, "beta"));
            match x.label.unwrap() {
                ReplyLabel::FullReply => {
                    assert_eq!(qa, aa);
                    assert_eq!(qb, ab);
                }
                ReplyLabel::IntermediateReply => {
                    assert_eq!(qa, aa);
                    assert_ne!(qb, ab);
                }
                ReplyLabel::NonReply => {
                    assert_ne!(qa, aa);
                    assert_ne!(qb, ab);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_fractions() {
        let cfg = SyntheticConfig {
            cross_frac: 0.7,
            intermediate_frac: 0.7,
            ..SyntheticConfig::default()
        };
        assert!(make_synthetic(&cfg).is_err());
    }
}
