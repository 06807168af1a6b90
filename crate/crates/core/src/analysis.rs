//! Statistical layer: null distributions via random derangements,
//! distribution diagnostics, group means with Welch tests, score
//! correlation, and rank-validity curves.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Exchange;
use crate::encoder::{encode, Embedding, EncoderParams};
use crate::error::{Error, Result};
use crate::scoring::{cosine, rank_correct, ScoredPair};
use crate::tensor::mix_seed;
use crate::tokenizer::Vocabulary;
use crate::training::Anchor;

/// Per-group mean cosine with a normal-approximation 95% confidence
/// interval. The interval and pairwise tests are unavailable for groups
/// with fewer than two members.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group_key: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: Option<(f64, f64)>,
}

/// Welch two-sample t-test between two groups, two-sided.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTest {
    pub group_a: String,
    pub group_b: String,
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub significant_95: bool,
}

/// Metadata fields a score list can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupField {
    Party,
    Role,
    Legislature,
    Label,
}

impl std::str::FromStr for GroupField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "party" => Ok(GroupField::Party),
            "role" => Ok(GroupField::Role),
            "legislature" => Ok(GroupField::Legislature),
            "label" => Ok(GroupField::Label),
            _ => Err(Error::invalid(format!("unknown group field {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    /// Adjusted Fisher-Pearson skewness; absent when undefined (fewer than
    /// three samples or zero variance).
    pub skewness: Option<f64>,
    pub min: f64,
    pub max: f64,
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample mean, sample standard deviation (n-1 denominator), skewness, and
/// range.
pub fn summary_stats(scores: &[f64]) -> Result<SummaryStats> {
    if scores.len() < 2 {
        return Err(Error::invalid("summary_stats needs at least 2 samples"));
    }
    let mean = mean_of(scores);
    let std = sample_var(scores, mean).sqrt();
    Ok(SummaryStats {
        mean,
        std,
        skewness: skewness(scores).ok(),
        min: scores.iter().cloned().fold(f64::INFINITY, f64::min),
        max: scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Adjusted Fisher-Pearson skewness:
/// `G1 = g1 * sqrt(n(n-1)) / (n-2)` with `g1 = m3 / m2^(3/2)`.
pub fn skewness(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 3 {
        return Err(Error::invalid("skewness needs at least 3 samples"));
    }
    let mean = mean_of(xs);
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n as f64;
    if m2 == 0.0 {
        return Err(Error::numeric("skewness undefined for zero variance"));
    }
    let g1 = m3 / m2.powf(1.5);
    let nf = n as f64;
    Ok(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("pearson inputs must have equal length"));
    }
    if a.len() < 3 {
        return Err(Error::invalid("pearson needs at least 3 samples"));
    }
    let (ma, mb) = (mean_of(a), mean_of(b));
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return Err(Error::numeric("pearson undefined for constant input"));
    }
    Ok((num / (da.sqrt() * db.sqrt())).clamp(-1.0, 1.0))
}

/// Welch's unequal-variance two-sample t-test with Welch-Satterthwaite
/// degrees of freedom, two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("welch test needs at least 2 samples per group"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean_of(a), mean_of(b));
    let (va, vb) = (sample_var(a, ma), sample_var(b, mb));
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // Both groups constant: t is 0 if the means agree, infinite
        // otherwise; report a degenerate but informative result.
        let t = if ma == mb { 0.0 } else { f64::INFINITY };
        let p = if ma == mb { 1.0 } else { 0.0 };
        return Ok((t, f64::INFINITY, p));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = student_t_two_sided_p(t, df)?;
    Ok((t, df, p))
}

/// Two-sided p-value of a Student-t statistic via the regularized
/// incomplete beta function: `p = I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::invalid("degrees of freedom must be positive"));
    }
    if !t.is_finite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(special::reg_inc_beta(0.5 * df, 0.5, x)?.clamp(0.0, 1.0))
}

fn group_stats_from(key: String, values: &[f64]) -> GroupStats {
    let n = values.len();
    let mean = mean_of(values);
    let (std, ci95) = if n >= 2 {
        let std = sample_var(values, mean).sqrt();
        let half = 1.96 * std / (n as f64).sqrt();
        (std, Some((mean - half, mean + half)))
    } else {
        (0.0, None)
    };
    GroupStats {
        group_key: key,
        n,
        mean,
        std,
        ci95,
    }
}

fn field_value(pair: &ScoredPair, field: GroupField) -> Result<String> {
    Ok(match field {
        GroupField::Party => pair.party.to_string(),
        GroupField::Role => pair.role.to_string(),
        GroupField::Legislature => pair.legislature.to_string(),
        GroupField::Label => pair
            .label
            .ok_or_else(|| {
                Error::invalid(format!("exchange {} has no label", pair.exchange_id))
            })?
            .to_string(),
    })
}

fn pairwise_tests(groups: &[(String, Vec<f64>)]) -> Result<Vec<PairwiseTest>> {
    let mut tests = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (ka, va) = &groups[i];
            let (kb, vb) = &groups[j];
            if va.len() < 2 || vb.len() < 2 {
                continue; // test unavailable for singleton groups
            }
            let (t, _df, p) = welch_t_test(va, vb)?;
            tests.push(PairwiseTest {
                group_a: ka.clone(),
                group_b: kb.clone(),
                mean_diff: mean_of(va) - mean_of(vb),
                t_statistic: t,
                p_value: p,
                significant_95: p < 0.05,
            });
        }
    }
    Ok(tests)
}

/// Per-group mean cosine with CIs plus all pairwise Welch tests. Group keys
/// join the selected fields with `×` and sort lexicographically.
pub fn group_means(
    scored: &[ScoredPair],
    group_by: &[GroupField],
) -> Result<(Vec<GroupStats>, Vec<PairwiseTest>)> {
    if group_by.is_empty() {
        return Err(Error::invalid("group_means needs at least one field"));
    }
    let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for pair in scored {
        let key = group_by
            .iter()
            .map(|f| field_value(pair, *f))
            .collect::<Result<Vec<_>>>()?
            .join("×");
        buckets.entry(key).or_default().push(pair.cosine);
    }
    let groups: Vec<(String, Vec<f64>)> = buckets.into_iter().collect();
    let stats = groups
        .iter()
        .map(|(k, v)| group_stats_from(k.clone(), v))
        .collect();
    let tests = pairwise_tests(&groups)?;
    Ok((stats, tests))
}

/// Validity-experiment report: category means in the order Full,
/// Intermediate, Non plus pairwise tests and a monotonicity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub groups: Vec<GroupStats>,
    pub tests: Vec<PairwiseTest>,
    /// True when the mean cosines of the present categories strictly
    /// decrease from Full to Non.
    pub monotone: bool,
}

pub fn validity_report(scored: &[ScoredPair]) -> Result<ValidityReport> {
    use crate::corpus::ReplyLabel::*;
    let mut buckets: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for pair in scored {
        let label = pair.label.ok_or_else(|| {
            Error::invalid(format!("exchange {} has no label", pair.exchange_id))
        })?;
        let order = match label {
            FullReply => 0,
            IntermediateReply => 1,
            NonReply => 2,
        };
        buckets.entry(order).or_default().push(pair.cosine);
    }
    let name = |o: u8| {
        match o {
            0 => FullReply,
            1 => IntermediateReply,
            _ => NonReply,
        }
        .to_string()
    };
    let groups: Vec<(String, Vec<f64>)> =
        buckets.into_iter().map(|(o, v)| (name(o), v)).collect();
    let stats: Vec<GroupStats> = groups
        .iter()
        .map(|(k, v)| group_stats_from(k.clone(), v))
        .collect();
    let tests = pairwise_tests(&groups)?;
    let monotone = stats.windows(2).all(|w| w[0].mean > w[1].mean);
    Ok(ValidityReport {
        groups: stats,
        tests,
        monotone,
    })
}

/// Cosine scores of questions paired with randomly deranged answers. Each
/// round draws a uniform derangement (no exchange keeps its own answer) by
/// rejection sampling; output is all `n_rounds * N` cosines in round order.
pub fn null_distribution(
    params: &EncoderParams,
    vocab: &Vocabulary,
    exchanges: &[Exchange],
    n_rounds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if exchanges.len() < 2 {
        return Err(Error::invalid(
            "null_distribution needs at least 2 exchanges (no derangement exists)",
        ));
    }
    if n_rounds < 1 {
        return Err(Error::invalid("n_rounds must be at least 1"));
    }
    let max_len = params.config.max_sequence_length;
    let embed = |texts: Vec<&str>| -> Result<Vec<Embedding>> {
        texts
            .into_par_iter()
            .map(|t| encode(params, &vocab.encode(t, max_len)?))
            .collect()
    };
    let questions = embed(exchanges.iter().map(|x| x.question_text.as_str()).collect())?;
    let answers = embed(exchanges.iter().map(|x| x.answer_text.as_str()).collect())?;

    let n = exchanges.len();
    let mut out = Vec::with_capacity(n_rounds * n);
    for round in 0..n_rounds {
        let perm = sample_derangement(n, mix_seed(seed, round as u64));
        for (i, &j) in perm.iter().enumerate() {
            debug_assert_ne!(i, j);
            out.push(cosine(&questions[i], &answers[j])?);
        }
    }
    Ok(out)
}

/// Uniform random derangement of `0..n` by rejection from uniform
/// permutations.
fn sample_derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &j)| i != j) {
            return perm;
        }
    }
}

/// One bin of a rank-validity curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RankValidityBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Fraction of exchanges in the bin whose correct counterpart ranks
    /// first.
    pub p_correct_closest: f64,
    pub mean_rank: f64,
}

/// Rank-validity curves in both anchor directions, binned by true-pair
/// cosine over its observed range.
#[derive(Debug, Clone, PartialEq)]
pub struct RankValidityCurve {
    pub question_anchor: Vec<RankValidityBin>,
    pub answer_anchor: Vec<RankValidityBin>,
}

pub fn rank_validity_curve(
    params: &EncoderParams,
    vocab: &Vocabulary,
    eval_set: &[Exchange],
    n_bins: usize,
) -> Result<RankValidityCurve> {
    if eval_set.is_empty() {
        return Err(Error::invalid("rank_validity_curve on an empty set"));
    }
    if n_bins < 1 {
        return Err(Error::invalid("n_bins must be at least 1"));
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

    let n = eval_set.len();
    let true_cos: Vec<f64> = (0..n)
        .map(|i| cosine(&questions[i], &answers[i]))
        .collect::<Result<_>>()?;
    let lo = true_cos.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = true_cos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let bin_of = |c: f64| (((c - lo) / width) as usize).min(n_bins - 1);

    let curve_for = |anchors: &[Embedding], candidates: &[Embedding]| -> Result<Vec<RankValidityBin>> {
        let mut rank_bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
        for i in 0..n {
            let (rank, _) = rank_correct(&anchors[i], candidates, i, usize::MAX >> 1)?;
            rank_bins[bin_of(true_cos[i])].push(rank);
        }
        Ok(rank_bins
            .into_iter()
            .enumerate()
            .map(|(b, ranks)| {
                let count = ranks.len();
                let closest = ranks.iter().filter(|&&r| r == 1).count();
                RankValidityBin {
                    lo: lo + b as f64 * width,
                    hi: lo + (b + 1) as f64 * width,
                    n: count,
                    p_correct_closest: if count > 0 {
                        closest as f64 / count as f64
                    } else {
                        0.0
                    },
                    mean_rank: if count > 0 {
                        ranks.iter().sum::<usize>() as f64 / count as f64
                    } else {
                        0.0
                    },
                }
            })
            .collect())
    };

    Ok(RankValidityCurve {
        question_anchor: curve_for(&questions, &answers)?,
        answer_anchor: curve_for(&answers, &questions)?,
    })
}

/// Anchor-direction helper for callers that only need one panel.
pub fn rank_validity_panel(curve: &RankValidityCurve, anchor: Anchor) -> &[RankValidityBin] {
    match anchor {
        Anchor::Question => &curve.question_anchor,
        Anchor::Answer => &curve.answer_anchor,
    }
}

mod special {
    //! Log-gamma (Lanczos) and the regularized incomplete beta function by
    //! Lentz's continued fraction, accurate to roughly 1e-10.

    use crate::error::{Error, Result};

    const LANCZOS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];

    pub fn ln_gamma(x: f64) -> f64 {
        if x < 0.5 {
            // Reflection formula.
            let pi = std::f64::consts::PI;
            (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
        } else {
            let x = x - 1.0;
            let mut acc = LANCZOS[0];
            for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
                acc += c / (x + i as f64);
            }
            let t = x + 7.5;
            0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
        }
    }

    /// Regularized incomplete beta function `I_x(a, b)`.
    pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid("beta parameters must be positive"));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("x must be in [0,1], got {x}")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        if x == 1.0 {
            return Ok(1.0);
        }
        let ln_front =
            ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
        let front = ln_front.exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            Ok(front * betacf(a, b, x)? / a)
        } else {
            Ok(1.0 - front * betacf(b, a, 1.0 - x)? / b)
        }
    }

    /// Continued fraction for the incomplete beta, modified Lentz method.
    fn betacf(a: f64, b: f64, x: f64) -> Result<f64> {
        const MAX_ITER: usize = 300;
        const EPS: f64 = 1e-14;
        const TINY: f64 = 1e-300;

        let qab = a + b;
        let qap = a + 1.0;
        let qam = a - 1.0;
        let mut c = 1.0;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..=MAX_ITER {
            let m = m as f64;
            let m2 = 2.0 * m;
            // Even step.
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
            // Odd step.
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                return Ok(h);
            }
        }
        Err(Error::numeric("incomplete beta continued fraction did not converge"))
    }

}

pub use special::reg_inc_beta;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Party, ReplyLabel, Role};

    fn pair(id: &str, cosine: f64, label: Option<ReplyLabel>) -> ScoredPair {
        ScoredPair {
            exchange_id: id.to_string(),
            cosine,
            party: Party::LPC,
            role: Role::Opposition,
            legislature: 40,
            label,
        }
    }

    #[test]
    fn summary_of_symmetric_sample() {
        let s = summary_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.skewness, Some(0.0));
        assert_eq!((s.min, s.max), (1.0, 3.0));
    }

    #[test]
    fn constant_sample_has_undefined_skewness() {
        let s = summary_stats(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.skewness, None);
        assert!(skewness(&[1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn right_skewed_sample_is_positive() {
        assert!(skewness(&[1.0, 2.0, 3.0, 10.0]).unwrap() > 0.0);
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() <= 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981981).abs() <= 1e-6);
        assert!(pearson(&[1.0, 1.0, 1.0], &a).is_err());
    }

    #[test]
    fn welch_separated_groups_significant() {
        let a: Vec<f64> = (0..50).map(|i| 0.9 + 0.001 * (i % 7) as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| 0.1 + 0.001 * (i % 5) as f64).collect();
        let (t, _df, p) = welch_t_test(&a, &b).unwrap();
        assert!(t > 0.0);
        assert!(p < 0.05);
    }

    #[test]
    fn welch_identical_groups_not_significant() {
        let a = vec![0.5; 30];
        let (t, _df, p) = welch_t_test(&a, &a).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn group_means_two_constant_groups() {
        let mut scored: Vec<ScoredPair> = (0..10).map(|i| pair(&format!("a{i}"), 0.5, None)).collect();
        for i in 0..10 {
            let mut p = pair(&format!("b{i}"), 0.5, None);
            p.party = Party::NDP;
            scored.push(p);
        }
        let (stats, tests) = group_means(&scored, &[GroupField::Party]).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(tests.len(), 1);
        assert_eq!(tests[0].mean_diff, 0.0);
        assert!(!tests[0].significant_95);
    }

    #[test]
    fn group_means_single_group_has_no_tests() {
        let scored: Vec<ScoredPair> = (0..5).map(|i| pair(&format!("a{i}"), 0.4, None)).collect();
        let (stats, tests) = group_means(&scored, &[GroupField::Party]).unwrap();
        assert_eq!(stats.len(), 1);
        assert!(tests.is_empty());
    }

    #[test]
    fn weighted_group_means_recover_global_mean() {
        let mut scored = Vec::new();
        for i in 0..7 {
            scored.push(pair(&format!("a{i}"), 0.3 + 0.01 * i as f64, None));
        }
        for i in 0..13 {
            let mut p = pair(&format!("b{i}"), 0.6 + 0.005 * i as f64, None);
            p.party = Party::BQ;
            scored.push(p);
        }
        let (stats, _) = group_means(&scored, &[GroupField::Party]).unwrap();
        let weighted: f64 =
            stats.iter().map(|g| g.mean * g.n as f64).sum::<f64>() / scored.len() as f64;
        let global = mean_of(&scored.iter().map(|p| p.cosine).collect::<Vec<_>>());
        assert!((weighted - global).abs() <= 1e-9);
    }

    #[test]
    fn validity_monotone_flag() {
        let scored = vec![
            pair("f1", 0.7, Some(ReplyLabel::FullReply)),
            pair("f2", 0.5, Some(ReplyLabel::FullReply)),
            pair("n1", 0.1, Some(ReplyLabel::NonReply)),
        ];
        let report = validity_report(&scored).unwrap();
        assert_eq!(report.groups[0].group_key, "FullReply");
        assert!((report.groups[0].mean - 0.6).abs() <= 1e-12);
        assert!((report.groups[1].mean - 0.1).abs() <= 1e-12);
        assert!(report.monotone);
    }

    #[test]
    fn validity_ties_are_not_monotone() {
        let scored = vec![
            pair("f1", 0.5, Some(ReplyLabel::FullReply)),
            pair("i1", 0.5, Some(ReplyLabel::IntermediateReply)),
            pair("n1", 0.5, Some(ReplyLabel::NonReply)),
        ];
        assert!(!validity_report(&scored).unwrap().monotone);
    }

    #[test]
    fn validity_rejects_unlabeled() {
        let scored = vec![pair("u1", 0.5, None)];
        let err = validity_report(&scored).unwrap_err();
        assert!(err.to_string().contains("u1"), "{err}");
    }

    #[test]
    fn derangements_have_no_fixed_points() {
        for n in [2usize, 3, 5, 8] {
            for seed in 0..20 {
                let perm = sample_derangement(n, seed);
                assert!(perm.iter().enumerate().all(|(i, &j)| i != j));
                let mut sorted = perm.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
