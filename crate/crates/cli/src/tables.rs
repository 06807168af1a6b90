//! Plot-ready CSV emitters and the scores.csv reader. All numeric fields
//! are fixed 6-decimal so outputs are byte-stable across runs.

use std::path::Path;

use replyrank_core::analysis::{GroupStats, PairwiseTest, RankValidityCurve};
use replyrank_core::scoring::ScoredPair;
use replyrank_core::training::TrainReport;
use replyrank_core::{Error, Result};

trait CsvExt<T> {
    fn ce(self) -> Result<T>;
}

impl<T> CsvExt<T> for csv::Result<T> {
    fn ce(self) -> Result<T> {
        self.map_err(|e| Error::invalid(format!("csv: {e}")))
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_scores(path: &Path, scored: &[ScoredPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).ce()?;
    w.write_record(["id", "cosine", "party", "role", "legislature", "label"]).ce()?;
    for s in scored {
        w.write_record([
            s.exchange_id.as_str(),
            &fixed(s.cosine),
            &s.party.to_string(),
            &s.role.to_string(),
            &s.legislature.to_string(),
            &s.label.map(|l| l.to_string()).unwrap_or_default(),
        ]).ce()?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredPair>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).ce()?;
    {
        let headers = r.headers().ce()?;
        let expected = ["id", "cosine", "party", "role", "legislature", "label"];
        if headers.iter().ne(expected) {
            return Err(Error::invalid(format!(
                "unexpected scores header {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.ce()?;
        let field = |j: usize| record.get(j).unwrap_or("");
        let parse_err = |what: &str, v: &str| {
            Error::parse(i + 1, format!("{what}: {v:?}"))
        };
        out.push(ScoredPair {
            exchange_id: field(0).to_string(),
            cosine: field(1)
                .parse()
                .map_err(|_| parse_err("bad cosine", field(1)))?,
            party: field(2).parse()?,
            role: field(3).parse()?,
            legislature: field(4)
                .parse()
                .map_err(|_| parse_err("bad legislature", field(4)))?,
            label: match field(5) {
                "" => None,
                s => Some(s.parse()?),
            },
        });
    }
    Ok(out)
}

fn write_group_rows(w: &mut csv::Writer<std::fs::File>, groups: &[GroupStats]) -> Result<()> {
    w.write_record(["group", "n", "mean", "std", "ci_low", "ci_high"]).ce()?;
    for g in groups {
        let (lo, hi) = match g.ci95 {
            Some((lo, hi)) => (fixed(lo), fixed(hi)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            g.group_key.as_str(),
            &g.n.to_string(),
            &fixed(g.mean),
            &fixed(g.std),
            &lo,
            &hi,
        ]).ce()?;
    }
    Ok(())
}

pub fn write_groups(path: &Path, groups: &[GroupStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).ce()?;
    write_group_rows(&mut w, groups)?;
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn write_tests(path: &Path, tests: &[PairwiseTest]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).ce()?;
    w.write_record([
        "group_a",
        "group_b",
        "mean_diff",
        "t_statistic",
        "p_value",
        "significant_95",
    ]).ce()?;
    for t in tests {
        w.write_record([
            t.group_a.as_str(),
            t.group_b.as_str(),
            &fixed(t.mean_diff),
            &fixed(t.t_statistic),
            &fixed(t.p_value),
            &t.significant_95.to_string(),
        ]).ce()?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Null scores in round order; `ids` gives the question side of each score.
pub fn write_null(path: &Path, ids: &[String], scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).ce()?;
    w.write_record(["round", "question_id", "cosine"]).ce()?;
    for (k, &score) in scores.iter().enumerate() {
        let round = k / ids.len();
        let id = &ids[k % ids.len()];
        w.write_record([&round.to_string(), id.as_str(), &fixed(score)]).ce()?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn write_report(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).ce()?;
    w.write_record(["epoch", "mean_loss", "val_mrr"]).ce()?;
    for e in &report.epochs {
        w.write_record([&e.epoch.to_string(), &fixed(e.mean_loss), &fixed(e.val_mrr)]).ce()?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

pub fn write_curve(path: &Path, curve: &RankValidityCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).ce()?;
    w.write_record([
        "anchor",
        "bin_low",
        "bin_high",
        "n",
        "p_correct_closest",
        "mean_rank",
    ]).ce()?;
    for (anchor, bins) in [
        ("question", &curve.question_anchor),
        ("answer", &curve.answer_anchor),
    ] {
        for b in bins {
            w.write_record([
                anchor,
                &fixed(b.lo),
                &fixed(b.hi),
                &b.n.to_string(),
                &fixed(b.p_correct_closest),
                &fixed(b.mean_rank),
            ]).ce()?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use replyrank_core::corpus::{Party, ReplyLabel, Role};

    #[test]
    fn scores_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let scored = vec![
            ScoredPair {
                exchange_id: "a-1".into(),
                cosine: 0.1234565,
                party: Party::NDP,
                role: Role::Opposition,
                legislature: 41,
                label: Some(ReplyLabel::NonReply),
            },
            ScoredPair {
                exchange_id: "a-2".into(),
                cosine: -0.5,
                party: Party::Other,
                role: Role::Independent,
                legislature: 39,
                label: None,
            },
        ];
        write_scores(&path, &scored).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].exchange_id, "a-1");
        // Cosines survive at 6-decimal precision.
        assert!((back[0].cosine - scored[0].cosine).abs() <= 1e-6);
        assert_eq!(back[1].label, None);
        assert_eq!(back[1].party, Party::Other);
    }
}
