//! Ingestion, validation, persistence, and splitting of question-answer
//! transcripts with speaker metadata.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

pub use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Party of the member asking the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    BQ,
    CPC,
    LPC,
    NDP,
    Other,
}

/// Role of the asker relative to the government.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Opposition,
    GovernmentBackbench,
    Independent,
}

/// Manual reply-quality label, present only on labeled subsamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReplyLabel {
    FullReply,
    IntermediateReply,
    NonReply,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Party::BQ => "BQ",
            Party::CPC => "CPC",
            Party::LPC => "LPC",
            Party::NDP => "NDP",
            Party::Other => "Other",
        };
        f.write_str(s)
    }
}

impl FromStr for Party {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BQ" => Ok(Party::BQ),
            "CPC" => Ok(Party::CPC),
            "LPC" => Ok(Party::LPC),
            "NDP" => Ok(Party::NDP),
            "Other" => Ok(Party::Other),
            _ => Err(Error::invalid(format!("unknown party {s:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Opposition => "Opposition",
            Role::GovernmentBackbench => "GovernmentBackbench",
            Role::Independent => "Independent",
        };
        f.write_str(s)
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Opposition" => Ok(Role::Opposition),
            "GovernmentBackbench" => Ok(Role::GovernmentBackbench),
            "Independent" => Ok(Role::Independent),
            _ => Err(Error::invalid(format!("unknown role {s:?}"))),
        }
    }
}

impl fmt::Display for ReplyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReplyLabel::FullReply => "FullReply",
            ReplyLabel::IntermediateReply => "IntermediateReply",
            ReplyLabel::NonReply => "NonReply",
        };
        f.write_str(s)
    }
}

impl FromStr for ReplyLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FullReply" => Ok(ReplyLabel::FullReply),
            "IntermediateReply" => Ok(ReplyLabel::IntermediateReply),
            "NonReply" => Ok(ReplyLabel::NonReply),
            _ => Err(Error::invalid(format!("unknown label {s:?}"))),
        }
    }
}

/// One question-answer pair with speaker metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub id: String,
    pub question_text: String,
    pub answer_text: String,
    pub asker_party: Party,
    pub asker_role: Role,
    pub legislature: u32,
    pub date: NaiveDate,
    pub label: Option<ReplyLabel>,
}

impl Exchange {
    /// Checks the per-record invariants, reporting the violated field.
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::invalid("id: must be non-empty"));
        }
        if self.question_text.trim().is_empty() {
            return Err(Error::invalid("question_text: must be non-empty"));
        }
        if self.answer_text.trim().is_empty() {
            return Err(Error::invalid("answer_text: must be non-empty"));
        }
        if self.legislature == 0 {
            return Err(Error::invalid("legislature: must be positive"));
        }
        Ok(())
    }
}

/// Input document formats accepted by [`parse_transcripts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptFormat {
    /// One self-delimiting key-value record per line.
    ExchangeLines,
    /// Simplified XML-style transcript with `<exchange>` elements.
    HansardLike,
}

/// Wire representation of an [`Exchange`] in the ExchangeLines format.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    id: String,
    question: String,
    answer: String,
    party: Party,
    role: Role,
    legislature: u32,
    date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<ReplyLabel>,
}

impl From<&Exchange> for LineRecord {
    fn from(x: &Exchange) -> Self {
        LineRecord {
            id: x.id.clone(),
            question: x.question_text.clone(),
            answer: x.answer_text.clone(),
            party: x.asker_party,
            role: x.asker_role,
            legislature: x.legislature,
            date: x.date,
            label: x.label,
        }
    }
}

impl From<LineRecord> for Exchange {
    fn from(r: LineRecord) -> Self {
        Exchange {
            id: r.id,
            question_text: r.question,
            answer_text: r.answer,
            asker_party: r.party,
            asker_role: r.role,
            legislature: r.legislature,
            date: r.date,
            label: r.label,
        }
    }
}

/// Parses a transcript stream into validated exchanges, in source order.
pub fn parse_transcripts<R: Read>(source: R, format: TranscriptFormat) -> Result<Vec<Exchange>> {
    let exchanges = match format {
        TranscriptFormat::ExchangeLines => parse_exchange_lines(source)?,
        TranscriptFormat::HansardLike => hansard::parse(source)?,
    };
    let mut seen = HashSet::new();
    for x in &exchanges {
        if !seen.insert(x.id.as_str()) {
            return Err(Error::DuplicateId(x.id.clone()));
        }
    }
    Ok(exchanges)
}

fn parse_exchange_lines<R: Read>(source: R) -> Result<Vec<Exchange>> {
    let reader = BufReader::new(source);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LineRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 1, format!("malformed record: {e}")))?;
        let exchange = Exchange::from(record);
        exchange
            .validate()
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(exchange);
    }
    Ok(out)
}

/// Writes exchanges in the ExchangeLines format; `parse_transcripts` of the
/// output reproduces the input field-for-field.
pub fn save_corpus<W: Write>(exchanges: &[Exchange], mut sink: W) -> Result<()> {
    for x in exchanges {
        x.validate()?;
        let record = LineRecord::from(x);
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::numeric(format!("serialization failed: {e}")))?;
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Disjoint train/validation/inference partition of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<Exchange>,
    pub validation: Vec<Exchange>,
    pub inference: Vec<Exchange>,
    pub seed: u64,
}

/// Splits a corpus by a seeded uniform shuffle. Train takes
/// `floor(train_frac * N)` exchanges, validation `floor(val_frac * N)`, and
/// inference the remainder.
pub fn split_corpus(
    exchanges: &[Exchange],
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::invalid(format!(
            "fractions out of range: train_frac {train_frac}, val_frac {val_frac}"
        )));
    }
    let n = exchanges.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    let take = |range: &[usize]| -> Vec<Exchange> {
        range.iter().map(|&i| exchanges[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: take(&indices[..n_train]),
        validation: take(&indices[n_train..n_train + n_val]),
        inference: take(&indices[n_train + n_val..]),
        seed,
    })
}

/// Order-preserving subset of a corpus.
pub fn filter_exchanges<F>(exchanges: &[Exchange], predicate: F) -> Vec<Exchange>
where
    F: Fn(&Exchange) -> bool,
{
    exchanges.iter().filter(|x| predicate(x)).cloned().collect()
}

mod hansard {
    //! Parser for the simplified XML-style transcript format. The grammar is
    //! documented in `docs/hansard_format.md`; this is not a general XML
    //! parser.

    use super::*;

    pub fn parse<R: Read>(source: R) -> Result<Vec<Exchange>> {
        let mut text = String::new();
        BufReader::new(source)
            .read_to_string(&mut text)
            .map_err(Error::Io)?;
        let mut p = Parser {
            input: &text,
            pos: 0,
            record: 0,
        };
        p.parse_document()
    }

    struct Parser<'a> {
        input: &'a str,
        pos: usize,
        record: usize,
    }

    struct Tag {
        name: String,
        attrs: Vec<(String, String)>,
        self_closing: bool,
    }

    impl<'a> Parser<'a> {
        fn err(&self, msg: impl Into<String>) -> Error {
            Error::parse(self.record.max(1), msg)
        }

        fn rest(&self) -> &'a str {
            &self.input[self.pos..]
        }

        fn skip_ws(&mut self) {
            let trimmed = self.rest().trim_start();
            self.pos = self.input.len() - trimmed.len();
        }

        fn parse_document(&mut self) -> Result<Vec<Exchange>> {
            self.skip_ws();
            let root = self.read_open_tag()?;
            if root.name != "transcript" {
                return Err(self.err(format!("expected <transcript>, found <{}>", root.name)));
            }
            let mut out = Vec::new();
            loop {
                self.skip_ws();
                if self.try_close_tag("transcript")? {
                    break;
                }
                self.record += 1;
                out.push(self.parse_exchange()?);
            }
            self.skip_ws();
            if !self.rest().is_empty() {
                return Err(self.err("trailing content after </transcript>"));
            }
            Ok(out)
        }

        fn parse_exchange(&mut self) -> Result<Exchange> {
            let tag = self.read_open_tag()?;
            if tag.name != "exchange" {
                return Err(self.err(format!("expected <exchange>, found <{}>", tag.name)));
            }
            let id = attr(&tag, "id").ok_or_else(|| self.err("exchange missing id attribute"))?;
            let label = match attr(&tag, "label") {
                Some(s) => Some(s.parse::<ReplyLabel>().map_err(|e| self.err(e.to_string()))?),
                None => None,
            };

            self.skip_ws();
            let q_tag = self.read_open_tag()?;
            if q_tag.name != "question" {
                return Err(self.err(format!("expected <question>, found <{}>", q_tag.name)));
            }
            let party = attr(&q_tag, "speaker-party")
                .ok_or_else(|| self.err("question missing speaker-party"))?
                .parse::<Party>()
                .map_err(|e| self.err(e.to_string()))?;
            let role = attr(&q_tag, "speaker-role")
                .ok_or_else(|| self.err("question missing speaker-role"))?
                .parse::<Role>()
                .map_err(|e| self.err(e.to_string()))?;
            let legislature = attr(&q_tag, "legislature")
                .ok_or_else(|| self.err("question missing legislature"))?
                .parse::<u32>()
                .map_err(|_| self.err("legislature: not a positive integer"))?;
            let date_str =
                attr(&q_tag, "date").ok_or_else(|| self.err("question missing date"))?;
            let date = NaiveDate::parse_from_str(&date_str, "%Y-%m-%d")
                .map_err(|_| self.err(format!("date: invalid ISO-8601 date {date_str:?}")))?;
            let question_text = self.read_text_until_close("question")?;

            self.skip_ws();
            let a_tag = self.read_open_tag()?;
            if a_tag.name != "answer" {
                return Err(self.err(format!("expected <answer>, found <{}>", a_tag.name)));
            }
            let answer_text = self.read_text_until_close("answer")?;

            self.skip_ws();
            if !self.try_close_tag("exchange")? {
                return Err(self.err("expected </exchange>"));
            }

            let exchange = Exchange {
                id,
                question_text,
                answer_text,
                asker_party: party,
                asker_role: role,
                legislature,
                date,
                label,
            };
            exchange.validate().map_err(|e| self.err(e.to_string()))?;
            Ok(exchange)
        }

        fn read_open_tag(&mut self) -> Result<Tag> {
            if !self.rest().starts_with('<') {
                return Err(self.err("expected a tag"));
            }
            let end = self.rest().find('>').ok_or_else(|| self.err("unterminated tag"))?;
            let inner = &self.rest()[1..end];
            self.pos += end + 1;
            let self_closing = inner.ends_with('/');
            let inner = inner.trim_end_matches('/').trim();
            let (name, attr_str) = match inner.find(char::is_whitespace) {
                Some(i) => (&inner[..i], inner[i..].trim()),
                None => (inner, ""),
            };
            if name.is_empty() || name.starts_with('/') {
                return Err(self.err(format!("unexpected closing tag </{}>", name.trim_start_matches('/'))));
            }
            let attrs = parse_attrs(attr_str).map_err(|m| self.err(m))?;
            Ok(Tag {
                name: name.to_string(),
                attrs,
                self_closing,
            })
        }

        fn try_close_tag(&mut self, name: &str) -> Result<bool> {
            let pattern = format!("</{name}>");
            if self.rest().starts_with(&pattern) {
                self.pos += pattern.len();
                Ok(true)
            } else {
                Ok(false)
            }
        }

        fn read_text_until_close(&mut self, name: &str) -> Result<String> {
            let pattern = format!("</{name}>");
            let idx = self
                .rest()
                .find(&pattern)
                .ok_or_else(|| self.err(format!("missing {pattern}")))?;
            let raw = &self.rest()[..idx];
            self.pos += idx + pattern.len();
            unescape(raw.trim()).map_err(|m| self.err(m))
        }
    }

    fn attr(tag: &Tag, name: &str) -> Option<String> {
        let _ = tag.self_closing;
        tag.attrs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.clone())
    }

    fn parse_attrs(mut s: &str) -> std::result::Result<Vec<(String, String)>, String> {
        let mut attrs = Vec::new();
        loop {
            s = s.trim_start();
            if s.is_empty() {
                return Ok(attrs);
            }
            let eq = s.find('=').ok_or("attribute missing '='")?;
            let key = s[..eq].trim().to_string();
            s = s[eq + 1..].trim_start();
            if !s.starts_with('"') {
                return Err(format!("attribute {key} value must be double-quoted"));
            }
            let close = s[1..].find('"').ok_or("unterminated attribute value")? + 1;
            let value = unescape(&s[1..close])?;
            attrs.push((key, value));
            s = &s[close + 1..];
        }
    }

    fn unescape(s: &str) -> std::result::Result<String, String> {
        if !s.contains('&') {
            return Ok(s.to_string());
        }
        let mut out = String::with_capacity(s.len());
        let mut rest = s;
        while let Some(i) = rest.find('&') {
            out.push_str(&rest[..i]);
            rest = &rest[i..];
            let semi = rest.find(';').ok_or("unterminated entity")?;
            match &rest[..=semi] {
                "&amp;" => out.push('&'),
                "&lt;" => out.push('<'),
                "&gt;" => out.push('>'),
                "&quot;" => out.push('"'),
                "&apos;" => out.push('\''),
                e => return Err(format!("unknown entity {e}")),
            }
            rest = &rest[semi + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Escapes text for embedding in the transcript format.
    pub fn escape(s: &str) -> String {
        s.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
            .replace('"', "&quot;")
    }
}

pub use hansard::escape as hansard_escape;
