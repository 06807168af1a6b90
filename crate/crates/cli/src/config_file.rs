//! Flat key=value settings files for training runs and grid searches.
//!
//! A settings file carries optimizer, encoder, and vocabulary keys in one
//! place; unknown keys are rejected. A grid file is a sequence of such
//! blocks separated by blank lines, each block overriding the defaults.

use replyrank_core::encoder::EncoderConfig;
use replyrank_core::training::{Anchor, TrainConfig};
use replyrank_core::{Error, Result};

/// Vocabulary construction settings, resolved at train time from the
/// train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSettings {
    pub min_freq: usize,
    pub max_size: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        VocabSettings {
            min_freq: 2,
            max_size: 30_000,
        }
    }
}

/// Everything a training run needs beyond the corpus: optimizer settings,
/// encoder dimensions, and vocabulary cutoffs. `vocab_size` is filled in
/// after the vocabulary is built.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub vocab: VocabSettings,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            train: TrainConfig::default(),
            encoder: EncoderConfig::with_defaults(0),
            vocab: VocabSettings::default(),
        }
    }
}

impl TrainSettings {
    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let bad = |what: &str| {
            Error::parse(line, format!("{key}: expected {what}, got {value:?}"))
        };
        macro_rules! num {
            ($what:literal) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "alpha" => self.train.alpha = num!("a number"),
            "batch_size" => self.train.batch_size = num!("a positive integer"),
            "learning_rate" => self.train.learning_rate = num!("a number"),
            "epochs" => self.train.epochs = num!("a positive integer"),
            "anchor" => {
                self.train.anchor = match value {
                    "question" => Anchor::Question,
                    "answer" => Anchor::Answer,
                    _ => return Err(bad("question or answer")),
                }
            }
            "adam_beta1" => self.train.adam_beta1 = num!("a number"),
            "adam_beta2" => self.train.adam_beta2 = num!("a number"),
            "adam_epsilon" => self.train.adam_epsilon = num!("a number"),
            "model_dim" => self.encoder.model_dim = num!("a positive integer"),
            "num_layers" => self.encoder.num_layers = num!("a positive integer"),
            "num_heads" => self.encoder.num_heads = num!("a positive integer"),
            "ff_dim" => self.encoder.ff_dim = num!("a positive integer"),
            "max_sequence_length" => {
                self.encoder.max_sequence_length = num!("a positive integer")
            }
            "min_freq" => self.vocab.min_freq = num!("a positive integer"),
            "max_vocab_size" => self.vocab.max_size = num!("a positive integer"),
            _ => return Err(Error::parse(line, format!("unknown setting {key:?}"))),
        }
        Ok(())
    }
}

fn parse_block(
    base: &TrainSettings,
    lines: &[(usize, &str)],
) -> Result<TrainSettings> {
    let mut settings = base.clone();
    for &(line_no, line) in lines {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(line_no, format!("expected key=value, got {line:?}"))
        })?;
        settings.apply(key.trim(), value.trim(), line_no)?;
    }
    Ok(settings)
}

fn content_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Parses a single settings file on top of the defaults.
pub fn parse_settings(text: &str) -> Result<TrainSettings> {
    parse_block(&TrainSettings::default(), &content_lines(text))
}

/// Parses a grid file: blank-line-separated blocks, each a settings file
/// applied on top of the defaults.
pub fn parse_grid(text: &str) -> Result<Vec<TrainSettings>> {
    let base = TrainSettings::default();
    let mut blocks: Vec<Vec<(usize, &str)>> = vec![Vec::new()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
        } else if !line.starts_with('#') {
            blocks.last_mut().unwrap().push((i + 1, line));
        }
    }
    blocks.retain(|b| !b.is_empty());
    if blocks.is_empty() {
        return Err(Error::invalid("grid file has no configuration blocks"));
    }
    blocks.iter().map(|b| parse_block(&base, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_through_empty_file() {
        let s = parse_settings("").unwrap();
        assert_eq!(s, TrainSettings::default());
    }

    #[test]
    fn overrides_and_comments() {
        let s = parse_settings(
            "# optimizer\nalpha = 10\nepochs=3\nanchor = answer\nmodel_dim = 32\nmin_freq = 1\n",
        )
        .unwrap();
        assert_eq!(s.train.alpha, 10.0);
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.anchor, Anchor::Answer);
        assert_eq!(s.encoder.model_dim, 32);
        assert_eq!(s.vocab.min_freq, 1);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_settings("momentum = 0.9\n").unwrap_err();
        assert!(err.to_string().contains("momentum"));
    }

    #[test]
    fn grid_blocks_override_independently() {
        let grid = parse_grid("alpha = 5\n\nalpha = 10\nepochs = 2\n\n").unwrap();
        assert_eq!(grid.len(), 2);
        assert_eq!(grid[0].train.alpha, 5.0);
        assert_eq!(grid[0].train.epochs, TrainConfig::default().epochs);
        assert_eq!(grid[1].train.alpha, 10.0);
        assert_eq!(grid[1].train.epochs, 2);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(parse_grid("\n\n# nothing\n").is_err());
    }
}
