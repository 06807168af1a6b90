//! Command-line pipeline: ingest transcripts, split, train the biencoder,
//! score exchanges, and run the evaluation and statistics stages. Every
//! file-writing subcommand leaves a `<output>.manifest` beside its output
//! recording the resolved settings and input digests.

mod config_file;
mod manifest;
mod tables;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use replyrank_core::analysis::{
    group_means, null_distribution, pearson, rank_validity_curve, validity_report, GroupField,
};
use replyrank_core::checkpoint;
use replyrank_core::corpus::{
    parse_transcripts, save_corpus, split_corpus, CorpusSplit, Exchange, TranscriptFormat,
};
use replyrank_core::scoring::{evaluate_retrieval, score_corpus};
use replyrank_core::synthetic::{make_synthetic, SyntheticConfig};
use replyrank_core::tokenizer::Vocabulary;
use replyrank_core::training::{train, Anchor, TrainReport};
use replyrank_core::{EncoderParams, Error, Result};

use config_file::TrainSettings;
use manifest::Manifest;

#[derive(Parser)]
#[command(
    name = "replyrank",
    version,
    about = "Answer-quality scoring for question-and-answer transcripts"
)]
struct Cli {
    /// Seed for every random choice (splits, initialization, shuffles).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the parallel stages (scoring, evaluation).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Suppress progress and summary output.
    #[arg(long, global = true, default_value_t = false)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Lines,
    Hansard,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    Question,
    Answer,
}

impl From<AnchorArg> for Anchor {
    fn from(a: AnchorArg) -> Anchor {
        match a {
            AnchorArg::Question => Anchor::Question,
            AnchorArg::Answer => Anchor::Answer,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus with planted topics.
    MakeSynthetic {
        #[arg(long)]
        n_pairs: usize,
        #[arg(long)]
        n_topics: usize,
        /// Fraction of answers swapped to an unrelated topic (NonReply).
        #[arg(long, default_value_t = 0.0)]
        cross_frac: f64,
        /// Fraction of answers sharing only the broad topic (IntermediateReply).
        #[arg(long, default_value_t = 0.0)]
        intermediate_frac: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a transcript file into the line-record corpus format.
    Ingest {
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle and split a corpus into train/validation/inference files.
    Split {
        #[arg(long)]
        train_frac: f64,
        #[arg(long)]
        val_frac: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build a token vocabulary from a corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_freq: usize,
        #[arg(long, default_value_t = 30_000)]
        max_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the biencoder on a split directory.
    Train {
        /// Directory produced by `split`.
        #[arg(long)]
        corpus: PathBuf,
        /// Optional key=value settings file; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Fine-tune from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Train every settings block in a grid file, keep the best by
    /// validation ranking quality.
    GridSearch {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
    },
    /// Score a corpus with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank every exchange's true counterpart and report mean reciprocal
    /// rank and hit rates.
    EvalMrr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        cutoff: usize,
        #[arg(long, value_enum, default_value_t = AnchorArg::Question)]
        anchor: AnchorArg,
    },
    /// Score questions against randomly deranged answers.
    NullDist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group scores by metadata fields with pairwise significance tests.
    Analyze {
        #[arg(long)]
        scores: PathBuf,
        /// Comma-separated fields: party, role, legislature, label.
        #[arg(long)]
        group_by: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reply-category means over a labelled score file.
    Validity {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson correlation between two score files, joined by id.
    Correlate {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Probability of the correct counterpart ranking first, binned by
    /// true-pair score.
    RankCurve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.workers >= 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
        if let Err(e) = pool {
            eprintln!("error: could not start worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    let start = Instant::now();
    match run(&cli) {
        Ok(()) => {
            if !cli.quiet {
                eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Exchange>> {
    parse_transcripts(fs::File::open(path)?, TranscriptFormat::ExchangeLines)
}

fn load_split_dir(dir: &Path, seed: u64) -> Result<CorpusSplit> {
    let part = |name: &str| load_corpus(&dir.join(name));
    Ok(CorpusSplit {
        train: part("train.jsonl")?,
        validation: part("validation.jsonl")?,
        inference: part("inference.jsonl")?,
        seed,
    })
}

fn write_corpus(path: &Path, exchanges: &[Exchange]) -> Result<()> {
    let file = fs::File::create(path)?;
    save_corpus(exchanges, file)
}

fn base_manifest(cli: &Cli, command: &str) -> Manifest {
    let mut m = Manifest::new(command);
    m.set("seed", cli.seed);
    m.set("workers", cli.workers);
    m
}

fn set_settings(m: &mut Manifest, s: &TrainSettings) {
    m.set("alpha", s.train.alpha);
    m.set("batch_size", s.train.batch_size);
    m.set("learning_rate", s.train.learning_rate);
    m.set("epochs", s.train.epochs);
    m.set(
        "anchor",
        match s.train.anchor {
            Anchor::Question => "question",
            Anchor::Answer => "answer",
        },
    );
    m.set("adam_beta1", s.train.adam_beta1);
    m.set("adam_beta2", s.train.adam_beta2);
    m.set("adam_epsilon", s.train.adam_epsilon);
    m.set("model_dim", s.encoder.model_dim);
    m.set("num_layers", s.encoder.num_layers);
    m.set("num_heads", s.encoder.num_heads);
    m.set("ff_dim", s.encoder.ff_dim);
    m.set("max_sequence_length", s.encoder.max_sequence_length);
    m.set("min_freq", s.vocab.min_freq);
    m.set("max_vocab_size", s.vocab.max_size);
}

/// Builds the vocabulary for a train split under the given settings.
fn build_vocab(train: &[Exchange], settings: &config_file::VocabSettings) -> Result<Vocabulary> {
    let texts: Vec<String> = train
        .iter()
        .flat_map(|x| [x.question_text.clone(), x.answer_text.clone()])
        .collect();
    Vocabulary::build(&texts, settings.min_freq, settings.max_size)
}

fn run_training(
    split: &CorpusSplit,
    settings: &TrainSettings,
    seed: u64,
    init_checkpoint: Option<&Path>,
) -> Result<(EncoderParams, Vocabulary, TrainReport)> {
    let mut cfg = settings.train.clone();
    cfg.seed = seed;
    cfg.init_checkpoint = init_checkpoint.map(Path::to_path_buf);

    let (vocab, enc_config) = match init_checkpoint {
        // Fine-tuning keeps the checkpoint's vocabulary and dimensions.
        Some(path) => {
            let (loaded, vocab) = checkpoint::load_from_path(path)?;
            (vocab, loaded.config)
        }
        None => {
            let vocab = build_vocab(&split.train, &settings.vocab)?;
            let mut enc = settings.encoder;
            enc.vocab_size = vocab.size();
            (vocab, enc)
        }
    };
    let (params, report) = train(split, &vocab, enc_config, &cfg)?;
    Ok((params, vocab, report))
}

fn best_val_mrr(report: &TrainReport) -> f64 {
    report.epochs[report.best_epoch - 1].val_mrr
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeSynthetic {
            n_pairs,
            n_topics,
            cross_frac,
            intermediate_frac,
            out,
        } => {
            if *n_topics < 2 || n_pairs < n_topics {
                return Err(Error::invalid("requires n_pairs >= n_topics >= 2"));
            }
            let corpus = make_synthetic(&SyntheticConfig {
                n_pairs: *n_pairs,
                n_topics: *n_topics,
                cross_frac: *cross_frac,
                intermediate_frac: *intermediate_frac,
                seed: cli.seed,
            })?;
            write_corpus(out, &corpus)?;
            let mut m = base_manifest(cli, "make-synthetic");
            m.set("n_pairs", n_pairs);
            m.set("n_topics", n_topics);
            m.set("cross_frac", cross_frac);
            m.set("intermediate_frac", intermediate_frac);
            m.write_beside(out)?;
            if !cli.quiet {
                println!("wrote {} exchanges to {}", corpus.len(), out.display());
            }
            Ok(())
        }
        Command::Ingest { format, input, out } => {
            let fmt = match format {
                FormatArg::Lines => TranscriptFormat::ExchangeLines,
                FormatArg::Hansard => TranscriptFormat::HansardLike,
            };
            let corpus = parse_transcripts(fs::File::open(input)?, fmt)?;
            write_corpus(out, &corpus)?;
            let mut m = base_manifest(cli, "ingest");
            m.set(
                "format",
                match fmt {
                    TranscriptFormat::ExchangeLines => "lines",
                    TranscriptFormat::HansardLike => "hansard",
                },
            );
            m.input("transcript", input)?;
            m.write_beside(out)?;
            if !cli.quiet {
                println!("ingested {} exchanges", corpus.len());
            }
            Ok(())
        }
        Command::Split {
            train_frac,
            val_frac,
            input,
            out_dir,
        } => {
            let corpus = load_corpus(input)?;
            let split = split_corpus(&corpus, *train_frac, *val_frac, cli.seed)?;
            fs::create_dir_all(out_dir)?;
            write_corpus(&out_dir.join("train.jsonl"), &split.train)?;
            write_corpus(&out_dir.join("validation.jsonl"), &split.validation)?;
            write_corpus(&out_dir.join("inference.jsonl"), &split.inference)?;
            let mut m = base_manifest(cli, "split");
            m.set("train_frac", train_frac);
            m.set("val_frac", val_frac);
            m.input("corpus", input)?;
            m.write_to(&out_dir.join("split.manifest"))?;
            if !cli.quiet {
                println!(
                    "split {} exchanges into {}/{}/{}",
                    corpus.len(),
                    split.train.len(),
                    split.validation.len(),
                    split.inference.len()
                );
            }
            Ok(())
        }
        Command::BuildVocab {
            corpus,
            min_freq,
            max_size,
            out,
        } => {
            let exchanges = load_corpus(corpus)?;
            let vocab = build_vocab(
                &exchanges,
                &config_file::VocabSettings {
                    min_freq: *min_freq,
                    max_size: *max_size,
                },
            )?;
            vocab.save(fs::File::create(out)?)?;
            let mut m = base_manifest(cli, "build-vocab");
            m.set("min_freq", min_freq);
            m.set("max_size", max_size);
            m.input("corpus", corpus)?;
            m.write_beside(out)?;
            if !cli.quiet {
                println!("vocabulary of {} tokens", vocab.size());
            }
            Ok(())
        }
        Command::Train {
            corpus,
            config,
            out_checkpoint,
            init_checkpoint,
        } => {
            let settings = match config {
                Some(path) => config_file::parse_settings(&fs::read_to_string(path)?)?,
                None => TrainSettings::default(),
            };
            let split = load_split_dir(corpus, cli.seed)?;
            let (params, vocab, report) =
                run_training(&split, &settings, cli.seed, init_checkpoint.as_deref())?;
            checkpoint::save_to_path(&params, &vocab, out_checkpoint)?;
            let report_path = report_path_for(out_checkpoint);
            tables::write_report(&report_path, &report)?;

            let mut m = base_manifest(cli, "train");
            set_settings(&mut m, &settings);
            for name in ["train.jsonl", "validation.jsonl", "inference.jsonl"] {
                m.input(name, &corpus.join(name))?;
            }
            if let Some(path) = init_checkpoint {
                m.input("init_checkpoint", path)?;
            }
            m.write_beside(out_checkpoint)?;
            m.write_beside(&report_path)?;
            if !cli.quiet {
                println!(
                    "best epoch {} with validation MRR {:.6}",
                    report.best_epoch,
                    best_val_mrr(&report)
                );
            }
            Ok(())
        }
        Command::GridSearch {
            corpus,
            grid,
            out_checkpoint,
        } => {
            let blocks = config_file::parse_grid(&fs::read_to_string(grid)?)?;
            let split = load_split_dir(corpus, cli.seed)?;
            let mut best: Option<(f64, usize, EncoderParams, Vocabulary)> = None;
            for (i, settings) in blocks.iter().enumerate() {
                let (params, vocab, report) = run_training(&split, settings, cli.seed, None)?;
                let mrr = best_val_mrr(&report);
                if !cli.quiet {
                    println!("config {}: validation MRR {:.6}", i + 1, mrr);
                }
                // Earliest block wins ties.
                if best.as_ref().map_or(true, |(b, _, _, _)| mrr > *b) {
                    best = Some((mrr, i, params, vocab));
                }
            }
            let (mrr, idx, params, vocab) = best.unwrap();
            checkpoint::save_to_path(&params, &vocab, out_checkpoint)?;
            let mut m = base_manifest(cli, "grid-search");
            m.set("best_config", idx + 1);
            set_settings(&mut m, &blocks[idx]);
            m.input("grid", grid)?;
            for name in ["train.jsonl", "validation.jsonl", "inference.jsonl"] {
                m.input(name, &corpus.join(name))?;
            }
            m.write_beside(out_checkpoint)?;
            if !cli.quiet {
                println!("kept config {} with validation MRR {mrr:.6}", idx + 1);
            }
            Ok(())
        }
        Command::Score {
            checkpoint: ckpt,
            corpus,
            out,
        } => {
            let (params, vocab) = checkpoint::load_from_path(ckpt)?;
            let exchanges = load_corpus(corpus)?;
            let scored = score_corpus(&params, &vocab, &exchanges)?;
            tables::write_scores(out, &scored)?;
            let mut m = base_manifest(cli, "score");
            m.input("checkpoint", ckpt)?;
            m.input("corpus", corpus)?;
            m.write_beside(out)?;
            if !cli.quiet {
                println!("scored {} exchanges", scored.len());
            }
            Ok(())
        }
        Command::EvalMrr {
            checkpoint: ckpt,
            corpus,
            cutoff,
            anchor,
        } => {
            let (params, vocab) = checkpoint::load_from_path(ckpt)?;
            let exchanges = load_corpus(corpus)?;
            let eval = evaluate_retrieval(&params, &vocab, &exchanges, (*anchor).into(), *cutoff)?;
            println!("mrr={:.6}", eval.mrr);
            for (k, rate) in &eval.hit_rate_at {
                println!("hit_rate_at_{k}={rate:.6}");
            }
            Ok(())
        }
        Command::NullDist {
            checkpoint: ckpt,
            corpus,
            rounds,
            out,
        } => {
            let (params, vocab) = checkpoint::load_from_path(ckpt)?;
            let exchanges = load_corpus(corpus)?;
            let scores = null_distribution(&params, &vocab, &exchanges, *rounds, cli.seed)?;
            let ids: Vec<String> = exchanges.iter().map(|x| x.id.clone()).collect();
            tables::write_null(out, &ids, &scores)?;
            let mut m = base_manifest(cli, "null-dist");
            m.set("rounds", rounds);
            m.input("checkpoint", ckpt)?;
            m.input("corpus", corpus)?;
            m.write_beside(out)?;
            if !cli.quiet {
                println!("{} null scores over {rounds} rounds", scores.len());
            }
            Ok(())
        }
        Command::Analyze {
            scores,
            group_by,
            out,
        } => {
            let scored = tables::read_scores(scores)?;
            let fields: Vec<GroupField> = group_by
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_>>()?;
            let (groups, tests) = group_means(&scored, &fields)?;
            tables::write_groups(out, &groups)?;
            let tests_path = out.with_extension("tests.csv");
            tables::write_tests(&tests_path, &tests)?;
            let mut m = base_manifest(cli, "analyze");
            m.set("group_by", group_by);
            m.input("scores", scores)?;
            m.write_beside(out)?;
            if !cli.quiet {
                println!("{} groups, {} pairwise tests", groups.len(), tests.len());
            }
            Ok(())
        }
        Command::Validity { scores, out } => {
            let scored = tables::read_scores(scores)?;
            let report = validity_report(&scored)?;
            tables::write_groups(out, &report.groups)?;
            let tests_path = out.with_extension("tests.csv");
            tables::write_tests(&tests_path, &report.tests)?;
            let mut m = base_manifest(cli, "validity");
            m.set("monotone", report.monotone);
            m.input("scores", scores)?;
            m.write_beside(out)?;
            if !cli.quiet {
                println!("monotone={}", report.monotone);
            }
            Ok(())
        }
        Command::Correlate { a, b } => {
            let scores_a = tables::read_scores(a)?;
            let scores_b = tables::read_scores(b)?;
            if scores_a.len() != scores_b.len() {
                return Err(Error::invalid(format!(
                    "score files disagree in length: {} vs {}",
                    scores_a.len(),
                    scores_b.len()
                )));
            }
            let by_id: HashMap<&str, f64> = scores_b
                .iter()
                .map(|s| (s.exchange_id.as_str(), s.cosine))
                .collect();
            let mut xs = Vec::with_capacity(scores_a.len());
            let mut ys = Vec::with_capacity(scores_a.len());
            for s in &scores_a {
                let other = by_id.get(s.exchange_id.as_str()).ok_or_else(|| {
                    Error::invalid(format!("id {} missing from second file", s.exchange_id))
                })?;
                xs.push(s.cosine);
                ys.push(*other);
            }
            println!("pearson_r={:.6}", pearson(&xs, &ys)?);
            Ok(())
        }
        Command::RankCurve {
            checkpoint: ckpt,
            corpus,
            bins,
            out,
        } => {
            let (params, vocab) = checkpoint::load_from_path(ckpt)?;
            let exchanges = load_corpus(corpus)?;
            let curve = rank_validity_curve(&params, &vocab, &exchanges, *bins)?;
            tables::write_curve(out, &curve)?;
            let mut m = base_manifest(cli, "rank-curve");
            m.set("bins", bins);
            m.input("checkpoint", ckpt)?;
            m.input("corpus", corpus)?;
            m.write_beside(out)?;
            Ok(())
        }
    }
}

fn report_path_for(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".report.csv");
    PathBuf::from(s)
}
