//! Command-line driver; every stage reads and writes files in one directory.

use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use crate::corpus::{self, ToyCorpusConfig};
use crate::eval::{bench_latency, compare_strategies, top_k_accuracy, DEFAULT_BEAM};
use crate::fingerprint::{
    extract_fingerprint, profile_neurons, select_neurons, NeuronSelection, NeuronStats, Strategy,
    DEFAULT_FINGERPRINT_SIZE,
};
use crate::index::{FingerprintIndex, DEFAULT_TOP_K};
use crate::model::{generate_line, ModelConfig, TrainHyper, Weights, DEFAULT_LINE_MAX_LEN};
use crate::pairing::{read_corpus, write_corpus, CorpusFile, DEFAULT_MAX_PREFIX_TOKENS};
use crate::pipeline::{self, ModelShape, PairSettings, Workdir};
use crate::recitation::{mine_recitations, read_cases, write_cases};
use crate::tokenizer::Vocab;

#[derive(Debug, Parser)]
#[command(name = "provgen", version, about = "Retrieve the training examples behind generated code")]
pub struct Cli {
    /// Working directory holding every stage's inputs and outputs.
    #[arg(long, global = true, default_value = "provgen-work")]
    pub dir: PathBuf,
    /// Lines a prefix must span before it forms a pair.
    #[arg(long, global = true, default_value_t = 2)]
    pub min_prefix_lines: usize,
    /// Prefix token cap; defaults to the model's position limit minus room for one line.
    #[arg(long, global = true)]
    pub max_prefix_tokens: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic training and test corpora.
    GenCorpus(GenCorpusArgs),
    /// Build the vocabulary from the training corpus.
    BuildVocab {
        #[arg(long, default_value_t = 512)]
        max_size: usize,
    },
    /// Train the toy generator.
    Train(TrainArgs),
    /// Profile neuron statistics over training prefixes.
    Profile {
        /// Profile at most this many prefixes, evenly spaced.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Choose the critical neurons.
    Select {
        #[arg(long, default_value = "high_variance", value_parser = ["high_variance", "random", "maximum", "minimum", "ffn_variance"])]
        strategy: String,
        #[arg(long = "f", default_value_t = DEFAULT_FINGERPRINT_SIZE)]
        f: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fingerprint every training pair and write the index.
    Fingerprint,
    /// Generate the next line for a prefix and list the closest training examples.
    Query(QueryArgs),
    /// Mine recitation cases from the test corpus.
    Recitations {
        #[arg(long, default_value_t = DEFAULT_BEAM)]
        beam: usize,
    },
    /// Score the index against the recitation cases.
    Evaluate {
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
    },
    /// Compare neuron selection strategies on the recitation cases.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "high_variance,random,maximum,minimum,ffn_variance")]
        strategies: Vec<String>,
        /// Seeds of the random strategy.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long = "f", default_value_t = DEFAULT_FINGERPRINT_SIZE)]
        f: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
    },
    /// Time retrieval against next-line generation.
    Bench {
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_BEAM)]
        beam: usize,
    },
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub files: usize,
    #[arg(long, default_value_t = 50)]
    pub min_lines: usize,
    #[arg(long, default_value_t = 150)]
    pub max_lines: usize,
    #[arg(long, default_value_t = 30)]
    pub planted: usize,
    #[arg(long, default_value_t = 60)]
    pub test_files: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training window length.
    #[arg(long, default_value_t = 64)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 80)]
    pub max_pos: usize,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "input")]
pub struct QueryInput {
    /// File holding the code before the cursor.
    #[arg(long)]
    pub prefix_file: Option<PathBuf>,
    /// Read the prefix from standard input.
    #[arg(long)]
    pub stdin: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub input: QueryInput,
    /// Number of training examples to list.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_BEAM)]
    pub beam: usize,
    #[arg(long)]
    pub json: bool,
}

/// Parses `argv` and runs one stage. Returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = std::env::var("PROVGEN_THREADS").ok().and_then(|v| v.parse().ok()) {
        // fails only if a pool already exists, which then stays in use
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

struct Stage {
    dir: Workdir,
    min_prefix_lines: usize,
    max_prefix_tokens: Option<usize>,
}

impl Stage {
    fn pairs(&self, config: &ModelConfig) -> PairSettings {
        PairSettings {
            min_prefix_lines: self.min_prefix_lines,
            max_prefix_tokens: self.max_prefix_tokens.unwrap_or_else(|| {
                config
                    .max_pos
                    .saturating_sub(DEFAULT_LINE_MAX_LEN)
                    .clamp(1, DEFAULT_MAX_PREFIX_TOKENS)
            }),
        }
    }

    fn corpus(&self) -> anyhow::Result<Vec<CorpusFile>> {
        let path = self.dir.corpus();
        read_corpus(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn test_corpus(&self) -> anyhow::Result<Vec<CorpusFile>> {
        let path = self.dir.test_corpus();
        read_corpus(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn vocab(&self) -> anyhow::Result<Vocab> {
        let path = self.dir.vocab();
        Vocab::load(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn weights(&self) -> anyhow::Result<Weights<f32>> {
        let path = self.dir.weights();
        Weights::load(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn selection(&self) -> anyhow::Result<NeuronSelection> {
        let path = self.dir.selection();
        NeuronSelection::load(&path).with_context(|| format!("reading {}", path.display()))
    }

    /// Index checked against the current selection file.
    fn index(&self, selection: &NeuronSelection) -> anyhow::Result<FingerprintIndex> {
        let path = self.dir.index();
        let index = FingerprintIndex::load(&path).with_context(|| format!("reading {}", path.display()))?;
        if index.selection_hash() != selection.hash() {
            bail!(crate::Error::SelectionHashMismatch {
                expected: index.selection_hash(),
                got: selection.hash(),
            });
        }
        Ok(index)
    }
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> anyhow::Result<()> {
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn parse_strategy(name: &str, seed: u64) -> anyhow::Result<Strategy> {
    Strategy::from_name(name, seed).with_context(|| format!("unknown strategy {name:?}"))
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let ctx = Stage {
        dir: Workdir::new(&cli.dir),
        min_prefix_lines: cli.min_prefix_lines,
        max_prefix_tokens: cli.max_prefix_tokens,
    };
    let dir = &ctx.dir;
    match &cli.command {
        Command::GenCorpus(a) => {
            fs::create_dir_all(dir.root())?;
            let config = ToyCorpusConfig {
                seed: a.seed,
                n_files: a.files,
                min_lines: a.min_lines,
                max_lines: a.max_lines,
                n_planted: a.planted,
                n_test_files: a.test_files,
                ..ToyCorpusConfig::default()
            };
            if config.min_lines == 0 || config.min_lines > config.max_lines || config.n_files == 0 {
                bail!("need 1 <= --min-lines <= --max-lines and --files >= 1");
            }
            let toy = corpus::generate(&config);
            write_corpus(dir.corpus(), &toy.train)?;
            write_corpus(dir.test_corpus(), &toy.test)?;
            println!("wrote {} training and {} test files", toy.train.len(), toy.test.len());
        }
        Command::BuildVocab { max_size } => {
            let vocab = pipeline::build_vocab(&ctx.corpus()?, *max_size)?;
            vocab.save(dir.vocab())?;
            println!("vocabulary of {} tokens", vocab.len());
        }
        Command::Train(a) => {
            let vocab = ctx.vocab()?;
            let files = ctx.corpus()?;
            let shape = ModelShape {
                n_layers: a.layers,
                d_model: a.d_model,
                n_heads: a.heads,
                d_ff: a.d_ff,
                max_pos: a.max_pos,
            };
            let hyper = TrainHyper {
                steps: a.steps,
                batch: a.batch,
                lr: a.lr,
                seed: a.seed,
                seq_len: a.seq_len,
            };
            let seqs = pipeline::encode_files(&files, &vocab);
            let outcome = crate::model::train_toy(&seqs, shape.config(vocab.len()), hyper)?;
            outcome.weights.save(dir.weights())?;
            write_json(dir.train_log(), &json!({ "hyper": hyper, "losses": outcome.losses }))?;
            println!(
                "trained {} steps; loss {:.4} -> {:.4}",
                a.steps,
                outcome.initial_loss().unwrap_or(f64::NAN),
                outcome.final_loss().unwrap_or(f64::NAN)
            );
        }
        Command::Profile { limit } => {
            let w = ctx.weights()?;
            let vocab = ctx.vocab()?;
            let prefixes = pipeline::pair_prefixes(&ctx.corpus()?, &vocab, ctx.pairs(&w.config))?;
            let sample = pipeline::spaced_sample(&prefixes, *limit);
            info!("profiling {} of {} prefixes", sample.len(), prefixes.len());
            let stats = profile_neurons(&w, &sample)?;
            stats.save(dir.stats())?;
            println!("profiled {} prefixes", stats.count);
        }
        Command::Select { strategy, f, seed } => {
            let stats = NeuronStats::load(dir.stats())?;
            let selection = select_neurons(&stats, parse_strategy(strategy, *seed)?, *f)?;
            selection.save(dir.selection())?;
            println!("selected {} neurons ({}), hash {}", selection.len(), selection.strategy(), selection.hash());
        }
        Command::Fingerprint => {
            let w = ctx.weights()?;
            let vocab = ctx.vocab()?;
            let selection = ctx.selection()?;
            let pairs = pipeline::indexed_pairs(&ctx.corpus()?, &vocab, ctx.pairs(&w.config))?;
            let index = pipeline::build_index(&w, &selection, &pairs)?;
            index.save(dir.index())?;
            println!("indexed {} records with F={}", index.len(), index.dim());
        }
        Command::Query(a) => query(&ctx, a)?,
        Command::Recitations { beam } => {
            let w = ctx.weights()?;
            let vocab = ctx.vocab()?;
            let pairs = ctx.pairs(&w.config);
            let set = pipeline::line_set(&ctx.corpus()?, &vocab, pairs)?;
            let prefixes = pipeline::pair_prefixes(&ctx.test_corpus()?, &vocab, pairs)?;
            let cases = mine_recitations(&w, &vocab, &prefixes, &set, *beam)?;
            write_cases(dir.cases(), &cases)?;
            println!("mined {} recitation cases from {} test prefixes", cases.len(), prefixes.len());
        }
        Command::Evaluate { ks } => {
            let w = ctx.weights()?;
            let selection = ctx.selection()?;
            let index = ctx.index(&selection)?;
            let cases = read_cases(dir.cases())?;
            let report = top_k_accuracy(&cases, &index, &w, &selection, ks)?;
            write_json(dir.report("evaluate"), &report)?;
            for (k, acc) in report.ks.iter().zip(&report.accuracy) {
                println!("Acc@{k}: {:.2}%", 100.0 * acc);
            }
            println!("cases: {}", report.case_count);
        }
        Command::Compare { strategies, seeds, f, ks } => {
            let w = ctx.weights()?;
            let vocab = ctx.vocab()?;
            let pairs = pipeline::indexed_pairs(&ctx.corpus()?, &vocab, ctx.pairs(&w.config))?;
            let cases = read_cases(dir.cases())?;
            let strategies = strategies
                .iter()
                .map(|s| parse_strategy(s, 0))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let table = compare_strategies(&w, &pairs, &cases, &strategies, *f, seeds, ks)?;
            write_json(dir.report("compare"), &table)?;
            fs::write(dir.root().join("compare.txt"), table.render())?;
            print!("{}", table.render());
        }
        Command::Bench { warmup, iters, beam } => {
            let w = ctx.weights()?;
            let vocab = ctx.vocab()?;
            let selection = ctx.selection()?;
            let index = ctx.index(&selection)?;
            let queries = pipeline::pair_prefixes(&ctx.test_corpus()?, &vocab, ctx.pairs(&w.config))?;
            let report = bench_latency(&w, &selection, &index, &queries, *warmup, *iters, *beam)?;
            write_json(dir.report("bench"), &report)?;
            println!(
                "retrieval mean {:.3} ms (median {:.3}, p95 {:.3}) over {} records, F={}",
                report.retrieval_mean_ms, report.retrieval_median_ms, report.retrieval_p95_ms, report.record_count, report.f
            );
            println!(
                "generation mean {:.3} ms at beam {}; ratio {:.1}x",
                report.generation_mean_ms, report.beam_width, report.ratio
            );
            println!("{}", report.hardware);
        }
    }
    Ok(())
}

fn query(ctx: &Stage, a: &QueryArgs) -> anyhow::Result<()> {
    let text = match &a.input.prefix_file {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let w = ctx.weights()?;
    let vocab = ctx.vocab()?;
    let selection = ctx.selection()?;
    let index = ctx.index(&selection)?;
    let mut prefix = vocab.encode(&text);
    prefix.truncate_front(ctx.pairs(&w.config).max_prefix_tokens);
    let generated = vocab.decode(generate_line(&w, &prefix, a.beam)?.ids())?;
    let fp = extract_fingerprint(&w, &selection, &prefix)?;
    let hits = index.query(&fp, a.k)?;
    if a.json {
        let results: Vec<_> = hits
            .iter()
            .enumerate()
            .map(|(i, h)| {
                json!({
                    "rank": i + 1,
                    "pair_id": h.record.pair_id,
                    "example_id": h.record.example_id,
                    "distance": h.distance,
                    "snippet": h.record.snippet,
                    "source": h.record.source,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&json!({ "generated": generated, "results": results }))?);
    } else {
        println!("generated: {generated}");
        for (i, h) in hits.iter().enumerate() {
            println!(
                "#{:<3} distance {:.6}  pair {}  {}",
                i + 1,
                h.distance,
                h.record.pair_id,
                h.record.source
            );
            for line in h.record.snippet.lines() {
                println!("      {line}");
            }
        }
    }
    Ok(())
}
