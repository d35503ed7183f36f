//! Stage helpers shared by the command line and the end-to-end tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, ToyCorpus, ToyCorpusConfig};
use crate::error::{Error, Result};
use crate::eval::IndexedPair;
use crate::fingerprint::{extract_fingerprints, NeuronSelection};
use crate::index::{FingerprintIndex, FingerprintRecord, RecordMeta};
use crate::model::{train_toy, ModelConfig, TrainHyper, TrainOutcome};
use crate::pairing::{split_corpus, CorpusFile};
use crate::recitation::TrainingLineSet;
use crate::tokenizer::{TokenSeq, Vocab};

/// Default file names inside a pipeline working directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn test_corpus(&self) -> PathBuf {
        self.root.join("test.jsonl")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn weights(&self) -> PathBuf {
        self.root.join("weights.bin")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.json")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.bin")
    }

    pub fn cases(&self) -> PathBuf {
        self.root.join("cases.jsonl")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.json"))
    }
}

/// How corpus files become prefix/target pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSettings {
    pub min_prefix_lines: usize,
    pub max_prefix_tokens: usize,
}

impl Default for PairSettings {
    fn default() -> Self {
        Self {
            min_prefix_lines: crate::pairing::DEFAULT_MIN_PREFIX_LINES,
            max_prefix_tokens: crate::pairing::DEFAULT_MAX_PREFIX_TOKENS,
        }
    }
}

/// Each file's full token sequence, for training.
pub fn encode_files(files: &[CorpusFile], vocab: &Vocab) -> Vec<TokenSeq> {
    files.iter().map(|f| vocab.encode(&f.text)).collect()
}

pub fn build_vocab(files: &[CorpusFile], max_size: usize) -> Result<Vocab> {
    let texts: Vec<&str> = files.iter().map(|f| f.text.as_str()).collect();
    Vocab::build(&texts, max_size)
}

/// Every training pair with the metadata its index record carries.
pub fn indexed_pairs(files: &[CorpusFile], vocab: &Vocab, settings: PairSettings) -> Result<Vec<IndexedPair>> {
    let pairs = split_corpus(files, vocab, settings.min_prefix_lines, settings.max_prefix_tokens)?;
    let by_id: std::collections::HashMap<u64, &CorpusFile> = files.iter().map(|f| (f.example_id, f)).collect();
    Ok(pairs
        .into_iter()
        .map(|p| {
            let file = by_id[&p.example_id];
            IndexedPair {
                meta: RecordMeta {
                    pair_id: p.pair_id,
                    example_id: p.example_id,
                    snippet: file.snippet(p.line_index),
                    source: file.source.clone(),
                },
                prefix: p.prefix,
            }
        })
        .collect())
}

/// Prefixes of every pair of the given files.
pub fn pair_prefixes(files: &[CorpusFile], vocab: &Vocab, settings: PairSettings) -> Result<Vec<TokenSeq>> {
    Ok(split_corpus(files, vocab, settings.min_prefix_lines, settings.max_prefix_tokens)?
        .into_iter()
        .map(|p| p.prefix)
        .collect())
}

/// At most `limit` prefixes, evenly spaced through the list.
pub fn spaced_sample(prefixes: &[TokenSeq], limit: Option<usize>) -> Vec<TokenSeq> {
    match limit {
        Some(limit) if limit > 0 && limit < prefixes.len() => (0..limit)
            .map(|i| prefixes[i * prefixes.len() / limit].clone())
            .collect(),
        _ => prefixes.to_vec(),
    }
}

pub fn line_set(files: &[CorpusFile], vocab: &Vocab, settings: PairSettings) -> Result<TrainingLineSet> {
    let pairs = split_corpus(files, vocab, settings.min_prefix_lines, settings.max_prefix_tokens)?;
    Ok(TrainingLineSet::build(files, &pairs))
}

/// Fingerprints every pair under `selection` and builds the exact index.
pub fn build_index(
    w: &crate::model::Weights<f32>,
    selection: &NeuronSelection,
    pairs: &[IndexedPair],
) -> Result<FingerprintIndex> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let prefixes: Vec<TokenSeq> = pairs.iter().map(|p| p.prefix.clone()).collect();
    let fps = extract_fingerprints(w, selection, &prefixes)?;
    let records = pairs
        .iter()
        .zip(fps)
        .map(|(p, fingerprint)| FingerprintRecord {
            pair_id: p.meta.pair_id,
            example_id: p.meta.example_id,
            fingerprint,
            snippet: p.meta.snippet.clone(),
            source: p.meta.source.clone(),
        })
        .collect();
    FingerprintIndex::build(records, selection.hash())
}

/// Model shape for the toy generator; the vocabulary size comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_pos: usize,
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_pos: self.max_pos,
            ..ModelConfig::with_vocab(vocab_size)
        }
    }
}

/// Settings of the planted-recitation benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySettings {
    pub corpus: ToyCorpusConfig,
    pub vocab_size: usize,
    pub shape: ModelShape,
    pub train: TrainHyper,
    pub pairs: PairSettings,
}

impl Default for ToySettings {
    fn default() -> Self {
        Self {
            corpus: ToyCorpusConfig::default(),
            vocab_size: 512,
            shape: ModelShape {
                n_layers: 2,
                d_model: 64,
                n_heads: 4,
                d_ff: 128,
                max_pos: 80,
            },
            train: TrainHyper {
                steps: 5000,
                batch: 8,
                lr: 3e-3,
                seed: 0,
                seq_len: 64,
            },
            pairs: PairSettings {
                min_prefix_lines: 2,
                max_prefix_tokens: 48,
            },
        }
    }
}

/// A generated corpus with its vocabulary and trained model.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub corpus: ToyCorpus,
    pub vocab: Vocab,
    pub outcome: TrainOutcome,
}

/// Generates the corpus, builds the vocabulary and trains the model.
pub fn train_toy_run(settings: &ToySettings) -> Result<ToyRun> {
    let corpus = corpus::generate(&settings.corpus);
    let vocab = build_vocab(&corpus.train, settings.vocab_size)?;
    let seqs = encode_files(&corpus.train, &vocab);
    let outcome = train_toy(&seqs, settings.shape.config(vocab.len()), settings.train)?;
    Ok(ToyRun {
        corpus,
        vocab,
        outcome,
    })
}
