//! Corpus files and their split into (prefix, next line) pairs.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recitation::normalize_line;
use crate::tokenizer::{TokenSeq, Vocab, NEWLINE};

pub const DEFAULT_MIN_PREFIX_LINES: usize = 2;
pub const DEFAULT_MAX_PREFIX_TOKENS: usize = 224;
/// Bits of a pair id reserved for the line index.
pub const LINE_INDEX_BITS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub example_id: u64,
    pub source: String,
    pub text: String,
}

impl CorpusFile {
    pub fn new(example_id: u64, source: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            example_id,
            source: source.into(),
            text: text.into(),
        }
    }

    /// Lines of the file; a trailing newline does not open an extra line.
    pub fn lines(&self) -> Vec<&str> {
        let text = self.text.strip_suffix('\n').unwrap_or(&self.text);
        if text.is_empty() {
            Vec::new()
        } else {
            text.split('\n').collect()
        }
    }

    /// Target line `i` (0-based) plus up to three lines before it.
    pub fn snippet(&self, i: usize) -> String {
        let lines = self.lines();
        let end = (i + 1).min(lines.len());
        lines[i.saturating_sub(3).min(end)..end].join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub pair_id: u64,
    pub example_id: u64,
    /// Number of lines in the prefix; the target is the line at this 0-based index.
    pub line_index: usize,
    pub prefix: TokenSeq,
    pub target_line: String,
}

pub fn pair_id(example_id: u64, line_index: usize) -> Result<u64> {
    if line_index >= 1 << LINE_INDEX_BITS {
        return Err(Error::InvalidConfig(format!(
            "line index {line_index} does not fit in a pair id"
        )));
    }
    example_id
        .checked_mul(1 << LINE_INDEX_BITS)
        .map(|base| base + line_index as u64)
        .ok_or_else(|| Error::InvalidConfig(format!("example id {example_id} too large for pair ids")))
}

/// One pair per line boundary `i >= min_prefix_lines` whose next line is not blank.
pub fn split_pairs(
    file: &CorpusFile,
    vocab: &Vocab,
    min_prefix_lines: usize,
    max_prefix_tokens: usize,
) -> Result<Vec<TrainingPair>> {
    let lines = file.lines();
    let mut tokens = Vec::new();
    // token count after each line
    let mut ends = Vec::with_capacity(lines.len());
    for line in &lines {
        tokens.extend_from_slice(vocab.encode(line).ids());
        tokens.push(NEWLINE);
        ends.push(tokens.len());
    }
    let mut pairs = Vec::new();
    for i in min_prefix_lines.max(1)..lines.len() {
        let target_line = normalize_line(lines[i]);
        if target_line.is_empty() {
            continue;
        }
        let end = ends[i - 1];
        let start = end.saturating_sub(max_prefix_tokens);
        pairs.push(TrainingPair {
            pair_id: pair_id(file.example_id, i)?,
            example_id: file.example_id,
            line_index: i,
            prefix: TokenSeq::new(tokens[start..end].to_vec()),
            target_line,
        });
    }
    Ok(pairs)
}

/// Pairs of every file, ordered by (example_id, line index).
pub fn split_corpus(
    files: &[CorpusFile],
    vocab: &Vocab,
    min_prefix_lines: usize,
    max_prefix_tokens: usize,
) -> Result<Vec<TrainingPair>> {
    let mut order: Vec<&CorpusFile> = files.iter().collect();
    order.sort_by_key(|f| f.example_id);
    if let Some(w) = order.windows(2).find(|w| w[0].example_id == w[1].example_id) {
        return Err(Error::Format(format!("duplicate example_id {}", w[0].example_id)));
    }
    let per_file: Vec<Vec<TrainingPair>> = order
        .par_iter()
        .map(|f| split_pairs(f, vocab, min_prefix_lines, max_prefix_tokens))
        .collect::<Result<_>>()?;
    Ok(per_file.into_iter().flatten().collect())
}

pub fn write_corpus(path: impl AsRef<Path>, files: &[CorpusFile]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for f in files {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusFile>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut files = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let file: CorpusFile = serde_json::from_str(&line)?;
        if file.text.is_empty() {
            return Err(Error::Format(format!("example {} has empty text", file.example_id)));
        }
        files.push(file);
    }
    Ok(files)
}
