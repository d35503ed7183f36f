//! Recitation mining: generated lines that exactly reproduce a rare training line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate_line, Weights};
use crate::pairing::{CorpusFile, TrainingPair};
use crate::tokenizer::{TokenSeq, Vocab};

/// A matched line must occur fewer times than this to count as a recitation.
pub const MAX_OCCURRENCES: usize = 10;

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// Trims the line and collapses inner runs of spaces and tabs to one space.
pub fn normalize_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    for word in line.split([' ', '\t']).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out.trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineEntry {
    pub occurrences: usize,
    pub pair_ids: Vec<u64>,
}

/// Normalized target lines with their corpus frequency and the pairs that end in them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingLineSet {
    lines: BTreeMap<String, LineEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NearestLine {
    pub line: String,
    pub distance: usize,
    pub occurrences: usize,
}

impl TrainingLineSet {
    /// Counts every normalized line of `files`; keys are the pair target lines.
    pub fn build(files: &[CorpusFile], pairs: &[TrainingPair]) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for file in files {
            for line in file.lines() {
                let line = normalize_line(line);
                if !line.is_empty() {
                    *counts.entry(line).or_default() += 1;
                }
            }
        }
        let mut lines: BTreeMap<String, LineEntry> = BTreeMap::new();
        for pair in pairs {
            let entry = lines.entry(pair.target_line.clone()).or_insert_with(|| LineEntry {
                occurrences: counts.get(&pair.target_line).copied().unwrap_or(1),
                pair_ids: Vec::new(),
            });
            entry.pair_ids.push(pair.pair_id);
        }
        for entry in lines.values_mut() {
            entry.pair_ids.sort_unstable();
            entry.pair_ids.dedup();
        }
        Self { lines }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, LineEntry)>) -> Self {
        Self {
            lines: entries
                .into_iter()
                .map(|(line, e)| (normalize_line(&line), e))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn get(&self, line: &str) -> Option<&LineEntry> {
        self.lines.get(line)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LineEntry)> {
        self.lines.iter()
    }
}

/// Closest training line by edit distance after normalization; ties go to the
/// lexicographically smaller line.
pub fn nearest_training_line(line: &str, set: &TrainingLineSet) -> Result<NearestLine> {
    if set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let query = normalize_line(line);
    if let Some(entry) = set.lines.get(&query) {
        return Ok(NearestLine {
            line: query,
            distance: 0,
            occurrences: entry.occurrences,
        });
    }
    let qlen = query.chars().count();
    let mut best: Option<(&String, &LineEntry, usize)> = None;
    for (candidate, entry) in &set.lines {
        if let Some((_, _, d)) = best {
            // length difference is a lower bound on the distance
            if qlen.abs_diff(candidate.chars().count()) >= d {
                continue;
            }
        }
        let d = edit_distance(&query, candidate);
        if best.is_none_or(|(_, _, b)| d < b) {
            best = Some((candidate, entry, d));
        }
    }
    let (line, entry, distance) = best.expect("set is nonempty");
    Ok(NearestLine {
        line: line.clone(),
        distance,
        occurrences: entry.occurrences,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecitationCase {
    pub test_prefix: TokenSeq,
    /// Decoded prefix, for reading only.
    pub prefix_text: String,
    pub predicted_line: String,
    pub matched_line: String,
    pub edit_distance: usize,
    pub occurrences: usize,
    pub ground_truth_pair_ids: Vec<u64>,
}

/// Generates the next line for each prefix and keeps exact matches of rare
/// training lines. Output follows the prefix order.
pub fn mine_recitations(
    w: &Weights<f32>,
    vocab: &Vocab,
    test_prefixes: &[TokenSeq],
    set: &TrainingLineSet,
    k: usize,
) -> Result<Vec<RecitationCase>> {
    if set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let found: Vec<Option<RecitationCase>> = test_prefixes
        .par_iter()
        .map(|prefix| {
            let generated = generate_line(w, prefix, k)?;
            let predicted = normalize_line(&vocab.decode(generated.ids())?);
            if predicted.is_empty() {
                return Ok(None);
            }
            let nearest = nearest_training_line(&predicted, set)?;
            if nearest.distance != 0 || nearest.occurrences >= MAX_OCCURRENCES {
                return Ok(None);
            }
            Ok(Some(RecitationCase {
                test_prefix: prefix.clone(),
                prefix_text: vocab.decode(prefix.ids())?,
                predicted_line: predicted,
                ground_truth_pair_ids: set.lines[&nearest.line].pair_ids.clone(),
                matched_line: nearest.line,
                edit_distance: nearest.distance,
                occurrences: nearest.occurrences,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(found.into_iter().flatten().collect())
}

pub fn write_cases(path: impl AsRef<Path>, cases: &[RecitationCase]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for case in cases {
        serde_json::to_writer(&mut out, case)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cases(path: impl AsRef<Path>) -> Result<Vec<RecitationCase>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut cases = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            cases.push(serde_json::from_str(&line)?);
        }
    }
    Ok(cases)
}
