//! Retrieval accuracy on recitation cases, strategy comparison and latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{
    collect_activations, extract_fingerprint, select_neurons, Fingerprint, NeuronSelection, NeuronStats, Strategy,
};
use crate::index::{FingerprintIndex, FingerprintRecord, RecordMeta, DEFAULT_TOP_K};
use crate::model::{generate_line, Weights};
use crate::recitation::RecitationCase;
use crate::tokenizer::TokenSeq;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
/// Beam width used for generation timing.
pub const DEFAULT_BEAM: usize = 10;
pub const MIN_WARMUP: usize = 5;
pub const MIN_ITERS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccReport {
    pub label: String,
    pub ks: Vec<usize>,
    pub hits: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub case_count: usize,
}

impl AccReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.accuracy[i])
    }

    /// Accuracy never decreases as k grows.
    pub fn is_monotone(&self) -> bool {
        let mut pairs: Vec<(usize, f64)> = self.ks.iter().copied().zip(self.accuracy.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        pairs.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

fn normalized_ks(ks: &[usize]) -> Result<Vec<usize>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("ks must be nonempty and positive".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

/// Acc@k given one query fingerprint per case.
pub fn accuracy_from_fingerprints(
    label: &str,
    cases: &[RecitationCase],
    queries: &[Fingerprint],
    index: &FingerprintIndex,
    ks: &[usize],
) -> Result<AccReport> {
    if cases.is_empty() {
        return Err(Error::EmptyCaseSet);
    }
    let ks = normalized_ks(ks)?;
    let k_max = *ks.last().expect("nonempty");
    let mut hits = vec![0usize; ks.len()];
    for (case, q) in cases.iter().zip(queries) {
        let results = index.query(q, k_max)?;
        let first = results
            .iter()
            .position(|h| case.ground_truth_pair_ids.contains(&h.record.pair_id));
        if let Some(rank) = first {
            for (h, &k) in hits.iter_mut().zip(&ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    let n = cases.len();
    Ok(AccReport {
        label: label.to_string(),
        accuracy: hits.iter().map(|&h| h as f64 / n as f64).collect(),
        hits,
        ks,
        case_count: n,
    })
}

/// Fingerprints every case prefix and scores the index against its ground truth.
pub fn top_k_accuracy(
    cases: &[RecitationCase],
    index: &FingerprintIndex,
    w: &Weights<f32>,
    selection: &NeuronSelection,
    ks: &[usize],
) -> Result<AccReport> {
    if cases.is_empty() {
        return Err(Error::EmptyCaseSet);
    }
    if index.selection_hash() != selection.hash() {
        return Err(Error::SelectionHashMismatch {
            expected: index.selection_hash(),
            got: selection.hash(),
        });
    }
    selection.check_config(&w.config)?;
    let prefixes: Vec<TokenSeq> = cases.iter().map(|c| c.test_prefix.clone()).collect();
    let queries: Vec<Fingerprint> = collect_activations(w, &prefixes)?
        .iter()
        .map(|a| selection.gather(a, w.config.d_model))
        .collect();
    accuracy_from_fingerprints(&selection.strategy().to_string(), cases, &queries, index, ks)
}

/// Training pairs to index: prefix plus record metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedPair {
    pub prefix: TokenSeq,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub label: String,
    pub ks: Vec<usize>,
    /// Mean accuracy over the row's runs.
    pub accuracy: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub runs: Vec<AccReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub f: usize,
    pub case_count: usize,
    pub rows: Vec<StrategyRow>,
}

impl StrategyTable {
    pub fn row(&self, label: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Aligned text table, widest k first.
    pub fn render(&self) -> String {
        let mut ks: Vec<usize> = self.rows.first().map(|r| r.ks.clone()).unwrap_or_default();
        ks.reverse();
        let mut header = vec!["Method".to_string()];
        header.extend(ks.iter().map(|k| format!("Acc@{k}")));
        let mut body: Vec<Vec<String>> = Vec::new();
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            for k in &ks {
                let i = row.ks.iter().position(|x| x == k).expect("shared ks");
                let mut cell = format!("{:.2}%", 100.0 * row.accuracy[i]);
                if row.runs.len() > 1 {
                    cell += &format!(" [{:.2}, {:.2}]", 100.0 * row.min[i], 100.0 * row.max[i]);
                }
                cells.push(cell);
            }
            body.push(cells);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| body.iter().chain([&header]).map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header) + "\n";
        out += &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-");
        out.push('\n');
        for r in &body {
            out += &line(r);
            out.push('\n');
        }
        out
    }
}

fn summarize(label: &str, runs: Vec<AccReport>) -> StrategyRow {
    let ks = runs[0].ks.clone();
    let n = runs.len() as f64;
    let col = |i: usize| runs.iter().map(move |r| r.accuracy[i]);
    StrategyRow {
        label: label.to_string(),
        accuracy: (0..ks.len()).map(|i| col(i).sum::<f64>() / n).collect(),
        min: (0..ks.len()).map(|i| col(i).fold(f64::INFINITY, f64::min)).collect(),
        max: (0..ks.len()).map(|i| col(i).fold(f64::NEG_INFINITY, f64::max)).collect(),
        ks,
        runs,
    }
}

/// Profiles the training prefixes once, then for each strategy selects `f`
/// neurons, indexes every pair and scores the cases. `Random` gets one run per
/// seed; its row holds the mean and the min/max over seeds.
pub fn compare_strategies(
    w: &Weights<f32>,
    pairs: &[IndexedPair],
    cases: &[RecitationCase],
    strategies: &[Strategy],
    f: usize,
    seeds: &[u64],
    ks: &[usize],
) -> Result<StrategyTable> {
    if cases.is_empty() {
        return Err(Error::EmptyCaseSet);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let d_model = w.config.d_model;
    let prefixes: Vec<TokenSeq> = pairs.iter().map(|p| p.prefix.clone()).collect();
    let train_acts = collect_activations(w, &prefixes)?;
    let case_prefixes: Vec<TokenSeq> = cases.iter().map(|c| c.test_prefix.clone()).collect();
    let case_acts = collect_activations(w, &case_prefixes)?;
    let mut stats = NeuronStats::new(w.config.n_layers, d_model);
    for a in &train_acts {
        stats.push(a)?;
    }
    let run = |selection: &NeuronSelection| -> Result<AccReport> {
        let records = pairs
            .iter()
            .zip(&train_acts)
            .map(|(p, a)| FingerprintRecord {
                pair_id: p.meta.pair_id,
                example_id: p.meta.example_id,
                fingerprint: selection.gather(a, d_model),
                snippet: p.meta.snippet.clone(),
                source: p.meta.source.clone(),
            })
            .collect();
        let index = FingerprintIndex::build(records, selection.hash())?;
        let queries: Vec<Fingerprint> = case_acts.iter().map(|a| selection.gather(a, d_model)).collect();
        accuracy_from_fingerprints(&selection.strategy().to_string(), cases, &queries, &index, ks)
    };
    let mut rows = Vec::new();
    for strategy in strategies {
        let runs = match strategy {
            Strategy::Random(_) => {
                if seeds.is_empty() {
                    return Err(Error::InvalidConfig("random strategy needs at least one seed".into()));
                }
                seeds
                    .iter()
                    .map(|&s| run(&select_neurons(&stats, Strategy::Random(s), f)?))
                    .collect::<Result<Vec<_>>>()?
            }
            s => vec![run(&select_neurons(&stats, *s, f)?)?],
        };
        rows.push(summarize(strategy.label(), runs));
    }
    Ok(StrategyTable {
        f,
        case_count: cases.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub retrieval_mean_ms: f64,
    pub retrieval_median_ms: f64,
    pub retrieval_p95_ms: f64,
    pub generation_mean_ms: f64,
    /// Generation latency over retrieval latency.
    pub ratio: f64,
    pub beam_width: usize,
    pub record_count: usize,
    pub f: usize,
    pub iters: usize,
    pub hardware: String,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn hardware_note() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{model}; {cpus} logical CPUs; {}-{}; timed on 1 worker thread",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// Times retrieval (fingerprint + exact top-10 query) and next-line generation
/// with beam width `beam` on a single worker thread.
pub fn bench_latency(
    w: &Weights<f32>,
    selection: &NeuronSelection,
    index: &FingerprintIndex,
    queries: &[TokenSeq],
    warmup: usize,
    iters: usize,
    beam: usize,
) -> Result<LatencyReport> {
    if warmup < MIN_WARMUP || iters < MIN_ITERS {
        return Err(Error::InsufficientSamples {
            warmup,
            iters,
            min_warmup: MIN_WARMUP,
            min_iters: MIN_ITERS,
        });
    }
    if queries.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        let retrieve = |q: &TokenSeq| -> Result<()> {
            let fp = extract_fingerprint(w, selection, q)?;
            std::hint::black_box(index.query(&fp, DEFAULT_TOP_K)?);
            Ok(())
        };
        let generate = |q: &TokenSeq| -> Result<()> {
            std::hint::black_box(generate_line(w, q, beam)?);
            Ok(())
        };
        let time = |f: &dyn Fn(&TokenSeq) -> Result<()>| -> Result<Vec<f64>> {
            for i in 0..warmup {
                f(&queries[i % queries.len()])?;
            }
            (0..iters)
                .map(|i| {
                    let q = &queries[i % queries.len()];
                    let start = Instant::now();
                    f(q)?;
                    Ok(start.elapsed().as_secs_f64() * 1e3)
                })
                .collect()
        };
        let mut retrieval = time(&retrieve)?;
        let generation = time(&generate)?;
        retrieval.sort_by(f64::total_cmp);
        let retrieval_mean_ms = retrieval.iter().sum::<f64>() / iters as f64;
        let generation_mean_ms = generation.iter().sum::<f64>() / iters as f64;
        Ok(LatencyReport {
            retrieval_mean_ms,
            retrieval_median_ms: median(&retrieval),
            retrieval_p95_ms: percentile(&retrieval, 0.95),
            generation_mean_ms,
            ratio: generation_mean_ms / retrieval_mean_ms,
            beam_width: beam,
            record_count: index.len(),
            f: index.dim(),
            iters,
            hardware: hardware_note(),
        })
    })
}
