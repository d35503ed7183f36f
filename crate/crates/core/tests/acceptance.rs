//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use provgen::eval::{bench_latency, compare_strategies, top_k_accuracy, AccReport, IndexedPair, StrategyTable};
use provgen::fingerprint::{profile_neurons, select_neurons, Fingerprint, Strategy};
use provgen::index::{FingerprintIndex, FingerprintRecord};
use provgen::model::{beam_search, ModelConfig, Weights};
use provgen::pipeline::{self, ToyRun, ToySettings};
use provgen::recitation::{edit_distance, mine_recitations, RecitationCase};
use provgen::tokenizer::TokenSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PIPELINE_SEEDS: [u64; 3] = [1, 2, 3];
const RANDOM_SELECTION_SEEDS: [u64; 3] = [1, 2, 3];
const MINING_BEAM: usize = 10;
const EVAL_F: usize = 64;
const BENCH_F: usize = 100;
const KS: [usize; 3] = [1, 5, 10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let items: Vec<(u64, Vec<f32>)> = (0..1000u64)
        .map(|i| (i * 3 + 1, (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
        .collect();
    let records = items
        .iter()
        .map(|(id, v)| FingerprintRecord {
            pair_id: *id,
            example_id: id / 10,
            fingerprint: Fingerprint::new(v.clone(), 1),
            snippet: String::new(),
            source: String::new(),
        })
        .collect();
    let index = FingerprintIndex::build(records, 1).unwrap();
    let mut mismatches = 0;
    for _ in 0..100 {
        let q: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let got: Vec<u64> = index
            .query(&Fingerprint::new(q.clone(), 1), 10)
            .unwrap()
            .iter()
            .map(|h| h.record.pair_id)
            .collect();
        let want: Vec<u64> = support::brute_force_top_k(&items, &q, 10).iter().map(|p| p.0).collect();
        mismatches += usize::from(got != want);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("100 queries over 1000 records, {mismatches} mismatched top-10 lists, {secs:.2}s"),
    )
}

fn beam_oracle() -> Outcome {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 5,
        max_pos: 16,
        layernorm_eps: 1e-5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut agree = 0;
    for seed in 0..20 {
        let w = Weights::init_with_std(config, seed, 1.0).unwrap();
        let len = rng.random_range(1..5);
        let prefix = TokenSeq::new((0..len).map(|_| rng.random_range(0..5)).collect());
        let beam = beam_search(&w, &prefix, 125, 3).unwrap();
        let (tokens, score) = support::exhaustive_best(&w, &prefix, 3);
        agree += usize::from(beam.tokens.ids() == tokens.as_slice() && (beam.score - score).abs() < 1e-9);
    }
    outcome(agree == 20, format!("{agree}/20 initializations match exhaustive enumeration"))
}

fn gradient_check() -> Outcome {
    let report = support::gradcheck(0);
    let (name, worst) = report
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    outcome(
        worst < support::GRAD_MAX_REL_ERR,
        format!("{} tensors, worst relative error {worst:.2e} ({name})", report.len()),
    )
}

fn edit_distance_oracle() -> Outcome {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', ' ', '_', '(', ')', '1', 'é'];
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut random = || -> String {
        let len = rng.random_range(0..=40);
        (0..len).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
    };
    let mut wrong = 0;
    for _ in 0..1000 {
        let (a, b) = (random(), random());
        wrong += usize::from(edit_distance(&a, &b) != support::dp_distance(&a, &b));
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let (a, b, c) = (random(), random(), random());
        let ab = edit_distance(&a, &b);
        violations += usize::from(ab != edit_distance(&b, &a));
        violations += usize::from(edit_distance(&a, &c) > ab + edit_distance(&b, &c));
    }
    outcome(
        wrong == 0 && violations == 0,
        format!("{wrong}/1000 pairs differ from the DP table, {violations} metric violations on 1000 triples"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_provgen"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        for args in [
            &["gen-corpus", "--seed", "7", "--files", "40"][..],
            &["build-vocab"],
            &["train", "--steps", "200", "--seed", "7"],
            &["profile"],
            &["select", "--f", "100"],
            &["fingerprint"],
        ] {
            run_cli(&dir, args);
        }
        outputs.push((
            std::fs::read(dir.join("index.bin")).unwrap(),
            std::fs::read(dir.join("index.bin.meta.jsonl")).unwrap(),
        ));
    }
    let same = outputs[0] == outputs[1];
    outcome(
        same,
        format!("two full CLI runs, index files of {} bytes {}", outputs[0].0.len(), if same { "identical" } else { "differ" }),
    )
}

struct SeedRun {
    seed: u64,
    run: ToyRun,
    pairs: Vec<IndexedPair>,
    test_prefixes: Vec<TokenSeq>,
    cases: Vec<RecitationCase>,
    table: Option<StrategyTable>,
}

fn settings(seed: u64) -> ToySettings {
    let mut s = ToySettings::default();
    s.corpus.seed = seed;
    s.train.seed = seed;
    s
}

fn seed_run(seed: u64) -> SeedRun {
    let s = settings(seed);
    let start = Instant::now();
    let run = pipeline::train_toy_run(&s).unwrap();
    let pairs = pipeline::indexed_pairs(&run.corpus.train, &run.vocab, s.pairs).unwrap();
    let set = pipeline::line_set(&run.corpus.train, &run.vocab, s.pairs).unwrap();
    let test_prefixes = pipeline::pair_prefixes(&run.corpus.test, &run.vocab, s.pairs).unwrap();
    let cases = mine_recitations(&run.outcome.weights, &run.vocab, &test_prefixes, &set, MINING_BEAM).unwrap();
    let table = (!cases.is_empty()).then(|| {
        let strategies = [
            Strategy::HighVariance,
            Strategy::Random(0),
            Strategy::Maximum,
            Strategy::Minimum,
            Strategy::FfnVariance,
        ];
        compare_strategies(&run.outcome.weights, &pairs, &cases, &strategies, EVAL_F, &RANDOM_SELECTION_SEEDS, &KS)
            .unwrap()
    });
    println!(
        "  pipeline seed {seed}: loss {:.3} -> {:.3}, {} pairs, {} test prefixes, {} cases ({:.0}s)",
        run.outcome.initial_loss().unwrap(),
        run.outcome.final_loss().unwrap(),
        pairs.len(),
        test_prefixes.len(),
        cases.len(),
        start.elapsed().as_secs_f64()
    );
    SeedRun {
        seed,
        run,
        pairs,
        test_prefixes,
        cases,
        table,
    }
}

fn seed_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| PIPELINE_SEEDS.iter().map(|&s| seed_run(s)).collect())
}

fn planted_recitation() -> Outcome {
    let runs = seed_runs();
    let first = &runs[0];
    let w = &first.run.outcome.weights;
    let prefixes: Vec<TokenSeq> = first.pairs.iter().map(|p| p.prefix.clone()).collect();
    let stats = profile_neurons(w, &prefixes).unwrap();
    let selection = select_neurons(&stats, Strategy::HighVariance, EVAL_F).unwrap();
    let index = pipeline::build_index(w, &selection, &first.pairs).unwrap();
    let report = top_k_accuracy(&first.cases, &index, w, &selection, &KS).unwrap();
    let mut reports: Vec<&AccReport> = vec![&report];
    for r in runs {
        if let Some(t) = &r.table {
            reports.extend(t.rows.iter().flat_map(|row| &row.runs));
        }
    }
    let monotone = reports.iter().all(|r| r.is_monotone());
    let acc = |k| 100.0 * report.at(k).unwrap();
    outcome(
        first.cases.len() >= 20 && report.at(10).unwrap() > 0.0 && monotone,
        format!(
            "seed {}: {} cases mined, HighVariance F={EVAL_F} Acc@10 {:.2}% Acc@5 {:.2}% Acc@1 {:.2}%, {} reports monotone: {monotone}",
            first.seed,
            first.cases.len(),
            acc(10),
            acc(5),
            acc(1),
            reports.len()
        ),
    )
}

fn strategy_ordering() -> Outcome {
    let runs = seed_runs();
    let mut hv = Vec::new();
    let mut random = Vec::new();
    for r in runs {
        let Some(table) = &r.table else {
            return outcome(false, format!("seed {} mined no cases", r.seed));
        };
        println!("  pipeline seed {} ({} cases, F={EVAL_F}):", r.seed, r.cases.len());
        for line in table.render().lines() {
            println!("    {line}");
        }
        let at10 = |label: &str| {
            let row = table.row(label).unwrap();
            row.accuracy[row.ks.iter().position(|&k| k == 10).unwrap()]
        };
        hv.push(at10("HighVariance"));
        random.push(at10("Random"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (hv_mean, random_mean) = (mean(&hv), mean(&random));
    outcome(
        hv_mean >= random_mean,
        format!(
            "mean Acc@10 over {} pipeline seeds: HighVariance {:.2}% vs Random {:.2}%",
            runs.len(),
            100.0 * hv_mean,
            100.0 * random_mean
        ),
    )
}

fn latency_relation() -> Outcome {
    let first = &seed_runs()[0];
    let w = &first.run.outcome.weights;
    let prefixes: Vec<TokenSeq> = first.pairs.iter().map(|p| p.prefix.clone()).collect();
    let stats = profile_neurons(w, &prefixes).unwrap();
    let selection = select_neurons(&stats, Strategy::HighVariance, BENCH_F).unwrap();
    let index = pipeline::build_index(w, &selection, &first.pairs).unwrap();
    let report = bench_latency(w, &selection, &index, &first.test_prefixes, 5, 30, 10).unwrap();
    outcome(
        index.len() >= 10_000 && report.retrieval_mean_ms < report.generation_mean_ms,
        format!(
            "{} records, F={}: retrieval mean {:.3} ms (median {:.3}, p95 {:.3}) vs generation mean {:.3} ms at K={} ({:.1}x); {}",
            report.record_count,
            report.f,
            report.retrieval_mean_ms,
            report.retrieval_median_ms,
            report.retrieval_p95_ms,
            report.generation_mean_ms,
            report.beam_width,
            report.ratio,
            report.hardware
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "retrieval oracle", retrieval_oracle),
        (2, "beam-search oracle", beam_oracle),
        (3, "gradient check", gradient_check),
        (4, "edit-distance oracle", edit_distance_oracle),
        (5, "pipeline determinism", determinism),
        (6, "planted recitation end to end", planted_recitation),
        (7, "strategy ordering", strategy_ordering),
        (8, "latency relation", latency_relation),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "[{}] criterion {id} {name}: {} ({:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failed, {:.0}s total", suite.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
