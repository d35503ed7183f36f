//! Deterministic synthetic code corpus with planted rare lines.
//!
//! Training files are sequences of blocks drawn from a small stock library, so
//! every stock line is frequent. Each planted block pairs a unique trigger line
//! with a unique payload line and is copied into a fixed number of training
//! files. Test files wrap each planted block in fresh stock context.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pairing::CorpusFile;

/// First example id of the test split.
pub const TEST_ID_BASE: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub seed: u64,
    pub n_files: usize,
    pub min_lines: usize,
    pub max_lines: usize,
    pub n_planted: usize,
    pub copies: usize,
    pub n_test_files: usize,
    pub n_stock_blocks: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_files: 200,
            min_lines: 50,
            max_lines: 150,
            n_planted: 30,
            copies: 2,
            n_test_files: 60,
            n_stock_blocks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedBlock {
    pub trigger: String,
    pub payload: String,
    /// Training files that contain the block.
    pub example_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyCorpus {
    pub train: Vec<CorpusFile>,
    pub test: Vec<CorpusFile>,
    pub planted: Vec<PlantedBlock>,
}

const NAMES: &[&str] = &[
    "count", "total", "items", "value", "result", "index", "buffer", "offset", "name", "path", "config",
    "rows", "limit", "size", "key", "node",
];
const FUNCS: &[&str] = &[
    "load", "parse", "update", "reset", "compute", "render", "flush", "close", "open_file", "validate",
];
const MODULES: &[&str] = &["os", "sys", "json", "math", "re", "time"];
const CLASSES: &[&str] = &["Reader", "Writer", "Cache", "Parser", "Queue"];
const NUMBERS: &[&str] = &["0", "1", "2", "10", "100"];

const TEMPLATES: &[&[&str]] = &[
    &["def {f} ( {a} , {b} ) :", "{a} = {a} + {b}", "return {a}"],
    &["for {a} in range ( {n} ) :", "{b} . append ( {a} )"],
    &["if {a} > {n} :", "{a} = {n}", "else :", "{a} = {a} + 1"],
    &["{a} = {f} ( {b} )"],
    &["while {a} < {n} :", "{a} = {a} * 2"],
    &["try :", "{f} ( {a} )", "except ValueError :", "pass"],
    &["import {m}"],
    &["from {m} import {f}"],
    &["class {c} :", "def __init__ ( self ) :", "self . {a} = {n}"],
    &["print ( {a} , {b} )"],
    &["{a} = [ ]", "{b} = { }"],
    &["with open ( {a} ) as {b} :", "{b} . {f} ( )"],
];

fn fill(template: &[&str], rng: &mut ChaCha8Rng) -> Vec<String> {
    let a = *NAMES.choose(rng).expect("nonempty");
    let b = loop {
        let b = *NAMES.choose(rng).expect("nonempty");
        if b != a {
            break b;
        }
    };
    let f = *FUNCS.choose(rng).expect("nonempty");
    let m = *MODULES.choose(rng).expect("nonempty");
    let c = *CLASSES.choose(rng).expect("nonempty");
    let n = *NUMBERS.choose(rng).expect("nonempty");
    template
        .iter()
        .map(|line| {
            line.replace("{a}", a)
                .replace("{b}", b)
                .replace("{f}", f)
                .replace("{m}", m)
                .replace("{c}", c)
                .replace("{n}", n)
        })
        .collect()
}

fn planted_block(j: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let n: u32 = rng.random_range(1000..10000);
    vec![
        format!("def planted_helper_{j} ( data ) :"),
        format!("return checksum_{j} ( data , {n} )"),
    ]
}

fn render(blocks: &[Vec<String>]) -> String {
    let mut text = String::new();
    for line in blocks.iter().flatten() {
        text.push_str(line);
        text.push('\n');
    }
    text
}

pub fn generate(config: &ToyCorpusConfig) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let library: Vec<Vec<String>> = (0..config.n_stock_blocks.max(1))
        .map(|i| fill(TEMPLATES[i % TEMPLATES.len()], &mut rng))
        .collect();
    let mut files: Vec<Vec<Vec<String>>> = (0..config.n_files)
        .map(|_| {
            let target = rng.random_range(config.min_lines..=config.max_lines.max(config.min_lines));
            let mut blocks = Vec::new();
            let mut lines = 0;
            while lines < target {
                let block = library.choose(&mut rng).expect("nonempty").clone();
                lines += block.len();
                blocks.push(block);
            }
            blocks
        })
        .collect();

    let copies = config.copies.min(config.n_files);
    let mut planted = Vec::with_capacity(config.n_planted);
    for j in 0..config.n_planted {
        let block = planted_block(j, &mut rng);
        let mut hosts = rand::seq::index::sample(&mut rng, config.n_files, copies).into_vec();
        hosts.sort_unstable();
        for &h in &hosts {
            let at = rng.random_range(0..=files[h].len());
            files[h].insert(at, block.clone());
        }
        planted.push(PlantedBlock {
            trigger: block[0].clone(),
            payload: block[1].clone(),
            example_ids: hosts.iter().map(|&h| h as u64).collect(),
        });
    }
    let train = files
        .iter()
        .enumerate()
        .map(|(i, blocks)| CorpusFile::new(i as u64, format!("toy://train/file_{i:04}.py"), render(blocks)))
        .collect();

    let mut order: Vec<usize> = (0..config.n_test_files).map(|t| t % config.n_planted.max(1)).collect();
    order.shuffle(&mut rng);
    let test = order
        .iter()
        .enumerate()
        .filter(|_| config.n_planted > 0)
        .map(|(t, &j)| {
            let mut blocks = Vec::new();
            let mut lines = 0;
            while lines < 2 || blocks.len() < rng.random_range(1..=3) {
                let block = library.choose(&mut rng).expect("nonempty").clone();
                lines += block.len();
                blocks.push(block);
            }
            blocks.push(vec![planted[j].trigger.clone(), planted[j].payload.clone()]);
            blocks.push(library.choose(&mut rng).expect("nonempty").clone());
            let id = TEST_ID_BASE + t as u64;
            CorpusFile::new(id, format!("toy://test/file_{t:03}.py"), render(&blocks))
        })
        .collect();
    ToyCorpus { train, test, planted }
}
