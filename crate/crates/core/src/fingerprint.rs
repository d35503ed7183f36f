//! Neuron profiling, critical-neuron selection and fingerprint extraction.
//!
//! A fingerprint is read at a single position: the last prefix position,
//! whose activations produce the first generated token. Training and query
//! prefixes are fingerprinted identically so the vectors are comparable.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{last_position_activations_batch, ModelConfig, Sublayer, Weights};
use crate::tokenizer::TokenSeq;

/// Fingerprint length used when none is given.
pub const DEFAULT_FINGERPRINT_SIZE: usize = 100;
const SELECTION_FILE_VERSION: u32 = 1;
// prefixes per stacked forward pass
const FORWARD_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub sublayer: Sublayer,
    pub channel: usize,
}

impl NeuronId {
    pub fn new(layer: usize, sublayer: Sublayer, channel: usize) -> Self {
        Self {
            layer,
            sublayer,
            channel,
        }
    }

    /// Offset into a flattened (layer, sublayer, channel) activation vector.
    pub fn flat_index(&self, d_model: usize) -> usize {
        (self.layer * 2 + self.sublayer as usize) * d_model + self.channel
    }

    fn from_flat(i: usize, d_model: usize) -> Self {
        let tap = i / d_model;
        let sublayer = if tap % 2 == 0 {
            Sublayer::Attn
        } else {
            Sublayer::Ffn
        };
        Self::new(tap / 2, sublayer, i % d_model)
    }
}

/// Position whose activations produce the first generated token.
pub fn fingerprint_position(prefix: &TokenSeq) -> Result<usize> {
    prefix.len().checked_sub(1).ok_or(Error::EmptyPrefix)
}

/// Per-neuron streaming statistics over profiled prefixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronStats {
    pub n_layers: usize,
    pub d_model: usize,
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronStat {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl NeuronStats {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        let n = n_layers * 2 * d_model;
        Self {
            n_layers,
            d_model,
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            min: vec![f64::INFINITY; n],
            max: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.mean.len()
    }

    /// Welford update with one sample of every neuron.
    pub fn push(&mut self, sample: &[f32]) -> Result<()> {
        if sample.len() != self.n_neurons() {
            return Err(Error::DimensionMismatch {
                expected: self.n_neurons(),
                got: sample.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for (i, &x) in sample.iter().enumerate() {
            let x = x as f64;
            let delta = x - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x - self.mean[i]);
            self.min[i] = self.min[i].min(x);
            self.max[i] = self.max[i].max(x);
        }
        Ok(())
    }

    /// Parallel-variance combine of two disjoint sample sets.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n_neurons() != self.n_neurons() {
            return Err(Error::DimensionMismatch {
                expected: self.n_neurons(),
                got: other.n_neurons(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.n_neurons() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
        }
        self.count += other.count;
        Ok(())
    }

    /// Population variance.
    pub fn variance(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2[i] / self.count as f64).max(0.0)
        }
    }

    pub fn get(&self, neuron: NeuronId) -> Option<NeuronStat> {
        if neuron.layer >= self.n_layers || neuron.channel >= self.d_model {
            return None;
        }
        let i = neuron.flat_index(self.d_model);
        Some(NeuronStat {
            count: self.count,
            mean: self.mean[i],
            variance: self.variance(i),
            min: self.min[i],
            max: self.max[i],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let stats: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let n = stats.n_layers * 2 * stats.d_model;
        if [&stats.mean, &stats.m2, &stats.min, &stats.max]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(Error::Format("neuron stats arrays have inconsistent lengths".into()));
        }
        Ok(stats)
    }
}

/// Tap vectors at the fingerprint position for every prefix, in input order.
pub fn collect_activations(w: &Weights<f32>, prefixes: &[TokenSeq]) -> Result<Vec<Vec<f32>>> {
    let chunks: Vec<Vec<Vec<f32>>> = prefixes
        .par_chunks(FORWARD_BATCH)
        .map(|chunk| {
            let ids: Vec<&[u32]> = chunk.iter().map(TokenSeq::ids).collect();
            last_position_activations_batch(w, &ids)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Profiles every tap neuron at the fingerprint position of each prefix.
pub fn profile_neurons(w: &Weights<f32>, prefixes: &[TokenSeq]) -> Result<NeuronStats> {
    profile_neurons_sharded(w, prefixes, 256)
}

/// Profiling with explicit shard size; shards keep local Welford state and are
/// merged in order.
pub fn profile_neurons_sharded(w: &Weights<f32>, prefixes: &[TokenSeq], shard: usize) -> Result<NeuronStats> {
    if prefixes.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let config = w.config;
    let shards: Vec<NeuronStats> = prefixes
        .par_chunks(shard.max(1))
        .map(|chunk| {
            let mut local = NeuronStats::new(config.n_layers, config.d_model);
            for sample in collect_activations(w, chunk)? {
                local.push(&sample)?;
            }
            Ok(local)
        })
        .collect::<Result<_>>()?;
    let mut stats = NeuronStats::new(config.n_layers, config.d_model);
    for s in &shards {
        stats.merge(s)?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Highest profiled variance among attention-sublayer taps.
    HighVariance,
    /// Seeded uniform choice among attention-sublayer taps.
    Random(u64),
    /// Largest profiled mean among attention-sublayer taps.
    Maximum,
    /// Smallest profiled mean among attention-sublayer taps.
    Minimum,
    /// Highest profiled variance among FFN-sublayer taps.
    FfnVariance,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::HighVariance => "high_variance",
            Strategy::Random(_) => "random",
            Strategy::Maximum => "maximum",
            Strategy::Minimum => "minimum",
            Strategy::FfnVariance => "ffn_variance",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Strategy::Random(seed) => Some(*seed),
            _ => None,
        }
    }

    /// Parses a strategy name; `seed` is only used by `random`.
    pub fn from_name(name: &str, seed: u64) -> Option<Self> {
        Some(match name {
            "high_variance" => Strategy::HighVariance,
            "random" => Strategy::Random(seed),
            "maximum" => Strategy::Maximum,
            "minimum" => Strategy::Minimum,
            "ffn_variance" | "ffn" => Strategy::FfnVariance,
            _ => return None,
        })
    }

    /// Row label in the strategy comparison table.
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::HighVariance => "HighVariance",
            Strategy::Random(_) => "Random",
            Strategy::Maximum => "Maximum",
            Strategy::Minimum => "Minimum",
            Strategy::FfnVariance => "FFN",
        }
    }

    fn sublayer(&self) -> Sublayer {
        match self {
            Strategy::FfnVariance => Sublayer::Ffn,
            _ => Sublayer::Attn,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Random(seed) => write!(f, "random(seed={seed})"),
            other => f.write_str(other.name()),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// An ordered set of critical neurons. The hash identifies the neuron set so
/// fingerprints from different selections are never compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronSelection {
    strategy: Strategy,
    neurons: Vec<NeuronId>,
    hash: u64,
}

#[derive(Serialize, Deserialize)]
struct SelectionFile {
    version: u32,
    strategy: String,
    seed: Option<u64>,
    #[serde(rename = "F")]
    f: usize,
    neurons: Vec<NeuronId>,
    selection_hash: String,
}

impl NeuronSelection {
    pub fn new(strategy: Strategy, neurons: Vec<NeuronId>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = neurons.iter().find(|n| !seen.insert(**n)) {
            return Err(Error::Format(format!("duplicate neuron {dup:?} in selection")));
        }
        if neurons.is_empty() {
            return Err(Error::Format("selection is empty".into()));
        }
        let hash = fnv1a64(canonical_json(strategy, &neurons).as_bytes());
        Ok(Self {
            strategy,
            neurons,
            hash,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn neurons(&self) -> &[NeuronId] {
        &self.neurons
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Sorted-key, whitespace-free serialization the hash is computed over.
    pub fn canonical_json(&self) -> String {
        canonical_json(self.strategy, &self.neurons)
    }

    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        match self
            .neurons
            .iter()
            .find(|n| n.layer >= config.n_layers || n.channel >= config.d_model)
        {
            Some(n) => Err(Error::SelectionConfigMismatch(format!(
                "neuron {n:?} is outside {} layers x {} channels",
                config.n_layers, config.d_model
            ))),
            None => Ok(()),
        }
    }

    /// Picks the selected entries out of a flattened tap vector.
    pub fn gather(&self, activations: &[f32], d_model: usize) -> Fingerprint {
        Fingerprint {
            values: self
                .neurons
                .iter()
                .map(|n| activations[n.flat_index(d_model)])
                .collect(),
            selection_hash: self.hash,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SelectionFile {
            version: SELECTION_FILE_VERSION,
            strategy: self.strategy.name().to_string(),
            seed: self.strategy.seed(),
            f: self.neurons.len(),
            neurons: self.neurons.clone(),
            selection_hash: self.hash.to_string(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SelectionFile = serde_json::from_str(s)?;
        if file.version != SELECTION_FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported selection version {}",
                file.version
            )));
        }
        let strategy = Strategy::from_name(&file.strategy, file.seed.unwrap_or(0))
            .ok_or_else(|| Error::Format(format!("unknown strategy {:?}", file.strategy)))?;
        if file.f != file.neurons.len() {
            return Err(Error::Format(format!(
                "selection declares F={} but lists {} neurons",
                file.f,
                file.neurons.len()
            )));
        }
        let selection = Self::new(strategy, file.neurons)?;
        let stored: u64 = file
            .selection_hash
            .parse()
            .map_err(|_| Error::Format("selection_hash is not a decimal u64".into()))?;
        if stored != selection.hash {
            return Err(Error::SelectionHashMismatch {
                expected: stored,
                got: selection.hash,
            });
        }
        Ok(selection)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn canonical_json(strategy: Strategy, neurons: &[NeuronId]) -> String {
    let seed = strategy
        .seed()
        .map_or_else(|| "null".to_string(), |s| s.to_string());
    let list: Vec<String> = neurons
        .iter()
        .map(|n| {
            let sub = match n.sublayer {
                Sublayer::Attn => "attn",
                Sublayer::Ffn => "ffn",
            };
            format!(
                r#"{{"channel":{},"layer":{},"sublayer":"{sub}"}}"#,
                n.channel, n.layer
            )
        })
        .collect();
    format!(
        r#"{{"F":{},"neurons":[{}],"seed":{seed},"strategy":"{}","version":{SELECTION_FILE_VERSION}}}"#,
        neurons.len(),
        list.join(","),
        strategy.name()
    )
}

/// Chooses `f` critical neurons from profiled statistics.
///
/// Rankings break ties by (layer, channel) ascending; output is in rank order.
pub fn select_neurons(stats: &NeuronStats, strategy: Strategy, f: usize) -> Result<NeuronSelection> {
    let sublayer = strategy.sublayer();
    // eligible neurons in (layer, channel) order
    let mut eligible: Vec<(NeuronId, usize)> = (0..stats.n_neurons())
        .map(|i| (NeuronId::from_flat(i, stats.d_model), i))
        .filter(|(n, _)| n.sublayer == sublayer)
        .collect();
    if f == 0 || f > eligible.len() {
        return Err(Error::SelectionTooLarge {
            requested: f,
            available: eligible.len(),
        });
    }
    match strategy {
        Strategy::HighVariance | Strategy::FfnVariance => {
            eligible.sort_by(|a, b| stats.variance(b.1).total_cmp(&stats.variance(a.1)));
        }
        Strategy::Maximum => eligible.sort_by(|a, b| stats.mean[b.1].total_cmp(&stats.mean[a.1])),
        Strategy::Minimum => eligible.sort_by(|a, b| stats.mean[a.1].total_cmp(&stats.mean[b.1])),
        Strategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            eligible.shuffle(&mut rng);
        }
    }
    // sort_by is stable, so equal keys stay in (layer, channel) order
    let neurons = eligible.into_iter().take(f).map(|(n, _)| n).collect();
    NeuronSelection::new(strategy, neurons)
}

/// A fingerprint tagged with the hash of the selection that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub values: Vec<f32>,
    pub selection_hash: u64,
}

impl Fingerprint {
    pub fn new(values: Vec<f32>, selection_hash: u64) -> Self {
        Self {
            values,
            selection_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fingerprint of `prefix`: one forward pass, read at the last prefix position.
pub fn extract_fingerprint(
    w: &Weights<f32>,
    selection: &NeuronSelection,
    prefix: &TokenSeq,
) -> Result<Fingerprint> {
    selection.check_config(&w.config)?;
    fingerprint_position(prefix)?;
    let acts = last_position_activations_batch(w, &[prefix.ids()])?
        .pop()
        .expect("one row");
    Ok(selection.gather(&acts, w.config.d_model))
}

/// Fingerprints for many prefixes, in input order.
pub fn extract_fingerprints(
    w: &Weights<f32>,
    selection: &NeuronSelection,
    prefixes: &[TokenSeq],
) -> Result<Vec<Fingerprint>> {
    selection.check_config(&w.config)?;
    Ok(collect_activations(w, prefixes)?
        .iter()
        .map(|acts| selection.gather(acts, w.config.d_model))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;

    fn config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 20,
            max_pos: 32,
            layernorm_eps: 1e-5,
        }
    }

    fn stats_from(rows: &[Vec<f32>], n_layers: usize, d_model: usize) -> NeuronStats {
        let mut s = NeuronStats::new(n_layers, d_model);
        for r in rows {
            s.push(r).unwrap();
        }
        s
    }

    #[test]
    fn position_is_last_index() {
        assert_eq!(fingerprint_position(&TokenSeq::new(vec![5])).unwrap(), 0);
        let mut p = TokenSeq::new((0..17).collect());
        assert_eq!(fingerprint_position(&p).unwrap(), 16);
        p.0.push(3);
        assert_eq!(fingerprint_position(&p).unwrap(), 17);
        assert!(matches!(
            fingerprint_position(&TokenSeq::default()),
            Err(Error::EmptyPrefix)
        ));
    }

    #[test]
    fn single_sample_has_zero_variance() {
        let s = stats_from(&[vec![1.5, -2.0]], 1, 1);
        assert_eq!(s.variance(0), 0.0);
        assert_eq!(s.variance(1), 0.0);
    }

    #[test]
    fn two_point_population_variance() {
        let s = stats_from(&[vec![0.0, 0.0], vec![2.0, 0.0]], 1, 1);
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.variance(0), 1.0);
        assert_eq!((s.min[0], s.max[0]), (0.0, 2.0));
    }

    #[test]
    fn merge_matches_sequential() {
        let rows: Vec<Vec<f32>> = (0..37)
            .map(|i| vec![(i as f32 * 0.37).sin() * 3.0, i as f32 * 0.1])
            .collect();
        let all = stats_from(&rows, 1, 1);
        let mut merged = stats_from(&rows[..10], 1, 1);
        merged.merge(&stats_from(&rows[10..], 1, 1)).unwrap();
        for i in 0..2 {
            assert!((all.mean[i] - merged.mean[i]).abs() < 1e-12);
            assert!((all.variance(i) - merged.variance(i)).abs() < 1e-12);
        }
    }

    fn synthetic_stats() -> NeuronStats {
        // 2 layers x 3 channels; variance and mean set through two samples
        let n = 12;
        let a: Vec<f32> = (0..n).map(|i| ((i * 7) % 12) as f32).collect();
        let b: Vec<f32> = (0..n).map(|i| -(((i * 5) % 12) as f32) * 0.5).collect();
        stats_from(&[a, b], 2, 3)
    }

    #[test]
    fn high_variance_full_set_is_variance_sorted() {
        let s = synthetic_stats();
        let sel = select_neurons(&s, Strategy::HighVariance, 6).unwrap();
        assert!(sel.neurons().iter().all(|n| n.sublayer == Sublayer::Attn));
        let vars: Vec<f64> = sel.neurons().iter().map(|n| s.get(*n).unwrap().variance).collect();
        assert!(vars.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn strategies_match_sort_oracle() {
        let s = synthetic_stats();
        let attn: Vec<NeuronId> = (0..2)
            .flat_map(|l| (0..3).map(move |c| NeuronId::new(l, Sublayer::Attn, c)))
            .collect();
        let ffn: Vec<NeuronId> = attn
            .iter()
            .map(|n| NeuronId::new(n.layer, Sublayer::Ffn, n.channel))
            .collect();
        let oracle = |mut pool: Vec<NeuronId>, key: &dyn Fn(&NeuronStat) -> f64| {
            pool.sort_by(|a, b| {
                key(&s.get(*b).unwrap())
                    .partial_cmp(&key(&s.get(*a).unwrap()))
                    .unwrap()
                    .then((a.layer, a.channel).cmp(&(b.layer, b.channel)))
            });
            pool.truncate(4);
            pool
        };
        let cases: [(Strategy, Vec<NeuronId>); 4] = [
            (Strategy::HighVariance, oracle(attn.clone(), &|st| st.variance)),
            (Strategy::FfnVariance, oracle(ffn, &|st| st.variance)),
            (Strategy::Maximum, oracle(attn.clone(), &|st| st.mean)),
            (Strategy::Minimum, oracle(attn, &|st| -st.mean)),
        ];
        for (strategy, expected) in cases {
            let sel = select_neurons(&s, strategy, 4).unwrap();
            assert_eq!(sel.neurons(), expected.as_slice(), "{strategy}");
        }
    }

    #[test]
    fn single_high_variance_neuron_wins() {
        let mut rows = vec![vec![0.0f32; 12], vec![0.0f32; 12]];
        let target = NeuronId::new(1, Sublayer::Attn, 2);
        rows[0][target.flat_index(3)] = 5f32.sqrt() * 2.0;
        let s = stats_from(&rows, 2, 3);
        assert!((s.get(target).unwrap().variance - 5.0).abs() < 1e-6);
        let sel = select_neurons(&s, Strategy::HighVariance, 1).unwrap();
        assert_eq!(sel.neurons(), &[target]);
    }

    #[test]
    fn ties_break_by_layer_then_channel() {
        let s = stats_from(&[vec![1.0f32; 12]], 2, 3);
        let sel = select_neurons(&s, Strategy::HighVariance, 3).unwrap();
        let got: Vec<(usize, usize)> = sel.neurons().iter().map(|n| (n.layer, n.channel)).collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn random_is_seeded_and_distinct() {
        let s = synthetic_stats();
        let a = select_neurons(&s, Strategy::Random(3), 5).unwrap();
        let b = select_neurons(&s, Strategy::Random(3), 5).unwrap();
        assert_eq!(a, b);
        let c = select_neurons(&s, Strategy::Random(4), 6).unwrap();
        assert_eq!(c.len(), 6);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn too_large_selection_rejected() {
        let s = synthetic_stats();
        assert!(matches!(
            select_neurons(&s, Strategy::Maximum, 7),
            Err(Error::SelectionTooLarge { requested: 7, available: 6 })
        ));
    }

    #[test]
    fn high_variance_and_minimum_differ() {
        let s = synthetic_stats();
        let hv = select_neurons(&s, Strategy::HighVariance, 1).unwrap();
        let min = select_neurons(&s, Strategy::Minimum, 1).unwrap();
        assert_ne!(hv.neurons(), min.neurons());
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn selection_file_round_trip_and_tamper_check() {
        let s = synthetic_stats();
        let sel = select_neurons(&s, Strategy::Random(11), 4).unwrap();
        assert!(sel.canonical_json().starts_with(r#"{"F":4,"neurons":[{"channel":"#));
        assert!(sel.canonical_json().ends_with(r#""seed":11,"strategy":"random","version":1}"#));
        let json = sel.to_json().unwrap();
        assert_eq!(NeuronSelection::from_json(&json).unwrap(), sel);
        let tampered = json.replacen(r#""channel": "#, r#""channel": 1"#, 1);
        assert!(NeuronSelection::from_json(&tampered).is_err());
    }

    #[test]
    fn fingerprint_reads_trace_at_last_position() {
        let w = Weights::init_with_std(config(), 4, 0.3).unwrap();
        let prefix = TokenSeq::new(vec![4, 9, 13, 2, 7]);
        let neurons = vec![
            NeuronId::new(1, Sublayer::Ffn, 3),
            NeuronId::new(0, Sublayer::Attn, 7),
            NeuronId::new(1, Sublayer::Attn, 0),
        ];
        let sel = NeuronSelection::new(Strategy::HighVariance, neurons.clone()).unwrap();
        let fp = extract_fingerprint(&w, &sel, &prefix).unwrap();
        assert_eq!(fp.len(), 3);
        assert_eq!(fp.selection_hash, sel.hash());
        let (_, trace) = forward(&w, prefix.ids()).unwrap();
        for (v, n) in fp.values.iter().zip(&neurons) {
            assert_eq!(*v, trace.value(n.layer, n.sublayer, n.channel, 4).unwrap());
        }
        assert_eq!(extract_fingerprint(&w, &sel, &prefix).unwrap(), fp);
    }

    #[test]
    fn batched_extraction_is_bit_identical() {
        let w = Weights::init_with_std(config(), 4, 0.3).unwrap();
        let stats = NeuronStats::new(2, 8);
        let _ = stats;
        let sel = NeuronSelection::new(
            Strategy::HighVariance,
            (0..8).map(|c| NeuronId::new(1, Sublayer::Attn, c)).collect(),
        )
        .unwrap();
        let prefixes: Vec<TokenSeq> = (0..40)
            .map(|i| TokenSeq::new((0..(3 + i % 11)).map(|j| ((i * 3 + j * 5) % 16 + 4) as u32).collect()))
            .collect();
        let batch = extract_fingerprints(&w, &sel, &prefixes).unwrap();
        for (p, fp) in prefixes.iter().zip(&batch) {
            assert_eq!(&extract_fingerprint(&w, &sel, p).unwrap(), fp);
        }
    }

    #[test]
    fn selection_outside_config_rejected() {
        let w = Weights::init(config(), 1).unwrap();
        let sel = NeuronSelection::new(Strategy::HighVariance, vec![NeuronId::new(2, Sublayer::Attn, 0)]).unwrap();
        assert!(matches!(
            extract_fingerprint(&w, &sel, &TokenSeq::new(vec![4])),
            Err(Error::SelectionConfigMismatch(_))
        ));
    }
}
