//! Fingerprint records on disk and exact top-k Euclidean retrieval.

mod ivf;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

pub use ivf::Clusters;

pub const MAGIC: &[u8; 4] = b"WGFP";
pub const VERSION: u32 = 1;
/// Number of results returned when none is requested.
pub const DEFAULT_TOP_K: usize = 10;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexHeader {
    pub f: u32,
    pub count: u64,
    pub selection_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub pair_id: u64,
    pub example_id: u64,
    pub snippet: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRecord {
    pub pair_id: u64,
    pub example_id: u64,
    pub fingerprint: Fingerprint,
    pub snippet: String,
    pub source: String,
}

/// Borrowed view of one stored record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRef<'a> {
    pub pair_id: u64,
    pub example_id: u64,
    pub fingerprint: &'a [f32],
    pub snippet: &'a str,
    pub source: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub record: RecordRef<'a>,
    pub distance: f64,
}

/// Euclidean distance with f64 accumulation.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(squared_l2(a, b).sqrt())
}

fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Fingerprint records sorted by pair id, with contiguous vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintIndex {
    header: IndexHeader,
    meta: Vec<RecordMeta>,
    vectors: Vec<f32>,
    clusters: Option<Clusters>,
}

impl FingerprintIndex {
    pub fn build(mut records: Vec<FingerprintRecord>, selection_hash: u64) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidConfig("index needs at least one record".into()));
        };
        let f = first.fingerprint.len();
        if f == 0 {
            return Err(Error::InvalidConfig("fingerprints are empty".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.fingerprint.len() != f {
                return Err(Error::DimensionMismatch {
                    expected: f,
                    got: r.fingerprint.len(),
                });
            }
            if r.fingerprint.selection_hash != selection_hash {
                return Err(Error::SelectionHashMismatch {
                    expected: selection_hash,
                    got: r.fingerprint.selection_hash,
                });
            }
            if !seen.insert(r.pair_id) {
                return Err(Error::DuplicateRecord(r.pair_id));
            }
        }
        records.sort_by_key(|r| r.pair_id);
        let mut vectors = Vec::with_capacity(records.len() * f);
        let mut meta = Vec::with_capacity(records.len());
        for r in records {
            vectors.extend_from_slice(&r.fingerprint.values);
            meta.push(RecordMeta {
                pair_id: r.pair_id,
                example_id: r.example_id,
                snippet: r.snippet,
                source: r.source,
            });
        }
        Ok(Self {
            header: IndexHeader {
                f: f as u32,
                count: meta.len() as u64,
                selection_hash,
            },
            meta,
            vectors,
            clusters: None,
        })
    }

    pub fn header(&self) -> IndexHeader {
        self.header
    }

    pub fn dim(&self) -> usize {
        self.header.f as usize
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn selection_hash(&self) -> u64 {
        self.header.selection_hash
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        let f = self.dim();
        &self.vectors[i * f..(i + 1) * f]
    }

    pub fn record(&self, i: usize) -> RecordRef<'_> {
        let m = &self.meta[i];
        RecordRef {
            pair_id: m.pair_id,
            example_id: m.example_id,
            fingerprint: self.vector(i),
            snippet: &m.snippet,
            source: &m.source,
        }
    }

    fn check_query(&self, q: &Fingerprint, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if q.selection_hash != self.header.selection_hash {
            return Err(Error::SelectionHashMismatch {
                expected: self.header.selection_hash,
                got: q.selection_hash,
            });
        }
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Top-k by exact distance over the given record positions.
    fn rank<I: IntoIterator<Item = usize>>(&self, q: &[f32], k: usize, candidates: I) -> Vec<Hit<'_>> {
        // (distance, position); positions are in pair_id order so they break ties
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for i in candidates {
            let d = squared_l2(q, self.vector(i)).sqrt();
            if best.len() == k && (d, i) >= *best.last().expect("k > 0") {
                continue;
            }
            let at = best.partition_point(|&e| e < (d, i));
            best.insert(at, (d, i));
            best.truncate(k);
        }
        best.into_iter()
            .map(|(distance, i)| Hit {
                record: self.record(i),
                distance,
            })
            .collect()
    }

    /// The k nearest records, ascending by distance then pair id.
    pub fn query(&self, q: &Fingerprint, k: usize) -> Result<Vec<Hit<'_>>> {
        self.check_query(q, k)?;
        Ok(self.rank(&q.values, k, 0..self.len()))
    }

    /// Seeded k-means over the stored vectors for `query_approx`.
    pub fn cluster(&mut self, seed: u64) {
        self.clusters = Some(Clusters::fit(&self.vectors, self.dim(), seed));
    }

    pub fn clusters(&self) -> Option<&Clusters> {
        self.clusters.as_ref()
    }

    /// Top-k among the records of the `n_probe` clusters closest to `q`.
    pub fn query_approx(&self, q: &Fingerprint, k: usize, n_probe: usize) -> Result<Vec<Hit<'_>>> {
        self.check_query(q, k)?;
        let clusters = self.clusters.as_ref().ok_or(Error::NotClustered)?;
        if n_probe == 0 {
            return Err(Error::InvalidConfig("n_probe must be positive".into()));
        }
        let mut members = clusters.probe(&q.values, n_probe);
        members.sort_unstable();
        Ok(self.rank(&q.values, k, members))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let f = self.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (16 + 4 * f));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.header.f.to_le_bytes());
        out.extend_from_slice(&self.header.count.to_le_bytes());
        out.extend_from_slice(&self.header.selection_hash.to_le_bytes());
        for (i, m) in self.meta.iter().enumerate() {
            out.extend_from_slice(&m.pair_id.to_le_bytes());
            out.extend_from_slice(&m.example_id.to_le_bytes());
            for v in self.vector(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes the binary index and its metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes())?;
        let mut side = std::io::BufWriter::new(fs::File::create(sidecar_path(path))?);
        for m in &self.meta {
            serde_json::to_writer(&mut side, m)?;
            side.write_all(b"\n")?;
        }
        side.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let side = BufReader::new(fs::File::open(sidecar_path(path))?);
        let mut meta = Vec::new();
        for line in side.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                meta.push(serde_json::from_str::<RecordMeta>(&line)?);
            }
        }
        Self::from_parts(&bytes, meta)
    }

    /// Parses the binary layout and attaches sidecar metadata in file order.
    pub fn from_parts(bytes: &[u8], meta: Vec<RecordMeta>) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a fingerprint index".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let header = IndexHeader {
            f: u32_at(8),
            count: u64_at(12),
            selection_hash: u64_at(20),
        };
        let f = header.f as usize;
        let record_len = 16 + 4 * f;
        let count = usize::try_from(header.count).map_err(|_| Error::Format("record count overflows".into()))?;
        let expected = count
            .checked_mul(record_len)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format("record count overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "index holds {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        if meta.len() != count {
            return Err(Error::Format(format!(
                "sidecar has {} records, index has {count}",
                meta.len()
            )));
        }
        let mut vectors = Vec::with_capacity(count * f);
        let mut prev = None;
        for (i, m) in meta.iter().enumerate() {
            let o = HEADER_LEN + i * record_len;
            let (pair_id, example_id) = (u64_at(o), u64_at(o + 8));
            if pair_id != m.pair_id || example_id != m.example_id {
                return Err(Error::Format(format!("sidecar record {i} does not match the index")));
            }
            if prev.is_some_and(|p| p >= pair_id) {
                return Err(Error::Format("index records are not sorted by pair_id".into()));
            }
            prev = Some(pair_id);
            vectors.extend(
                bytes[o + 16..o + record_len]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
            );
        }
        Ok(Self {
            header,
            meta,
            vectors,
            clusters: None,
        })
    }
}

/// Metadata sidecar path: the index file name with `.meta.jsonl` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.jsonl");
    PathBuf::from(name)
}
