//! Parameter storage and the on-disk weights format.
//!
//! File layout: one UTF-8 JSON header line
//! `{"version":1,"config":{..},"tensors":[{"name":..,"shape":[..],"offset":N}]}`
//! terminated by `\n`, then every tensor as little-endian `f32` in header
//! order. `offset` is the byte offset of the tensor within the data section.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::Scalar;
use crate::error::{Error, Result};

const WEIGHTS_VERSION: u32 = 1;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_g: Array1<T>,
    pub ln1_b: Array1<T>,
    pub wq: Array2<T>,
    pub bq: Array1<T>,
    pub wk: Array2<T>,
    pub bk: Array1<T>,
    pub wv: Array2<T>,
    pub bv: Array1<T>,
    pub wo: Array2<T>,
    pub bo: Array1<T>,
    pub ln2_g: Array1<T>,
    pub ln2_b: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

/// Generates the ordered parameter visitor for a layer.
macro_rules! layer_fields {
    ($mac:ident) => {
        $mac!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl<T: Scalar> LayerWeights<T> {
    fn zeros(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let f = c.d_ff;
        let v = || Array1::zeros(d);
        let m = || Array2::zeros((d, d));
        Self {
            ln1_g: v(),
            ln1_b: v(),
            wq: m(),
            bq: v(),
            wk: m(),
            bk: v(),
            wv: m(),
            bv: v(),
            wo: m(),
            bo: v(),
            ln2_g: v(),
            ln2_b: v(),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: v(),
        }
    }

    fn params(&self) -> Vec<(&'static str, ArrayViewD<'_, T>)> {
        macro_rules! collect {
            ($($f:ident),*) => { vec![$((stringify!($f), self.$f.view().into_dyn())),*] };
        }
        layer_fields!(collect)
    }

    fn params_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, T>)> {
        macro_rules! collect {
            ($($f:ident),*) => { vec![$((stringify!($f), self.$f.view_mut().into_dyn())),*] };
        }
        layer_fields!(collect)
    }
}

/// All parameters of the decoder. The output projection is tied to `tok_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T = f32> {
    pub config: ModelConfig,
    pub tok_emb: Array2<T>,
    pub pos_emb: Array2<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: Array1<T>,
    pub lnf_b: Array1<T>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            tok_emb: Array2::zeros((config.vocab_size, config.d_model)),
            pos_emb: Array2::zeros((config.max_pos, config.d_model)),
            layers: (0..config.n_layers)
                .map(|_| LayerWeights::zeros(&config))
                .collect(),
            lnf_g: Array1::zeros(config.d_model),
            lnf_b: Array1::zeros(config.d_model),
            config,
        }
    }

    /// Seeded initialization: matrices ~ N(0, std²), layernorm gains 1, biases 0.
    pub fn init_with_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("valid std");
        for (name, mut t) in w.params_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.ends_with("_g") {
                t.fill(T::one());
            } else if t.ndim() == 2 {
                t.map_inplace(|x| *x = T::from_f64(normal.sample(&mut rng)).unwrap());
            }
        }
        Ok(w)
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    /// Named parameter tensors in canonical order.
    pub fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(
                l.params()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.push(("lnf_g".to_string(), self.lnf_g.view().into_dyn()));
        out.push(("lnf_b".to_string(), self.lnf_b.view().into_dyn()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(
                l.params_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.push(("lnf_g".to_string(), self.lnf_g.view_mut().into_dyn()));
        out.push(("lnf_b".to_string(), self.lnf_b.view_mut().into_dyn()));
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += other * scale`, elementwise over every tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for ((_, mut a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, mut a) in self.params_mut() {
            a.map_inplace(|x| *x = *x * s);
        }
    }

    /// Converts every tensor to another float type.
    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let mut out = Weights::<U>::zeros(self.config);
        for ((_, mut dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            dst.zip_mut_with(&src, |d, s| *d = U::from_f64(s.to_f64().unwrap()).unwrap());
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

impl Weights<f32> {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut offset = 0u64;
        let tensors = self
            .params()
            .iter()
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                entry
            })
            .collect();
        let header = WeightsHeader {
            version: WEIGHTS_VERSION,
            config: self.config,
            tensors,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(offset as usize);
        for (_, t) in self.params() {
            for x in t.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: WeightsHeader = serde_json::from_str(line.trim_end_matches('\n'))?;
        if header.version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weights version {}",
                header.version
            )));
        }
        header.config.validate()?;
        let mut data = Vec::new();
        reader.read_to_end(&mut data)?;

        let mut w = Weights::<f32>::zeros(header.config);
        let mut params = w.params_mut();
        if params.len() != header.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, header lists {}",
                params.len(),
                header.tensors.len()
            )));
        }
        for ((name, t), entry) in params.iter_mut().zip(&header.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    t.shape()
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * t.len();
            let bytes = data
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("tensor {name} is truncated")))?;
            for (x, chunk) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        drop(params);
        if !w.is_finite() {
            return Err(Error::Format("weights contain non-finite values".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}
