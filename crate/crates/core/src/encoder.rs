//! Record encoder: feature-hashed token counts, a trainable embedding
//! table plus two-layer MLP producing L2-normalized embeddings, and a
//! scalar projection head.
//!
//! The encoder can alternatively consume precomputed per-record vectors
//! from a file, in which case only the MLP adapter and head train.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{serialize, Record};
use crate::hashing::seeded_hash;
use crate::{Error, Result};

/// Feature-hashing tokenizer config. `vocab_dim` must be a power of two.
///
/// Tokenization: whitespace chunks; the special `[COL]`/`[VAL]` markers
/// survive verbatim, everything else is lowercased and split on any
/// non-alphanumeric character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    pub vocab_dim: usize,
    pub hash_seed: u64,
}

impl Featurizer {
    pub fn new(vocab_dim: usize, hash_seed: u64) -> Result<Self> {
        if vocab_dim == 0 || !vocab_dim.is_power_of_two() {
            return Err(Error::BadDims(format!("vocab_dim must be a power of two, got {vocab_dim}")));
        }
        Ok(Featurizer { vocab_dim, hash_seed })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (seeded_hash(token, self.hash_seed) & (self.vocab_dim as u64 - 1)) as usize
    }
}

/// Split serialized text into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk == "[COL]" || chunk == "[VAL]" {
            out.push(chunk.to_string());
            continue;
        }
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Nonnegative token counts over hash buckets, sorted by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCounts {
    pub entries: Vec<(usize, f64)>,
}

impl SparseCounts {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }
}

/// Hash-bucketed token counts for a serialized record.
pub fn featurize(text: &str, feat: &Featurizer) -> SparseCounts {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for token in tokenize(text) {
        *counts.entry(feat.bucket(&token)).or_insert(0.0) += 1.0;
    }
    SparseCounts { entries: counts.into_iter().collect() }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = self * x + b
    pub fn affine(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(b.len(), self.rows);
        let mut out = b.to_vec();
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out[r] += acc;
        }
        out
    }

    /// out = selfᵀ * g
    pub fn transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += gr * w;
            }
        }
        out
    }
}

/// Layer widths. `e_dim` is the token-embedding / adapter input width,
/// `d` the embedding output width, `h` the head hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub e_dim: usize,
    pub mlp_hidden: usize,
    pub d: usize,
    pub h: usize,
}

impl ModelDims {
    pub fn desk_default() -> Self {
        ModelDims { e_dim: 64, mlp_hidden: 128, d: 128, h: 128 }
    }

    fn validate(&self) -> Result<()> {
        if self.e_dim == 0 || self.mlp_hidden == 0 || self.d == 0 || self.h == 0 {
            return Err(Error::BadDims(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Where record input vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputKind {
    /// Feature-hashed token counts pooled through the embedding table.
    Hashed(Featurizer),
    /// Fixed per-record vectors; only the MLP adapter and head train.
    External(BTreeMap<String, Vec<f64>>),
}

/// All trainable parameters plus the input config.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub dims: ModelDims,
    pub input: InputKind,
    pub token_embed: Mat, // vocab × e_dim (0×0 in external mode)
    pub w1: Mat,          // mlp_hidden × e_dim
    pub b1: Vec<f64>,
    pub w2: Mat, // d × mlp_hidden
    pub b2: Vec<f64>,
    pub hw1: Mat, // h × d
    pub hb1: Vec<f64>,
    pub hw2: Vec<f64>, // 1 × h
    pub hb2: f64,
}

fn uniform_fill(rng: &mut ChaCha8Rng, data: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in data.iter_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// Fresh model with uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init,
/// deterministic per seed.
pub fn init_model(feat: Featurizer, dims: &ModelDims, seed: u64) -> Result<EncoderModel> {
    dims.validate()?;
    let mut model = EncoderModel {
        dims: *dims,
        input: InputKind::Hashed(feat),
        token_embed: Mat::zeros(feat.vocab_dim, dims.e_dim),
        w1: Mat::zeros(dims.mlp_hidden, dims.e_dim),
        b1: vec![0.0; dims.mlp_hidden],
        w2: Mat::zeros(dims.d, dims.mlp_hidden),
        b2: vec![0.0; dims.d],
        hw1: Mat::zeros(dims.h, dims.d),
        hb1: vec![0.0; dims.h],
        hw2: vec![0.0; dims.h],
        hb2: 0.0,
    };
    fill_params(&mut model, seed);
    Ok(model)
}

/// Model over precomputed vectors; `e_dim` is forced to the vector width.
pub fn init_external_model(
    vectors: BTreeMap<String, Vec<f64>>,
    dims: &ModelDims,
    seed: u64,
) -> Result<EncoderModel> {
    let e_dim = vectors
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::Config("external embedding file has no rows".into()))?;
    for (id, v) in &vectors {
        if v.len() != e_dim {
            return Err(Error::Config(format!(
                "external vector for {id:?} has dim {}, expected {e_dim}",
                v.len()
            )));
        }
    }
    let dims = ModelDims { e_dim, ..*dims };
    dims.validate()?;
    let mut model = EncoderModel {
        dims,
        input: InputKind::External(vectors),
        token_embed: Mat::zeros(0, 0),
        w1: Mat::zeros(dims.mlp_hidden, dims.e_dim),
        b1: vec![0.0; dims.mlp_hidden],
        w2: Mat::zeros(dims.d, dims.mlp_hidden),
        b2: vec![0.0; dims.d],
        hw1: Mat::zeros(dims.h, dims.d),
        hb1: vec![0.0; dims.h],
        hw2: vec![0.0; dims.h],
        hb2: 0.0,
    };
    fill_params(&mut model, seed);
    Ok(model)
}

fn fill_params(model: &mut EncoderModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = model.dims.e_dim;
    let m = model.dims.mlp_hidden;
    let d = model.dims.d;
    let h = model.dims.h;
    uniform_fill(&mut rng, &mut model.token_embed.data, e);
    uniform_fill(&mut rng, &mut model.w1.data, e);
    uniform_fill(&mut rng, &mut model.b1, e);
    uniform_fill(&mut rng, &mut model.w2.data, m);
    uniform_fill(&mut rng, &mut model.b2, m);
    uniform_fill(&mut rng, &mut model.hw1.data, d);
    uniform_fill(&mut rng, &mut model.hb1, d);
    uniform_fill(&mut rng, &mut model.hw2, h);
    let mut one = [0.0];
    uniform_fill(&mut rng, &mut one, h);
    model.hb2 = one[0];
}

/// Parse an external embedding file: one `id<TAB>v1 v2 ... vd` per line.
pub fn load_external_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut out = BTreeMap::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            msg: format!("line {}: expected id<TAB>values", lineno + 1),
        })?;
        let vals: std::result::Result<Vec<f64>, _> =
            rest.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", lineno + 1),
        })?;
        out.insert(id.to_string(), vals);
    }
    Ok(out)
}

/// Everything the backward pass needs from one record's forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub counts: Option<SparseCounts>,
    pub x0: Vec<f64>,
    pub a1: Vec<f64>,
    pub z1: Vec<f64>,
    pub y: Vec<f64>,
    pub y_norm: f64,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub s: f64,
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

impl EncoderModel {
    /// Input vector for a record: mean-pooled token embeddings, or the
    /// external vector looked up by id.
    fn input_vector(&self, record: &Record) -> Result<(Vec<f64>, Option<SparseCounts>)> {
        match &self.input {
            InputKind::Hashed(feat) => {
                let counts = featurize(&serialize(record), feat);
                let total = counts.total();
                let mut x0 = vec![0.0; self.dims.e_dim];
                if total > 0.0 {
                    for &(bucket, c) in &counts.entries {
                        let row = self.token_embed.row(bucket);
                        for (x, w) in x0.iter_mut().zip(row) {
                            *x += c * w;
                        }
                    }
                    for x in x0.iter_mut() {
                        *x /= total;
                    }
                }
                Ok((x0, Some(counts)))
            }
            InputKind::External(table) => {
                let v = table
                    .get(&record.id)
                    .ok_or_else(|| Error::MissingEmbedding { id: record.id.clone() })?;
                Ok((v.clone(), None))
            }
        }
    }

    /// Full forward pass with cached intermediates.
    pub fn forward(&self, record: &Record) -> Result<Activations> {
        let (x0, counts) = self.input_vector(record)?;
        let a1 = self.w1.affine(&x0, &self.b1);
        let z1 = relu(&a1);
        let y = self.w2.affine(&z1, &self.b2);
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = if y_norm > 1e-12 {
            y.iter().map(|v| v / y_norm).collect()
        } else {
            let mut e = vec![0.0; self.dims.d];
            e[0] = 1.0;
            e
        };
        let u = self.hw1.affine(&e, &self.hb1);
        let v = relu(&u);
        let s = self.hw2.iter().zip(&v).map(|(w, vi)| w * vi).sum::<f64>() + self.hb2;
        Ok(Activations { counts, x0, a1, z1, y, y_norm, e, u, v, s })
    }

    /// L2-normalized embedding.
    pub fn embed(&self, record: &Record) -> Result<Vec<f64>> {
        Ok(self.forward(record)?.e)
    }

    /// Scalar hash value (raw head output, no squashing).
    pub fn scalar_hash(&self, record: &Record) -> Result<f64> {
        Ok(self.forward(record)?.s)
    }

    /// Embeddings for a whole table; parallel over records, output order
    /// matches input order.
    pub fn embed_all(&self, records: &[Record]) -> Result<Vec<Vec<f64>>> {
        records.par_iter().map(|r| self.embed(r)).collect()
    }

    /// Accumulate parameter gradients for one record given upstream
    /// gradients w.r.t. the unit embedding (`g_e`) and the scalar hash
    /// (`g_s`). Either may be zero.
    pub fn backward(&self, act: &Activations, g_e: &[f64], g_s: f64, grad: &mut ModelGrad) {
        let d = self.dims.d;
        let h = self.dims.h;

        // head: s = hw2·v + hb2, v = relu(u), u = hw1 e + hb1
        let mut g_e_total = g_e.to_vec();
        if g_s != 0.0 {
            for i in 0..h {
                grad.hw2[i] += g_s * act.v[i];
            }
            grad.hb2 += g_s;
            let mut g_u = vec![0.0; h];
            for i in 0..h {
                if act.u[i] > 0.0 {
                    g_u[i] = g_s * self.hw2[i];
                }
            }
            for i in 0..h {
                if g_u[i] != 0.0 {
                    let row = grad.hw1.row_mut(i);
                    for j in 0..d {
                        row[j] += g_u[i] * act.e[j];
                    }
                    grad.hb1[i] += g_u[i];
                }
            }
            let back = self.hw1.transpose_mul(&g_u);
            for (t, b) in g_e_total.iter_mut().zip(back) {
                *t += b;
            }
        }

        // normalization: e = y/‖y‖
        if act.y_norm <= 1e-12 {
            return; // degenerate fallback embedding carries no gradient
        }
        let dot: f64 = g_e_total.iter().zip(&act.e).map(|(g, e)| g * e).sum();
        let g_y: Vec<f64> = g_e_total
            .iter()
            .zip(&act.e)
            .map(|(g, e)| (g - dot * e) / act.y_norm)
            .collect();

        // mlp: y = w2 z1 + b2, z1 = relu(a1), a1 = w1 x0 + b1
        for i in 0..d {
            if g_y[i] != 0.0 {
                let row = grad.w2.row_mut(i);
                for (w, z) in row.iter_mut().zip(&act.z1) {
                    *w += g_y[i] * z;
                }
                grad.b2[i] += g_y[i];
            }
        }
        let g_z1 = self.w2.transpose_mul(&g_y);
        let mut g_a1 = vec![0.0; self.dims.mlp_hidden];
        for i in 0..self.dims.mlp_hidden {
            if act.a1[i] > 0.0 {
                g_a1[i] = g_z1[i];
            }
        }
        for i in 0..self.dims.mlp_hidden {
            if g_a1[i] != 0.0 {
                let row = grad.w1.row_mut(i);
                for (w, x) in row.iter_mut().zip(&act.x0) {
                    *w += g_a1[i] * x;
                }
                grad.b1[i] += g_a1[i];
            }
        }

        // input: x0 = Σ c_t E[t] / Σ c_t
        if let Some(counts) = &act.counts {
            let total = counts.total();
            if total > 0.0 {
                let g_x0 = self.w1.transpose_mul(&g_a1);
                for &(bucket, c) in &counts.entries {
                    let scale = c / total;
                    let row = grad.token_embed.row_mut(bucket);
                    for (g, gx) in row.iter_mut().zip(&g_x0) {
                        *g += scale * gx;
                    }
                }
            }
        }
    }

    /// Named views of every trainable tensor, in a fixed order shared
    /// with `ModelGrad` and the optimizer state.
    pub fn param_tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("token_embed", self.token_embed.data.as_slice()),
            ("w1", self.w1.data.as_slice()),
            ("b1", self.b1.as_slice()),
            ("w2", self.w2.data.as_slice()),
            ("b2", self.b2.as_slice()),
            ("hw1", self.hw1.data.as_slice()),
            ("hb1", self.hb1.as_slice()),
            ("hw2", self.hw2.as_slice()),
            ("hb2", std::slice::from_ref(&self.hb2)),
        ]
    }

    pub fn param_tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("token_embed", self.token_embed.data.as_mut_slice()),
            ("w1", self.w1.data.as_mut_slice()),
            ("b1", self.b1.as_mut_slice()),
            ("w2", self.w2.data.as_mut_slice()),
            ("b2", self.b2.as_mut_slice()),
            ("hw1", self.hw1.data.as_mut_slice()),
            ("hb1", self.hb1.as_mut_slice()),
            ("hw2", self.hw2.as_mut_slice()),
            ("hb2", std::slice::from_mut(&mut self.hb2)),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Gradient accumulator mirroring the model's trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub token_embed: Mat,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub hw1: Mat,
    pub hb1: Vec<f64>,
    pub hw2: Vec<f64>,
    pub hb2: f64,
}

impl ModelGrad {
    pub fn zeros_like(model: &EncoderModel) -> Self {
        ModelGrad {
            token_embed: Mat::zeros(model.token_embed.rows, model.token_embed.cols),
            w1: Mat::zeros(model.w1.rows, model.w1.cols),
            b1: vec![0.0; model.b1.len()],
            w2: Mat::zeros(model.w2.rows, model.w2.cols),
            b2: vec![0.0; model.b2.len()],
            hw1: Mat::zeros(model.hw1.rows, model.hw1.cols),
            hb1: vec![0.0; model.hb1.len()],
            hw2: vec![0.0; model.hw2.len()],
            hb2: 0.0,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.token_embed.data.as_slice(),
            self.w1.data.as_slice(),
            self.b1.as_slice(),
            self.w2.data.as_slice(),
            self.b2.as_slice(),
            self.hw1.data.as_slice(),
            self.hb1.as_slice(),
            self.hw2.as_slice(),
            std::slice::from_ref(&self.hb2),
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        for t in [
            &mut self.token_embed.data,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
            &mut self.hw1.data,
            &mut self.hb1,
            &mut self.hw2,
        ] {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
        self.hb2 *= factor;
    }
}
