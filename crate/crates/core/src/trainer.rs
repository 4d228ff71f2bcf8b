//! Mini-batch training: adaptive-moment optimizer with decoupled weight
//! decay, linear warmup/decay schedule, epoch loop with per-epoch
//! validation recall, best-epoch selection, and checkpoint io.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::Triple;
use crate::blocking::{build_index, IndexKind};
use crate::corpus::{Dataset, LabeledPair};
use crate::encoder::{Activations, EncoderModel, Featurizer, InputKind, Mat, ModelDims, ModelGrad};
use crate::losses::{nlsh_loss, nlsh_loss_grad, ContrastiveParams, NlshParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    /// k used for the validation recall that picks the best epoch.
    pub valid_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // desk profile; the paper-scale profile uses lr 1e-5 and 150 epochs
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            epochs: 30,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            valid_k: 10,
            seed: 0,
        }
    }
}

/// Linear ramp 0 -> lr over the warmup steps, then linear decay back to
/// 0 at `total_steps`.
pub fn lr_at_step(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = (cfg.warmup_frac * total_steps as f64).round() as usize;
    let step = step.min(total_steps);
    if warmup > 0 && step <= warmup {
        cfg.lr * step as f64 / warmup as f64
    } else {
        cfg.lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Adam with decoupled weight decay. Moments are laid out tensor by
/// tensor in the model's fixed parameter order.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamW {
    pub fn new(model: &EncoderModel, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = model.param_tensors().iter().map(|(_, t)| t.len()).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut EncoderModel, grad: &ModelGrad, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let grads = grad.tensors();
        for ((tensor_idx, (_, params)), g) in
            model.param_tensors_mut().into_iter().enumerate().zip(grads)
        {
            let m = &mut self.m[tensor_idx];
            let v = &mut self.v[tensor_idx];
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
            }
        }
    }
}

/// A saved model plus the epoch it came from and its validation recall.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub epoch: usize,
    pub valid_recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_recall: f64,
}

/// Per-epoch mean loss and validation recall; row 0 is the untrained
/// model.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,valid_recall\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.mean_loss, r.valid_recall));
        }
        out
    }
}

/// Recall@k of the validation positives: the fraction whose tableA side
/// appears among the top-k neighbors of its tableB side.
pub fn validation_recall(
    dataset: &Dataset,
    model: &EncoderModel,
    valid_pairs: &[LabeledPair],
    k: usize,
) -> Result<f64> {
    let positives: Vec<&LabeledPair> = valid_pairs.iter().filter(|p| p.label).collect();
    if positives.is_empty() {
        return Ok(0.0);
    }
    let ids: Vec<String> = dataset.table_a.iter().map(|r| r.id.clone()).collect();
    let vectors = model.embed_all(&dataset.table_a)?;
    let index = build_index(ids, vectors, IndexKind::Exact)?;
    let hits: usize = positives
        .par_iter()
        .map(|p| -> Result<usize> {
            let rec = dataset
                .record_b(&p.id_b)
                .ok_or_else(|| Error::DanglingId { id: p.id_b.clone(), column: "rtable_id".into() })?;
            let q = model.embed(rec)?;
            let found = index
                .knn(&q, k)?
                .iter()
                .any(|&(row, _)| index.id(row) == p.id_a);
            Ok(found as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / positives.len() as f64)
}

/// Total loss and parameter gradients for one batch of triples. The
/// loss is the mean clamp loss plus, when enabled and the batch has at
/// least two triples, the weighted contrastive terms over the (p, q)
/// embedding views.
pub fn batch_gradient(
    model: &EncoderModel,
    triples: &[&Triple],
    nlsh: &NlshParams,
    con: &ContrastiveParams,
) -> Result<(f64, ModelGrad)> {
    let acts: Vec<(Activations, Activations, Activations)> = triples
        .par_iter()
        .map(|t| Ok((model.forward(&t.p)?, model.forward(&t.q)?, model.forward(&t.r)?)))
        .collect::<Result<_>>()?;

    let n = triples.len() as f64;
    let mut loss = 0.0;
    let mut grad = ModelGrad::zeros_like(model);
    let zero = vec![0.0; model.dims.d];

    let mut scalar_grads = Vec::with_capacity(acts.len());
    for (ap, aq, ar) in &acts {
        loss += nlsh_loss(ap.s, aq.s, ar.s, nlsh)? / n;
        let (gp, gq, gr) = nlsh_loss_grad(ap.s, aq.s, ar.s, nlsh)?;
        scalar_grads.push((gp / n, gq / n, gr / n));
    }

    let mut view_grads: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    if con.enabled && acts.len() >= 2 {
        let views_a: Vec<Vec<f64>> = acts.iter().map(|(ap, _, _)| ap.e.clone()).collect();
        let views_b: Vec<Vec<f64>> = acts.iter().map(|(_, aq, _)| aq.e.clone()).collect();
        let (s_loss, mut s_ga, mut s_gb) =
            crate::losses::simclr_grad(&views_a, &views_b, con.temperature)?;
        let (b_loss, b_ga, b_gb) =
            crate::losses::barlow_twins_grad(&views_a, &views_b, con.bt_offdiag_weight)?;
        loss += con.weight * (s_loss + b_loss);
        for i in 0..s_ga.len() {
            for j in 0..s_ga[i].len() {
                s_ga[i][j] = con.weight * (s_ga[i][j] + b_ga[i][j]);
                s_gb[i][j] = con.weight * (s_gb[i][j] + b_gb[i][j]);
            }
        }
        view_grads = Some((s_ga, s_gb));
    }

    for (i, (ap, aq, ar)) in acts.iter().enumerate() {
        let (gp, gq, gr) = scalar_grads[i];
        let (ge_p, ge_q) = match &view_grads {
            Some((ga, gb)) => (&ga[i], &gb[i]),
            None => (&zero, &zero),
        };
        model.backward(ap, ge_p, gp, &mut grad);
        model.backward(aq, ge_q, gq, &mut grad);
        model.backward(ar, &zero, gr, &mut grad);
    }

    Ok((loss, grad))
}

/// Train and return the checkpoint with the highest validation recall
/// (the untrained model competes as epoch 0) plus the full log.
///
/// When the validation split has no positives the recall signal is
/// degenerate; the final epoch is returned instead.
pub fn train(
    dataset: &Dataset,
    valid_pairs: &[LabeledPair],
    triples: &[Triple],
    model: EncoderModel,
    cfg: &TrainConfig,
    nlsh: &NlshParams,
    con: &ContrastiveParams,
) -> Result<(Checkpoint, TrainLog)> {
    nlsh.validate()?;
    if triples.is_empty() {
        return Err(Error::Training("no training triples".into()));
    }
    let mut log = TrainLog::default();
    let has_valid_signal = valid_pairs.iter().any(|p| p.label);

    // epoch 0: evaluate the untrained model
    let initial_loss = eval_mean_loss(&model, triples, nlsh, con)?;
    let initial_recall = validation_recall(dataset, &model, valid_pairs, cfg.valid_k)?;
    log.rows.push(LogRow { epoch: 0, mean_loss: initial_loss, valid_recall: initial_recall });
    let mut best =
        Checkpoint { model: model.clone(), epoch: 0, valid_recall: initial_recall };

    let mut model = model;
    let mut optimizer = AdamW::new(&model, cfg.weight_decay);
    let batches_per_epoch = triples.len().div_ceil(cfg.batch_size.max(1));
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Triple> = chunk.iter().map(|&i| &triples[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch, nlsh, con)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {global_step}"
                )));
            }
            global_step += 1;
            let lr = lr_at_step(global_step, total_steps, cfg);
            optimizer.step(&mut model, &grad, lr);
            epoch_loss += loss * batch.len() as f64;
        }
        let mean_loss = epoch_loss / triples.len() as f64;
        let recall = validation_recall(dataset, &model, valid_pairs, cfg.valid_k)?;
        log.rows.push(LogRow { epoch, mean_loss, valid_recall: recall });
        // ties go to the later epoch: recall saturates early while the
        // hash head keeps converging
        if recall >= best.valid_recall || (!has_valid_signal && epoch == cfg.epochs) {
            best = Checkpoint { model: model.clone(), epoch, valid_recall: recall };
        }
    }
    Ok((best, log))
}

fn eval_mean_loss(
    model: &EncoderModel,
    triples: &[Triple],
    nlsh: &NlshParams,
    con: &ContrastiveParams,
) -> Result<f64> {
    let hashes: Vec<(f64, f64, f64)> = triples
        .par_iter()
        .map(|t| {
            Ok((
                model.scalar_hash(&t.p)?,
                model.scalar_hash(&t.q)?,
                model.scalar_hash(&t.r)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    for &(hp, hq, hr) in &hashes {
        loss += nlsh_loss(hp, hq, hr, nlsh)?;
    }
    loss /= hashes.len() as f64;
    if con.enabled && triples.len() >= 2 {
        let views_a: Vec<Vec<f64>> =
            triples.par_iter().map(|t| model.embed(&t.p)).collect::<Result<_>>()?;
        let views_b: Vec<Vec<f64>> =
            triples.par_iter().map(|t| model.embed(&t.q)).collect::<Result<_>>()?;
        loss += con.weight
            * (crate::losses::simclr_loss(&views_a, &views_b, con.temperature)?
                + crate::losses::barlow_twins_loss(&views_a, &views_b, con.bt_offdiag_weight)?);
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// checkpoint io: versioned little-endian binary dump of all tensors
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"NLSHCK01";

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let model = &ckpt.model;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    put_u64(&mut out, ckpt.epoch as u64);
    put_f64(&mut out, ckpt.valid_recall);
    let dims = &model.dims;
    for v in [dims.e_dim, dims.mlp_hidden, dims.d, dims.h] {
        put_u64(&mut out, v as u64);
    }
    match &model.input {
        InputKind::Hashed(feat) => {
            put_u64(&mut out, 0);
            put_u64(&mut out, feat.vocab_dim as u64);
            put_u64(&mut out, feat.hash_seed);
        }
        InputKind::External(table) => {
            put_u64(&mut out, 1);
            put_u64(&mut out, table.len() as u64);
            for (id, vec) in table {
                put_str(&mut out, id);
                put_u64(&mut out, vec.len() as u64);
                for &v in vec {
                    put_f64(&mut out, v);
                }
            }
        }
    }
    for (name, tensor) in model.param_tensors() {
        put_str(&mut out, name);
        put_u64(&mut out, tensor.len() as u64);
        for &v in tensor {
            put_f64(&mut out, v);
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    f.write_all(&out).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint { path: self.path.to_path_buf(), msg: "truncated".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint {
            path: self.path.to_path_buf(),
            msg: "bad utf-8".into(),
        })
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(8)? != CKPT_MAGIC {
        return Err(Error::Checkpoint { path: path.to_path_buf(), msg: "bad magic".into() });
    }
    let epoch = r.u64()? as usize;
    let valid_recall = r.f64()?;
    let e_dim = r.u64()? as usize;
    let mlp_hidden = r.u64()? as usize;
    let d = r.u64()? as usize;
    let h = r.u64()? as usize;
    let dims = ModelDims { e_dim, mlp_hidden, d, h };
    let input = match r.u64()? {
        0 => {
            let vocab_dim = r.u64()? as usize;
            let hash_seed = r.u64()?;
            InputKind::Hashed(Featurizer::new(vocab_dim, hash_seed)?)
        }
        1 => {
            let count = r.u64()? as usize;
            let mut table = std::collections::BTreeMap::new();
            for _ in 0..count {
                let id = r.string()?;
                let len = r.u64()? as usize;
                table.insert(id, r.f64_vec(len)?);
            }
            InputKind::External(table)
        }
        other => {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("unknown input kind {other}"),
            })
        }
    };
    let vocab_dim = match &input {
        InputKind::Hashed(f) => f.vocab_dim,
        InputKind::External(_) => 0,
    };
    let mut model = EncoderModel {
        dims,
        input,
        token_embed: Mat::zeros(vocab_dim, if vocab_dim == 0 { 0 } else { e_dim }),
        w1: Mat::zeros(mlp_hidden, e_dim),
        b1: vec![0.0; mlp_hidden],
        w2: Mat::zeros(d, mlp_hidden),
        b2: vec![0.0; d],
        hw1: Mat::zeros(h, d),
        hb1: vec![0.0; h],
        hw2: vec![0.0; h],
        hb2: 0.0,
    };
    for (name, tensor) in model.param_tensors_mut() {
        let got_name = r.string()?;
        if got_name != name {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("expected tensor {name}, found {got_name}"),
            });
        }
        let len = r.u64()? as usize;
        if len != tensor.len() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("tensor {name} has {len} values, expected {}", tensor.len()),
            });
        }
        for slot in tensor.iter_mut() {
            *slot = r.f64()?;
        }
    }
    Ok(Checkpoint { model, epoch, valid_recall })
}
