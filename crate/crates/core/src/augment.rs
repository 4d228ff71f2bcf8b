//! Data augmentation operators and training-triple sampling.
//!
//! Augmentation produces distorted positives: word shuffles, word
//! deletions, and moving words across attributes. A word is a maximal
//! run of non-whitespace inside one attribute value. Triples (p, q, r)
//! pair an anchor with a similar item (labeled match or augmented copy)
//! and a dissimilar item (labeled negative or random draw from the
//! opposite table).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, LabeledPair, Record};
use crate::{Error, Result};

/// Which distortion to apply. `rate` is the fraction of words affected
/// by delete/move; shuffle ignores it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOp {
    pub kind: AugmentKind,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    ShuffleWords,
    DeleteWords,
    MoveAcrossAttrs,
}

impl AugmentOp {
    pub fn shuffle() -> Self {
        AugmentOp { kind: AugmentKind::ShuffleWords, rate: 0.0 }
    }
    pub fn delete(rate: f64) -> Self {
        AugmentOp { kind: AugmentKind::DeleteWords, rate }
    }
    pub fn move_across(rate: f64) -> Self {
        AugmentOp { kind: AugmentKind::MoveAcrossAttrs, rate }
    }
}

/// The default operator set: shuffle, delete 20%, move 20%.
pub fn default_ops() -> Vec<AugmentOp> {
    vec![AugmentOp::shuffle(), AugmentOp::delete(0.2), AugmentOp::move_across(0.2)]
}

/// Apply the operators in order, deterministically per seed.
///
/// The schema is preserved and no new words are ever introduced; the
/// word multiset only shrinks (via deletion). Whitespace inside values
/// is normalized to single spaces on reassembly.
pub fn augment(record: &Record, ops: &[AugmentOp], seed: u64) -> Record {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Vec<String>> = record
        .attrs
        .iter()
        .map(|(_, v)| v.split_whitespace().map(str::to_string).collect())
        .collect();

    for op in ops {
        match op.kind {
            AugmentKind::ShuffleWords => {
                for words in values.iter_mut() {
                    words.shuffle(&mut rng);
                }
            }
            AugmentKind::DeleteWords => {
                for words in values.iter_mut() {
                    let k = (op.rate * words.len() as f64).floor() as usize;
                    if k == 0 {
                        continue;
                    }
                    let mut idx: Vec<usize> = (0..words.len()).collect();
                    idx.shuffle(&mut rng);
                    let mut doomed = idx[..k].to_vec();
                    doomed.sort_unstable_by(|a, b| b.cmp(a));
                    for i in doomed {
                        words.remove(i);
                    }
                }
            }
            AugmentKind::MoveAcrossAttrs => {
                if values.len() < 2 {
                    continue;
                }
                let total: usize = values.iter().map(Vec::len).sum();
                let moves = (op.rate * total as f64).floor() as usize;
                for _ in 0..moves {
                    let sources: Vec<usize> =
                        (0..values.len()).filter(|&i| !values[i].is_empty()).collect();
                    let Some(&src) = sources.as_slice().choose(&mut rng) else { break };
                    let wi = rng.gen_range(0..values[src].len());
                    let word = values[src].remove(wi);
                    let dests: Vec<usize> = (0..values.len()).filter(|&i| i != src).collect();
                    let &dst = dests.as_slice().choose(&mut rng).expect("at least 2 attrs");
                    values[dst].push(word);
                }
            }
        }
    }

    let attrs = record
        .attrs
        .iter()
        .zip(values)
        .map(|((name, _), words)| (name.clone(), words.join(" ")))
        .collect();
    Record { id: record.id.clone(), attrs }
}

/// Where q came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveSource {
    Label,
    Augmentation,
}

/// Where r came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSource {
    Label,
    RandomNegative,
}

/// One training example: anchor, similar item, dissimilar item.
#[derive(Debug, Clone)]
pub struct Triple {
    pub p: Record,
    pub q: Record,
    pub r: Record,
    pub q_source: PositiveSource,
    pub r_source: NegativeSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleMode {
    SelfSupervised,
    Supervised,
    Hybrid,
}

impl std::str::FromStr for TripleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_supervised" => Ok(TripleMode::SelfSupervised),
            "supervised" => Ok(TripleMode::Supervised),
            "hybrid" => Ok(TripleMode::Hybrid),
            other => Err(Error::Config(format!(
                "triples.mode must be self_supervised|supervised|hybrid, got {other:?}"
            ))),
        }
    }
}

/// Pool the self-supervised anchors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorPool {
    AllRecords,
    TableA,
    TableB,
}

#[derive(Debug, Clone)]
pub struct TripleConfig {
    pub mode: TripleMode,
    pub n: usize,
    /// Fraction of hybrid triples whose positive is a labeled match.
    pub hybrid_ratio: f64,
    pub ops: Vec<AugmentOp>,
    pub anchor_pool: AnchorPool,
}

impl Default for TripleConfig {
    fn default() -> Self {
        TripleConfig {
            mode: TripleMode::Hybrid,
            n: 2000,
            hybrid_ratio: 0.5,
            ops: default_ops(),
            anchor_pool: AnchorPool::AllRecords,
        }
    }
}

/// Sample `cfg.n` triples with replacement.
///
/// Supervised positives come from the labeled matches of `train_pairs`;
/// supervised negatives prefer labeled nonmatches sharing the anchor and
/// fall back to random draws. Self-supervised triples pair an anchor
/// with its augmented copy and a random record from the opposite table,
/// rejection-sampled against known matches.
pub fn sample_triples(
    dataset: &Dataset,
    train_pairs: &[LabeledPair],
    cfg: &TripleConfig,
    seed: u64,
) -> Result<Vec<Triple>> {
    let positives: Vec<&LabeledPair> = train_pairs.iter().filter(|p| p.label).collect();
    if matches!(cfg.mode, TripleMode::Supervised | TripleMode::Hybrid) && positives.is_empty() {
        return Err(Error::NoLabeledPositives);
    }
    // labeled negatives keyed by the anchor's a-side id
    let mut neg_by_a: std::collections::HashMap<&str, Vec<&str>> = Default::default();
    for p in train_pairs.iter().filter(|p| !p.label) {
        neg_by_a.entry(&p.id_a).or_default().push(&p.id_b);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let labeled = match cfg.mode {
            TripleMode::Supervised => true,
            TripleMode::SelfSupervised => false,
            TripleMode::Hybrid => rng.gen_bool(cfg.hybrid_ratio.clamp(0.0, 1.0)),
        };
        let triple = if labeled {
            supervised_triple(dataset, &positives, &neg_by_a, &mut rng)?
        } else {
            self_supervised_triple(dataset, cfg, &mut rng)?
        };
        triples.push(triple);
    }
    Ok(triples)
}

fn supervised_triple(
    dataset: &Dataset,
    positives: &[&LabeledPair],
    neg_by_a: &std::collections::HashMap<&str, Vec<&str>>,
    rng: &mut ChaCha8Rng,
) -> Result<Triple> {
    let pair = positives[rng.gen_range(0..positives.len())];
    let p = dataset.record_a(&pair.id_a).expect("validated at load").clone();
    let q = dataset.record_b(&pair.id_b).expect("validated at load").clone();
    if let Some(negs) = neg_by_a.get(pair.id_a.as_str()) {
        let id_r = negs[rng.gen_range(0..negs.len())];
        let r = dataset.record_b(id_r).expect("validated at load").clone();
        return Ok(Triple { p, q, r, q_source: PositiveSource::Label, r_source: NegativeSource::Label });
    }
    let r = random_negative(dataset, &p, true, rng)?;
    Ok(Triple { p, q, r, q_source: PositiveSource::Label, r_source: NegativeSource::RandomNegative })
}

fn self_supervised_triple(
    dataset: &Dataset,
    cfg: &TripleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Triple> {
    let (p, from_a) = match cfg.anchor_pool {
        AnchorPool::TableA => (pick(&dataset.table_a, rng)?, true),
        AnchorPool::TableB => (pick(&dataset.table_b, rng)?, false),
        AnchorPool::AllRecords => {
            let total = dataset.table_a.len() + dataset.table_b.len();
            if total == 0 {
                return Err(Error::Sampling("both tables are empty".into()));
            }
            let i = rng.gen_range(0..total);
            if i < dataset.table_a.len() {
                (dataset.table_a[i].clone(), true)
            } else {
                (dataset.table_b[i - dataset.table_a.len()].clone(), false)
            }
        }
    };
    let q = augment(&p, &cfg.ops, rng.gen::<u64>());
    let r = random_negative(dataset, &p, from_a, rng)?;
    Ok(Triple {
        p,
        q,
        r,
        q_source: PositiveSource::Augmentation,
        r_source: NegativeSource::RandomNegative,
    })
}

fn pick(table: &[Record], rng: &mut ChaCha8Rng) -> Result<Record> {
    if table.is_empty() {
        return Err(Error::Sampling("cannot sample from an empty table".into()));
    }
    Ok(table[rng.gen_range(0..table.len())].clone())
}

/// Uniform draw from the table opposite the anchor, rejecting the
/// anchor's own id and known matches.
fn random_negative(
    dataset: &Dataset,
    p: &Record,
    p_from_a: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Record> {
    let opposite = if p_from_a { &dataset.table_b } else { &dataset.table_a };
    if opposite.is_empty() {
        return Err(Error::Sampling("opposite table is empty".into()));
    }
    for _ in 0..1000 {
        let cand = &opposite[rng.gen_range(0..opposite.len())];
        let is_match = if p_from_a {
            dataset.is_match(&p.id, &cand.id)
        } else {
            dataset.is_match(&cand.id, &p.id)
        };
        if cand.id != p.id && !is_match {
            return Ok(cand.clone());
        }
    }
    Err(Error::Sampling("gave up finding a non-matching negative after 1000 draws".into()))
}
