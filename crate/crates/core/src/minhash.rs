//! MinHash-banding LSH blocking over token sets: the classic Jaccard
//! baseline the neural pipeline is compared against.

use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;

use crate::blocking::{CandidatePair, CandidateSet};
use crate::corpus::{Dataset, Record};
use crate::hashing::{fnv1a64, mix64};
use crate::{Error, Result};

/// Set elements: whole tokens or character 3-gram shingles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShingleMode {
    Tokens,
    Q3,
}

impl std::str::FromStr for ShingleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokens" => Ok(ShingleMode::Tokens),
            "q3" => Ok(ShingleMode::Q3),
            other => Err(Error::Config(format!("shingle must be tokens|q3, got {other:?}"))),
        }
    }
}

/// Lowercase alphanumeric tokens across all attribute values,
/// deduplicated.
pub fn token_set(record: &Record) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (_, value) in &record.attrs {
        let mut word = String::new();
        for ch in value.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else if !word.is_empty() {
                out.insert(std::mem::take(&mut word));
            }
        }
        if !word.is_empty() {
            out.insert(word);
        }
    }
    out
}

/// Character 3-grams over the space-joined token stream.
pub fn shingle_set(record: &Record, mode: ShingleMode) -> BTreeSet<String> {
    let tokens = token_set(record);
    match mode {
        ShingleMode::Tokens => tokens,
        ShingleMode::Q3 => {
            let joined: Vec<char> =
                tokens.into_iter().collect::<Vec<_>>().join(" ").chars().collect();
            let mut out = BTreeSet::new();
            if joined.len() < 3 {
                if !joined.is_empty() {
                    out.insert(joined.into_iter().collect());
                }
                return out;
            }
            for w in joined.windows(3) {
                out.insert(w.iter().collect());
            }
            out
        }
    }
}

/// |s1 ∩ s2| / |s1 ∪ s2|; two empty sets give 0.
pub fn jaccard(s1: &BTreeSet<String>, s2: &BTreeSet<String>) -> f64 {
    if s1.is_empty() && s2.is_empty() {
        return 0.0;
    }
    let inter = s1.intersection(s2).count();
    let union = s1.len() + s2.len() - inter;
    inter as f64 / union as f64
}

/// Per-function minima over the set's token hashes. Functions are
/// indexed: function i mixes the token hash with a seed derived from
/// (seed, i), so prefixes agree across different m for the same seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
}

pub fn minhash(set: &BTreeSet<String>, m: usize, seed: u64) -> MinHashSignature {
    let content: Vec<u64> = set.iter().map(|t| fnv1a64(t.as_bytes())).collect();
    let values = (0..m)
        .map(|i| {
            let fseed = mix64(seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15));
            content.iter().map(|&c| mix64(c ^ fseed)).min().unwrap_or(u64::MAX)
        })
        .collect();
    MinHashSignature { values }
}

/// Fraction of agreeing signature positions: an unbiased Jaccard
/// estimate.
pub fn signature_agreement(a: &MinHashSignature, b: &MinHashSignature) -> f64 {
    let hits = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    hits as f64 / a.values.len().max(1) as f64
}

/// bands * rows_per_band must equal the signature length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandingParams {
    pub bands: usize,
    pub rows_per_band: usize,
}

impl BandingParams {
    pub fn m(&self) -> usize {
        self.bands * self.rows_per_band
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.bands == 0 || self.rows_per_band == 0 || self.bands * self.rows_per_band != m {
            return Err(Error::BandingMismatch { bands: self.bands, rows: self.rows_per_band, m });
        }
        Ok(())
    }
}

/// Probability that two sets with Jaccard `s` share at least one band:
/// 1 - (1 - s^r)^b.
pub fn banding_probability(s: f64, params: &BandingParams) -> f64 {
    1.0 - (1.0 - s.powi(params.rows_per_band as i32)).powi(params.bands as i32)
}

/// Emit (a, b) as a candidate iff some band's row slice matches exactly
/// between the two signatures. Scores are the signature-agreement
/// Jaccard estimates.
pub fn lsh_block(
    dataset: &Dataset,
    params: &BandingParams,
    m: usize,
    seed: u64,
    mode: ShingleMode,
) -> Result<CandidateSet> {
    params.validate(m)?;
    let sig = |records: &[Record]| -> Vec<MinHashSignature> {
        records
            .par_iter()
            .map(|r| minhash(&shingle_set(r, mode), m, seed))
            .collect()
    };
    let sigs_a = sig(&dataset.table_a);
    let sigs_b = sig(&dataset.table_b);

    let mut matched: HashSet<(usize, usize)> = HashSet::new();
    for band in 0..params.bands {
        let lo = band * params.rows_per_band;
        let hi = lo + params.rows_per_band;
        let mut buckets: HashMap<&[u64], (Vec<usize>, Vec<usize>)> = HashMap::new();
        for (row, s) in sigs_a.iter().enumerate() {
            buckets.entry(&s.values[lo..hi]).or_default().0.push(row);
        }
        for (row, s) in sigs_b.iter().enumerate() {
            buckets.entry(&s.values[lo..hi]).or_default().1.push(row);
        }
        for (side_a, side_b) in buckets.values() {
            for &ra in side_a {
                for &rb in side_b {
                    matched.insert((ra, rb));
                }
            }
        }
    }

    let mut pairs: Vec<CandidatePair> = matched
        .into_iter()
        .map(|(ra, rb)| CandidatePair {
            id_a: dataset.table_a[ra].id.clone(),
            id_b: dataset.table_b[rb].id.clone(),
            score: signature_agreement(&sigs_a[ra], &sigs_b[rb]),
        })
        .collect();
    pairs.sort_by(|x, y| {
        x.id_b
            .cmp(&y.id_b)
            .then_with(|| y.score.partial_cmp(&x.score).unwrap())
            .then_with(|| x.id_a.cmp(&y.id_a))
    });
    let mut per_b: HashMap<&str, usize> = HashMap::new();
    for p in &pairs {
        *per_b.entry(p.id_b.as_str()).or_insert(0) += 1;
    }
    let k = per_b.values().copied().max().unwrap_or(0);
    Ok(CandidateSet { pairs, k })
}

/// Walk a strict-to-permissive banding ladder (rows per band halving
/// down to 1 over a fixed signature) until the candidate recall reaches
/// the target; returns the first config that does.
pub fn escalate_bands(
    dataset: &Dataset,
    m: usize,
    seed: u64,
    mode: ShingleMode,
    target_recall: f64,
) -> Result<(CandidateSet, BandingParams)> {
    if dataset.matches.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let mut rows = largest_pow2_divisor(m).min(32);
    let mut tried = 0usize;
    let mut best = 0.0f64;
    loop {
        let params = BandingParams { bands: m / rows, rows_per_band: rows };
        let set = lsh_block(dataset, &params, m, seed, mode)?;
        let found = set
            .pairs
            .iter()
            .filter(|p| dataset.is_match(&p.id_a, &p.id_b))
            .map(|p| (p.id_a.as_str(), p.id_b.as_str()))
            .collect::<HashSet<_>>()
            .len();
        let recall = found as f64 / dataset.matches.len() as f64;
        best = best.max(recall);
        tried += 1;
        if recall >= target_recall {
            return Ok((set, params));
        }
        if rows == 1 {
            return Err(Error::TargetUnreachable { target: target_recall, k_max: tried, best });
        }
        rows /= 2;
    }
}

fn largest_pow2_divisor(m: usize) -> usize {
    let mut p = 1;
    while m % (p * 2) == 0 {
        p *= 2;
    }
    p
}
