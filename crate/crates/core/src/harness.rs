//! Evaluation harness: blocking metrics, k-sweep curves, synthetic
//! benchmark generation, and pseudo-label generation/scoring.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{augment, AugmentOp};
use crate::blocking::{build_index_with, CandidateSet, GraphParams, IndexKind};
use crate::corpus::{Dataset, LabeledPair, Record};
use crate::encoder::EncoderModel;
use crate::{Error, Result};

/// Recall/precision/F1 of a candidate set against ground truth, plus
/// an optional k-sweep curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockingReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub candidate_size: usize,
    pub k: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub recall: f64,
    pub candidate_size: usize,
}

fn f1_of(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

/// recall = |C∩G|/|G|, precision = |C∩G|/|C| (0 when C is empty), f1 =
/// harmonic mean.
pub fn score(candidates: &CandidateSet, ground_truth: &BTreeSet<(String, String)>) -> Result<BlockingReport> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let pairs = candidates.pair_set();
    let hits = ground_truth
        .iter()
        .filter(|(a, b)| pairs.contains(&(a.as_str(), b.as_str())))
        .count();
    let recall = hits as f64 / ground_truth.len() as f64;
    let precision = if pairs.is_empty() { 0.0 } else { hits as f64 / pairs.len() as f64 };
    Ok(BlockingReport {
        recall,
        precision,
        f1: f1_of(recall, precision),
        candidate_size: pairs.len(),
        k: candidates.k,
        curve: Vec::new(),
    })
}

/// Recall and candidate size at each k, computed from one neighbor pass
/// at max(k_values).
pub fn k_sweep(
    dataset: &Dataset,
    model: &EncoderModel,
    k_values: &[usize],
    kind: IndexKind,
    graph_params: &GraphParams,
) -> Result<Vec<CurvePoint>> {
    if k_values.is_empty() {
        return Ok(Vec::new());
    }
    if dataset.matches.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let k_max = *k_values.iter().max().unwrap();
    let ids: Vec<String> = dataset.table_a.iter().map(|r| r.id.clone()).collect();
    let vectors = model.embed_all(&dataset.table_a)?;
    let index = build_index_with(ids, vectors, kind, graph_params)?;
    let queries = model.embed_all(&dataset.table_b)?;
    let per_b: Vec<Vec<(usize, f64)>> = queries
        .par_iter()
        .map(|q| index.knn(q, k_max.min(dataset.table_a.len())))
        .collect::<Result<_>>()?;

    let mut rank_hist = vec![0usize; k_max + 2];
    for (b_row, hits) in per_b.iter().enumerate() {
        let id_b = &dataset.table_b[b_row].id;
        for (rank, &(a_row, _)) in hits.iter().enumerate() {
            if dataset.is_match(index.id(a_row), id_b) {
                rank_hist[rank + 1] += 1;
            }
        }
    }
    let total = dataset.matches.len() as f64;
    let mut curve = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let covered: usize = rank_hist[1..=k.min(k_max)].iter().sum();
        let candidate_size: usize = per_b.iter().map(|h| h.len().min(k)).sum();
        curve.push(CurvePoint { k, recall: covered as f64 / total, candidate_size });
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// synthetic benchmark
// ---------------------------------------------------------------------------

/// Synthetic two-table benchmark spec. TableA holds one clean record
/// per entity; tableB holds corrupted copies. Corruption: synonym
/// substitution (swaps a word for a textually unrelated variant),
/// per-word typos, then the word-level augment operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub dup_per_entity: usize,
    pub shuffle: bool,
    pub delete_rate: f64,
    pub move_rate: f64,
    pub typo_rate: f64,
    pub synonym_rate: f64,
    /// labeled nonmatches generated per match
    pub neg_per_pos: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_entities: 200,
            dup_per_entity: 1,
            shuffle: true,
            delete_rate: 0.1,
            move_rate: 0.1,
            typo_rate: 0.08,
            synonym_rate: 0.55,
            neg_per_pos: 3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Heavy synonym substitution: matched pairs share few tokens.
    pub fn semantic(seed: u64) -> Self {
        SyntheticSpec { synonym_rate: 0.85, typo_rate: 0.05, seed, ..SyntheticSpec::default() }
    }

    /// No corruption at all: tableB records equal their tableA source.
    pub fn clean(seed: u64) -> Self {
        SyntheticSpec {
            shuffle: false,
            delete_rate: 0.0,
            move_rate: 0.0,
            typo_rate: 0.0,
            synonym_rate: 0.0,
            seed,
            ..SyntheticSpec::default()
        }
    }
}

const SYN_GROUPS: usize = 160;
const SYN_VARIANTS: usize = 4;
const BRAND_GROUPS: usize = 12;

/// Synonym vocabulary: `SYN_GROUPS + BRAND_GROUPS` groups of
/// `SYN_VARIANTS` globally-distinct pseudowords. Fixed across runs so
/// benchmarks with different seeds share a vocabulary.
fn vocabulary() -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let mut seen = HashSet::new();
    let mut groups = Vec::with_capacity(SYN_GROUPS + BRAND_GROUPS);
    for _ in 0..(SYN_GROUPS + BRAND_GROUPS) {
        let mut group = Vec::with_capacity(SYN_VARIANTS);
        while group.len() < SYN_VARIANTS {
            let len = rng.gen_range(5..=8);
            let word: String =
                (0..len).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect();
            if seen.insert(word.clone()) {
                group.push(word);
            }
        }
        groups.push(group);
    }
    groups
}

/// Generate the benchmark. Ground truth is the exact entity pairing;
/// labeled nonmatches are random non-matching pairs.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_entities == 0 {
        return Err(Error::ZeroEntities);
    }
    let vocab = vocabulary();
    let word_to_group: HashMap<&str, (usize, usize)> = vocab
        .iter()
        .enumerate()
        .flat_map(|(g, vs)| vs.iter().enumerate().map(move |(v, w)| (w.as_str(), (g, v))))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table_a = Vec::with_capacity(spec.n_entities);
    for i in 0..spec.n_entities {
        let n_words = rng.gen_range(5..=9);
        let name: Vec<&str> = (0..n_words)
            .map(|_| vocab[rng.gen_range(0..SYN_GROUPS)][0].as_str())
            .collect();
        let brand = vocab[SYN_GROUPS + rng.gen_range(0..BRAND_GROUPS)][0].clone();
        let price = rng.gen_range(5..999u32).to_string();
        table_a.push(Record::new(
            format!("a{i}"),
            vec![
                ("name".to_string(), name.join(" ")),
                ("brand".to_string(), brand),
                ("price".to_string(), price),
            ],
        ));
    }

    let mut table_b = Vec::with_capacity(spec.n_entities * spec.dup_per_entity);
    let mut pairs = Vec::new();
    for (i, source) in table_a.iter().enumerate() {
        for j in 0..spec.dup_per_entity {
            let id_b = if spec.dup_per_entity == 1 {
                format!("b{i}")
            } else {
                format!("b{i}_{j}")
            };
            let corrupted =
                corrupt_record(source, &id_b, spec, &vocab, &word_to_group, &mut rng);
            table_b.push(corrupted);
            pairs.push(LabeledPair { id_a: source.id.clone(), id_b, label: true });
        }
    }

    // labeled nonmatches, rejection-sampled against the entity pairing
    let n_neg = spec.neg_per_pos * pairs.len();
    let matches: HashSet<(usize, usize)> = (0..spec.n_entities)
        .flat_map(|i| (0..spec.dup_per_entity).map(move |j| (i, i * spec.dup_per_entity + j)))
        .collect();
    let mut negs = HashSet::new();
    while negs.len() < n_neg {
        let ai = rng.gen_range(0..table_a.len());
        let bi = rng.gen_range(0..table_b.len());
        if !matches.contains(&(ai, bi)) {
            negs.insert((ai, bi));
        }
    }
    let mut negs: Vec<(usize, usize)> = negs.into_iter().collect();
    negs.sort_unstable();
    for (ai, bi) in negs {
        pairs.push(LabeledPair {
            id_a: table_a[ai].id.clone(),
            id_b: table_b[bi].id.clone(),
            label: false,
        });
    }

    Dataset::new(table_a, table_b, pairs)
}

fn corrupt_record(
    source: &Record,
    id_b: &str,
    spec: &SyntheticSpec,
    vocab: &[Vec<String>],
    word_to_group: &HashMap<&str, (usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Record {
    let mut attrs = Vec::with_capacity(source.attrs.len());
    for (attr, value) in &source.attrs {
        let words: Vec<String> = value
            .split_whitespace()
            .map(|w| {
                let mut word = w.to_string();
                if let Some(&(g, v)) = word_to_group.get(w) {
                    if spec.synonym_rate > 0.0 && rng.gen_bool(spec.synonym_rate) {
                        let mut pick = rng.gen_range(0..SYN_VARIANTS - 1);
                        if pick >= v {
                            pick += 1;
                        }
                        word = vocab[g][pick].clone();
                    }
                }
                if spec.typo_rate > 0.0 && rng.gen_bool(spec.typo_rate) && !word.is_empty() {
                    let chars: Vec<char> = word.chars().collect();
                    let pos = rng.gen_range(0..chars.len());
                    let mut chars = chars;
                    chars[pos] = (b'a' + rng.gen_range(0..26u8)) as char;
                    word = chars.into_iter().collect();
                }
                word
            })
            .collect();
        attrs.push((attr.clone(), words.join(" ")));
    }
    let mut record = Record { id: id_b.to_string(), attrs };

    let mut ops = Vec::new();
    if spec.shuffle {
        ops.push(AugmentOp::shuffle());
    }
    if spec.delete_rate > 0.0 {
        ops.push(AugmentOp::delete(spec.delete_rate));
    }
    if spec.move_rate > 0.0 {
        ops.push(AugmentOp::move_across(spec.move_rate));
    }
    if !ops.is_empty() {
        record = augment(&record, &ops, rng.gen::<u64>());
        record.id = id_b.to_string();
    }
    record
}

// ---------------------------------------------------------------------------
// pseudo labeling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub id_a: String,
    pub id_b: String,
    pub label: bool,
    pub confidence: f64,
}

/// Threshold-labeled pairs. Pairs whose score falls strictly between
/// the two thresholds are excluded (the abstention band).
#[derive(Debug, Clone)]
pub struct PseudoLabelSet {
    pub pairs: Vec<PseudoLabel>,
    pub tau_pos: f64,
    pub tau_neg: f64,
}

impl PseudoLabelSet {
    pub fn midpoint(&self) -> f64 {
        (self.tau_pos + self.tau_neg) / 2.0
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

struct ScoreCache<'a> {
    model: &'a EncoderModel,
    dataset: &'a Dataset,
    emb_a: HashMap<String, Vec<f64>>,
    emb_b: HashMap<String, Vec<f64>>,
}

impl<'a> ScoreCache<'a> {
    fn new(model: &'a EncoderModel, dataset: &'a Dataset) -> Self {
        ScoreCache { model, dataset, emb_a: HashMap::new(), emb_b: HashMap::new() }
    }

    fn cosine(&mut self, id_a: &str, id_b: &str) -> Result<f64> {
        if !self.emb_a.contains_key(id_a) {
            let rec = self.dataset.record_a(id_a).ok_or_else(|| Error::DanglingId {
                id: id_a.to_string(),
                column: "ltable_id".into(),
            })?;
            self.emb_a.insert(id_a.to_string(), self.model.embed(rec)?);
        }
        if !self.emb_b.contains_key(id_b) {
            let rec = self.dataset.record_b(id_b).ok_or_else(|| Error::DanglingId {
                id: id_b.to_string(),
                column: "rtable_id".into(),
            })?;
            self.emb_b.insert(id_b.to_string(), self.model.embed(rec)?);
        }
        let a = &self.emb_a[id_a];
        let b = &self.emb_b[id_b];
        Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
    }
}

/// Derive similarity thresholds from the seed-labeled pairs and label
/// the unlabeled pairs.
///
/// tau_pos is the lower quartile of seed-positive scores, tau_neg the
/// upper quartile of seed-negative scores; if they cross, both collapse
/// to their midpoint. A pair labels 1 when score >= tau_pos, 0 when
/// score <= tau_neg, and is excluded otherwise; confidence is the
/// distance from the threshold midpoint.
pub fn pseudo_label(
    dataset: &Dataset,
    model: &EncoderModel,
    seed_labeled: &[LabeledPair],
    unlabeled: &[(String, String)],
) -> Result<PseudoLabelSet> {
    let mut cache = ScoreCache::new(model, dataset);
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    for p in seed_labeled {
        let s = cache.cosine(&p.id_a, &p.id_b)?;
        if p.label {
            pos_scores.push(s);
        } else {
            neg_scores.push(s);
        }
    }
    if pos_scores.is_empty() {
        return Err(Error::MissingSeedClass { which: "positive" });
    }
    if neg_scores.is_empty() {
        return Err(Error::MissingSeedClass { which: "negative" });
    }
    pos_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    neg_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tau_pos = quantile(&pos_scores, 0.25);
    let mut tau_neg = quantile(&neg_scores, 0.75);
    if tau_pos < tau_neg {
        let mid = (tau_pos + tau_neg) / 2.0;
        tau_pos = mid;
        tau_neg = mid;
    }
    let midpoint = (tau_pos + tau_neg) / 2.0;

    let mut pairs = Vec::new();
    for (id_a, id_b) in unlabeled {
        let s = cache.cosine(id_a, id_b)?;
        let label = if s >= tau_pos {
            true
        } else if s <= tau_neg {
            false
        } else {
            continue; // abstain
        };
        pairs.push(PseudoLabel {
            id_a: id_a.clone(),
            id_b: id_b.clone(),
            label,
            confidence: (s - midpoint).abs(),
        });
    }
    Ok(PseudoLabelSet { pairs, tau_pos, tau_neg })
}

/// TPR/TNR of pseudo labels against ground truth. A rate whose
/// denominator is empty is undefined, not 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoQuality {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

pub fn pseudo_quality(pseudo: &PseudoLabelSet, ground_truth: &BTreeSet<(String, String)>) -> PseudoQuality {
    let mut pos_total = 0usize;
    let mut pos_correct = 0usize;
    let mut neg_total = 0usize;
    let mut neg_correct = 0usize;
    for p in &pseudo.pairs {
        let is_match = ground_truth.contains(&(p.id_a.clone(), p.id_b.clone()));
        if is_match {
            pos_total += 1;
            if p.label {
                pos_correct += 1;
            }
        } else {
            neg_total += 1;
            if !p.label {
                neg_correct += 1;
            }
        }
    }
    PseudoQuality {
        tpr: (pos_total > 0).then(|| pos_correct as f64 / pos_total as f64),
        tnr: (neg_total > 0).then(|| neg_correct as f64 / neg_total as f64),
    }
}

/// Balanced seed sample: about half matches, half labeled nonmatches.
pub fn sample_seed_pairs(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<LabeledPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<LabeledPair> =
        dataset.pairs.iter().filter(|p| p.label).cloned().collect();
    let mut neg: Vec<LabeledPair> =
        dataset.pairs.iter().filter(|p| !p.label).cloned().collect();
    if pos.is_empty() {
        return Err(Error::MissingSeedClass { which: "positive" });
    }
    if neg.is_empty() {
        return Err(Error::MissingSeedClass { which: "negative" });
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let half = (n / 2).max(1);
    let mut out: Vec<LabeledPair> = pos.into_iter().take(half).collect();
    out.extend(neg.into_iter().take(n - out.len().min(n)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

/// `metric,value` lines preceded by `#` comment lines echoing the
/// effective config.
pub fn write_report(path: &Path, rows: &[(String, String)], config_echo: &str) -> Result<()> {
    let mut out = String::new();
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("metric,value\n");
    for (metric, value) in rows {
        out.push_str(&format!("{metric},{value}\n"));
    }
    write_file(path, out.as_bytes())
}

pub fn report_rows(report: &BlockingReport) -> Vec<(String, String)> {
    vec![
        ("recall".into(), format!("{:.6}", report.recall)),
        ("precision".into(), format!("{:.6}", report.precision)),
        ("f1".into(), format!("{:.6}", report.f1)),
        ("candidate_size".into(), report.candidate_size.to_string()),
        ("k".into(), report.k.to_string()),
    ]
}

/// `k,recall,candidate_size` lines.
pub fn write_curve(path: &Path, curve: &[CurvePoint], config_echo: &str) -> Result<()> {
    let mut out = String::new();
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("k,recall,candidate_size\n");
    for p in curve {
        out.push_str(&format!("{},{:.6},{}\n", p.k, p.recall, p.candidate_size));
    }
    write_file(path, out.as_bytes())
}

/// Pseudo labels as `idA,idB,label,confidence`.
pub fn write_pseudo_labels(path: &Path, set: &PseudoLabelSet, config_echo: &str) -> Result<()> {
    let mut out = String::new();
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("idA,idB,label,confidence\n");
    for p in &set.pairs {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            p.id_a,
            p.id_b,
            if p.label { 1 } else { 0 },
            p.confidence
        ));
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    f.write_all(bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Fixed-width text table for stdout reports.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let render = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = render(headers.to_vec());
    out.push('\n');
    let sep: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&sep.join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&render(row.iter().map(|c| c.as_str()).collect()));
        out.push('\n');
    }
    out
}
