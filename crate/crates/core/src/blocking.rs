//! Candidate-pair generation by k-nearest-neighbor search over unit
//! embeddings: an exact scan and a layered navigable-small-world graph,
//! plus k-escalation to a target recall.
//!
//! Similarity is the cosine (plain dot product on unit vectors), which
//! orders identically to Euclidean distance on the sphere. Blocking
//! direction: candidates come from tableA for each tableB item.

use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Dataset;
use crate::encoder::EncoderModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Exact,
    Graph,
}

impl std::str::FromStr for IndexKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexKind::Exact),
            "graph" => Ok(IndexKind::Graph),
            other => Err(Error::Config(format!("index must be exact|graph, got {other:?}"))),
        }
    }
}

/// Small-world graph construction/search knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub m: usize,
    pub ef_build: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { m: 16, ef_build: 100, ef_search: 64, seed: 0 }
    }
}

/// Queryable index over unit vectors with ids aligned to rows.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    pub kind: IndexKind,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    graph: Option<Hnsw>,
}

pub fn build_index(ids: Vec<String>, vectors: Vec<Vec<f64>>, kind: IndexKind) -> Result<VectorIndex> {
    build_index_with(ids, vectors, kind, &GraphParams::default())
}

pub fn build_index_with(
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    kind: IndexKind,
    params: &GraphParams,
) -> Result<VectorIndex> {
    if vectors.is_empty() {
        return Err(Error::EmptyIndex);
    }
    debug_assert_eq!(ids.len(), vectors.len());
    let dim = vectors[0].len();
    for v in &vectors {
        if v.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: v.len() });
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("index vectors must be unit norm (got {norm})")));
        }
    }
    let graph = match kind {
        IndexKind::Exact => None,
        IndexKind::Graph => Some(Hnsw::build(&vectors, params)),
    };
    Ok(VectorIndex { kind, ids, vectors, graph })
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    /// Top-k rows by cosine score, sorted by score descending with ties
    /// broken by ascending id. Returns min(k, n) entries.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k < 1 {
            return Err(Error::BadK);
        }
        if query.len() != self.vectors[0].len() {
            return Err(Error::DimMismatch { expected: self.vectors[0].len(), got: query.len() });
        }
        let mut hits = match (&self.kind, &self.graph) {
            (IndexKind::Exact, _) | (_, None) => {
                let mut scored: Vec<(usize, f64)> = self
                    .vectors
                    .iter()
                    .enumerate()
                    .map(|(row, v)| (row, dot(query, v)))
                    .collect();
                scored.sort_by(|a, b| self.order(a, b));
                scored.truncate(k);
                scored
            }
            (IndexKind::Graph, Some(g)) => {
                let mut found = g.search(&self.vectors, query, k);
                found.sort_by(|a, b| self.order(a, b));
                found.truncate(k);
                found
            }
        };
        for (_, s) in hits.iter_mut() {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(hits)
    }

    fn order(&self, a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// layered small-world graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Hnsw {
    // neighbors[node][level] -> adjacent rows
    neighbors: Vec<Vec<Vec<u32>>>,
    entry: usize,
    top_level: usize,
    ef_search: usize,
}

#[derive(PartialEq)]
struct Cand {
    score: f64,
    row: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // max-heap: higher score first, then lower row
        self.score
            .partial_cmp(&other.score)
            .unwrap()
            .then_with(|| other.row.cmp(&self.row))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Hnsw {
    fn build(vectors: &[Vec<f64>], params: &GraphParams) -> Hnsw {
        let n = vectors.len();
        let m = params.m.max(2);
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let levels: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..1.0);
                ((-(1.0 - u).ln()) * level_mult).floor().min(24.0) as usize
            })
            .collect();

        let mut g = Hnsw {
            neighbors: (0..n).map(|i| vec![Vec::new(); levels[i] + 1]).collect(),
            entry: 0,
            top_level: levels[0],
            ef_search: params.ef_search,
        };
        for i in 1..n {
            g.insert(vectors, i, levels[i], m, params.ef_build);
        }
        g
    }

    fn insert(&mut self, vectors: &[Vec<f64>], node: usize, level: usize, m: usize, ef: usize) {
        let q = &vectors[node];
        let mut ep = self.entry;
        for lev in ((level + 1)..=self.top_level).rev() {
            ep = self.greedy(vectors, q, ep, lev);
        }
        for lev in (0..=level.min(self.top_level)).rev() {
            let found = self.search_layer(vectors, q, ep, ef.max(m), lev);
            let cap = if lev == 0 { 2 * m } else { m };
            for &(row, _) in found.iter().take(m) {
                self.neighbors[node][lev].push(row as u32);
                self.neighbors[row][lev].push(node as u32);
                if self.neighbors[row][lev].len() > cap {
                    self.prune(vectors, row, lev, cap);
                }
            }
            if let Some(&(best, _)) = found.first() {
                ep = best;
            }
        }
        if level > self.top_level {
            self.top_level = level;
            self.entry = node;
        }
    }

    fn prune(&mut self, vectors: &[Vec<f64>], row: usize, lev: usize, cap: usize) {
        let base = &vectors[row];
        let mut scored: Vec<(usize, f64)> = self.neighbors[row][lev]
            .iter()
            .map(|&n| (n as usize, dot(base, &vectors[n as usize])))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored.truncate(cap);
        self.neighbors[row][lev] = scored.into_iter().map(|(n, _)| n as u32).collect();
    }

    fn greedy(&self, vectors: &[Vec<f64>], q: &[f64], start: usize, lev: usize) -> usize {
        let mut current = start;
        let mut best = dot(q, &vectors[current]);
        loop {
            let mut improved = false;
            for &n in &self.neighbors[current][lev] {
                let s = dot(q, &vectors[n as usize]);
                if s > best || (s == best && (n as usize) < current) {
                    best = s;
                    current = n as usize;
                    improved = true;
                }
            }
            if !improved {
                return current;
            }
        }
    }

    fn search_layer(
        &self,
        vectors: &[Vec<f64>],
        q: &[f64],
        entry: usize,
        ef: usize,
        lev: usize,
    ) -> Vec<(usize, f64)> {
        let mut visited = vec![false; vectors.len()];
        visited[entry] = true;
        let entry_score = dot(q, &vectors[entry]);
        let mut frontier = BinaryHeap::new();
        frontier.push(Cand { score: entry_score, row: entry });
        let mut results: BinaryHeap<std::cmp::Reverse<Cand>> = BinaryHeap::new();
        results.push(std::cmp::Reverse(Cand { score: entry_score, row: entry }));

        while let Some(c) = frontier.pop() {
            let worst = results.peek().map(|r| r.0.score).unwrap_or(f64::NEG_INFINITY);
            if results.len() >= ef && c.score < worst {
                break;
            }
            for &n in &self.neighbors[c.row][lev] {
                let n = n as usize;
                if visited[n] {
                    continue;
                }
                visited[n] = true;
                let s = dot(q, &vectors[n]);
                let worst = results.peek().map(|r| r.0.score).unwrap_or(f64::NEG_INFINITY);
                if results.len() < ef || s > worst {
                    frontier.push(Cand { score: s, row: n });
                    results.push(std::cmp::Reverse(Cand { score: s, row: n }));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<(usize, f64)> =
            results.into_iter().map(|r| (r.0.row, r.0.score)).collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        out
    }

    fn search(&self, vectors: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut ep = self.entry;
        for lev in (1..=self.top_level).rev() {
            ep = self.greedy(vectors, q, ep, lev);
        }
        let mut found = self.search_layer(vectors, q, ep, self.ef_search.max(k), 0);
        found.truncate(k);
        found
    }
}

// ---------------------------------------------------------------------------
// candidate sets
// ---------------------------------------------------------------------------

/// One blocking candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub id_a: String,
    pub id_b: String,
    pub score: f64,
}

/// Candidate pairs plus the per-query k that produced them. Pairs are
/// kept sorted by (id_b, score desc, id_a) and hold no duplicates.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub pairs: Vec<CandidatePair>,
    pub k: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair_set(&self) -> std::collections::HashSet<(&str, &str)> {
        self.pairs.iter().map(|p| (p.id_a.as_str(), p.id_b.as_str())).collect()
    }

    fn sort_canonical(&mut self) {
        self.pairs.sort_by(|x, y| {
            x.id_b
                .cmp(&y.id_b)
                .then_with(|| y.score.partial_cmp(&x.score).unwrap())
                .then_with(|| x.id_a.cmp(&y.id_a))
        });
    }
}

/// Embed both tables and emit each tableB record's top-k tableA
/// neighbors.
pub fn block(
    dataset: &Dataset,
    model: &EncoderModel,
    k: usize,
    kind: IndexKind,
    graph_params: &GraphParams,
) -> Result<CandidateSet> {
    if dataset.table_a.is_empty() || dataset.table_b.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k < 1 {
        return Err(Error::BadK);
    }
    let index = index_table_a(dataset, model, kind, graph_params)?;
    let queries = model.embed_all(&dataset.table_b)?;
    let per_b: Vec<Vec<(usize, f64)>> = queries
        .par_iter()
        .map(|q| index.knn(q, k))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for (b_row, hits) in per_b.iter().enumerate() {
        let id_b = &dataset.table_b[b_row].id;
        for &(a_row, score) in hits {
            pairs.push(CandidatePair {
                id_a: index.id(a_row).to_string(),
                id_b: id_b.clone(),
                score,
            });
        }
    }
    let mut set = CandidateSet { pairs, k };
    set.sort_canonical();
    Ok(set)
}

fn index_table_a(
    dataset: &Dataset,
    model: &EncoderModel,
    kind: IndexKind,
    graph_params: &GraphParams,
) -> Result<VectorIndex> {
    let ids: Vec<String> = dataset.table_a.iter().map(|r| r.id.clone()).collect();
    let vectors = model.embed_all(&dataset.table_a)?;
    build_index_with(ids, vectors, kind, graph_params)
}

/// Smallest k whose candidate recall reaches `target_recall`, along
/// with the candidate set at that k. Each tableB record is queried once
/// at `k_max` and recall is read off the rank histogram, which matches
/// querying per k because result lists are deterministic prefixes.
pub fn escalate_k(
    dataset: &Dataset,
    model: &EncoderModel,
    target_recall: f64,
    k_max: usize,
    kind: IndexKind,
    graph_params: &GraphParams,
) -> Result<(CandidateSet, usize)> {
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(Error::Config(format!("target recall must be in (0,1], got {target_recall}")));
    }
    if dataset.matches.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    if dataset.table_a.is_empty() || dataset.table_b.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let k_max = k_max.max(1).min(dataset.table_a.len());
    let index = index_table_a(dataset, model, kind, graph_params)?;
    let queries = model.embed_all(&dataset.table_b)?;
    let per_b: Vec<Vec<(usize, f64)>> = queries
        .par_iter()
        .map(|q| index.knn(q, k_max))
        .collect::<Result<_>>()?;

    // rank of each true match in its query's neighbor list
    let mut rank_hist = vec![0usize; k_max + 1];
    for (b_row, hits) in per_b.iter().enumerate() {
        let id_b = &dataset.table_b[b_row].id;
        for (rank, &(a_row, _)) in hits.iter().enumerate() {
            if dataset.is_match(index.id(a_row), id_b) {
                rank_hist[rank + 1] += 1;
            }
        }
    }
    let total = dataset.matches.len() as f64;
    let mut covered = 0usize;
    let mut chosen = None;
    let mut best = 0.0;
    for k in 1..=k_max {
        covered += rank_hist[k];
        best = covered as f64 / total;
        if best >= target_recall {
            chosen = Some(k);
            break;
        }
    }
    let Some(k) = chosen else {
        return Err(Error::TargetUnreachable { target: target_recall, k_max, best });
    };

    let mut pairs = Vec::new();
    for (b_row, hits) in per_b.iter().enumerate() {
        let id_b = &dataset.table_b[b_row].id;
        for &(a_row, score) in hits.iter().take(k) {
            pairs.push(CandidatePair {
                id_a: index.id(a_row).to_string(),
                id_b: id_b.clone(),
                score,
            });
        }
    }
    let mut set = CandidateSet { pairs, k };
    set.sort_canonical();
    Ok((set, k))
}

/// Write `idA,idB,score` lines in canonical order, preceded by `#`
/// comment lines echoing the effective config.
pub fn write_candidates(path: &Path, set: &CandidateSet, config_echo: &str) -> Result<()> {
    let mut out = String::new();
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("idA,idB,score\n");
    for p in &set.pairs {
        out.push_str(&format!("{},{},{:.6}\n", p.id_a, p.id_b, p.score));
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Read a candidates file written by `write_candidates`.
pub fn read_candidates(path: &Path) -> Result<CandidateSet> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut pairs = Vec::new();
    let mut k = 0usize;
    let mut per_b: std::collections::HashMap<String, usize> = Default::default();
    for line in body.lines() {
        if line.starts_with('#') || line == "idA,idB,score" || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(a), Some(b), Some(s)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                msg: format!("bad candidate line {line:?}"),
            });
        };
        let score: f64 = s.parse().map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            msg: format!("bad score in {line:?}: {e}"),
        })?;
        let count = per_b.entry(b.to_string()).or_insert(0);
        *count += 1;
        k = k.max(*count);
        pairs.push(CandidatePair { id_a: a.to_string(), id_b: b.to_string(), score });
    }
    let mut set = CandidateSet { pairs, k };
    set.sort_canonical();
    Ok(set)
}
