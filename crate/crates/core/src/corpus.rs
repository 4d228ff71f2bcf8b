//! Two-table dataset ingestion, record serialization, and labeled-pair splits.
//!
//! Input layout follows the public entity-resolution benchmarks: two
//! delimited tables with identical headers (first column `id`), plus a
//! pairs file `ltable_id,rtable_id,label` with labels in {0,1}.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// One table row: a stable id plus ordered attribute/value pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub attrs: Vec<(String, String)>,
}

impl Record {
    pub fn new(id: impl Into<String>, attrs: Vec<(String, String)>) -> Self {
        Record { id: id.into(), attrs }
    }
}

/// A labeled pair across the two tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub id_a: String,
    pub id_b: String,
    pub label: bool,
}

/// Two tables plus ground-truth labels.
///
/// `pairs` preserves pairs-file order; `matches`/`nonmatches` are the
/// same data as sets for membership checks. Read-only after load, so it
/// can be shared across threads freely.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub table_a: Vec<Record>,
    pub table_b: Vec<Record>,
    pub pairs: Vec<LabeledPair>,
    pub matches: BTreeSet<(String, String)>,
    pub nonmatches: BTreeSet<(String, String)>,
    a_index: HashMap<String, usize>,
    b_index: HashMap<String, usize>,
}

impl Dataset {
    /// Assemble a dataset from in-memory parts, enforcing the load-time
    /// invariants (unique ids, equal schemas, no dangling pair ids, no
    /// pair labeled both ways).
    pub fn new(table_a: Vec<Record>, table_b: Vec<Record>, pairs: Vec<LabeledPair>) -> Result<Self> {
        let a_index = index_ids(&table_a, "tableA")?;
        let b_index = index_ids(&table_b, "tableB")?;
        check_schema(&table_a, &table_b)?;

        let mut matches = BTreeSet::new();
        let mut nonmatches = BTreeSet::new();
        for p in &pairs {
            if !a_index.contains_key(&p.id_a) {
                return Err(Error::DanglingId { id: p.id_a.clone(), column: "ltable_id".into() });
            }
            if !b_index.contains_key(&p.id_b) {
                return Err(Error::DanglingId { id: p.id_b.clone(), column: "rtable_id".into() });
            }
            let key = (p.id_a.clone(), p.id_b.clone());
            if p.label {
                matches.insert(key);
            } else {
                nonmatches.insert(key);
            }
        }
        if let Some(dup) = matches.intersection(&nonmatches).next() {
            return Err(Error::Malformed {
                path: "<pairs>".into(),
                msg: format!("pair ({},{}) labeled both 1 and 0", dup.0, dup.1),
            });
        }
        Ok(Dataset { table_a, table_b, pairs, matches, nonmatches, a_index, b_index })
    }

    pub fn record_a(&self, id: &str) -> Option<&Record> {
        self.a_index.get(id).map(|&i| &self.table_a[i])
    }

    pub fn record_b(&self, id: &str) -> Option<&Record> {
        self.b_index.get(id).map(|&i| &self.table_b[i])
    }

    pub fn is_match(&self, id_a: &str, id_b: &str) -> bool {
        self.matches.contains(&(id_a.to_string(), id_b.to_string()))
    }

    /// Attribute names shared by both tables (empty when tableA is empty).
    pub fn schema(&self) -> Vec<String> {
        self.table_a
            .first()
            .or_else(|| self.table_b.first())
            .map(|r| r.attrs.iter().map(|(a, _)| a.clone()).collect())
            .unwrap_or_default()
    }
}

fn index_ids(records: &[Record], table: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if index.insert(r.id.clone(), i).is_some() {
            return Err(Error::DuplicateId { id: r.id.clone(), table: table.into() });
        }
    }
    Ok(index)
}

fn check_schema(table_a: &[Record], table_b: &[Record]) -> Result<()> {
    let names = |r: &Record| r.attrs.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>();
    let reference = match table_a.first().or_else(|| table_b.first()) {
        Some(r) => names(r),
        None => return Ok(()),
    };
    for r in table_a.iter().chain(table_b.iter()) {
        let got = names(r);
        if got != reference {
            return Err(Error::SchemaMismatch { left: reference, right: got });
        }
    }
    Ok(())
}

/// Load the two tables and the pairs file.
pub fn load_dataset(
    table_a_path: &Path,
    table_b_path: &Path,
    pairs_path: &Path,
) -> Result<Dataset> {
    let table_a = read_table(table_a_path)?;
    let table_b = read_table(table_b_path)?;
    let pairs = read_pairs(pairs_path)?;
    Dataset::new(table_a, table_b, pairs)
}

fn read_table(path: &Path) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if headers.first().map(String::as_str) != Some("id") {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            msg: "first header column must be \"id\"".into(),
        });
    }
    let attr_names = headers[1..].to_vec();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.len() != headers.len() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                msg: format!("row has {} fields, header has {}", row.len(), headers.len()),
            });
        }
        let id = row[0].to_string();
        let attrs = attr_names
            .iter()
            .zip(row.iter().skip(1))
            .map(|(a, v)| (a.clone(), v.to_string()))
            .collect();
        records.push(Record { id, attrs });
    }
    Ok(records)
}

fn read_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    let expected = ["ltable_id", "rtable_id", "label"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            msg: format!("pairs header must be {:?}", expected.join(",")),
        });
    }
    let mut pairs = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let label = match &row[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    msg: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        pairs.push(LabeledPair { id_a: row[0].to_string(), id_b: row[1].to_string(), label });
    }
    Ok(pairs)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        },
        _ => Error::Malformed { path: path.to_path_buf(), msg: e.to_string() },
    }
}

/// Serialize a record to the `[COL] attr [VAL] value ...` token string.
///
/// Values are kept verbatim; an empty value leaves nothing between its
/// `[VAL]` and the next `[COL]`.
pub fn serialize(record: &Record) -> String {
    let mut pieces = Vec::with_capacity(record.attrs.len());
    for (attr, value) in &record.attrs {
        if value.is_empty() {
            pieces.push(format!("[COL] {attr} [VAL]"));
        } else {
            pieces.push(format!("[COL] {attr} [VAL] {value}"));
        }
    }
    pieces.join(" ")
}

/// Train/valid/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.6, valid_frac: 0.2, test_frac: 0.2, seed: 0 }
    }
}

/// Deterministic shuffle-and-cut partition of the labeled pairs.
///
/// Piece sizes follow the largest-remainder rule, so each is within one
/// pair of its exact quota.
pub fn split(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>, Vec<LabeledPair>)> {
    let sum = spec.train_frac + spec.valid_frac + spec.test_frac;
    if (sum - 1.0).abs() > 1e-9 || spec.train_frac < 0.0 || spec.valid_frac < 0.0 || spec.test_frac < 0.0 {
        return Err(Error::BadSplitFractions { sum });
    }
    let n = dataset.pairs.len();
    let sizes = largest_remainder(n, &[spec.train_frac, spec.valid_frac, spec.test_frac]);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| {
        order[range].iter().map(|&i| dataset.pairs[i].clone()).collect::<Vec<_>>()
    };
    let train = take(0..sizes[0]);
    let valid = take(sizes[0]..sizes[0] + sizes[1]);
    let test = take(sizes[0] + sizes[1]..n);
    Ok((train, valid, test))
}

fn largest_remainder(n: usize, fracs: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fracs.len()).collect();
    // stable sort keeps earlier pieces first on remainder ties
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.partial_cmp(&ri).unwrap()
    });
    for k in 0..(n - assigned) {
        sizes[order[k % fracs.len()]] += 1;
    }
    sizes
}
