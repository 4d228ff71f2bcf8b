//! Run configuration: one sectioned key=value (TOML) file, merged over
//! per-profile defaults, with dotted-key overrides on top. Unknown keys
//! are rejected and the full effective config is echoed into every
//! output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AnchorPool, AugmentKind, AugmentOp, TripleConfig, TripleMode};
use crate::blocking::GraphParams;
use crate::corpus::SplitSpec;
use crate::encoder::{Featurizer, ModelDims};
use crate::harness::SyntheticSpec;
use crate::losses::{ContrastiveParams, NlshParams};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    PaperScale,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper_scale" => Ok(Profile::PaperScale),
            other => Err(Error::Config(format!("profile must be desk|paper_scale, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub table_a: String,
    pub table_b: String,
    pub pairs: String,
    /// optional `id<TAB>values` embedding file; switches the encoder to
    /// external-input mode
    pub external_emb: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            table_a: String::new(),
            table_b: String::new(),
            pairs: String::new(),
            external_emb: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_frac: 0.6, valid_frac: 0.2, test_frac: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    pub vocab_dim: usize,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig { vocab_dim: 4096, hash_seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub e_dim: usize,
    pub mlp_hidden: usize,
    pub d: usize,
    pub h: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { e_dim: 64, mlp_hidden: 128, d: 128, h: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub ops: Vec<String>,
    pub rate: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            ops: vec!["shuffle".into(), "delete".into(), "move".into()],
            rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriplesConfig {
    pub mode: String,
    pub n: usize,
    pub hybrid_ratio: f64,
    pub unlabeled_source: String,
}

impl Default for TriplesConfig {
    fn default() -> Self {
        TriplesConfig {
            mode: "hybrid".into(),
            n: 2000,
            hybrid_ratio: 0.5,
            unlabeled_source: "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    #[serde(rename = "R")]
    pub r: f64,
    pub c: f64,
    pub lambda_neg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { r: 0.01, c: 3.0, lambda_neg: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub enabled: bool,
    pub weight: f64,
    pub temperature: f64,
    pub bt_offdiag_weight: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        // enabled in the shipped profiles: the clamp loss alone shapes
        // the 1-D hash but leaves the kNN embedding space free to
        // degrade, which measurably hurts blocking recall on the desk
        // encoder
        ContrastiveConfig { enabled: true, weight: 0.1, temperature: 0.07, bt_offdiag_weight: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub valid_k: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-3,
            batch_size: 64,
            epochs: 30,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            valid_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub kind: String,
    pub m: usize,
    pub ef_build: usize,
    pub ef_search: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { kind: "exact".into(), m: 16, ef_build: 100, ef_search: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockSection {
    /// per-query neighbor count; ignored when target_recall > 0
    pub k: usize,
    /// when > 0, escalate k until this recall is reached
    pub target_recall: f64,
    /// escalation cap; 0 means |tableA|
    pub k_max: usize,
}

impl Default for BlockSection {
    fn default() -> Self {
        BlockSection { k: 10, target_recall: 0.0, k_max: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub bands: usize,
    pub rows: usize,
    pub shingle: String,
    /// signature length for the banding-escalation ladder
    pub ladder_m: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { bands: 32, rows: 4, shingle: "tokens".into(), ladder_m: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: String,
    pub n_entities: usize,
    pub dup_per_entity: usize,
    pub shuffle: bool,
    pub delete_rate: f64,
    pub move_rate: f64,
    pub typo_rate: f64,
    pub synonym_rate: f64,
    pub neg_per_pos: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SynthConfig {
            preset: "default".into(),
            n_entities: s.n_entities,
            dup_per_entity: s.dup_per_entity,
            shuffle: s.shuffle,
            delete_rate: s.delete_rate,
            move_rate: s.move_rate,
            typo_rate: s.typo_rate,
            synonym_rate: s.synonym_rate,
            neg_per_pos: s.neg_per_pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoConfig {
    pub seed_labels: usize,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig { seed_labels: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub train_sizes: Vec<usize>,
    pub r_values: Vec<f64>,
    pub c_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_values: vec![1, 2, 5, 10, 20, 50],
            train_sizes: vec![250, 500, 1000, 2000],
            r_values: vec![0.005, 0.01, 0.02],
            c_values: vec![2.0, 3.0, 4.0],
        }
    }
}

/// Union of every module's config keys. One struct, one file, one echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// rayon worker cap; 0 means all cores
    pub threads: usize,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub featurizer: FeaturizerConfig,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub triples: TriplesConfig,
    pub loss: LossConfig,
    pub contrastive: ContrastiveConfig,
    pub train: TrainSection,
    pub index: IndexConfig,
    pub block: BlockSection,
    pub baseline: BaselineConfig,
    pub synth: SynthConfig,
    pub pseudo: PseudoConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: Profile::Desk,
            seed: 0,
            threads: 0,
            data: Default::default(),
            split: Default::default(),
            featurizer: Default::default(),
            model: Default::default(),
            augment: Default::default(),
            triples: Default::default(),
            loss: Default::default(),
            contrastive: Default::default(),
            train: Default::default(),
            index: Default::default(),
            block: Default::default(),
            baseline: Default::default(),
            synth: Default::default(),
            pseudo: Default::default(),
            sweep: Default::default(),
        }
    }
}

impl RunConfig {
    /// Profile-specific defaults. The desk profile keeps training in
    /// the seconds range on a CPU; paper_scale mirrors the reference
    /// hyperparameters (lr 1e-5, 150 epochs, 768-wide head).
    pub fn for_profile(profile: Profile) -> Self {
        let mut c = RunConfig::default();
        if profile == Profile::PaperScale {
            c.profile = Profile::PaperScale;
            c.train.lr = 1e-5;
            c.train.epochs = 150;
            c.model = ModelConfig { e_dim: 128, mlp_hidden: 256, d: 768, h: 768 };
            c.featurizer.vocab_dim = 1 << 16;
            c.triples.n = 33_000;
        }
        c
    }

    /// Load: profile defaults <- config file <- dotted-key overrides.
    /// The file may set `profile`, which re-bases the defaults; an
    /// explicit `profile_flag` wins over the file.
    pub fn load(
        file: Option<&Path>,
        profile_flag: Option<Profile>,
        overrides: &[String],
    ) -> Result<Self> {
        let file_table: Option<toml::Table> = match file {
            Some(path) => {
                let body = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
                Some(body.parse::<toml::Table>().map_err(|e| {
                    Error::Config(format!("{}: {e}", path.display()))
                })?)
            }
            None => None,
        };
        let profile = profile_flag
            .or_else(|| {
                file_table
                    .as_ref()
                    .and_then(|t| t.get("profile"))
                    .and_then(|v| v.as_str())
                    .and_then(|s| s.parse().ok())
            })
            .unwrap_or(Profile::Desk);

        let base = RunConfig::for_profile(profile);
        let mut merged = toml::Table::try_from(&base)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
        if let Some(t) = file_table {
            merge_tables(&mut merged, t, "")?;
        }
        for kv in overrides {
            let fragment: toml::Table = kv
                .parse()
                .or_else(|_| quoted_fragment(kv))
                .map_err(|e| Error::Config(format!("bad --set {kv:?}: {e}")))?;
            merge_tables(&mut merged, fragment, "")?;
        }
        let mut cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        if profile_flag.is_some() {
            cfg.profile = profile;
        }
        if let Ok(seed) = std::env::var("NLSH_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("NLSH_SEED must be an integer, got {seed:?}")))?;
        }
        Ok(cfg)
    }

    /// The effective config as TOML; goes into every output file.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.split.train_frac,
            valid_frac: self.split.valid_frac,
            test_frac: self.split.test_frac,
            seed: self.seed,
        }
    }

    pub fn featurizer_spec(&self) -> Result<Featurizer> {
        Featurizer::new(self.featurizer.vocab_dim, self.featurizer.hash_seed)
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            e_dim: self.model.e_dim,
            mlp_hidden: self.model.mlp_hidden,
            d: self.model.d,
            h: self.model.h,
        }
    }

    pub fn augment_ops(&self) -> Result<Vec<AugmentOp>> {
        self.augment
            .ops
            .iter()
            .map(|name| {
                let kind = match name.as_str() {
                    "shuffle" => AugmentKind::ShuffleWords,
                    "delete" => AugmentKind::DeleteWords,
                    "move" => AugmentKind::MoveAcrossAttrs,
                    other => {
                        return Err(Error::Config(format!(
                            "augment.ops entries must be shuffle|delete|move, got {other:?}"
                        )))
                    }
                };
                Ok(AugmentOp { kind, rate: self.augment.rate })
            })
            .collect()
    }

    pub fn triple_config(&self) -> Result<TripleConfig> {
        let mode: TripleMode = self.triples.mode.parse()?;
        let anchor_pool = match self.triples.unlabeled_source.as_str() {
            "all" => AnchorPool::AllRecords,
            "table_a" => AnchorPool::TableA,
            "table_b" => AnchorPool::TableB,
            other => {
                return Err(Error::Config(format!(
                    "triples.unlabeled_source must be all|table_a|table_b, got {other:?}"
                )))
            }
        };
        Ok(TripleConfig {
            mode,
            n: self.triples.n,
            hybrid_ratio: self.triples.hybrid_ratio,
            ops: self.augment_ops()?,
            anchor_pool,
        })
    }

    pub fn nlsh_params(&self) -> NlshParams {
        NlshParams { r: self.loss.r, c: self.loss.c, lambda_neg: self.loss.lambda_neg }
    }

    pub fn contrastive_params(&self) -> ContrastiveParams {
        ContrastiveParams {
            enabled: self.contrastive.enabled,
            weight: self.contrastive.weight,
            temperature: self.contrastive.temperature,
            bt_offdiag_weight: self.contrastive.bt_offdiag_weight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            warmup_frac: self.train.warmup_frac,
            weight_decay: self.train.weight_decay,
            valid_k: self.train.valid_k,
            seed: self.seed,
        }
    }

    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            m: self.index.m,
            ef_build: self.index.ef_build,
            ef_search: self.index.ef_search,
            seed: self.seed,
        }
    }

    pub fn synth_spec(&self) -> Result<SyntheticSpec> {
        let mut spec = match self.synth.preset.as_str() {
            "default" => SyntheticSpec {
                n_entities: self.synth.n_entities,
                dup_per_entity: self.synth.dup_per_entity,
                shuffle: self.synth.shuffle,
                delete_rate: self.synth.delete_rate,
                move_rate: self.synth.move_rate,
                typo_rate: self.synth.typo_rate,
                synonym_rate: self.synth.synonym_rate,
                neg_per_pos: self.synth.neg_per_pos,
                seed: self.seed,
            },
            "semantic" => SyntheticSpec::semantic(self.seed),
            "clean" => SyntheticSpec::clean(self.seed),
            other => {
                return Err(Error::Config(format!(
                    "synth.preset must be default|semantic|clean, got {other:?}"
                )))
            }
        };
        if self.synth.preset != "default" {
            spec.n_entities = self.synth.n_entities;
            spec.dup_per_entity = self.synth.dup_per_entity;
            spec.neg_per_pos = self.synth.neg_per_pos;
        }
        Ok(spec)
    }

    pub fn data_path(&self, which: &str) -> Result<PathBuf> {
        let raw = match which {
            "table_a" => &self.data.table_a,
            "table_b" => &self.data.table_b,
            "pairs" => &self.data.pairs,
            _ => unreachable!(),
        };
        if raw.is_empty() {
            return Err(Error::Config(format!(
                "data.{which} is not set (pass --{} or set it in the config file)",
                which.replace('_', "-")
            )));
        }
        Ok(PathBuf::from(raw))
    }
}

fn quoted_fragment(kv: &str) -> std::result::Result<toml::Table, toml::de::Error> {
    match kv.split_once('=') {
        Some((k, v)) => format!("{} = {:?}", k.trim(), v.trim()).parse(),
        None => kv.parse(), // reproduce the original error
    }
}

/// Recursively overlay `overlay` onto `base`, rejecting any key path
/// that the defaults do not contain.
fn merge_tables(base: &mut toml::Table, overlay: toml::Table, path: &str) -> Result<()> {
    for (key, value) in overlay {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match base.get_mut(&key) {
            Some(toml::Value::Table(bt)) => match value {
                toml::Value::Table(ot) => merge_tables(bt, ot, &full)?,
                _ => {
                    return Err(Error::Config(format!(
                        "config key {full} is a section, not a value"
                    )))
                }
            },
            Some(slot) => {
                *slot = value;
            }
            None => return Err(Error::Config(format!("unknown config key {full}"))),
        }
    }
    Ok(())
}
