//! Command-line entry point: gen-synth, train, block, baseline-lsh,
//! eval, compare, pseudo-label, and sweep subcommands over one shared
//! config. Exit codes: 0 ok, 1 runtime failure, 2 usage/input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlsh::blocking::{self, IndexKind};
use nlsh::config::{Profile, RunConfig};
use nlsh::corpus::{self, Dataset, LabeledPair};
use nlsh::encoder::{self, EncoderModel};
use nlsh::harness::{self, BlockingReport};
use nlsh::losses;
use nlsh::minhash::{self, BandingParams, ShingleMode};
use nlsh::trainer;
use nlsh::{Error, Result};

fn keys_help() -> String {
    let defaults = RunConfig::default().echo();
    let mut out = String::from(
        "Configuration keys and their defaults (file sections = TOML tables,\noverridable with --set section.key=value):\n\n",
    );
    for line in defaults.lines() {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[derive(Parser)]
#[command(
    name = "nlsh",
    version,
    about = "Entity-blocking engine: trainable scalar-hash encoder with kNN candidate generation, a MinHash-banding baseline, and an evaluation harness",
    after_help = keys_help()
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file (sectioned key=value, TOML syntax)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set loss.R=0.02 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Config profile: desk | paper_scale
    #[arg(long, global = true)]
    profile: Option<String>,
    /// RNG seed (NLSH_SEED env var overrides the config file; this flag
    /// overrides both)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap rayon worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TableA csv path
    #[arg(long, global = true)]
    table_a: Option<PathBuf>,
    /// TableB csv path
    #[arg(long, global = true)]
    table_b: Option<PathBuf>,
    /// Labeled pairs csv path
    #[arg(long, global = true)]
    pairs: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic two-table benchmark into the output dir
    GenSynth {
        /// default | semantic | clean
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        entities: Option<usize>,
    },
    /// Train the encoder and hash head; writes model.ckpt and train_log.csv
    Train {
        /// self_supervised | supervised | hybrid
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Precomputed per-record vectors (id<TAB>v1 v2 ...); trains only
        /// the adapter and head
        #[arg(long)]
        external_emb: Option<PathBuf>,
    },
    /// Generate candidates with a trained model; writes candidates.csv and report.csv
    Block {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Fixed per-query neighbor count
        #[arg(long)]
        k: Option<usize>,
        /// Escalate k from 1 until this recall is reached
        #[arg(long)]
        target_recall: Option<f64>,
        /// exact | graph
        #[arg(long)]
        index: Option<String>,
    },
    /// MinHash-banding baseline candidates; same output format as block
    BaselineLsh {
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        /// tokens | q3
        #[arg(long)]
        shingle: Option<String>,
    },
    /// Score an existing candidates file against the labeled pairs
    Eval {
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Neural pipeline vs MinHash banding at the same target recall
    Compare {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        target_recall: Option<f64>,
    },
    /// Threshold-label candidate pairs from a small seed-labeled sample
    PseudoLabel {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        seed_labels: Option<usize>,
        /// k used to generate the unlabeled candidate pool
        #[arg(long)]
        k: Option<usize>,
    },
    /// Curves: k | train-size | data-source | rc-grid
    Sweep {
        #[arg(long, default_value = "k")]
        kind: String,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let profile = match &cli.common.profile {
        Some(p) => Some(p.parse::<Profile>()?),
        None => None,
    };
    let mut cfg = RunConfig::load(cli.common.config.as_deref(), profile, &cli.common.sets)?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.common.threads {
        cfg.threads = threads;
    }
    if let Some(p) = &cli.common.table_a {
        cfg.data.table_a = p.display().to_string();
    }
    if let Some(p) = &cli.common.table_b {
        cfg.data.table_b = p.display().to_string();
    }
    if let Some(p) = &cli.common.pairs {
        cfg.data.pairs = p.display().to_string();
    }
    if cfg.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    std::fs::create_dir_all(&cli.common.out)
        .map_err(|e| Error::Io { path: cli.common.out.clone(), source: e })?;
    let out = cli.common.out.clone();

    match cli.cmd {
        Cmd::GenSynth { preset, entities } => {
            if let Some(p) = preset {
                cfg.synth.preset = p;
            }
            if let Some(n) = entities {
                cfg.synth.n_entities = n;
            }
            cmd_gen_synth(&cfg, &out)
        }
        Cmd::Train { mode, epochs, external_emb } => {
            if let Some(m) = mode {
                cfg.triples.mode = m;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(p) = external_emb {
                cfg.data.external_emb = p.display().to_string();
            }
            cmd_train(&cfg, &out)
        }
        Cmd::Block { ckpt, k, target_recall, index } => {
            if let Some(k) = k {
                cfg.block.k = k;
                cfg.block.target_recall = 0.0;
            }
            if let Some(t) = target_recall {
                cfg.block.target_recall = t;
            }
            if let Some(i) = index {
                cfg.index.kind = i;
            }
            cmd_block(&cfg, &out, ckpt)
        }
        Cmd::BaselineLsh { bands, rows, shingle } => {
            if let Some(b) = bands {
                cfg.baseline.bands = b;
            }
            if let Some(r) = rows {
                cfg.baseline.rows = r;
            }
            if let Some(s) = shingle {
                cfg.baseline.shingle = s;
            }
            cmd_baseline(&cfg, &out)
        }
        Cmd::Eval { candidates } => cmd_eval(&cfg, &out, &candidates),
        Cmd::Compare { ckpt, target_recall } => {
            if let Some(t) = target_recall {
                cfg.block.target_recall = t;
            }
            cmd_compare(&cfg, &out, ckpt)
        }
        Cmd::PseudoLabel { ckpt, seed_labels, k } => {
            if let Some(n) = seed_labels {
                cfg.pseudo.seed_labels = n;
            }
            if let Some(k) = k {
                cfg.block.k = k;
            }
            cmd_pseudo_label(&cfg, &out, ckpt)
        }
        Cmd::Sweep { kind, ckpt } => cmd_sweep(&cfg, &out, &kind, ckpt),
    }
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    corpus::load_dataset(
        &cfg.data_path("table_a")?,
        &cfg.data_path("table_b")?,
        &cfg.data_path("pairs")?,
    )
}

fn index_kind(cfg: &RunConfig) -> Result<IndexKind> {
    cfg.index.kind.parse()
}

fn shingle_mode(cfg: &RunConfig) -> Result<ShingleMode> {
    cfg.baseline.shingle.parse()
}

fn default_ckpt(out: &Path, ckpt: Option<PathBuf>) -> PathBuf {
    ckpt.unwrap_or_else(|| out.join("model.ckpt"))
}

fn write_table_csv(path: &Path, records: &[corpus::Record]) -> Result<()> {
    let io_err =
        |e: csv::Error| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["id".to_string()];
    if let Some(first) = records.first() {
        header.extend(first.attrs.iter().map(|(a, _)| a.clone()));
    }
    w.write_record(&header).map_err(io_err)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend(r.attrs.iter().map(|(_, v)| v.clone()));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn cmd_gen_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.synth_spec()?;
    let dataset = harness::gen_synthetic(&spec)?;
    write_table_csv(&out.join("tableA.csv"), &dataset.table_a)?;
    write_table_csv(&out.join("tableB.csv"), &dataset.table_b)?;
    let pairs_path = out.join("pairs.csv");
    let mut body = String::from("ltable_id,rtable_id,label\n");
    for p in &dataset.pairs {
        body.push_str(&format!("{},{},{}\n", p.id_a, p.id_b, if p.label { 1 } else { 0 }));
    }
    std::fs::write(&pairs_path, body).map_err(|e| Error::Io { path: pairs_path, source: e })?;
    println!(
        "wrote {} tableA rows, {} tableB rows, {} matches, {} nonmatches to {}",
        dataset.table_a.len(),
        dataset.table_b.len(),
        dataset.matches.len(),
        dataset.nonmatches.len(),
        out.display()
    );
    Ok(())
}

fn build_model(cfg: &RunConfig) -> Result<EncoderModel> {
    if cfg.data.external_emb.is_empty() {
        encoder::init_model(cfg.featurizer_spec()?, &cfg.model_dims(), cfg.seed)
    } else {
        let vectors = encoder::load_external_embeddings(Path::new(&cfg.data.external_emb))?;
        encoder::init_external_model(vectors, &cfg.model_dims(), cfg.seed)
    }
}

fn prepare_splits(
    cfg: &RunConfig,
    dataset: &Dataset,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>, Vec<LabeledPair>)> {
    corpus::split(dataset, &cfg.split_spec())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = load_data(cfg)?;
    let (train_pairs, valid_pairs, _test) = prepare_splits(cfg, &dataset)?;
    let triples =
        nlsh::augment::sample_triples(&dataset, &train_pairs, &cfg.triple_config()?, cfg.seed)?;
    let model = build_model(cfg)?;
    let (best, log) = trainer::train(
        &dataset,
        &valid_pairs,
        &triples,
        model,
        &cfg.train_config(),
        &cfg.nlsh_params(),
        &cfg.contrastive_params(),
    )?;
    let ckpt_path = out.join("model.ckpt");
    trainer::save_checkpoint(&ckpt_path, &best)?;
    let log_path = out.join("train_log.csv");
    let mut body = String::new();
    for line in cfg.echo().lines() {
        body.push_str("# ");
        body.push_str(line);
        body.push('\n');
    }
    body.push_str(&log.to_csv());
    std::fs::write(&log_path, body).map_err(|e| Error::Io { path: log_path, source: e })?;
    println!(
        "trained {} epochs on {} triples; best epoch {} (valid recall@{} = {:.4}); wrote {}",
        cfg.train.epochs,
        triples.len(),
        best.epoch,
        cfg.train.valid_k,
        best.valid_recall,
        ckpt_path.display()
    );
    Ok(())
}

fn report_and_print(
    cfg: &RunConfig,
    out: &Path,
    candidates: &blocking::CandidateSet,
    dataset: &Dataset,
    label: &str,
) -> Result<()> {
    blocking::write_candidates(&out.join("candidates.csv"), candidates, &cfg.echo())?;
    let rows = if dataset.matches.is_empty() {
        vec![
            ("candidate_size".to_string(), candidates.len().to_string()),
            ("k".to_string(), candidates.k.to_string()),
        ]
    } else {
        let report = harness::score(candidates, &dataset.matches)?;
        print_report(label, &report);
        harness::report_rows(&report)
    };
    harness::write_report(&out.join("report.csv"), &rows, &cfg.echo())
}

fn print_report(label: &str, r: &BlockingReport) {
    let rows = vec![vec![
        label.to_string(),
        r.k.to_string(),
        format!("{:.4}", r.recall),
        format!("{:.4}", r.precision),
        format!("{:.4}", r.f1),
        r.candidate_size.to_string(),
    ]];
    print!(
        "{}",
        harness::format_table(
            &["method", "k-or-bands", "recall", "precision", "f1", "candidate_size"],
            &rows
        )
    );
}

fn cmd_block(cfg: &RunConfig, out: &Path, ckpt: Option<PathBuf>) -> Result<()> {
    let dataset = load_data(cfg)?;
    let ckpt_path = default_ckpt(out, ckpt);
    let model = trainer::load_checkpoint(&ckpt_path)?.model;
    let kind = index_kind(cfg)?;
    let gp = cfg.graph_params();
    let candidates = if cfg.block.target_recall > 0.0 {
        let k_max = if cfg.block.k_max == 0 { dataset.table_a.len() } else { cfg.block.k_max };
        let (set, k) =
            blocking::escalate_k(&dataset, &model, cfg.block.target_recall, k_max, kind, &gp)?;
        println!("target recall {} reached at k={k}", cfg.block.target_recall);
        set
    } else {
        blocking::block(&dataset, &model, cfg.block.k, kind, &gp)?
    };
    report_and_print(cfg, out, &candidates, &dataset, "neural")
}

fn cmd_baseline(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = load_data(cfg)?;
    let params = BandingParams { bands: cfg.baseline.bands, rows_per_band: cfg.baseline.rows };
    let set = minhash::lsh_block(&dataset, &params, params.m(), cfg.seed, shingle_mode(cfg)?)?;
    report_and_print(cfg, out, &set, &dataset, "minhash")
}

fn cmd_eval(cfg: &RunConfig, out: &Path, candidates: &Path) -> Result<()> {
    let dataset = load_data(cfg)?;
    let set = blocking::read_candidates(candidates)?;
    let report = harness::score(&set, &dataset.matches)?;
    print_report("candidates", &report);
    harness::write_report(&out.join("report.csv"), &harness::report_rows(&report), &cfg.echo())
}

fn cmd_compare(cfg: &RunConfig, out: &Path, ckpt: Option<PathBuf>) -> Result<()> {
    let dataset = load_data(cfg)?;
    let target = if cfg.block.target_recall > 0.0 { cfg.block.target_recall } else { 0.95 };
    let model = trainer::load_checkpoint(&default_ckpt(out, ckpt))?.model;
    let kind = index_kind(cfg)?;
    let k_max = if cfg.block.k_max == 0 { dataset.table_a.len() } else { cfg.block.k_max };

    let (neural_set, k) =
        blocking::escalate_k(&dataset, &model, target, k_max, kind, &cfg.graph_params())?;
    let neural_report = harness::score(&neural_set, &dataset.matches)?;

    let (baseline_set, banding) = minhash::escalate_bands(
        &dataset,
        cfg.baseline.ladder_m,
        cfg.seed,
        shingle_mode(cfg)?,
        target,
    )?;
    let baseline_report = harness::score(&baseline_set, &dataset.matches)?;

    let to_row = |method: &str, setting: String, r: &BlockingReport| -> Vec<String> {
        vec![
            method.to_string(),
            setting,
            format!("{:.4}", r.recall),
            format!("{:.4}", r.precision),
            format!("{:.4}", r.f1),
            r.candidate_size.to_string(),
        ]
    };
    let rows = vec![
        to_row("neural", format!("k={k}"), &neural_report),
        to_row(
            "minhash",
            format!("b={};r={}", banding.bands, banding.rows_per_band),
            &baseline_report,
        ),
    ];
    print!(
        "{}",
        harness::format_table(
            &["method", "k-or-bands", "recall", "precision", "f1", "candidate_size"],
            &rows
        )
    );
    let mut body = String::new();
    for line in cfg.echo().lines() {
        body.push_str("# ");
        body.push_str(line);
        body.push('\n');
    }
    body.push_str("method,setting,recall,precision,f1,candidate_size\n");
    for row in &rows {
        body.push_str(&row.join(","));
        body.push('\n');
    }
    let path = out.join("compare.csv");
    std::fs::write(&path, body).map_err(|e| Error::Io { path, source: e })
}

fn cmd_pseudo_label(cfg: &RunConfig, out: &Path, ckpt: Option<PathBuf>) -> Result<()> {
    let dataset = load_data(cfg)?;
    let model = trainer::load_checkpoint(&default_ckpt(out, ckpt))?.model;
    let seeds = harness::sample_seed_pairs(&dataset, cfg.pseudo.seed_labels, cfg.seed)?;
    let seed_keys: std::collections::HashSet<(String, String)> =
        seeds.iter().map(|p| (p.id_a.clone(), p.id_b.clone())).collect();
    let candidates =
        blocking::block(&dataset, &model, cfg.block.k, index_kind(cfg)?, &cfg.graph_params())?;
    let unlabeled: Vec<(String, String)> = candidates
        .pairs
        .iter()
        .map(|p| (p.id_a.clone(), p.id_b.clone()))
        .filter(|key| !seed_keys.contains(key))
        .collect();
    let labels = harness::pseudo_label(&dataset, &model, &seeds, &unlabeled)?;
    harness::write_pseudo_labels(&out.join("pseudo_labels.csv"), &labels, &cfg.echo())?;
    let quality = harness::pseudo_quality(&labels, &dataset.matches);
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.6}"));
    let rows = vec![
        ("pairs_labeled".to_string(), labels.pairs.len().to_string()),
        ("tau_pos".to_string(), format!("{:.6}", labels.tau_pos)),
        ("tau_neg".to_string(), format!("{:.6}", labels.tau_neg)),
        ("tpr".to_string(), fmt(quality.tpr)),
        ("tnr".to_string(), fmt(quality.tnr)),
    ];
    println!(
        "pseudo-labeled {} pairs (tau_pos {:.4}, tau_neg {:.4}, tpr {}, tnr {})",
        labels.pairs.len(),
        labels.tau_pos,
        labels.tau_neg,
        fmt(quality.tpr),
        fmt(quality.tnr)
    );
    harness::write_report(&out.join("pseudo_report.csv"), &rows, &cfg.echo())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, kind: &str, ckpt: Option<PathBuf>) -> Result<()> {
    let dataset = load_data(cfg)?;
    match kind {
        "k" => {
            let model = trainer::load_checkpoint(&default_ckpt(out, ckpt))?.model;
            let curve = harness::k_sweep(
                &dataset,
                &model,
                &sweep_ks(cfg, &dataset),
                index_kind(cfg)?,
                &cfg.graph_params(),
            )?;
            harness::write_curve(&out.join("curve.csv"), &curve, &cfg.echo())?;
            println!("wrote {} curve rows to {}", curve.len(), out.join("curve.csv").display());
            Ok(())
        }
        "train-size" => {
            let mut rows = Vec::new();
            for &n in &cfg.sweep.train_sizes {
                let curve = train_and_sweep(cfg, &dataset, |c| c.triples.n = n)?;
                for p in curve {
                    rows.push(format!("{n},{},{:.6},{}", p.k, p.recall, p.candidate_size));
                }
                eprintln!("train-size {n} done");
            }
            write_sweep_file(
                cfg,
                &out.join("sweep_train_size.csv"),
                "train_size,k,recall,candidate_size",
                &rows,
            )
        }
        "data-source" => {
            let mut rows = Vec::new();
            for source in ["augmented", "labeled", "hybrid"] {
                let mode = match source {
                    "augmented" => "self_supervised",
                    "labeled" => "supervised",
                    _ => "hybrid",
                };
                let curve = train_and_sweep(cfg, &dataset, |c| c.triples.mode = mode.to_string())?;
                for p in curve {
                    rows.push(format!("{source},{},{:.6},{}", p.k, p.recall, p.candidate_size));
                }
                eprintln!("data-source {source} done");
            }
            write_sweep_file(
                cfg,
                &out.join("sweep_data_source.csv"),
                "source,k,recall,candidate_size",
                &rows,
            )
        }
        "rc-grid" => {
            let (train_pairs, valid_pairs, test_pairs) = prepare_splits(cfg, &dataset)?;
            let triples = nlsh::augment::sample_triples(
                &dataset,
                &train_pairs,
                &cfg.triple_config()?,
                cfg.seed,
            )?;
            let mut rows = Vec::new();
            for &r in &cfg.sweep.r_values {
                for &c in &cfg.sweep.c_values {
                    let params = losses::NlshParams { r, c, lambda_neg: cfg.loss.lambda_neg };
                    let (best, _) = trainer::train(
                        &dataset,
                        &valid_pairs,
                        &triples,
                        build_model(cfg)?,
                        &cfg.train_config(),
                        &params,
                        &cfg.contrastive_params(),
                    )?;
                    let est = losses::estimate_p1_p2(&best.model, &dataset, &test_pairs, &params)?;
                    rows.push(format!(
                        "{r},{c},{:.6},{:.6},{:.6}",
                        best.valid_recall, est.p1_hat, est.p2_hat
                    ));
                    eprintln!(
                        "R={r} c={c}: valid recall {:.4}, p1 {:.4}, p2 {:.4}",
                        best.valid_recall, est.p1_hat, est.p2_hat
                    );
                }
            }
            write_sweep_file(cfg, &out.join("sweep_rc.csv"), "R,c,valid_recall,p1_hat,p2_hat", &rows)
        }
        other => Err(Error::Config(format!(
            "sweep kind must be k|train-size|data-source|rc-grid, got {other:?}"
        ))),
    }
}

fn sweep_ks(cfg: &RunConfig, dataset: &Dataset) -> Vec<usize> {
    let mut ks: Vec<usize> =
        cfg.sweep.k_values.iter().copied().map(|k| k.min(dataset.table_a.len())).collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

fn train_and_sweep(
    cfg: &RunConfig,
    dataset: &Dataset,
    tweak: impl FnOnce(&mut RunConfig),
) -> Result<Vec<harness::CurvePoint>> {
    let mut cfg = cfg.clone();
    tweak(&mut cfg);
    let (train_pairs, valid_pairs, _) = prepare_splits(&cfg, dataset)?;
    let triples =
        nlsh::augment::sample_triples(dataset, &train_pairs, &cfg.triple_config()?, cfg.seed)?;
    let (best, _) = trainer::train(
        dataset,
        &valid_pairs,
        &triples,
        build_model(&cfg)?,
        &cfg.train_config(),
        &cfg.nlsh_params(),
        &cfg.contrastive_params(),
    )?;
    harness::k_sweep(dataset, &best.model, &sweep_ks(&cfg, dataset), index_kind(&cfg)?, &cfg.graph_params())
}

fn write_sweep_file(cfg: &RunConfig, path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut body = String::new();
    for line in cfg.echo().lines() {
        body.push_str("# ");
        body.push_str(line);
        body.push('\n');
    }
    body.push_str(header);
    body.push('\n');
    for row in rows {
        body.push_str(row);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}
