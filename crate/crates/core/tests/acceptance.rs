//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured quantities. Criteria 3, 4, and 9 share one desk
//! training run on the default synthetic benchmark.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlsh::augment::{sample_triples, Triple, TripleConfig, TripleMode};
use nlsh::blocking::{build_index, escalate_k, CandidateSet, GraphParams, IndexKind};
use nlsh::corpus::{Dataset, LabeledPair};
use nlsh::encoder::{init_model, EncoderModel, Featurizer, ModelDims};
use nlsh::harness::{
    gen_synthetic, k_sweep, pseudo_label, pseudo_quality, sample_seed_pairs, score, SyntheticSpec,
};
use nlsh::losses::{estimate_p1_p2, nlsh_loss, ContrastiveParams, NlshParams};
use nlsh::minhash::{
    banding_probability, escalate_bands, jaccard, minhash, signature_agreement, BandingParams,
    ShingleMode,
};
use nlsh::trainer::{batch_gradient, train, TrainConfig};

const NLSH: NlshParams = NlshParams { r: 0.01, c: 3.0, lambda_neg: 1.0 };

fn desk_contrastive() -> ContrastiveParams {
    ContrastiveParams { enabled: true, ..ContrastiveParams::default() }
}

fn desk_train_config() -> TrainConfig {
    TrainConfig::default() // lr 1e-3, batch 64, 30 epochs, warmup 0.1
}

fn desk_model(seed: u64) -> EncoderModel {
    let feat = Featurizer::new(4096, 0x5eed).unwrap();
    init_model(feat, &ModelDims::desk_default(), seed).unwrap()
}

struct TrainedFixture {
    dataset: Dataset,
    untrained: EncoderModel,
    trained: EncoderModel,
    test_pairs: Vec<LabeledPair>,
}

fn fixture() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dataset = gen_synthetic(&SyntheticSpec::default()).unwrap();
        let spec = nlsh::corpus::SplitSpec::default();
        let (train_pairs, valid_pairs, test_pairs) = nlsh::corpus::split(&dataset, &spec).unwrap();
        let triples =
            sample_triples(&dataset, &train_pairs, &TripleConfig::default(), 0).unwrap();
        let untrained = desk_model(0);
        let (best, _) = train(
            &dataset,
            &valid_pairs,
            &triples,
            untrained.clone(),
            &desk_train_config(),
            &NLSH,
            &desk_contrastive(),
        )
        .unwrap();
        TrainedFixture { dataset, untrained, trained: best.model, test_pairs }
    })
}

#[test]
fn criterion_01_loss_floor_on_grid() {
    let started = Instant::now();
    let steps = 22usize; // 22^3 = 10648 grid points
    let floor = NLSH.floor();
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (steps - 1) as f64;
    let mut checked = 0usize;
    for i in 0..steps {
        for j in 0..steps {
            for l in 0..steps {
                let (hp, hq, hr) = (coord(i), coord(j), coord(l));
                let loss = nlsh_loss(hp, hq, hr, &NLSH).unwrap();
                assert!(loss >= floor - 1e-15, "loss {loss} below floor at ({hp},{hq},{hr})");
                let clamps = (hp - hq).abs() <= NLSH.r && (hp - hr).abs() >= NLSH.cr();
                assert_eq!(
                    (loss - floor).abs() < 1e-12,
                    clamps,
                    "floor equality mismatch at ({hp},{hq},{hr})"
                );
                checked += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(checked >= 10_000);
    assert!(elapsed.as_secs_f64() < 1.0, "grid took {elapsed:?}");
    println!("PASS criterion 1: loss floor -0.02 verified on {checked} grid points in {elapsed:?}");
}

fn toy_triples(seed: u64) -> Vec<Triple> {
    let words = ["tor", "vex", "mil", "dan", "kor", "pel", "sun", "rho"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = |id: &str| {
        let text: Vec<&str> =
            (0..4).map(|_| words[rng.gen_range(0..words.len())]).collect();
        nlsh::corpus::Record::new(id, vec![("name".to_string(), text.join(" "))])
    };
    (0..4)
        .map(|i| Triple {
            p: rec(&format!("p{i}")),
            q: rec(&format!("q{i}")),
            r: rec(&format!("r{i}")),
            q_source: nlsh::augment::PositiveSource::Augmentation,
            r_source: nlsh::augment::NegativeSource::RandomNegative,
        })
        .collect()
}

/// all clamp arguments and relu pre-activations comfortably away from
/// their kinks, so central differences see a smooth function
fn away_from_boundaries(model: &EncoderModel, triples: &[Triple]) -> bool {
    let margin_clamp = 1e-4;
    let margin_relu = 1e-5;
    for t in triples {
        let (ap, aq, ar) = (
            model.forward(&t.p).unwrap(),
            model.forward(&t.q).unwrap(),
            model.forward(&t.r).unwrap(),
        );
        let dq = (ap.s - aq.s).abs();
        let dr = (ap.s - ar.s).abs();
        if (dq - NLSH.r).abs() < margin_clamp
            || (dr - NLSH.cr()).abs() < margin_clamp
            || dr < margin_clamp
        {
            return false;
        }
        for act in [&ap, &aq, &ar] {
            if act.a1.iter().chain(act.u.iter()).any(|v| v.abs() < margin_relu) {
                return false;
            }
            if act.y_norm < 1e-6 {
                return false;
            }
        }
    }
    true
}

#[test]
fn criterion_02_end_to_end_gradient_fidelity() {
    let started = Instant::now();
    let con = ContrastiveParams {
        enabled: true,
        weight: 0.1,
        temperature: 0.5,
        bt_offdiag_weight: 0.005,
    };
    let dims = ModelDims { e_dim: 8, mlp_hidden: 8, d: 8, h: 8 };
    let feat = Featurizer::new(64, 3).unwrap();
    let step = 1e-6;
    let mut points_checked = 0usize;
    let mut seed = 0u64;
    let mut worst: f64 = 0.0;
    while points_checked < 20 {
        seed += 1;
        let model = init_model(feat, &dims, seed).unwrap();
        let triples = toy_triples(seed ^ 0xabcd);
        if !away_from_boundaries(&model, &triples) {
            continue;
        }
        let refs: Vec<&Triple> = triples.iter().collect();
        let (_, grad) = batch_gradient(&model, &refs, &NLSH, &con).unwrap();
        let analytic = grad.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>();
        let n_tensors = analytic.len();
        for tensor_idx in 0..n_tensors {
            for elem in 0..analytic[tensor_idx].len() {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.param_tensors_mut()[tensor_idx].1[elem] += delta;
                    batch_gradient(&m, &refs, &NLSH, &con).unwrap().0
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let a = analytic[tensor_idx][elem];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                let rel = (a - fd).abs() / denom;
                worst = worst.max(rel);
                assert!(
                    rel < 1e-3,
                    "seed {seed} tensor {tensor_idx} elem {elem}: analytic {a} vs fd {fd} (rel {rel})"
                );
            }
        }
        points_checked += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "gradient check took {elapsed:?}");
    println!(
        "PASS criterion 2: analytic vs finite-difference gradients on {points_checked} parameter points, worst rel err {worst:.2e}, in {elapsed:?}"
    );
}

#[test]
fn criterion_03_lsh_family_emerges_from_training() {
    let started = Instant::now();
    let fx = fixture();
    let trained = estimate_p1_p2(&fx.trained, &fx.dataset, &fx.test_pairs, &NLSH).unwrap();
    let untrained = estimate_p1_p2(&fx.untrained, &fx.dataset, &fx.test_pairs, &NLSH).unwrap();
    let gap_trained = trained.p1_hat - trained.p2_hat;
    let gap_untrained = untrained.p1_hat - untrained.p2_hat;
    assert!(
        gap_trained >= 0.3,
        "trained p1-p2 = {gap_trained:.4} (p1 {:.4}, p2 {:.4})",
        trained.p1_hat,
        trained.p2_hat
    );
    assert!(
        gap_untrained <= 0.05,
        "untrained p1-p2 = {gap_untrained:.4} (p1 {:.4}, p2 {:.4})",
        untrained.p1_hat,
        untrained.p2_hat
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0);
    println!(
        "PASS criterion 3: trained p1-p2 = {gap_trained:.3} (>= 0.3), untrained = {gap_untrained:.3} (<= 0.05), in {elapsed:?}"
    );
}

#[test]
fn criterion_04_blocking_quality_trained_vs_untrained() {
    let fx = fixture();
    let gp = GraphParams::default();
    let k_max = fx.dataset.table_a.len();
    let (trained_set, trained_k) =
        escalate_k(&fx.dataset, &fx.trained, 0.95, k_max, IndexKind::Exact, &gp).unwrap();
    let (untrained_set, untrained_k) =
        escalate_k(&fx.dataset, &fx.untrained, 0.95, k_max, IndexKind::Exact, &gp).unwrap();
    let ratio = trained_set.len() as f64 / untrained_set.len() as f64;
    assert!(
        ratio <= 0.5,
        "candidate ratio {ratio:.3} (trained {} @k={trained_k} vs untrained {} @k={untrained_k})",
        trained_set.len(),
        untrained_set.len()
    );

    let curve_t = k_sweep(&fx.dataset, &fx.trained, &[1], IndexKind::Exact, &gp).unwrap();
    let curve_u = k_sweep(&fx.dataset, &fx.untrained, &[1], IndexKind::Exact, &gp).unwrap();
    let diff = curve_t[0].recall - curve_u[0].recall;
    assert!(
        diff >= 0.3,
        "recall@1 trained {:.3} - untrained {:.3} = {diff:.3}",
        curve_t[0].recall,
        curve_u[0].recall
    );
    println!(
        "PASS criterion 4: candidate ratio {ratio:.3} (<= 0.5), recall@1 gap {diff:.3} (>= 0.3)"
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_nlsh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_compare_rows(path: &std::path::Path) -> Vec<(String, f64, usize)> {
    let body = std::fs::read_to_string(path).unwrap();
    body.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("method,"))
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            (cells[0].to_string(), cells[2].parse().unwrap(), cells[5].parse().unwrap())
        })
        .collect()
}

#[test]
fn criterion_05_baseline_comparison_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let path = |s: &str| dir.path().join(s).display().to_string();

    // semantics-heavy benchmark: synonym substitutions kill token overlap
    let sem = path("sem");
    assert!(run_cli(&["gen-synth", "--preset", "semantic", "--out", &sem]).status.success());
    let data_args = |base: &str| {
        vec![
            "--table-a".to_string(),
            format!("{base}/tableA.csv"),
            "--table-b".to_string(),
            format!("{base}/tableB.csv"),
            "--pairs".to_string(),
            format!("{base}/pairs.csv"),
        ]
    };
    let sem_args = data_args(&sem);
    let mut train_args = vec!["train", "--out", &sem];
    train_args.extend(sem_args.iter().map(|s| s.as_str()));
    let out = run_cli(&train_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut compare_args = vec!["compare", "--out", &sem, "--target-recall", "0.9"];
    compare_args.extend(sem_args.iter().map(|s| s.as_str()));
    let out = run_cli(&compare_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_compare_rows(&dir.path().join("sem/compare.csv"));
    let neural = rows.iter().find(|r| r.0 == "neural").unwrap();
    let baseline = rows.iter().find(|r| r.0 == "minhash").unwrap();
    assert!(neural.1 >= 0.9, "neural recall {:.3}", neural.1);
    assert!(baseline.1 >= 0.9, "minhash recall {:.3}", baseline.1);
    assert!(
        neural.2 < baseline.2,
        "neural candidates {} not smaller than minhash {}",
        neural.2,
        baseline.2
    );

    // zero-corruption benchmark: both must reach recall 1.0
    let clean = path("clean");
    assert!(run_cli(&["gen-synth", "--preset", "clean", "--out", &clean]).status.success());
    let clean_args = data_args(&clean);
    let mut train_args = vec!["train", "--out", &clean, "--epochs", "0"];
    train_args.extend(clean_args.iter().map(|s| s.as_str()));
    assert!(run_cli(&train_args).status.success());
    let mut compare_args = vec!["compare", "--out", &clean, "--target-recall", "1.0"];
    compare_args.extend(clean_args.iter().map(|s| s.as_str()));
    let out = run_cli(&compare_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_compare_rows(&dir.path().join("clean/compare.csv"));
    for (method, recall, _) in &rows {
        assert_eq!(*recall, 1.0, "{method} recall {recall}");
    }
    println!(
        "PASS criterion 5: semantic benchmark neural {} < minhash {} candidates at recall 0.9; clean benchmark both at recall 1.0",
        neural.2, baseline.2
    );
}

#[test]
fn criterion_06_minhash_statistics() {
    let started = Instant::now();
    // signature agreement vs exact Jaccard, m = 1000, 20 random pairs
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..20 {
        let shared = rng.gen_range(5..40);
        let own = rng.gen_range(0..20);
        let mut s1 = BTreeSet::new();
        let mut s2 = BTreeSet::new();
        for i in 0..shared {
            s1.insert(format!("sh{trial}_{i}"));
            s2.insert(format!("sh{trial}_{i}"));
        }
        for i in 0..own {
            s1.insert(format!("L{trial}_{i}"));
            s2.insert(format!("R{trial}_{i}"));
        }
        let truth = jaccard(&s1, &s2);
        let est = signature_agreement(&minhash(&s1, 1000, 1234), &minhash(&s2, 1000, 1234));
        assert!(
            (est - truth).abs() <= 0.05,
            "trial {trial}: agreement {est:.4} vs jaccard {truth:.4}"
        );
    }

    // band-level candidate probability vs 1-(1-s^r)^b at s=0.6, b=20, r=5
    let mut s1 = BTreeSet::new();
    let mut s2 = BTreeSet::new();
    for i in 0..30 {
        s1.insert(format!("c{i}"));
        s2.insert(format!("c{i}"));
    }
    for i in 0..10 {
        s1.insert(format!("x{i}"));
        s2.insert(format!("y{i}"));
    }
    assert!((jaccard(&s1, &s2) - 0.6).abs() < 1e-12);
    let params = BandingParams { bands: 20, rows_per_band: 5 };
    let mut hits = 0usize;
    for seed in 0..500u64 {
        let a = minhash(&s1, params.m(), seed);
        let b = minhash(&s2, params.m(), seed);
        if (0..params.bands).any(|band| {
            let lo = band * params.rows_per_band;
            a.values[lo..lo + params.rows_per_band] == b.values[lo..lo + params.rows_per_band]
        }) {
            hits += 1;
        }
    }
    let rate = hits as f64 / 500.0;
    let analytic = banding_probability(0.6, &params);
    assert!((rate - analytic).abs() <= 0.05, "band rate {rate:.4} vs analytic {analytic:.4}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0);
    println!(
        "PASS criterion 6: signature agreement within ±0.05 of Jaccard (20 pairs), banding rate {rate:.3} vs analytic {analytic:.3}, in {elapsed:?}"
    );
}

#[test]
fn criterion_07_knn_oracle_equivalence() {
    let started = Instant::now();
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random_units = |n: usize, d: usize| {
        (0..n)
            .map(|_| unit((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect::<Vec<_>>()
    };

    // exhaustive: exact index equals an independent brute-force scan
    let n = 1000;
    let d = 16;
    let vectors = random_units(n, d);
    let ids: Vec<String> = (0..n).map(|i| format!("v{i:04}")).collect();
    let index = build_index(ids.clone(), vectors.clone(), IndexKind::Exact).unwrap();
    for q in &vectors {
        let got = index.knn(q, 10).unwrap();
        let mut want: Vec<(usize, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.iter().zip(q).map(|(a, b)| a * b).sum()))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| ids[a.0].cmp(&ids[b.0])));
        want.truncate(10);
        assert_eq!(
            got.iter().map(|h| h.0).collect::<Vec<_>>(),
            want.iter().map(|h| h.0).collect::<Vec<_>>()
        );
    }

    // graph recall@10 on 2000 random unit vectors
    let n2 = 2000;
    let vectors2 = random_units(n2, 32);
    let ids2: Vec<String> = (0..n2).map(|i| format!("g{i:04}")).collect();
    let exact = build_index(ids2.clone(), vectors2.clone(), IndexKind::Exact).unwrap();
    let graph = build_index(ids2, vectors2.clone(), IndexKind::Graph).unwrap();
    let queries = random_units(200, 32);
    let mut overlap = 0usize;
    for q in &queries {
        let want: std::collections::HashSet<usize> =
            exact.knn(q, 10).unwrap().iter().map(|h| h.0).collect();
        overlap += graph.knn(q, 10).unwrap().iter().filter(|h| want.contains(&h.0)).count();
    }
    let recall = overlap as f64 / (10 * queries.len()) as f64;
    assert!(recall >= 0.95, "graph recall@10 = {recall:.4}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0);
    println!(
        "PASS criterion 7: exact == brute force on 1000 queries, graph recall@10 = {recall:.3}, in {elapsed:?}"
    );
}

#[test]
fn criterion_08_metric_identities() {
    let mk = |pairs: &[(&str, &str)], k: usize| CandidateSet {
        pairs: pairs
            .iter()
            .map(|(a, b)| nlsh::blocking::CandidatePair {
                id_a: a.to_string(),
                id_b: b.to_string(),
                score: 0.0,
            })
            .collect(),
        k,
    };
    let g: BTreeSet<(String, String)> =
        [("a1".to_string(), "b1".to_string()), ("a2".to_string(), "b2".to_string())].into();

    let r = score(&mk(&[("a1", "b1"), ("a2", "b2")], 1), &g).unwrap();
    assert_eq!((r.recall, r.precision, r.f1), (1.0, 1.0, 1.0));

    let r = score(&mk(&[("a1", "b1"), ("a2", "b2"), ("a3", "b1"), ("a3", "b2")], 2), &g).unwrap();
    assert_eq!(r.recall, 1.0);
    assert_eq!(r.precision, 0.5);
    assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);

    // oracle comparison on random instances up to 10^3 pairs
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n_g = rng.gen_range(1..40usize);
        let n_c = rng.gen_range(0..1000usize);
        let gt: BTreeSet<(String, String)> = (0..n_g)
            .map(|_| {
                (format!("a{}", rng.gen_range(0..50)), format!("b{}", rng.gen_range(0..50)))
            })
            .collect();
        let cand: Vec<(String, String)> = (0..n_c)
            .map(|_| {
                (format!("a{}", rng.gen_range(0..50)), format!("b{}", rng.gen_range(0..50)))
            })
            .collect();
        let set = CandidateSet {
            pairs: cand
                .iter()
                .map(|(a, b)| nlsh::blocking::CandidatePair {
                    id_a: a.clone(),
                    id_b: b.clone(),
                    score: 0.0,
                })
                .collect(),
            k: 1,
        };
        let r = score(&set, &gt).unwrap();
        // independent set arithmetic
        let cset: std::collections::HashSet<(String, String)> = cand.into_iter().collect();
        let inter = gt.iter().filter(|p| cset.contains(*p)).count();
        let recall = inter as f64 / gt.len() as f64;
        let precision = if cset.is_empty() { 0.0 } else { inter as f64 / cset.len() as f64 };
        assert!((r.recall - recall).abs() < 1e-15, "trial {trial}");
        assert!((r.precision - precision).abs() < 1e-15, "trial {trial}");
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        assert!((r.f1 - f1).abs() < 1e-15, "trial {trial}");
    }
    println!("PASS criterion 8: metric identities and set-arithmetic oracle on 20 random instances");
}

#[test]
fn criterion_09_pseudo_labeling_quality() {
    let fx = fixture();
    let seeds = sample_seed_pairs(&fx.dataset, 50, 3).unwrap();
    let seed_keys: std::collections::HashSet<(String, String)> =
        seeds.iter().map(|p| (p.id_a.clone(), p.id_b.clone())).collect();
    let candidates = nlsh::blocking::block(
        &fx.dataset,
        &fx.trained,
        10,
        IndexKind::Exact,
        &GraphParams::default(),
    )
    .unwrap();
    let unlabeled: Vec<(String, String)> = candidates
        .pairs
        .iter()
        .map(|p| (p.id_a.clone(), p.id_b.clone()))
        .filter(|key| !seed_keys.contains(key))
        .collect();
    let labels = pseudo_label(&fx.dataset, &fx.trained, &seeds, &unlabeled).unwrap();
    let quality = pseudo_quality(&labels, &fx.dataset.matches);
    let tpr = quality.tpr.expect("positives present");
    let tnr = quality.tnr.expect("negatives present");
    assert!(tpr > 0.8, "tpr {tpr:.4}");
    assert!(tnr > 0.8, "tnr {tnr:.4}");

    // abstention band excludes exactly the scores strictly inside (tau_neg, tau_pos)
    let emitted: std::collections::HashSet<(String, String)> =
        labels.pairs.iter().map(|p| (p.id_a.clone(), p.id_b.clone())).collect();
    for (id_a, id_b) in &unlabeled {
        let ea = fx.trained.embed(fx.dataset.record_a(id_a).unwrap()).unwrap();
        let eb = fx.trained.embed(fx.dataset.record_b(id_b).unwrap()).unwrap();
        let s: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
        let in_band = s > labels.tau_neg && s < labels.tau_pos;
        assert_eq!(
            emitted.contains(&(id_a.clone(), id_b.clone())),
            !in_band,
            "pair ({id_a},{id_b}) score {s}"
        );
    }
    println!(
        "PASS criterion 9: pseudo labels tpr {tpr:.3}, tnr {tnr:.3} (both > 0.8); abstention band exact on {} pairs",
        unlabeled.len()
    );
}

#[test]
fn criterion_10_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run_cli(&[
        "gen-synth",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "synth.n_entities=80",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run_pipeline = |out_dir: &std::path::Path| {
        let args = [
            "--table-a",
            &format!("{}/tableA.csv", data.display()),
            "--table-b",
            &format!("{}/tableB.csv", data.display()),
            "--pairs",
            &format!("{}/pairs.csv", data.display()),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "5",
        ];
        let mut train: Vec<&str> = vec!["train", "--epochs", "6", "--set", "triples.n=600"];
        train.extend_from_slice(&args);
        let o = run_cli(&train);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut block: Vec<&str> = vec!["block", "--k", "5"];
        block.extend_from_slice(&args);
        let o = run_cli(&block);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let r1 = dir.path().join("run1");
    let r2 = dir.path().join("run2");
    run_pipeline(&r1);
    run_pipeline(&r2);

    for file in ["model.ckpt", "train_log.csv", "candidates.csv", "report.csv"] {
        let b1 = std::fs::read(r1.join(file)).unwrap();
        let b2 = std::fs::read(r2.join(file)).unwrap();
        assert_eq!(b1, b2, "{file} differs between identical runs");
    }
    println!(
        "PASS criterion 10: model.ckpt, train_log.csv, candidates.csv, report.csv byte-identical across reruns"
    );
}
