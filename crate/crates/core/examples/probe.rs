use nlsh::augment::{sample_triples, TripleConfig};
use nlsh::corpus::{split, SplitSpec};
use nlsh::encoder::{init_model, Featurizer, ModelDims};
use nlsh::harness::{gen_synthetic, k_sweep, SyntheticSpec};
use nlsh::blocking::{GraphParams, IndexKind, escalate_k};
use nlsh::losses::{estimate_p1_p2, ContrastiveParams, NlshParams};
use nlsh::trainer::{train, TrainConfig};

fn main() {
    let dataset = gen_synthetic(&SyntheticSpec::default()).unwrap();
    let (train_pairs, valid_pairs, test_pairs) = split(&dataset, &SplitSpec::default()).unwrap();
    let nlsh_p = NlshParams::default();
    let gp = GraphParams::default();
    let untrained = init_model(Featurizer::new(4096, 0x5eed).unwrap(), &ModelDims::desk_default(), 0).unwrap();
    let est_u = estimate_p1_p2(&untrained, &dataset, &test_pairs, &nlsh_p).unwrap();
    let r1_u = k_sweep(&dataset, &untrained, &[1], IndexKind::Exact, &gp).unwrap()[0].recall;
    let (set_u, _) = escalate_k(&dataset, &untrained, 0.95, dataset.table_a.len(), IndexKind::Exact, &gp).unwrap();
    println!("untrained: test p1-p2={:.3} recall@1={:.3} cand@0.95={}", est_u.p1_hat-est_u.p2_hat, r1_u, set_u.len());
    for (epochs, n, wd) in [(30usize, 2000usize, 0.01f64), (60, 4000, 0.01), (60, 4000, 0.05)] {
        let triples = sample_triples(&dataset, &train_pairs, &TripleConfig { n, ..TripleConfig::default() }, 0).unwrap();
        let model = init_model(Featurizer::new(4096, 0x5eed).unwrap(), &ModelDims::desk_default(), 0).unwrap();
        let cfg = TrainConfig { epochs, weight_decay: wd, ..TrainConfig::default() };
        let con = ContrastiveParams { enabled: true, ..ContrastiveParams::default() };
        let (best, _) = train(&dataset, &valid_pairs, &triples, model, &cfg, &nlsh_p, &con).unwrap();
        let est = estimate_p1_p2(&best.model, &dataset, &test_pairs, &nlsh_p).unwrap();
        let r1 = k_sweep(&dataset, &best.model, &[1], IndexKind::Exact, &gp).unwrap()[0].recall;
        let (set_t, kt) = escalate_k(&dataset, &best.model, 0.95, dataset.table_a.len(), IndexKind::Exact, &gp).unwrap();
        println!("epochs={epochs} n={n} wd={wd}: best_ep={} | test p1={:.3} p2={:.3} gap={:.3} | recall@1={:.3} | cand@0.95={} (k={kt}) ratio={:.3}",
            best.epoch, est.p1_hat, est.p2_hat, est.p1_hat-est.p2_hat, r1, set_t.len(), set_t.len() as f64 / set_u.len() as f64);
    }
}
