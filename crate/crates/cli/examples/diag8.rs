//! Scratch: per-width rank-fidelity diagnostics.
use bcwidth::dataset::{Dataset, Split};
use bcwidth::flops::FlopsTable;
use bcwidth::oracle::kendall_tau;
use bcwidth::rng::derive_seed;
use bcwidth::space::{LayerSpec, WidthSpace};
use bcwidth::supernet::*;

fn main() {
    let master: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let bc_epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let layers = vec![LayerSpec::dense(16).unwrap(), LayerSpec::dense(16).unwrap(), LayerSpec::dense(16).unwrap()];
    let space = WidthSpace::new(layers, 4, 48, 16).unwrap();
    let data = Dataset::synth(16, 48, 500, 0.5, derive_seed(master, "data")).unwrap();
    let cfg = |ep: usize, tag: &str| TrainConfig {
        epochs: ep, batch_size: 32, learning_rate: 0.08, schedule: LrSchedule::Cosine,
        weight_decay: 1e-4, seed: derive_seed(master, tag), ledger_size: 400,
    };
    let bc = train_supernet(SupernetWeights::init(&space, derive_seed(master, "sup/init")), &space, &data,
        &cfg(bc_epochs, "sup/train"), TrainStrategy::Complementary, Principle::Bilateral).unwrap();
    let ua = train_supernet(SupernetWeights::init(&space, derive_seed(master, "sup/init")), &space, &data,
        &cfg(bc_epochs, "sup/train"), TrainStrategy::Complementary, Principle::Unilateral).unwrap();
    let val = data.split_batch(Split::Val);
    let rc = cfg(30, "ground");
    let table = FlopsTable::build(&space);
    let mut rows = Vec::new();
    for w in space.enumerate_widths() {
        let truth = retrain_from_scratch(&space, &w, &data, &rc).unwrap().test_accuracy;
        let eb = evaluate_width_by(&bc.weights, &w, &val, Principle::Bilateral).unwrap();
        let eu = evaluate_width_by(&ua.weights, &w, &val, Principle::Unilateral).unwrap();
        rows.push((w.clone(), truth, eb, eu, table.flops_of(&w)));
    }
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("width        truth  est_bc est_ua flops");
    for (w, t, eb, eu, f) in &rows {
        println!("{:<12} {t:.3}  {eb:.3}  {eu:.3}  {f:.0}", format!("{w}"));
    }
    let truth: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let eb: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let eu: Vec<f64> = rows.iter().map(|r| r.3).collect();
    println!("tau_bc {:+.4} tau_ua {:+.4}", kendall_tau(&eb, &truth).unwrap(), kendall_tau(&eu, &truth).unwrap());
    let top = 20;
    println!("top-{top} tau_bc {:+.4} tau_ua {:+.4}",
        kendall_tau(&eb[..top], &truth[..top]).unwrap(),
        kendall_tau(&eu[..top], &truth[..top]).unwrap());
}
