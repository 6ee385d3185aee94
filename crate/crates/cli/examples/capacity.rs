//! Scratch: retrained accuracy vs width capacity.
use bcwidth::dataset::Dataset;
use bcwidth::flops::{uniform_scale_width, FlopsTable};
use bcwidth::rng::derive_seed;
use bcwidth::space::{LayerSpec, WidthSpace};
use bcwidth::supernet::{retrain_from_scratch, LrSchedule, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.35);
    let npc: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let retr: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let input_dim: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let layers = vec![
        LayerSpec::dense(16).unwrap(),
        LayerSpec::dense(32).unwrap(),
        LayerSpec::dense(32).unwrap(),
        LayerSpec::dense(16).unwrap(),
    ];
    let space = WidthSpace::new(layers, 4, input_dim, 10).unwrap();
    let table = FlopsTable::build(&space);
    let full_flops = table.flops_of(&space.full_width());
    let budget = full_flops * 0.5;
    let uniform = uniform_scale_width(&space, &table, budget).unwrap();
    // Hand-picked mixed widths near the 50% budget.
    let candidates: Vec<Vec<usize>> = vec![
        vec![4, 4, 4, 4], vec![2, 2, 2, 2], vec![1, 1, 1, 1],
        vec![3, 2, 2, 3], vec![3, 2, 2, 2], vec![2, 2, 2, 4], vec![3, 2, 3, 2], vec![2, 2, 3, 4],
    ];
    println!("spread={spread} npc={npc} retrain={retr} input_dim={input_dim} budget={budget:.0} (uniform={uniform})");
    for groups in candidates {
        let w = space.width_from_groups(&groups).unwrap();
        let flops = table.flops_of(&w);
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let data = Dataset::synth(10, input_dim, npc, spread, derive_seed(seed, "data")).unwrap();
            let rc = TrainConfig {
                epochs: retr, batch_size: 32, learning_rate: 0.15,
                schedule: LrSchedule::Cosine, weight_decay: 1e-4,
                seed: derive_seed(seed, "retrain"), ledger_size: 1,
            };
            accs.push(retrain_from_scratch(&space, &w, &data, &rc).unwrap().test_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64).sqrt();
        println!("  {groups:?} flops {:>5.1}% mean {mean:.4} sd {sd:.4} accs {:?}", 100.0 * flops / full_flops,
            accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
}
