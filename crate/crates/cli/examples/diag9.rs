//! Scratch: inspect the PIPS pipeline on the criterion-7 setup.
use bcwidth::dataset::{Dataset, Split};
use bcwidth::flops::FlopsTable;
use bcwidth::pips::*;
use bcwidth::rng::derive_seed;
use bcwidth::space::{LayerSpec, WidthSpace};
use bcwidth::supernet::*;
use std::collections::BTreeMap;

fn main() {
    let master = 1000u64;
    let layers = vec![
        LayerSpec::dense(16).unwrap(), LayerSpec::dense(32).unwrap(),
        LayerSpec::dense(32).unwrap(), LayerSpec::dense(16).unwrap(),
    ];
    let space = WidthSpace::new(layers, 4, 96, 10).unwrap();
    let table = FlopsTable::build(&space);
    let data = Dataset::synth(10, 96, 1200, 0.55, derive_seed(master, "data")).unwrap();
    let budget = table.flops_of(&space.full_width()) * 0.5;
    let tc = TrainConfig { epochs: 100, batch_size: 64, learning_rate: 0.12, schedule: LrSchedule::Cosine, weight_decay: 1e-4, seed: derive_seed(master, "train"), ledger_size: 400 };
    let out = train_supernet(SupernetWeights::init(&space, derive_seed(master, "init")), &space, &data, &tc, TrainStrategy::Complementary, Principle::Bilateral).unwrap();

    println!("top ledger entries:");
    for e in out.ledger.entries().iter().take(8) {
        println!("  {} loss {:.4} flops {:.0}", e.width, e.loss, table.flops_of(&e.width));
    }
    let errors = potential_errors(&out.ledger, &space).unwrap();
    println!("potential error matrix (rows=layers, cols=group 1..4):");
    for l in 0..4 {
        let row: Vec<String> = (0..4).map(|o| format!("{:.4}({})", errors.value(l, o), errors.visits(l, o))).collect();
        println!("  layer {l}: {}", row.join(" "));
    }
    let sol = optimize_distribution(&errors, &table, budget, &PipsConfig::default()).unwrap();
    println!("solved distribution (budget {budget:.0}, objective {:.4}, residual {:.2e}):", sol.objective, sol.constraint_residual);
    for l in 0..4 {
        let row: Vec<String> = sol.distribution.layer(l).iter().map(|p| format!("{p:.3}")).collect();
        println!("  layer {l}: [{}]", row.join(", "));
    }
    println!("expected flops {:.0} vs budget {budget:.0}", expected_flops(&sol.distribution, &table));

    let val = data.split_batch(Split::Val);
    for (name, dist) in [("prior", sol.distribution.clone()), ("random", SamplingDistribution::uniform(&space))] {
        let (pop, stats) = initial_population(&dist, &space, &table, budget, 24, 100, derive_seed(master, name)).unwrap();
        let mut seen: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let mut best = f64::NEG_INFINITY;
        for ind in &pop.individuals {
            let w = ind.width(&space).unwrap();
            let acc = evaluate_width(&out.weights, &w, &val).unwrap();
            best = best.max(acc);
            seen.insert(ind.genome.clone(), acc);
        }
        println!("{name}: distinct {} / 24, dedup_relaxed {}, best {:.4}", seen.len(), stats.dedup_relaxed, best);
        for (g, acc) in seen.iter().take(24) {
            println!("   {:?} acc {:.4} flops {:.0}", g, acc, table.flops_of(&space.width_from_groups(g).unwrap()));
        }
    }
}
