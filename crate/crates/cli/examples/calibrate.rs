//! Scratch calibration harness for the desk-scale experiments.

use bcwidth::dataset::{Dataset, Split};
use bcwidth::evo::{evolve, EvoConfig, SupernetEvaluator};
use bcwidth::flops::{uniform_scale_width, FlopsTable};
use bcwidth::oracle::kendall_tau;
use bcwidth::pips::{initial_population, optimize_distribution, potential_errors, PipsConfig, SamplingDistribution};
use bcwidth::rng::derive_seed;
use bcwidth::space::{LayerSpec, WidthSpace};
use bcwidth::supernet::{
    evaluate_width, evaluate_width_by, retrain_from_scratch, train_supernet, LossLedger, LrSchedule,
    Principle, SupernetWeights, TrainConfig, TrainStrategy,
};

fn dense_space(max: &[usize], k: usize, input: usize, output: usize) -> WidthSpace {
    let layers = max.iter().map(|&m| LayerSpec::dense(m).unwrap()).collect();
    WidthSpace::new(layers, k, input, output).unwrap()
}

fn train_cfg(epochs: usize, seed: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        schedule: LrSchedule::Cosine,
        weight_decay: 1e-4,
        seed,
        ledger_size: 400,
    }
}

struct C7Out {
    searched: f64,
    uniform: f64,
    best_of_prior: f64,
    best_of_random: f64,
}

fn crit7(master: u64, sup_epochs: usize, retrain_epochs: usize, spread: f64, n_per_class: usize) -> C7Out {
    let space = dense_space(&[16, 32, 32, 16], 4, 96, 10);
    let table = FlopsTable::build(&space);
    let data = Dataset::synth(10, 96, n_per_class, spread, derive_seed(master, "data")).unwrap();
    let budget = table.flops_of(&space.full_width()) * 0.5;

    let init = SupernetWeights::init(&space, derive_seed(master, "init"));
    let tc = train_cfg(sup_epochs, derive_seed(master, "train"), 0.12);
    let out = train_supernet(init, &space, &data, &tc, TrainStrategy::Complementary, Principle::Bilateral).unwrap();
    {
        let val = data.split_batch(Split::Val);
        let sup_full = evaluate_width(&out.weights, &space.full_width(), &val).unwrap();
        let sup_min = evaluate_width(&out.weights, &space.min_width(), &val).unwrap();
        eprintln!("    [diag] supernet acc: full {sup_full:.4} min {sup_min:.4}");
    }

    let errors = potential_errors(&out.ledger, &space).unwrap();
    let sol = optimize_distribution(&errors, &table, budget, &PipsConfig::default()).unwrap();
    let (prior_pop, _) = initial_population(&sol.distribution, &space, &table, budget, 16, 3, derive_seed(master, "prior")).unwrap();
    let uniform_dist = SamplingDistribution::uniform(&space);
    let (random_pop, _) = initial_population(&uniform_dist, &space, &table, budget, 16, 3, derive_seed(master, "rand")).unwrap();

    let val = data.split_batch(Split::Val);
    let best_of = |pop: &bcwidth::evo::Population| -> f64 {
        pop.individuals
            .iter()
            .map(|i| {
                let w = i.width(&space).unwrap();
                evaluate_width(&out.weights, &w, &val).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let best_of_prior = best_of(&prior_pop);
    let best_of_random = best_of(&random_pop);

    let evo = EvoConfig {
        population_size: 16,
        generations: 20,
        parents_kept: 6,
        mutation_eta: 4.0,
        seed: derive_seed(master, "evolve"),
        ..Default::default()
    };
    let mut ev = SupernetEvaluator { weights: &out.weights, valset: val };
    let searched = evolve(&mut ev, &space, &table, budget, prior_pop, &evo).unwrap();
    let best_width = space.width_from_groups(&searched.best.genome).unwrap();

    let rc = train_cfg(retrain_epochs, derive_seed(master, "retrain"), 0.08);
    let acc_searched = retrain_from_scratch(&space, &best_width, &data, &rc).unwrap().test_accuracy;
    let uniform_w = uniform_scale_width(&space, &table, budget).unwrap();
    let acc_uniform = retrain_from_scratch(&space, &uniform_w, &data, &rc).unwrap().test_accuracy;
    C7Out { searched: acc_searched, uniform: acc_uniform, best_of_prior, best_of_random }
}

fn crit8(master: u64, bc_epochs: usize, retrain_epochs: usize, spread: f64, n_per_class: usize) -> (f64, f64) {
    let space = dense_space(&[16, 16, 16], 4, 48, 16);
    let data = Dataset::synth(16, 48, n_per_class, spread, derive_seed(master, "data")).unwrap();

    let bc = train_supernet(
        SupernetWeights::init(&space, derive_seed(master, "sup/init")),
        &space,
        &data,
        &train_cfg(bc_epochs, derive_seed(master, "sup/train"), 0.08),
        TrainStrategy::Complementary,
        Principle::Bilateral,
    )
    .unwrap();
    // Same recipe, same stream seeds, same complementary pairing: the
    // principle is the only difference between the two runs.
    let ua = train_supernet(
        SupernetWeights::init(&space, derive_seed(master, "sup/init")),
        &space,
        &data,
        &train_cfg(bc_epochs, derive_seed(master, "sup/train"), 0.08),
        TrainStrategy::Complementary,
        Principle::Unilateral,
    )
    .unwrap();

    let val = data.split_batch(Split::Val);
    let rc = train_cfg(retrain_epochs, derive_seed(master, "ground"), 0.08);
    let mut est_bc = Vec::new();
    let mut est_ua = Vec::new();
    let mut truth = Vec::new();
    for w in space.enumerate_widths() {
        est_bc.push(evaluate_width_by(&bc.weights, &w, &val, Principle::Bilateral).unwrap());
        est_ua.push(evaluate_width_by(&ua.weights, &w, &val, Principle::Unilateral).unwrap());
        truth.push(retrain_from_scratch(&space, &w, &data, &rc).unwrap().test_accuracy);
    }
    (
        kendall_tau(&est_bc, &truth).unwrap(),
        kendall_tau(&est_ua, &truth).unwrap(),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("7");
    match which {
        "7" => {
            let sup_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
            let retr: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(24);
            let spread: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.9);
            let npc: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(120);
            let seeds: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(8);
            println!("crit7 sup_epochs={sup_epochs} retrain={retr} spread={spread} npc={npc}");
            let mut diffs = Vec::new();
            for seed in 0..seeds {
                let t0 = std::time::Instant::now();
                let o = crit7(1000 + seed, sup_epochs, retr, spread, npc);
                println!(
                    "  seed {seed}: searched {:.4} uniform {:.4} diff {:+.4} | prior-best {:.4} random-best {:.4} ({:.1}s)",
                    o.searched, o.uniform, o.searched - o.uniform, o.best_of_prior, o.best_of_random,
                    t0.elapsed().as_secs_f32()
                );
                diffs.push(o.searched - o.uniform);
            }
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let min = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
            println!("  mean diff {mean:+.4}, worst {min:+.4}");
        }
        "8" => {
            let bc_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
            let retr: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
            let spread: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.8);
            let npc: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(80);
            let seeds: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(8);
            println!("crit8 bc_epochs={bc_epochs} retrain={retr} spread={spread} npc={npc}");
            let mut wins = 0;
            for seed in 0..seeds {
                let t0 = std::time::Instant::now();
                let (tau_bc, tau_ua) = crit8(7000 + seed, bc_epochs, retr, spread, npc);
                let win = tau_bc > tau_ua;
                wins += usize::from(win);
                println!(
                    "  seed {seed}: tau_bc {tau_bc:+.4} tau_ua {tau_ua:+.4} {} ({:.1}s)",
                    if win { "BC" } else { "ua" },
                    t0.elapsed().as_secs_f32()
                );
            }
            println!("  BC wins {wins}/{seeds}");
        }
        _ => eprintln!("usage: calibrate [7|8] ..."),
    }
}
