//! The five pipeline commands. Every command is deterministic for a fixed
//! effective config: rerunning overwrites its artifacts byte for byte, and
//! every report embeds the config hash and master seed.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bcwidth::dataset::{Dataset, Split};
use bcwidth::evo::{evolve, greedy_search, Individual, Population, SearchOutcome, SupernetEvaluator};
use bcwidth::flops::{uniform_scale_width, FlopsTable};
use bcwidth::oracle::{enumerate_cardinalities, kendall_tau};
use bcwidth::pips::{
    initial_population, optimize_distribution, potential_errors, PipsSolution, PopulationStats,
    SamplingDistribution,
};
use bcwidth::rng::derive_seed;
use bcwidth::space::{NetworkWidth, WidthSpace};
use bcwidth::supernet::{
    evaluate_width, evaluate_width_by, load_weights_file, retrain_from_scratch, save_weights_file,
    LossLedger, Principle, SupernetWeights, TrainOutcome, UpdateCounters,
};

use crate::config::{InitPopulation, RunConfig};
use crate::svg;

pub const WEIGHTS_FILE: &str = "weights.bcnw";
pub const LEDGER_FILE: &str = "ledger.json";
pub const COUNTERS_FILE: &str = "counters.json";
pub const BEST_WIDTH_FILE: &str = "best_width.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SEARCH_LOG_FILE: &str = "search_log.csv";
pub const INITIAL_POPULATION_FILE: &str = "initial_population.json";
pub const PIPS_LOG_FILE: &str = "pips_solver.csv";
pub const RETRAIN_REPORT_FILE: &str = "retrain_report.json";
pub const CARDINALITY_FILE: &str = "cardinality.csv";
pub const FAIRNESS_FILE: &str = "fairness.json";
pub const RANK_FIDELITY_FILE: &str = "rank_fidelity.json";
pub const POPULATION_HIST_FILE: &str = "population_hist.csv";
pub const HISTOGRAM_SVG_FILE: &str = "histogram.svg";
pub const WIDTH_RATIO_SVG_FILE: &str = "width_ratio.svg";

/// Spaces above this many widths are refused by the exhaustive analyze mode.
pub const ANALYZE_EXHAUSTIVE_LIMIT: u128 = 100_000;

fn provenance_comment(config: &RunConfig) -> String {
    format!("# config_hash={} master_seed={}\n", config.hash(), config.seed)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerArtifact {
    config_hash: String,
    master_seed: u64,
    ledger: LossLedger,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountersArtifact {
    config_hash: String,
    master_seed: u64,
    per_layer_spread: Vec<u64>,
    unclamped_pair_spread: Vec<u64>,
    counters: UpdateCounters,
}

fn dataset_for(config: &RunConfig) -> Result<Dataset> {
    let dataset = config.build_dataset()?;
    if dataset.input_dim() != config.space.input_dim() {
        bail!(
            "dataset features have {} dims, space expects {}",
            dataset.input_dim(),
            config.space.input_dim()
        );
    }
    if dataset.num_classes() != config.space.output_dim() {
        bail!(
            "dataset has {} classes, space output_dim is {}",
            dataset.num_classes(),
            config.space.output_dim()
        );
    }
    Ok(dataset)
}

fn load_trained(config: &RunConfig, out: &Path) -> Result<(WidthSpace, SupernetWeights)> {
    let path = out.join(WEIGHTS_FILE);
    let (space, weights) = load_weights_file(&path)
        .with_context(|| format!("loading trained weights from {}", path.display()))?;
    if space != config.space {
        bail!(
            "weights in {} were trained for a different space than the config",
            path.display()
        );
    }
    Ok((space, weights))
}

fn load_ledger(out: &Path) -> Result<LossLedger> {
    let artifact: LedgerArtifact = read_json(&out.join(LEDGER_FILE))?;
    Ok(artifact.ledger)
}

/// Train the supernet and persist weights, loss ledger and update counters.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let dataset = dataset_for(config)?;
    let space = &config.space;
    let init = SupernetWeights::init(space, derive_seed(config.seed, "supernet/init"));
    let train_config = config.train.to_core(derive_seed(config.seed, "supernet/train"));
    let TrainOutcome { weights, ledger, counters, .. } = bcwidth::supernet::train_supernet(
        init,
        space,
        &dataset,
        &train_config,
        config.strategy,
        config.principle,
    )?;

    save_weights_file(&out.join(WEIGHTS_FILE), space, &weights)?;
    write_json(
        &out.join(LEDGER_FILE),
        &LedgerArtifact {
            config_hash: config.hash(),
            master_seed: config.seed,
            ledger,
        },
    )?;
    write_json(
        &out.join(COUNTERS_FILE),
        &CountersArtifact {
            config_hash: config.hash(),
            master_seed: config.seed,
            per_layer_spread: counters.per_layer_spread(),
            unclamped_pair_spread: counters.pair_spread(),
            counters,
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PopulationArtifact<'a> {
    config_hash: String,
    master_seed: u64,
    source: InitPopulation,
    stats: &'a PopulationStats,
    widths: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distribution: Option<&'a SamplingDistribution>,
}

#[derive(Debug, Serialize)]
struct SearchSummary<'a> {
    config_hash: String,
    master_seed: u64,
    budget: f64,
    genome: &'a [usize],
    width: &'a NetworkWidth,
    estimated_accuracy: f64,
    flops: f64,
    distinct_evaluations: usize,
    init_population: InitPopulation,
}

/// Build the initial population (prior or random), run the evolutionary
/// search against the trained supernet, and persist the results.
pub fn cmd_search(config: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let (space, weights) = load_trained(config, out)?;
    let dataset = dataset_for(config)?;
    let table = FlopsTable::build(&space);
    let budget = config.flops_budget.resolve(&space, &table)?;

    let (population, stats, distribution) = build_population(config, out, &space, &table, budget)?;
    write_json(
        &out.join(INITIAL_POPULATION_FILE),
        &PopulationArtifact {
            config_hash: config.hash(),
            master_seed: config.seed,
            source: config.init_population,
            stats: &stats,
            widths: population.individuals.iter().map(|i| i.genome.clone()).collect(),
            distribution: distribution.as_ref(),
        },
    )?;

    let valset = dataset.split_batch(Split::Val);
    let mut evaluator = SupernetEvaluator { weights: &weights, valset };
    let evo_config = config.evo.to_core(derive_seed(config.seed, "search/evolve"));
    let SearchOutcome { best, history, evaluations } =
        evolve(&mut evaluator, &space, &table, budget, population, &evo_config)?;

    let mut log = provenance_comment(config).into_bytes();
    history.to_csv(&mut log)?;
    write_file(&out.join(SEARCH_LOG_FILE), &log)?;

    let best_width = best.width(&space)?;
    write_json(&out.join(BEST_WIDTH_FILE), &best_width)?;
    let fitness = best.fitness.expect("search returns evaluated best");
    write_json(
        &out.join(SUMMARY_FILE),
        &SearchSummary {
            config_hash: config.hash(),
            master_seed: config.seed,
            budget,
            genome: &best.genome,
            width: &best_width,
            estimated_accuracy: fitness.accuracy,
            flops: fitness.flops,
            distinct_evaluations: evaluations,
            init_population: config.init_population,
        },
    )?;
    Ok(())
}

fn build_population(
    config: &RunConfig,
    out: &Path,
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
) -> Result<(Population, PopulationStats, Option<SamplingDistribution>)> {
    match config.init_population {
        InitPopulation::Prior => {
            let ledger = load_ledger(out)?;
            let errors = potential_errors(&ledger, space)?;
            let pips_config = config.pips.to_core(derive_seed(config.seed, "pips/solve"));
            let solution = optimize_distribution(&errors, table, budget, &pips_config)?;
            write_pips_log(config, out, &solution)?;
            let (population, stats) = initial_population(
                &solution.distribution,
                space,
                table,
                budget,
                config.evo.population_size,
                config.evo.rejection_limit,
                derive_seed(config.seed, "population/prior"),
            )?;
            Ok((population, stats, Some(solution.distribution)))
        }
        InitPopulation::Random => {
            let uniform = SamplingDistribution::uniform(space);
            let (population, stats) = initial_population(
                &uniform,
                space,
                table,
                budget,
                config.evo.population_size,
                config.evo.rejection_limit,
                derive_seed(config.seed, "population/random"),
            )?;
            Ok((population, stats, None))
        }
    }
}

fn write_pips_log(config: &RunConfig, out: &Path, solution: &PipsSolution) -> Result<()> {
    let mut text = provenance_comment(config);
    text.push_str("iteration,objective,constraint_residual,step_size\n");
    for it in &solution.log {
        text.push_str(&format!(
            "{},{},{},{}\n",
            it.iteration, it.objective, it.constraint_residual, it.step_size
        ));
    }
    write_file(&out.join(PIPS_LOG_FILE), text.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrainReport {
    pub config_hash: String,
    pub master_seed: u64,
    pub width: NetworkWidth,
    pub test_accuracy: f64,
    pub flops: f64,
    pub params: usize,
}

/// Retrain a fixed width from scratch and report its test accuracy, FLOPs
/// and parameter count.
pub fn cmd_retrain(config: &RunConfig, out: &Path, width_path: Option<&Path>) -> Result<()> {
    fs::create_dir_all(out)?;
    let default_path = out.join(BEST_WIDTH_FILE);
    let path = width_path.unwrap_or(&default_path);
    let width: NetworkWidth = read_json(path)?;
    config
        .space
        .validate_width(&width)
        .with_context(|| format!("width from {}", path.display()))?;
    let dataset = dataset_for(config)?;
    let table = FlopsTable::build(&config.space);
    let train_config = config.train.to_core(derive_seed(config.seed, "retrain"));
    let outcome = retrain_from_scratch(&config.space, &width, &dataset, &train_config)?;
    write_json(
        &out.join(RETRAIN_REPORT_FILE),
        &RetrainReport {
            config_hash: config.hash(),
            master_seed: config.seed,
            flops: table.flops_of(&width),
            params: outcome.weights.param_count(),
            width,
            test_accuracy: outcome.test_accuracy,
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FairnessReport {
    config_hash: String,
    master_seed: u64,
    unclamped_pairs: u64,
    clamped_pairs: u64,
    per_layer_spread: Vec<u64>,
    unclamped_pair_spread: Vec<u64>,
    /// True when unclamped complementary pairs trained every channel of
    /// every layer the same number of times.
    pairwise_fair: bool,
}

#[derive(Debug, Serialize)]
struct RankFidelityEntry {
    width: NetworkWidth,
    estimated_accuracy: f64,
    retrained_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct RankFidelityReport {
    config_hash: String,
    master_seed: u64,
    principle: Principle,
    kendall_tau: f64,
    widths: Vec<RankFidelityEntry>,
}

/// Audit the space and the trained artifacts: cardinality tables, the
/// complementary-fairness tally, exhaustive rank fidelity against retrained
/// ground truth, and prior-versus-random initial population fitness.
pub fn cmd_analyze(config: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let space = &config.space;

    // Cardinality tables come from oracle enumeration, one block per layer.
    let mut cardinality = provenance_comment(config);
    cardinality.push_str("layer,max_channels,channel,unilateral,bilateral\n");
    for (layer, spec) in space.layers().iter().enumerate() {
        let ua = enumerate_cardinalities(spec.max_channels, Principle::Unilateral);
        let bc = enumerate_cardinalities(spec.max_channels, Principle::Bilateral);
        for c in 0..spec.max_channels {
            cardinality.push_str(&format!(
                "{},{},{},{},{}\n",
                layer,
                spec.max_channels,
                c + 1,
                ua[c],
                bc[c]
            ));
        }
    }
    write_file(&out.join(CARDINALITY_FILE), cardinality.as_bytes())?;

    // Fairness audit over the training counters.
    let counters: CountersArtifact = read_json(&out.join(COUNTERS_FILE))?;
    let pairwise_fair = counters.counters.pair_spread().iter().all(|&s| s == 0);
    write_json(
        &out.join(FAIRNESS_FILE),
        &FairnessReport {
            config_hash: config.hash(),
            master_seed: config.seed,
            unclamped_pairs: counters.counters.unclamped_pairs(),
            clamped_pairs: counters.counters.clamped_pairs(),
            per_layer_spread: counters.counters.per_layer_spread(),
            unclamped_pair_spread: counters.counters.pair_spread(),
            pairwise_fair,
        },
    )?;

    // Exhaustive modes refuse oversized spaces outright.
    let size = space.size();
    match size.exact() {
        Some(n) if n <= ANALYZE_EXHAUSTIVE_LIMIT => {}
        _ => bail!(
            "space holds {} widths; exhaustive analysis refuses anything above {}",
            size,
            ANALYZE_EXHAUSTIVE_LIMIT
        ),
    }

    let (space_from_weights, weights) = load_trained(config, out)?;
    let dataset = dataset_for(config)?;
    let valset = dataset.split_batch(Split::Val);

    // Rank fidelity: supernet estimates versus from-scratch ground truth
    // over the whole space.
    let ground_config = config
        .train
        .to_core(derive_seed(config.seed, "analyze/groundtruth"));
    let mut entries = Vec::new();
    for width in space_from_weights.enumerate_widths() {
        let estimated = evaluate_width_by(&weights, &width, &valset, config.principle)?;
        let retrained = retrain_from_scratch(&space_from_weights, &width, &dataset, &ground_config)?
            .test_accuracy;
        entries.push(RankFidelityEntry {
            width,
            estimated_accuracy: estimated,
            retrained_accuracy: retrained,
        });
    }
    let estimates: Vec<f64> = entries.iter().map(|e| e.estimated_accuracy).collect();
    let truths: Vec<f64> = entries.iter().map(|e| e.retrained_accuracy).collect();
    let tau = kendall_tau(&estimates, &truths)?;
    write_json(
        &out.join(RANK_FIDELITY_FILE),
        &RankFidelityReport {
            config_hash: config.hash(),
            master_seed: config.seed,
            principle: config.principle,
            kendall_tau: tau,
            widths: entries,
        },
    )?;

    // Prior-versus-random initial population fitness histogram data.
    let table = FlopsTable::build(space);
    let budget = config.flops_budget.resolve(space, &table)?;
    let ledger = load_ledger(out)?;
    let errors = potential_errors(&ledger, space)?;
    let pips_config = config.pips.to_core(derive_seed(config.seed, "pips/solve"));
    let solution = optimize_distribution(&errors, &table, budget, &pips_config)?;
    let (prior_pop, _) = initial_population(
        &solution.distribution,
        space,
        &table,
        budget,
        config.evo.population_size,
        config.evo.rejection_limit,
        derive_seed(config.seed, "population/prior"),
    )?;
    let uniform = SamplingDistribution::uniform(space);
    let (random_pop, _) = initial_population(
        &uniform,
        space,
        &table,
        budget,
        config.evo.population_size,
        config.evo.rejection_limit,
        derive_seed(config.seed, "population/random"),
    )?;
    let mut hist = provenance_comment(config);
    hist.push_str("series,accuracy\n");
    for (name, pop) in [("prior", &prior_pop), ("random", &random_pop)] {
        for ind in &pop.individuals {
            let width = ind.width(space)?;
            let acc = evaluate_width(&weights, &width, &valset)?;
            hist.push_str(&format!("{name},{acc}\n"));
        }
    }
    write_file(&out.join(POPULATION_HIST_FILE), hist.as_bytes())?;
    Ok(())
}

/// Render the analysis artifacts as self-contained SVG documents.
pub fn cmd_plot(config: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;

    // Population fitness histogram.
    let hist_path = out.join(POPULATION_HIST_FILE);
    let text = fs::read_to_string(&hist_path)
        .with_context(|| format!("reading {}", hist_path.display()))?;
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("series,") || line.trim().is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(',')
            .with_context(|| format!("{}: malformed row {}", hist_path.display(), line_no + 1))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("{}: bad value on row {}", hist_path.display(), line_no + 1))?;
        match series.iter_mut().find(|(n, _)| n == name) {
            Some((_, values)) => values.push(value),
            None => series.push((name.to_string(), vec![value])),
        }
    }
    let histogram = svg::histogram(
        "Initial population fitness",
        "bilateral supernet accuracy",
        &series,
        12,
    )?;
    write_file(&out.join(HISTOGRAM_SVG_FILE), histogram.as_bytes())?;

    // Retained width ratios of the searched best width.
    let width: NetworkWidth = read_json(&out.join(BEST_WIDTH_FILE))?;
    config.space.validate_width(&width)?;
    let ratios: Vec<f64> = width
        .channels()
        .iter()
        .zip(config.space.layers())
        .map(|(&c, spec)| c as f64 / spec.max_channels as f64)
        .collect();
    let chart = svg::width_ratio_chart("Retained width per layer", &ratios)?;
    write_file(&out.join(WIDTH_RATIO_SVG_FILE), chart.as_bytes())?;
    Ok(())
}

/// The uniform baseline width for the configured budget; used by retrain
/// comparisons and tests.
pub fn uniform_baseline(config: &RunConfig) -> Result<NetworkWidth> {
    let table = FlopsTable::build(&config.space);
    let budget = config.flops_budget.resolve(&config.space, &table)?;
    Ok(uniform_scale_width(&config.space, &table, budget)?)
}

/// Greedy single-decrement baseline against the trained supernet.
pub fn greedy_baseline(config: &RunConfig, out: &Path) -> Result<Individual> {
    let (space, weights) = load_trained(config, out)?;
    let dataset = dataset_for(config)?;
    let table = FlopsTable::build(&space);
    let budget = config.flops_budget.resolve(&space, &table)?;
    let valset = dataset.split_batch(Split::Val);
    let mut evaluator = SupernetEvaluator { weights: &weights, valset };
    Ok(greedy_search(&mut evaluator, &space, &table, budget)?)
}
