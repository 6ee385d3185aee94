//! Run configuration: one JSON document drives every command.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use bcwidth::dataset::Dataset;
use bcwidth::evo::EvoConfig;
use bcwidth::flops::FlopsTable;
use bcwidth::pips::PipsConfig;
use bcwidth::space::WidthSpace;
use bcwidth::supernet::{LrSchedule, Principle, TrainConfig, TrainStrategy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetConfig {
    Synth {
        num_classes: usize,
        input_dim: usize,
        n_per_class: usize,
        cluster_spread: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub ledger_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            learning_rate: 0.08,
            schedule: LrSchedule::Cosine,
            weight_decay: 1e-4,
            ledger_size: 100,
        }
    }
}

impl TrainSettings {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            schedule: self.schedule,
            weight_decay: self.weight_decay,
            seed,
            ledger_size: self.ledger_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipsSettings {
    pub max_iterations: usize,
    pub step_size: f64,
    pub penalty_weight: f64,
    pub penalty_growth: f64,
    pub tolerance: f64,
}

impl Default for PipsSettings {
    fn default() -> Self {
        let d = PipsConfig::default();
        Self {
            max_iterations: d.max_iterations,
            step_size: d.step_size,
            penalty_weight: d.penalty_weight,
            penalty_growth: d.penalty_growth,
            tolerance: d.tolerance,
        }
    }
}

impl PipsSettings {
    pub fn to_core(&self, seed: u64) -> PipsConfig {
        PipsConfig {
            max_iterations: self.max_iterations,
            step_size: self.step_size,
            penalty_weight: self.penalty_weight,
            penalty_growth: self.penalty_growth,
            tolerance: self.tolerance,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoSettings {
    pub population_size: usize,
    pub generations: usize,
    pub parents_kept: usize,
    pub mutation_eta: f64,
    pub mutation_prob: Option<f64>,
    pub tournament_size: usize,
    /// Resample attempts before a draw is repaired or deduplication relaxes.
    pub rejection_limit: usize,
}

impl Default for EvoSettings {
    fn default() -> Self {
        let d = EvoConfig::default();
        Self {
            population_size: d.population_size,
            generations: d.generations,
            parents_kept: d.parents_kept,
            mutation_eta: d.mutation_eta,
            mutation_prob: d.mutation_prob,
            tournament_size: d.tournament_size,
            rejection_limit: 100,
        }
    }
}

impl EvoSettings {
    pub fn to_core(&self, seed: u64) -> EvoConfig {
        EvoConfig {
            population_size: self.population_size,
            generations: self.generations,
            parents_kept: self.parents_kept,
            mutation_eta: self.mutation_eta,
            mutation_prob: self.mutation_prob,
            tournament_size: self.tournament_size,
            seed,
        }
    }
}

/// A FLOPs budget, absolute or as a fraction of the full-width cost.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetSpec {
    Fraction(f64),
    Absolute(f64),
}

impl BudgetSpec {
    pub fn resolve(&self, space: &WidthSpace, table: &FlopsTable) -> Result<f64> {
        let budget = match *self {
            BudgetSpec::Absolute(v) => v,
            BudgetSpec::Fraction(f) => {
                anyhow::ensure!(f > 0.0, "budget fraction must be positive, got {f}");
                f * table.flops_of(&space.full_width())
            }
        };
        anyhow::ensure!(
            budget.is_finite() && budget > 0.0,
            "resolved budget {budget} is not a positive number"
        );
        Ok(budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPopulation {
    Prior,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub space: WidthSpace,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub pips: PipsSettings,
    #[serde(default)]
    pub evo: EvoSettings,
    pub flops_budget: BudgetSpec,
    pub principle: Principle,
    pub strategy: TrainStrategy,
    pub init_population: InitPopulation,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Stable hash of the effective configuration, embedded in every report
    /// for provenance.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", bcwidth::rng::fnv1a(canonical.as_bytes()))
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Synth {
                num_classes,
                input_dim,
                n_per_class,
                cluster_spread,
                seed,
            } => Ok(Dataset::synth(
                *num_classes,
                *input_dim,
                *n_per_class,
                *cluster_spread,
                *seed,
            )?),
            DatasetConfig::Csv { path } => Ok(Dataset::from_csv_file(path)?),
        }
    }
}
