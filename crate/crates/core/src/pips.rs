//! Prior initial population sampling.
//!
//! The loss ledger collected during supernet training is condensed into a
//! potential-error matrix: for each layer and width option, the mean training
//! loss of the recorded widths that used it. Per-layer categorical sampling
//! distributions are then optimized to minimize the expected potential error
//! subject to per-layer simplex constraints and a quadratic bound on the
//! expected FLOPs of a sampled width. The solver is a projected-gradient
//! penalty method: the expected-FLOPs overshoot enters as a squared penalty
//! whose weight grows until the constraint holds, and each step projects the
//! per-layer blocks back onto the probability simplex.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::{Individual, Population};
use crate::flops::{repair_to_budget, FlopsTable};
use crate::rng::rng_from;
use crate::space::{NetworkWidth, WidthSpace};
use crate::supernet::LossLedger;

/// Mean ledger loss per `(layer, width option)` cell, with visit counts.
/// Cells never visited by a ledger width carry the matrix-wide maximum
/// observed value, so unexplored options are never preferred by default.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialErrorMatrix {
    values: Vec<Vec<f64>>,
    visits: Vec<Vec<u64>>,
}

impl PotentialErrorMatrix {
    pub fn layer_count(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, layer: usize, option: usize) -> f64 {
        self.values[layer][option]
    }

    pub fn visits(&self, layer: usize, option: usize) -> u64 {
        self.visits[layer][option]
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.values[layer]
    }

    /// Build a matrix directly from per-cell values (solver tests and
    /// synthetic instances); all visit counts are set to 1.
    pub fn from_values(values: Vec<Vec<f64>>) -> Self {
        let visits = values.iter().map(|row| vec![1; row.len()]).collect();
        Self { values, visits }
    }
}

/// Average the ledger losses per `(layer, option)` cell.
pub fn potential_errors(ledger: &LossLedger, space: &WidthSpace) -> Result<PotentialErrorMatrix> {
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let l = space.layer_count();
    let k = space.group_count();
    let mut sums = vec![vec![0.0f64; k]; l];
    let mut visits = vec![vec![0u64; k]; l];
    for entry in ledger.entries() {
        space.validate_width(&entry.width)?;
        for (layer, &g) in space.groups_of(&entry.width).iter().enumerate() {
            sums[layer][g - 1] += entry.loss;
            visits[layer][g - 1] += 1;
        }
    }
    let mut values = vec![vec![0.0f64; k]; l];
    let mut max_observed = f64::NEG_INFINITY;
    for layer in 0..l {
        for opt in 0..k {
            if visits[layer][opt] > 0 {
                let v = sums[layer][opt] / visits[layer][opt] as f64;
                values[layer][opt] = v;
                max_observed = max_observed.max(v);
            }
        }
    }
    for layer in 0..l {
        for opt in 0..k {
            if visits[layer][opt] == 0 {
                values[layer][opt] = max_observed;
            }
        }
    }
    Ok(PotentialErrorMatrix { values, visits })
}

/// Per-layer categorical distributions over the width options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    layers: Vec<Vec<f64>>,
}

impl SamplingDistribution {
    pub fn new(layers: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in layers.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidConfig {
                    reason: format!("distribution layer {i} has no options"),
                });
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidConfig {
                    reason: format!("distribution layer {i} has negative or non-finite mass"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig {
                    reason: format!("distribution layer {i} sums to {sum}"),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn uniform(space: &WidthSpace) -> Self {
        let k = space.group_count();
        Self {
            layers: vec![vec![1.0 / k as f64; k]; space.layer_count()],
        }
    }

    /// All mass on one width.
    pub fn point_mass(space: &WidthSpace, width: &NetworkWidth) -> Result<Self> {
        space.validate_width(width)?;
        let k = space.group_count();
        let mut layers = vec![vec![0.0; k]; space.layer_count()];
        for (i, &g) in space.groups_of(width).iter().enumerate() {
            layers[i][g - 1] = 1.0;
        }
        Ok(Self { layers })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    /// Worst per-layer deviation from the simplex: negative mass or a sum
    /// away from one.
    pub fn simplex_residual(&self) -> f64 {
        self.layers
            .iter()
            .map(|row| {
                let neg = row.iter().fold(0.0f64, |a, &p| a.max(-p));
                let sum: f64 = row.iter().sum();
                neg.max((sum - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Draw one width, one independent categorical draw per layer.
    pub fn sample(&self, space: &WidthSpace, seed: u64) -> NetworkWidth {
        let mut rng = rng_from(seed);
        self.sample_with(space, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, space: &WidthSpace, rng: &mut R) -> NetworkWidth {
        let groups: Vec<usize> = self
            .layers
            .iter()
            .map(|row| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (idx, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return idx + 1;
                    }
                }
                row.len()
            })
            .collect();
        space
            .width_from_groups(&groups)
            .expect("distribution layers match the space")
    }

    fn uniform_like(errors: &PotentialErrorMatrix) -> Self {
        Self {
            layers: (0..errors.layer_count())
                .map(|l| {
                    let k = errors.row(l).len();
                    vec![1.0 / k as f64; k]
                })
                .collect(),
        }
    }
}

/// Expected FLOPs of a width drawn from `dist`, treating layers as
/// independent and the input/output endpoints as point masses.
pub fn expected_flops(dist: &SamplingDistribution, table: &FlopsTable) -> f64 {
    let l = table.layer_count();
    let mut total = 0.0;
    for b in 0..=l {
        let in_probs: &[f64] = if b == 0 { &[1.0] } else { dist.layer(b - 1) };
        let out_probs: &[f64] = if b == l { &[1.0] } else { dist.layer(b) };
        for (i, &pi) in in_probs.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (j, &pj) in out_probs.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                total += pi * table.entry_by_index(b, i, j) * pj;
            }
        }
    }
    total
}

/// Euclidean projection onto the probability simplex via the sorted
/// threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    debug_assert!(!v.is_empty());
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        }
    }
    v.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

/// Solver hyperparameters for [`optimize_distribution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipsConfig {
    pub max_iterations: usize,
    pub step_size: f64,
    pub penalty_weight: f64,
    pub penalty_growth: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PipsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            step_size: 0.1,
            penalty_weight: 10.0,
            penalty_growth: 10.0,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

impl PipsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.step_size > 0.0)
            || !(self.penalty_weight > 0.0)
            || !(self.penalty_growth > 1.0)
            || !(self.tolerance > 0.0)
        {
            return Err(Error::InvalidConfig {
                reason: "pips solver parameters must be positive (growth > 1)".into(),
            });
        }
        Ok(())
    }
}

/// One logged solver iterate.
#[derive(Debug, Clone, Serialize)]
pub struct PipsIterate {
    pub iteration: usize,
    pub objective: f64,
    pub constraint_residual: f64,
    pub step_size: f64,
}

/// Solver output: the optimized distribution plus the reported objective,
/// constraint residual and iteration log.
#[derive(Debug, Clone)]
pub struct PipsSolution {
    pub distribution: SamplingDistribution,
    pub objective: f64,
    /// `max(0, expected_flops - budget)`.
    pub constraint_residual: f64,
    pub iterations: usize,
    pub log: Vec<PipsIterate>,
}

/// Relative expected-FLOPs overshoot the solver drives the iterate under.
pub const FLOPS_RESIDUAL_TOL: f64 = 1e-6;

struct PenaltyProblem<'a> {
    errors: Vec<Vec<f64>>,
    table: &'a FlopsTable,
    budget: f64,
}

impl PenaltyProblem<'_> {
    fn objective(&self, p: &[Vec<f64>]) -> f64 {
        self.errors
            .iter()
            .zip(p)
            .map(|(row, probs)| row.iter().zip(probs).map(|(e, q)| e * q).sum::<f64>())
            .sum()
    }

    /// Relative constraint value `(expected_flops - budget) / budget`.
    fn violation(&self, p: &[Vec<f64>]) -> f64 {
        let dist = SamplingDistribution { layers: p.to_vec() };
        (expected_flops(&dist, self.table) - self.budget) / self.budget
    }

    fn penalized(&self, p: &[Vec<f64>], mu: f64) -> f64 {
        let g = self.violation(p).max(0.0);
        self.objective(p) + mu * g * g
    }

    /// Gradient of the penalized objective with respect to every `P(l, i)`.
    fn gradient(&self, p: &[Vec<f64>], mu: f64) -> Vec<Vec<f64>> {
        let l = self.table.layer_count();
        let g = self.violation(p).max(0.0);
        let mut grad: Vec<Vec<f64>> = self.errors.clone();
        if g > 0.0 {
            let scale = 2.0 * mu * g / self.budget;
            for layer in 0..l {
                let k = p[layer].len();
                for opt in 0..k {
                    let mut d = 0.0;
                    // Boundary into this layer.
                    let in_probs: &[f64] = if layer == 0 { &[1.0] } else { &p[layer - 1] };
                    for (i, &pi) in in_probs.iter().enumerate() {
                        d += pi * self.table.entry_by_index(layer, i, opt);
                    }
                    // Boundary out of this layer.
                    let out_probs: &[f64] = if layer + 1 == l { &[1.0] } else { &p[layer + 1] };
                    for (j, &pj) in out_probs.iter().enumerate() {
                        d += self.table.entry_by_index(layer + 1, opt, j) * pj;
                    }
                    grad[layer][opt] += scale * d;
                }
            }
        }
        grad
    }
}

/// Minimize the expected potential error over per-layer simplex blocks
/// subject to `expected_flops <= budget`, by projected gradient descent on a
/// growing quadratic penalty. Potential errors are normalized internally so
/// the step size is scale-free; the reported objective is in original units.
pub fn optimize_distribution(
    errors: &PotentialErrorMatrix,
    table: &FlopsTable,
    budget: f64,
    config: &PipsConfig,
) -> Result<PipsSolution> {
    config.validate()?;
    if errors.layer_count() != table.layer_count() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "error matrix has {} layers, table has {}",
                errors.layer_count(),
                table.layer_count()
            ),
        });
    }
    // Feasibility floor: all mass on the smallest option of every layer.
    let min_mass: Vec<Vec<f64>> = (0..errors.layer_count())
        .map(|l| {
            let mut row = vec![0.0; errors.row(l).len()];
            row[0] = 1.0;
            row
        })
        .collect();
    let floor = expected_flops(&SamplingDistribution { layers: min_mass }, table);
    if budget < floor {
        return Err(Error::InfeasibleBudget { budget, minimum: floor });
    }

    // Normalize the error matrix; per-layer shifts and a global positive
    // scale do not move the argmin over simplex blocks.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in 0..errors.layer_count() {
        for &v in errors.row(l) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let normalized: Vec<Vec<f64>> = (0..errors.layer_count())
        .map(|l| errors.row(l).iter().map(|&v| (v - lo) / scale).collect())
        .collect();

    let problem = PenaltyProblem { errors: normalized, table, budget };
    let mut p = SamplingDistribution::uniform_like(errors).layers;
    let mut mu = config.penalty_weight;
    let mut step = config.step_size;
    let mut log = Vec::new();
    let mut iterations = 0usize;

    let record = |log: &mut Vec<PipsIterate>, iter: usize, p: &[Vec<f64>], step: f64| {
        log.push(PipsIterate {
            iteration: iter,
            objective: problem.objective(p),
            constraint_residual: problem.violation(p).max(0.0),
            step_size: step,
        });
    };
    record(&mut log, 0, &p, step);

    while iterations < config.max_iterations {
        // Inner loop: projected gradient with backtracking at the current mu.
        let mut converged = false;
        while iterations < config.max_iterations {
            iterations += 1;
            let value = problem.penalized(&p, mu);
            let grad = problem.gradient(&p, mu);
            let mut t = step;
            let mut accepted: Option<Vec<Vec<f64>>> = None;
            while t > 1e-14 {
                let candidate: Vec<Vec<f64>> = p
                    .iter()
                    .zip(&grad)
                    .map(|(row, g)| {
                        let shifted: Vec<f64> =
                            row.iter().zip(g).map(|(x, d)| x - t * d).collect();
                        project_simplex(&shifted)
                    })
                    .collect();
                if problem.penalized(&candidate, mu) <= value {
                    accepted = Some(candidate);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                None => {
                    converged = true;
                    break;
                }
                Some(candidate) => {
                    let delta = p
                        .iter()
                        .zip(&candidate)
                        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                        .fold(0.0f64, f64::max);
                    p = candidate;
                    step = (t * 2.0).min(config.step_size);
                    if delta < config.tolerance {
                        converged = true;
                        break;
                    }
                }
            }
        }
        record(&mut log, iterations, &p, step);

        let residual = problem.violation(&p).max(0.0);
        if converged && residual <= FLOPS_RESIDUAL_TOL {
            return Ok(PipsSolution {
                objective: raw_objective(errors, &p),
                constraint_residual: residual * budget,
                distribution: SamplingDistribution { layers: p },
                iterations,
                log,
            });
        }
        if converged {
            mu *= config.penalty_growth;
            step = config.step_size;
        }
    }

    let residual = problem.violation(&p).max(0.0);
    let objective = raw_objective(errors, &p);
    Err(Error::SolverStalled {
        iterations,
        objective,
        residual: residual * budget,
        best: Box::new(SamplingDistribution { layers: p }),
    })
}

fn raw_objective(errors: &PotentialErrorMatrix, p: &[Vec<f64>]) -> f64 {
    (0..errors.layer_count())
        .map(|l| errors.row(l).iter().zip(&p[l]).map(|(e, q)| e * q).sum::<f64>())
        .sum()
}

/// How an initial population was assembled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationStats {
    pub samples_drawn: usize,
    pub rejections: usize,
    pub repairs: usize,
    /// Set when distinct feasible widths ran out and duplicates were allowed.
    pub dedup_relaxed: bool,
}

/// Sample `population_size` widths from `dist`, rejecting and eventually
/// repairing any draw over the hard FLOPs budget, deduplicating by
/// resampling. When distinct feasible widths run out, deduplication is
/// relaxed and flagged.
pub fn initial_population(
    dist: &SamplingDistribution,
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
    population_size: usize,
    rejection_limit: usize,
    seed: u64,
) -> Result<(Population, PopulationStats)> {
    if population_size == 0 {
        return Err(Error::InvalidConfig {
            reason: "population_size must be at least 1".into(),
        });
    }
    let min_flops = table.flops_of(&space.min_width());
    if budget < min_flops {
        return Err(Error::InfeasibleBudget { budget, minimum: min_flops });
    }
    let mut rng = rng_from(seed);
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut individuals = Vec::with_capacity(population_size);
    let mut stats = PopulationStats {
        samples_drawn: 0,
        rejections: 0,
        repairs: 0,
        dedup_relaxed: false,
    };
    for _ in 0..population_size {
        let mut feasibility_attempts = 0usize;
        let mut dedup_attempts = 0usize;
        loop {
            let mut width = dist.sample_with(space, &mut rng);
            stats.samples_drawn += 1;
            if table.flops_of(&width) > budget {
                stats.rejections += 1;
                feasibility_attempts += 1;
                if feasibility_attempts <= rejection_limit {
                    continue;
                }
                let (repaired, _) = repair_to_budget(space, table, budget, &width)?;
                stats.repairs += 1;
                width = repaired;
            }
            let genome = space.groups_of(&width);
            if seen.insert(genome.clone()) {
                individuals.push(Individual::new(genome));
                break;
            }
            dedup_attempts += 1;
            if dedup_attempts > rejection_limit {
                stats.dedup_relaxed = true;
                individuals.push(Individual::new(genome));
                break;
            }
        }
    }
    Ok((Population { individuals, generation: 0 }, stats))
}
