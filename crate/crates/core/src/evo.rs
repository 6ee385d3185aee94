//! Budget-constrained multi-objective evolutionary width search.
//!
//! Individuals are group-index genomes scored by bilateral supernet accuracy
//! and FLOPs. Selection follows constrained nondominated sorting: feasible
//! individuals dominate infeasible ones, smaller budget violations dominate
//! larger ones, and feasible individuals compete on (maximize accuracy,
//! minimize FLOPs) Pareto domination with crowding-distance tie-breaks.
//! Offspring come from two-point crossover and polynomial mutation, repaired
//! to the hard budget by the same largest-marginal-FLOPs decrement rule used
//! for initial populations.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::flops::{repair_to_budget, FlopsTable};
use crate::rng::rng_from;
use crate::space::{NetworkWidth, WidthSpace};
use crate::supernet::{evaluate_width, SupernetWeights};

/// Group-index genome, one entry per layer, each in `[1, K]`.
pub type Genome = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub accuracy: f64,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Option<Fitness>,
    pub feasible: bool,
    /// `max(0, flops - budget)`.
    pub violation: f64,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Self {
            genome,
            fitness: None,
            feasible: false,
            violation: 0.0,
        }
    }

    pub fn width(&self, space: &WidthSpace) -> Result<NetworkWidth> {
        space.width_from_groups(&self.genome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub generation: usize,
}

/// Evolutionary search hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub parents_kept: usize,
    /// Polynomial-mutation distribution index.
    pub mutation_eta: f64,
    /// Per-gene mutation probability; `None` means `1 / L`.
    pub mutation_prob: Option<f64>,
    pub tournament_size: usize,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population_size: 40,
            generations: 50,
            parents_kept: 10,
            mutation_eta: 20.0,
            mutation_prob: None,
            tournament_size: 2,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.generations == 0 || self.tournament_size == 0 {
            return Err(Error::InvalidConfig {
                reason: "population_size, generations and tournament_size must be positive".into(),
            });
        }
        if self.parents_kept == 0 || self.parents_kept > self.population_size {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "parents_kept {} must be in [1, population_size {}]",
                    self.parents_kept, self.population_size
                ),
            });
        }
        if !(self.mutation_eta > 0.0) {
            return Err(Error::InvalidConfig {
                reason: "mutation_eta must be positive".into(),
            });
        }
        if let Some(p) = self.mutation_prob {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig {
                    reason: format!("mutation_prob {p} must be in (0, 1]"),
                });
            }
        }
        Ok(())
    }

    fn gene_mutation_prob(&self, genome_len: usize) -> f64 {
        self.mutation_prob
            .unwrap_or_else(|| 1.0 / genome_len.max(1) as f64)
    }
}

/// Constrained domination: feasible beats infeasible, less violation beats
/// more, and between feasible individuals Pareto domination on
/// (max accuracy, min flops).
fn dominates(a: &Individual, b: &Individual) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => {
            let (fa, fb) = (
                a.fitness.expect("fitness set before sorting"),
                b.fitness.expect("fitness set before sorting"),
            );
            let no_worse = fa.accuracy >= fb.accuracy && fa.flops <= fb.flops;
            let better = fa.accuracy > fb.accuracy || fa.flops < fb.flops;
            no_worse && better
        }
    }
}

/// Fast nondominated sort into fronts of indices, best front first.
pub fn nondominated_sort(pop: &Population) -> Result<Vec<Vec<usize>>> {
    let n = pop.individuals.len();
    for (i, ind) in pop.individuals.iter().enumerate() {
        if ind.fitness.is_none() {
            return Err(Error::FitnessUnset { index: i });
        }
    }
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&pop.individuals[i], &pop.individuals[j]) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates(&pop.individuals[j], &pop.individuals[i]) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::take(&mut current));
        current = next;
    }
    Ok(fronts)
}

/// Crowding distance of one front: boundary individuals on each objective get
/// infinity, interior ones accumulate normalized neighbor gaps.
pub fn crowding_distance(front: &[Fitness]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0f64; n];
    if n == 0 {
        return distance;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for objective in 0..2 {
        let value = |f: &Fitness| if objective == 0 { f.accuracy } else { f.flops };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            value(&front[a])
                .partial_cmp(&value(&front[b]))
                .expect("finite objectives")
                .then(a.cmp(&b))
        });
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let span = value(&front[order[n - 1]]) - value(&front[order[0]]);
        if span <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let gap = value(&front[order[w + 1]]) - value(&front[order[w - 1]]);
            distance[order[w]] += gap / span;
        }
    }
    distance
}

/// Rank (front index) and crowding distance per individual.
pub fn rank_and_crowd(pop: &Population) -> Result<(Vec<usize>, Vec<f64>)> {
    let fronts = nondominated_sort(pop)?;
    let n = pop.individuals.len();
    let mut rank = vec![0usize; n];
    let mut crowding = vec![0.0f64; n];
    for (front_idx, front) in fronts.iter().enumerate() {
        let fits: Vec<Fitness> = front
            .iter()
            .map(|&i| pop.individuals[i].fitness.expect("checked by sort"))
            .collect();
        let dist = crowding_distance(&fits);
        for (slot, &i) in front.iter().enumerate() {
            rank[i] = front_idx;
            crowding[i] = dist[slot];
        }
    }
    Ok((rank, crowding))
}

fn better_by_rank(rank: &[usize], crowding: &[f64], a: usize, b: usize) -> usize {
    if rank[a] != rank[b] {
        return if rank[a] < rank[b] { a } else { b };
    }
    if crowding[a] != crowding[b] {
        return if crowding[a] > crowding[b] { a } else { b };
    }
    a.min(b)
}

/// Repeated tournaments on (rank, crowding) until `parents_kept` distinct
/// winners are collected. Falls back to rank order if the draws stall.
pub fn tournament_select(
    pop: &Population,
    rank: &[usize],
    crowding: &[f64],
    config: &EvoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = pop.individuals.len();
    if n < config.parents_kept {
        return Err(Error::PopulationTooSmall { len: n, wanted: config.parents_kept });
    }
    let mut winners: Vec<usize> = Vec::with_capacity(config.parents_kept);
    let mut chosen = vec![false; n];
    let mut stalls = 0usize;
    let stall_limit = 50 * config.parents_kept.max(1);
    while winners.len() < config.parents_kept {
        let mut best = rng.random_range(0..n);
        for _ in 1..config.tournament_size {
            let challenger = rng.random_range(0..n);
            best = better_by_rank(rank, crowding, best, challenger);
        }
        if !chosen[best] {
            chosen[best] = true;
            winners.push(best);
        } else {
            stalls += 1;
            if stalls > stall_limit {
                // Deterministic fill from the global rank order.
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    rank[a]
                        .cmp(&rank[b])
                        .then(crowding[b].partial_cmp(&crowding[a]).expect("finite"))
                        .then(a.cmp(&b))
                });
                for i in order {
                    if winners.len() == config.parents_kept {
                        break;
                    }
                    if !chosen[i] {
                        chosen[i] = true;
                        winners.push(i);
                    }
                }
            }
        }
    }
    Ok(winners)
}

/// Two-point crossover at explicit cut points `1 <= p < q <= L`: the genes
/// strictly after position `p` up to position `q` swap.
pub fn two_point_crossover_at(a: &Genome, b: &Genome, p: usize, q: usize) -> (Genome, Genome) {
    debug_assert!(p >= 1 && p < q && q <= a.len());
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    for i in p..q {
        std::mem::swap(&mut c1[i], &mut c2[i]);
    }
    (c1, c2)
}

/// Two-point crossover with cut points drawn uniformly over all pairs.
/// Genomes shorter than two genes pass through unchanged, flagged `false`.
pub fn two_point_crossover(
    a: &Genome,
    b: &Genome,
    rng: &mut ChaCha8Rng,
) -> (Genome, Genome, bool) {
    debug_assert_eq!(a.len(), b.len());
    let l = a.len();
    if l < 2 {
        return (a.clone(), b.clone(), false);
    }
    let p = rng.random_range(1..=l);
    let q = loop {
        let q = rng.random_range(1..=l);
        if q != p {
            break q;
        }
    };
    let (p, q) = (p.min(q), p.max(q));
    let (c1, c2) = two_point_crossover_at(a, b, p, q);
    (c1, c2, true)
}

/// Polynomial mutation on the continuous relaxation `[1, K]`: each gene
/// mutates independently with probability `prob`, is perturbed by the
/// bounded polynomial rule with distribution index `eta`, then rounded to the
/// nearest integer and clamped.
pub fn polynomial_mutation(
    genome: &Genome,
    eta: f64,
    prob: f64,
    group_count: usize,
    rng: &mut ChaCha8Rng,
) -> Genome {
    let lo = 1.0;
    let hi = group_count as f64;
    genome
        .iter()
        .map(|&g| {
            let gate: f64 = rng.random();
            if gate >= prob || group_count <= 1 {
                return g;
            }
            let x = g as f64;
            let span = hi - lo;
            let d1 = (x - lo) / span;
            let d2 = (hi - x) / span;
            let u: f64 = rng.random();
            let pow = 1.0 / (eta + 1.0);
            let delta = if u <= 0.5 {
                let bl = 1.0 - d1;
                (2.0 * u + (1.0 - 2.0 * u) * bl.powf(eta + 1.0)).powf(pow) - 1.0
            } else {
                let bu = 1.0 - d2;
                1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * bu.powf(eta + 1.0)).powf(pow)
            };
            let mutated = (x + delta * span).clamp(lo, hi);
            (mutated.round() as usize).clamp(1, group_count)
        })
        .collect()
}

/// One evaluated candidate in the search history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub generation: usize,
    pub genome: Genome,
    pub accuracy: f64,
    pub flops: f64,
    pub feasible: bool,
}

/// Everything the search evaluated, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub records: Vec<SearchRecord>,
}

impl SearchLog {
    /// CSV rows: generation, semicolon-joined group indices, accuracy,
    /// flops, feasible.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "generation,genome,estimated_accuracy,flops,feasible")?;
        for r in &self.records {
            let genome = r
                .genome
                .iter()
                .map(|g| g.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(w, "{},{},{},{},{}", r.generation, genome, r.accuracy, r.flops, r.feasible)?;
        }
        Ok(())
    }
}

/// Search result: the best feasible individual of the final generation plus
/// the full evaluation history.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Individual,
    pub history: SearchLog,
    /// Distinct genomes evaluated through the supernet.
    pub evaluations: usize,
}

/// A fitness evaluator for genomes; the production path wraps bilateral
/// supernet evaluation, tests substitute synthetic functions.
pub trait WidthEvaluator {
    fn accuracy(&mut self, width: &NetworkWidth) -> Result<f64>;
}

/// Bilateral supernet evaluation against a frozen weight snapshot.
pub struct SupernetEvaluator<'a> {
    pub weights: &'a SupernetWeights,
    pub valset: Batch<'a>,
}

impl WidthEvaluator for SupernetEvaluator<'_> {
    fn accuracy(&mut self, width: &NetworkWidth) -> Result<f64> {
        evaluate_width(self.weights, width, &self.valset)
    }
}

impl<F> WidthEvaluator for F
where
    F: FnMut(&NetworkWidth) -> f64,
{
    fn accuracy(&mut self, width: &NetworkWidth) -> Result<f64> {
        Ok(self(width))
    }
}

/// Run the evolutionary search from an already-feasible initial population.
///
/// Per generation: rank by constrained nondomination with crowding, keep
/// `parents_kept` survivors by binary tournament (always including the best
/// feasible individual, which makes the per-generation best nondecreasing),
/// then fill the population with repaired crossover/mutation offspring.
/// Fitness is memoized per genome, so a genome is evaluated at most once.
pub fn evolve<E: WidthEvaluator>(
    evaluator: &mut E,
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
    init_pop: Population,
    config: &EvoConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    if init_pop.individuals.len() != config.population_size {
        return Err(Error::DimensionMismatch {
            context: format!(
                "initial population of {} does not match population_size {}",
                init_pop.individuals.len(),
                config.population_size
            ),
        });
    }
    let mut rng = rng_from(config.seed);
    let mut cache: HashMap<Genome, Fitness> = HashMap::new();
    let mut history = SearchLog::default();

    let evaluate =
        |pop: &mut Population, cache: &mut HashMap<Genome, Fitness>, ev: &mut E| -> Result<()> {
            for ind in &mut pop.individuals {
                let fitness = match cache.get(&ind.genome) {
                    Some(f) => *f,
                    None => {
                        let width = space.width_from_groups(&ind.genome)?;
                        let accuracy = ev.accuracy(&width)?;
                        let f = Fitness { accuracy, flops: table.flops_of(&width) };
                        cache.insert(ind.genome.clone(), f);
                        f
                    }
                };
                ind.fitness = Some(fitness);
                ind.violation = (fitness.flops - budget).max(0.0);
                ind.feasible = ind.violation <= 0.0;
            }
            Ok(())
        };

    let mut pop = init_pop;
    pop.generation = 0;
    evaluate(&mut pop, &mut cache, evaluator)?;
    if pop.individuals.iter().any(|i| !i.feasible) {
        return Err(Error::NoFeasibleWidth { budget });
    }
    log_population(&mut history, &pop);

    for generation in 1..config.generations {
        let (rank, crowding) = rank_and_crowd(&pop)?;
        let mut survivors = tournament_select(&pop, &rank, &crowding, config, &mut rng)?;
        // Rank-based survival: the best feasible individual always carries
        // over, which keeps the per-generation best from regressing.
        if let Some(best_idx) = best_feasible_index(&pop) {
            if !survivors.contains(&best_idx) {
                survivors.pop();
                survivors.insert(0, best_idx);
            }
        }
        let mut next: Vec<Individual> = survivors
            .iter()
            .map(|&i| pop.individuals[i].clone())
            .collect();
        while next.len() < config.population_size {
            let pa = survivors[rng.random_range(0..survivors.len())];
            let pb = survivors[rng.random_range(0..survivors.len())];
            let (c1, c2, _) = two_point_crossover(
                &pop.individuals[pa].genome,
                &pop.individuals[pb].genome,
                &mut rng,
            );
            let prob = config.gene_mutation_prob(c1.len());
            for child in [c1, c2] {
                if next.len() == config.population_size {
                    break;
                }
                let mutated =
                    polynomial_mutation(&child, config.mutation_eta, prob, space.group_count(), &mut rng);
                let width = space.width_from_groups(&mutated)?;
                let (repaired, _) = repair_to_budget(space, table, budget, &width)?;
                next.push(Individual::new(space.groups_of(&repaired)));
            }
        }
        pop = Population { individuals: next, generation };
        evaluate(&mut pop, &mut cache, evaluator)?;
        log_population(&mut history, &pop);
    }

    let best_idx = best_feasible_index(&pop).ok_or(Error::NoFeasibleWidth { budget })?;
    Ok(SearchOutcome {
        best: pop.individuals[best_idx].clone(),
        history,
        evaluations: cache.len(),
    })
}

fn best_feasible_index(pop: &Population) -> Option<usize> {
    pop.individuals
        .iter()
        .enumerate()
        .filter(|(_, ind)| ind.feasible && ind.fitness.is_some())
        .max_by(|(ia, a), (ib, b)| {
            let (fa, fb) = (a.fitness.unwrap(), b.fitness.unwrap());
            fa.accuracy
                .partial_cmp(&fb.accuracy)
                .expect("finite accuracy")
                // Ties break toward the lexicographically smaller genome.
                .then_with(|| b.genome.cmp(&a.genome))
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
}

fn log_population(history: &mut SearchLog, pop: &Population) {
    for ind in &pop.individuals {
        let f = ind.fitness.expect("population evaluated before logging");
        history.records.push(SearchRecord {
            generation: pop.generation,
            genome: ind.genome.clone(),
            accuracy: f.accuracy,
            flops: f.flops,
            feasible: ind.feasible,
        });
    }
}

/// Greedy baseline: from the full width, repeatedly take the single-layer
/// one-group decrement with the best bilateral accuracy until the budget
/// holds.
pub fn greedy_search<E: WidthEvaluator>(
    evaluator: &mut E,
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
) -> Result<Individual> {
    let min_flops = table.flops_of(&space.min_width());
    if budget < min_flops {
        return Err(Error::InfeasibleBudget { budget, minimum: min_flops });
    }
    let mut groups = vec![space.group_count(); space.layer_count()];
    let mut cache: HashMap<Genome, f64> = HashMap::new();
    loop {
        let width = space.width_from_groups(&groups)?;
        if table.flops_of(&width) <= budget {
            let accuracy = match cache.get(&groups) {
                Some(&a) => a,
                None => evaluator.accuracy(&width)?,
            };
            let flops = table.flops_of(&width);
            return Ok(Individual {
                genome: groups,
                fitness: Some(Fitness { accuracy, flops }),
                feasible: true,
                violation: 0.0,
            });
        }
        let mut best: Option<(usize, f64)> = None;
        for layer in 0..groups.len() {
            if groups[layer] <= 1 {
                continue;
            }
            groups[layer] -= 1;
            let candidate = groups.clone();
            groups[layer] += 1;
            let accuracy = match cache.get(&candidate) {
                Some(&a) => a,
                None => {
                    let w = space.width_from_groups(&candidate)?;
                    let a = evaluator.accuracy(&w)?;
                    cache.insert(candidate, a);
                    a
                }
            };
            if best.map_or(true, |(_, acc)| accuracy > acc) {
                best = Some((layer, accuracy));
            }
        }
        let (layer, _) = best.expect("budget above minimum leaves a decrement");
        groups[layer] -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::LayerSpec;

    fn dense_space(max: &[usize], k: usize, input: usize, output: usize) -> WidthSpace {
        let layers = max.iter().map(|&m| LayerSpec::dense(m).unwrap()).collect();
        WidthSpace::new(layers, k, input, output).unwrap()
    }

    fn individual(acc: f64, flops: f64, budget: f64) -> Individual {
        let violation = (flops - budget).max(0.0);
        Individual {
            genome: vec![1],
            fitness: Some(Fitness { accuracy: acc, flops }),
            feasible: violation <= 0.0,
            violation,
        }
    }

    #[test]
    fn sort_matches_the_three_point_example() {
        let budget = 1_000.0;
        let pop = Population {
            individuals: vec![
                individual(0.9, 100.0, budget),
                individual(0.8, 50.0, budget),
                individual(0.7, 120.0, budget),
            ],
            generation: 0,
        };
        let fronts = nondominated_sort(&pop).unwrap();
        assert_eq!(fronts, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn infeasible_points_fall_behind_every_feasible_one() {
        let budget = 100.0;
        let pop = Population {
            individuals: vec![
                individual(0.9, 90.0, budget),
                individual(0.99, 150.0, budget),
                individual(0.5, 80.0, budget),
            ],
            generation: 0,
        };
        let fronts = nondominated_sort(&pop).unwrap();
        assert_eq!(*fronts.last().unwrap(), vec![1]);

        let single = Population { individuals: vec![individual(0.5, 10.0, budget)], generation: 0 };
        assert_eq!(nondominated_sort(&single).unwrap(), vec![vec![0]]);

        let unset = Population { individuals: vec![Individual::new(vec![1])], generation: 0 };
        assert!(matches!(nondominated_sort(&unset), Err(Error::FitnessUnset { index: 0 })));
    }

    #[test]
    fn crowding_distance_cases() {
        let f = |a: f64, fl: f64| Fitness { accuracy: a, flops: fl };
        assert_eq!(crowding_distance(&[f(0.1, 1.0), f(0.2, 2.0)]), vec![f64::INFINITY; 2]);

        // Three collinear, equally spaced points: the middle one scores
        // (2-0)/2 per objective, 2.0 in total.
        let d = crowding_distance(&[f(0.0, 0.0), f(1.0, 1.0), f(2.0, 2.0)]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert!((d[1] - 2.0).abs() < 1e-12);

        // Duplicated fitness collapses interior distances to zero.
        let d = crowding_distance(&[f(0.0, 0.0), f(1.0, 1.0), f(1.0, 1.0), f(1.0, 1.0), f(2.0, 2.0)]);
        let interior: Vec<f64> = d.iter().cloned().filter(|x| x.is_finite()).collect();
        assert!(interior.iter().any(|&x| x == 0.0));
    }

    #[test]
    fn tournaments_respect_domination_and_exhaust() {
        let budget = 1_000.0;
        let pop = Population {
            individuals: vec![
                individual(0.9, 10.0, budget), // dominates everything
                individual(0.5, 50.0, budget),
                individual(0.4, 60.0, budget),
                individual(0.3, 70.0, budget),
            ],
            generation: 0,
        };
        let (rank, crowding) = rank_and_crowd(&pop).unwrap();
        assert_eq!(rank[0], 0);
        let config = EvoConfig { population_size: 4, parents_kept: 2, seed: 5, ..Default::default() };
        let mut rng = rng_from(5);
        let winners = tournament_select(&pop, &rank, &crowding, &config, &mut rng).unwrap();
        assert_eq!(winners.len(), 2);
        let mut rng2 = rng_from(5);
        assert_eq!(winners, tournament_select(&pop, &rank, &crowding, &config, &mut rng2).unwrap());

        // parents_kept == population size returns everyone.
        let all = EvoConfig { population_size: 4, parents_kept: 4, seed: 1, ..Default::default() };
        let mut rng3 = rng_from(1);
        let mut winners = tournament_select(&pop, &rank, &crowding, &all, &mut rng3).unwrap();
        winners.sort_unstable();
        assert_eq!(winners, vec![0, 1, 2, 3]);

        let too_many = EvoConfig { population_size: 4, parents_kept: 5, ..Default::default() };
        assert!(tournament_select(&pop, &rank, &crowding, &too_many, &mut rng_from(0)).is_err());
    }

    #[test]
    fn crossover_at_fixed_cuts() {
        let a = vec![1, 1, 1, 1, 1];
        let b = vec![3, 3, 3, 3, 3];
        let (c1, c2) = two_point_crossover_at(&a, &b, 2, 4);
        assert_eq!(c1, vec![1, 1, 3, 3, 1]);
        assert_eq!(c2, vec![3, 3, 1, 1, 3]);
    }

    #[test]
    fn crossover_identity_and_gene_conservation() {
        let mut rng = rng_from(3);
        let a = vec![2, 4, 1, 3, 2, 4];
        let (c1, c2, crossed) = two_point_crossover(&a, &a, &mut rng);
        assert!(crossed);
        assert_eq!(c1, a);
        assert_eq!(c2, a);

        let b = vec![1, 1, 4, 4, 2, 3];
        for _ in 0..50 {
            let (c1, c2, _) = two_point_crossover(&a, &b, &mut rng);
            for i in 0..a.len() {
                let mut parents = [a[i], b[i]];
                let mut children = [c1[i], c2[i]];
                parents.sort_unstable();
                children.sort_unstable();
                assert_eq!(parents, children);
            }
        }

        let (s1, s2, crossed) = two_point_crossover(&vec![2], &vec![3], &mut rng);
        assert!(!crossed);
        assert_eq!((s1, s2), (vec![2], vec![3]));
    }

    #[test]
    fn mutation_noop_and_statistics() {
        let mut rng = rng_from(11);
        let genome = vec![2, 3, 1, 4];
        assert_eq!(polynomial_mutation(&genome, 20.0, 0.0, 4, &mut rng), genome);
        assert_eq!(polynomial_mutation(&vec![1, 1], 20.0, 1.0, 1, &mut rng), vec![1, 1]);

        // Monte-Carlo of a mid-range gene: near-zero mean displacement,
        // bounded by the domain.
        let k = 9;
        let mut sum = 0.0f64;
        let trials = 100_000;
        for _ in 0..trials {
            let out = polynomial_mutation(&vec![5], 20.0, 1.0, k, &mut rng);
            let d = out[0] as f64 - 5.0;
            assert!(d.abs() <= (k - 1) as f64);
            sum += d;
        }
        let mean = sum / trials as f64;
        assert!(mean.abs() < 0.05, "mean displacement {mean}");
    }

    fn seeded_population(space: &WidthSpace, n: usize, table: &FlopsTable, budget: f64, seed: u64) -> Population {
        let dist = crate::pips::SamplingDistribution::uniform(space);
        crate::pips::initial_population(&dist, space, table, budget, n, 50, seed)
            .unwrap()
            .0
    }

    #[test]
    fn one_generation_returns_the_best_of_the_initial_population() {
        let space = dense_space(&[8, 8, 8], 4, 5, 3);
        let table = FlopsTable::build(&space);
        let budget = table.flops_of(&space.full_width());
        let pop = seeded_population(&space, 8, &table, budget, 2);
        let config = EvoConfig {
            population_size: 8,
            generations: 1,
            parents_kept: 4,
            seed: 7,
            ..Default::default()
        };
        // Deterministic synthetic scorer.
        let mut eval = |w: &NetworkWidth| w.channels().iter().map(|&c| (c as f64).sqrt()).sum::<f64>() / 10.0;
        let out = evolve(&mut eval, &space, &table, budget, pop.clone(), &config).unwrap();
        let mut best_score = f64::NEG_INFINITY;
        for ind in &pop.individuals {
            let w = space.width_from_groups(&ind.genome).unwrap();
            best_score = best_score.max(eval(&w));
        }
        assert!((out.best.fitness.unwrap().accuracy - best_score).abs() < 1e-12);
        assert_eq!(out.history.records.len(), 8);
    }

    #[test]
    fn search_is_deterministic_and_memoized() {
        let space = dense_space(&[8, 8, 8], 4, 5, 3);
        let table = FlopsTable::build(&space);
        let budget = table.flops_of(&space.full_width()) * 0.6;
        let config = EvoConfig {
            population_size: 10,
            generations: 8,
            parents_kept: 4,
            seed: 42,
            ..Default::default()
        };
        let run = |count: &mut usize| {
            let pop = seeded_population(&space, 10, &table, budget, 4);
            let mut eval = |w: &NetworkWidth| {
                *count += 1;
                w.channels().iter().map(|&c| (c as f64).ln()).sum::<f64>() / 10.0
            };
            evolve(&mut eval, &space, &table, budget, pop, &config).unwrap()
        };
        let (mut n1, mut n2) = (0usize, 0usize);
        let a = run(&mut n1);
        let b = run(&mut n2);
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
        assert_eq!(n1, n2);
        // Memoized: one evaluator call per distinct genome.
        assert_eq!(n1, a.evaluations);
        // Every candidate obeys the hard budget.
        for r in &a.history.records {
            assert!(r.flops <= budget);
            assert!(r.feasible);
        }
        assert!(a.best.fitness.unwrap().flops <= budget);
    }

    #[test]
    fn per_generation_best_never_regresses() {
        let space = dense_space(&[8, 8, 8, 8], 4, 5, 3);
        let table = FlopsTable::build(&space);
        let budget = table.flops_of(&space.full_width()) * 0.5;
        let pop = seeded_population(&space, 12, &table, budget, 6);
        let config = EvoConfig {
            population_size: 12,
            generations: 10,
            parents_kept: 4,
            seed: 3,
            ..Default::default()
        };
        let mut eval = |w: &NetworkWidth| {
            w.channels().iter().enumerate().map(|(i, &c)| (i as f64 + 1.0) * c as f64).sum::<f64>() / 200.0
        };
        let out = evolve(&mut eval, &space, &table, budget, pop, &config).unwrap();
        let mut best_per_gen: Vec<f64> = Vec::new();
        for r in &out.history.records {
            if r.generation == best_per_gen.len() {
                best_per_gen.push(f64::NEG_INFINITY);
            }
            let slot = best_per_gen.last_mut().unwrap();
            *slot = slot.max(r.accuracy);
        }
        for pair in best_per_gen.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "best regressed: {best_per_gen:?}");
        }
    }

    #[test]
    fn monotone_scorer_drives_search_to_the_exhaustive_optimum() {
        let space = dense_space(&[6, 6, 6], 3, 5, 3);
        let table = FlopsTable::build(&space);
        let budget = table.flops_of(&space.full_width());
        let mut eval = |w: &NetworkWidth| w.channels().iter().map(|&c| c as f64).sum::<f64>() / 100.0;
        let oracle = crate::oracle::exhaustive_best_width(&space, &table, budget, &mut eval).unwrap();
        assert_eq!(oracle, space.full_width());
        let pop = seeded_population(&space, 10, &table, budget, 1);
        // A low distribution index keeps mutation steps wide enough to flip
        // integer genes on a three-option domain.
        let config = EvoConfig {
            population_size: 10,
            generations: 15,
            parents_kept: 4,
            mutation_eta: 3.0,
            seed: 9,
            ..Default::default()
        };
        let out = evolve(&mut eval, &space, &table, budget, pop, &config).unwrap();
        let best_width = space.width_from_groups(&out.best.genome).unwrap();
        assert_eq!(best_width, oracle);
    }

    #[test]
    fn greedy_stops_at_the_budget() {
        let space = dense_space(&[8, 8], 4, 5, 3);
        let table = FlopsTable::build(&space);
        let full = table.flops_of(&space.full_width());
        let mut eval = |w: &NetworkWidth| w.channels().iter().map(|&c| c as f64).product::<f64>() / 100.0;

        let out = greedy_search(&mut eval, &space, &table, full).unwrap();
        assert_eq!(out.genome, vec![4, 4]);

        let budget = full * 0.5;
        let out = greedy_search(&mut eval, &space, &table, budget).unwrap();
        assert!(out.fitness.unwrap().flops <= budget);

        // Single layer: the scan walks group indices downward.
        let line = dense_space(&[8], 4, 5, 3);
        let line_table = FlopsTable::build(&line);
        let mut line_eval = |w: &NetworkWidth| w.channels()[0] as f64;
        let target = line_table.flops_of(&line.width_from_groups(&[2]).unwrap());
        let out = greedy_search(&mut line_eval, &line, &line_table, target).unwrap();
        assert_eq!(out.genome, vec![2]);

        assert!(greedy_search(&mut eval, &space, &table, 1.0).is_err());
    }
}
