//! Brute-force reference implementations.
//!
//! These re-derive, by direct enumeration or numerical differencing, the
//! quantities the rest of the crate computes in closed form or by search:
//! per-channel cardinalities, budgeted argmax widths, Pareto fronts,
//! gradients, and rank agreement. They ship in the library (not just the
//! test tree) so the CLI `analyze` command can audit a space end to end.

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::evo::WidthEvaluator;
use crate::flops::FlopsTable;
use crate::pips::{expected_flops, PotentialErrorMatrix, SamplingDistribution};
use crate::space::{NetworkWidth, WidthSpace};
use crate::supernet::{forward_path, ParamRef, PathSide, Principle, SupernetWeights};

/// Spaces above this width count are refused by exhaustive routines.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// Count, by looping over every width `c` of a layer with `l` channels, how
/// many width evaluations touch each channel. Unilateral marks the leftmost
/// `c` channels once per width; bilateral marks both the leftmost and the
/// rightmost `c`, counting overlaps twice.
pub fn enumerate_cardinalities(l: usize, principle: Principle) -> Vec<u64> {
    let mut counts = vec![0u64; l];
    for c in 1..=l {
        for ch in 0..c {
            counts[ch] += 1;
        }
        if principle == Principle::Bilateral {
            for ch in (l - c)..l {
                counts[ch] += 1;
            }
        }
    }
    counts
}

/// Enumerate every width of the space and return the feasible evaluator
/// argmax; ties break toward the lexicographically smaller genome (the
/// enumeration order). Refuses spaces larger than [`EXHAUSTIVE_LIMIT`].
pub fn exhaustive_best_width<E: WidthEvaluator>(
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
    evaluator: &mut E,
) -> Result<NetworkWidth> {
    let size = space.size();
    match size.exact() {
        Some(n) if n <= EXHAUSTIVE_LIMIT => {}
        _ => {
            return Err(Error::SpaceTooLarge {
                size: size.to_string(),
                limit: EXHAUSTIVE_LIMIT,
            })
        }
    }
    let mut best: Option<(f64, NetworkWidth)> = None;
    for width in space.enumerate_widths() {
        if table.flops_of(&width) > budget {
            continue;
        }
        let score = evaluator.accuracy(&width)?;
        let better = match &best {
            None => true,
            Some((s, _)) => score > *s,
        };
        if better {
            best = Some((score, width));
        }
    }
    best.map(|(_, w)| w).ok_or(Error::NoFeasibleWidth { budget })
}

/// One point for [`brute_pareto`]: objectives plus the budget violation
/// (zero means feasible).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoPoint {
    pub accuracy: f64,
    pub flops: f64,
    pub violation: f64,
}

impl ParetoPoint {
    pub fn feasible(accuracy: f64, flops: f64) -> Self {
        Self { accuracy, flops, violation: 0.0 }
    }
}

/// O(n^2) front peeling under the same constrained-domination rule the
/// search uses, re-stated here independently: feasible beats infeasible,
/// smaller violation beats larger, feasible points compare by
/// (accuracy up, flops down) Pareto domination.
pub fn brute_pareto(points: &[ParetoPoint]) -> Vec<Vec<usize>> {
    let n = points.len();
    let beats = |a: &ParetoPoint, b: &ParetoPoint| -> bool {
        let fa = a.violation <= 0.0;
        let fb = b.violation <= 0.0;
        if fa && !fb {
            return true;
        }
        if !fa && fb {
            return false;
        }
        if !fa && !fb {
            return a.violation < b.violation;
        }
        a.accuracy >= b.accuracy
            && a.flops <= b.flops
            && (a.accuracy > b.accuracy || a.flops < b.flops)
    };
    let mut assigned = vec![false; n];
    let mut fronts = Vec::new();
    let mut remaining = n;
    while remaining > 0 {
        let mut front = Vec::new();
        for i in 0..n {
            if assigned[i] {
                continue;
            }
            let dominated = (0..n)
                .any(|j| j != i && !assigned[j] && beats(&points[j], &points[i]));
            if !dominated {
                front.push(i);
            }
        }
        for &i in &front {
            assigned[i] = true;
        }
        remaining -= front.len();
        fronts.push(front);
    }
    fronts
}

/// Grid-search reference for the sampling-distribution solver: enumerate
/// every per-layer probability vector whose entries are multiples of
/// `resolution`, keep the combinations with expected FLOPs inside the
/// budget, and return the expected-potential-error minimizer. Exponential in
/// layers and options; refuses instances beyond [`EXHAUSTIVE_LIMIT`]
/// combinations.
pub fn grid_best_distribution(
    errors: &PotentialErrorMatrix,
    table: &FlopsTable,
    budget: f64,
    resolution: f64,
) -> Result<(SamplingDistribution, f64)> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("grid resolution {resolution} must be in (0, 1]"),
        });
    }
    let units = (1.0 / resolution).round() as usize;
    let per_layer: Vec<Vec<Vec<f64>>> = (0..errors.layer_count())
        .map(|l| compositions(units, errors.row(l).len()))
        .collect();
    let combos: u128 = per_layer.iter().map(|c| c.len() as u128).product();
    if combos > EXHAUSTIVE_LIMIT {
        return Err(Error::SpaceTooLarge {
            size: combos.to_string(),
            limit: EXHAUSTIVE_LIMIT,
        });
    }

    let mut best: Option<(SamplingDistribution, f64)> = None;
    let mut stack: Vec<usize> = vec![0; errors.layer_count()];
    'outer: loop {
        let layers: Vec<Vec<f64>> = stack
            .iter()
            .enumerate()
            .map(|(l, &i)| per_layer[l][i].clone())
            .collect();
        let dist = SamplingDistribution::new(layers)?;
        if expected_flops(&dist, table) <= budget {
            let objective: f64 = (0..errors.layer_count())
                .map(|l| {
                    errors
                        .row(l)
                        .iter()
                        .zip(dist.layer(l))
                        .map(|(e, p)| e * p)
                        .sum::<f64>()
                })
                .sum();
            if best.as_ref().is_none_or(|(_, b)| objective < *b) {
                best = Some((dist, objective));
            }
        }
        // Advance the mixed-radix counter over layer grids.
        for l in (0..stack.len()).rev() {
            stack[l] += 1;
            if stack[l] < per_layer[l].len() {
                continue 'outer;
            }
            stack[l] = 0;
            if l == 0 {
                break 'outer;
            }
        }
    }
    best.ok_or(Error::NoFeasibleWidth { budget })
}

/// All length-`parts` vectors of nonnegative multiples of `1/units` that sum
/// to one.
fn compositions(units: usize, parts: usize) -> Vec<Vec<f64>> {
    fn rec(remaining: usize, parts_left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in 0..=remaining {
            prefix.push(take);
            rec(remaining - take, parts_left - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    rec(units, parts, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|counts| counts.into_iter().map(|c| c as f64 / units as f64).collect())
        .collect()
}

/// Central difference `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Worst relative error between analytic and central-difference gradients
/// over `wanted` randomly probed active entries per path side, with the
/// error measured as `|analytic - fd| / (|fd| + 1e-8)`.
///
/// Two kinds of probe are redrawn rather than scored: entries whose `+-eps`
/// interval crosses a ReLU gate flip (the loss has a kink there, so no
/// derivative exists to compare), and entries where both values sit below
/// the difference oracle's f64 resolution floor of about `1e-7`.
pub fn gradient_check_worst_error(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    batch: &Batch,
    eps: f64,
    wanted: usize,
    seed: u64,
) -> Result<f64> {
    use crate::supernet::{analytic_gradient, relu_gates};
    use rand::Rng;
    let mut worst = 0.0f64;
    let mut rng = crate::rng::rng_from(seed);
    for side in [PathSide::Left, PathSide::Right] {
        let analytic = analytic_gradient(weights, width, batch, side)?;
        let refs = weights.active_param_refs(width, side);
        let base_gates = relu_gates(weights, width, side, batch)?;
        let mut checked = 0;
        let mut guard = 0;
        while checked < wanted {
            guard += 1;
            if guard > wanted * 100 {
                return Err(Error::InvalidConfig {
                    reason: "could not find enough differentiable gradient probes".into(),
                });
            }
            let r = refs[rng.random_range(0..refs.len())];
            let mut probe = weights.clone();
            *probe.param_mut(r) = probe.param(r) + eps;
            let plus_gates = relu_gates(&probe, width, side, batch)?;
            *probe.param_mut(r) = probe.param(r) - 2.0 * eps;
            let minus_gates = relu_gates(&probe, width, side, batch)?;
            if plus_gates != base_gates || minus_gates != base_gates {
                continue;
            }
            let fd = finite_diff_grad(weights, width, batch, side, eps, &[r])?[0];
            let an = analytic.value(r);
            if an.abs() < 1e-7 && fd.abs() < 1e-7 {
                continue;
            }
            let rel = (an - fd).abs() / (fd.abs() + 1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(worst)
}

/// Finite-difference path-loss gradient at the probed parameters; exactly
/// zero for parameters outside the path's index sets, since the loss cannot
/// depend on them.
pub fn finite_diff_grad(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    batch: &Batch,
    side: PathSide,
    eps: f64,
    params: &[ParamRef],
) -> Result<Vec<f64>> {
    let mut probe = weights.clone();
    let mut grads = Vec::with_capacity(params.len());
    for &p in params {
        let original = probe.param(p);
        *probe.param_mut(p) = original + eps;
        let plus = forward_path(&probe, width, side, batch)?.loss;
        *probe.param_mut(p) = original - eps;
        let minus = forward_path(&probe, width, side, batch)?.loss;
        *probe.param_mut(p) = original;
        grads.push((plus - minus) / (2.0 * eps));
    }
    Ok(grads)
}

/// Tie-corrected Kendall rank correlation (tau-b) between two score lists
/// over the same items. Errors when a list is degenerate (all tied) or the
/// lists disagree in length.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: format!("rankings of {} and {} items", a.len(), b.len()),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidConfig {
            reason: "rank correlation needs at least two items".into(),
        });
    }
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut ties_a = 0u64;
    let mut ties_b = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 {
                ties_a += 1;
            }
            if db == 0.0 {
                ties_b += 1;
            }
            if da == 0.0 || db == 0.0 {
                continue;
            }
            if da * db > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    let denom = ((total - ties_a as f64) * (total - ties_b as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::AllTied);
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{
        bilateral_cardinality, unilateral_cardinality, LayerSpec,
    };

    #[test]
    fn cardinality_enumeration_matches_known_profiles() {
        assert_eq!(enumerate_cardinalities(6, Principle::Unilateral), vec![6, 5, 4, 3, 2, 1]);
        assert_eq!(enumerate_cardinalities(6, Principle::Bilateral), vec![7; 6]);
        assert_eq!(enumerate_cardinalities(1, Principle::Bilateral), vec![2]);
        assert_eq!(enumerate_cardinalities(1, Principle::Unilateral), vec![1]);
    }

    #[test]
    fn enumeration_agrees_with_the_closed_forms() {
        for l in 1..=64 {
            let ua = enumerate_cardinalities(l, Principle::Unilateral);
            let bc = enumerate_cardinalities(l, Principle::Bilateral);
            for c in 1..=l {
                assert_eq!(ua[c - 1] as usize, unilateral_cardinality(l, c).unwrap());
                assert_eq!(bc[c - 1] as usize, bilateral_cardinality(l, c).unwrap());
                assert_eq!(bc[c - 1] as usize, l + 1);
            }
        }
    }

    fn dense_space(max: &[usize], k: usize) -> WidthSpace {
        let layers = max.iter().map(|&m| LayerSpec::dense(m).unwrap()).collect();
        WidthSpace::new(layers, k, 5, 3).unwrap()
    }

    #[test]
    fn exhaustive_argmax_and_guards() {
        let space = dense_space(&[6, 6], 3);
        let table = FlopsTable::build(&space);
        let budget = table.flops_of(&space.full_width());
        let mut monotone = |w: &NetworkWidth| w.channels().iter().sum::<usize>() as f64;
        let best = exhaustive_best_width(&space, &table, budget, &mut monotone).unwrap();
        assert_eq!(best, space.full_width());

        let singleton = dense_space(&[6, 6], 1);
        let t = FlopsTable::build(&singleton);
        let b = t.flops_of(&singleton.full_width());
        let got = exhaustive_best_width(&singleton, &t, b, &mut monotone).unwrap();
        assert_eq!(got, singleton.full_width());
        assert!(matches!(
            exhaustive_best_width(&singleton, &t, b * 0.5, &mut monotone),
            Err(Error::NoFeasibleWidth { .. })
        ));

        // Deterministic pseudo-random scores: two passes agree.
        let mut scored = |w: &NetworkWidth| {
            w.channels().iter().enumerate().map(|(i, &c)| ((c * 2654435761 + i) % 97) as f64).sum()
        };
        let a = exhaustive_best_width(&space, &table, budget, &mut scored).unwrap();
        let b2 = exhaustive_best_width(&space, &table, budget, &mut scored).unwrap();
        assert_eq!(a, b2);

        let huge = dense_space(&[20; 30], 10);
        let ht = FlopsTable::build(&huge);
        assert!(matches!(
            exhaustive_best_width(&huge, &ht, 1e12, &mut monotone),
            Err(Error::SpaceTooLarge { .. })
        ));
    }

    #[test]
    fn brute_pareto_front_shapes() {
        let p = |a: f64, f: f64| ParetoPoint::feasible(a, f);
        let fronts = brute_pareto(&[p(0.9, 100.0), p(0.8, 50.0), p(0.7, 120.0)]);
        assert_eq!(fronts, vec![vec![0, 1], vec![2]]);

        let fronts = brute_pareto(&[p(0.5, 10.0); 4]);
        assert_eq!(fronts, vec![vec![0, 1, 2, 3]]);

        // A strictly dominating chain peels into singleton fronts.
        let chain: Vec<ParetoPoint> = (0..5).map(|i| p(0.9 - 0.1 * i as f64, 10.0 + i as f64)).collect();
        let fronts = brute_pareto(&chain);
        assert_eq!(fronts.len(), 5);
        for (i, front) in fronts.iter().enumerate() {
            assert_eq!(front, &vec![i]);
        }
    }

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        let g = central_difference(|x| 3.0 * x * x + 2.0 * x + 1.0, 1.5, 1e-4);
        assert!((g - (6.0 * 1.5 + 2.0)).abs() < 1e-9);

        // Richardson order check: on a smooth non-polynomial point, halving
        // eps shrinks the error about fourfold.
        let f = |x: f64| x.sin() * x.exp();
        let x: f64 = 0.7;
        let exact = x.cos() * x.exp() + x.sin() * x.exp();
        let e1 = (central_difference(f, x, 1e-3) - exact).abs();
        let e2 = (central_difference(f, x, 5e-4) - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn kendall_tau_known_values() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0);
        let tau = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((tau - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::AllTied)));
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn kendall_tau_is_antisymmetric_under_reversal() {
        let xs: Vec<f64> = (0..20).map(|i| ((i * 37) % 11) as f64).collect();
        let ys: Vec<f64> = (0..20).map(|i| ((i * 17) % 13) as f64).collect();
        let neg_ys: Vec<f64> = ys.iter().map(|v| -v).collect();
        let t1 = kendall_tau(&xs, &ys).unwrap();
        let t2 = kendall_tau(&xs, &neg_ys).unwrap();
        assert!((t1 + t2).abs() < 1e-12);
    }
}
