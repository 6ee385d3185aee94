//! FLOPs accounting over layer boundaries.
//!
//! FLOPs are counted as multiply-accumulates scaled by the consuming layer's
//! cost multiplier; bias and activation costs are excluded. A chain of `L`
//! layers has `L + 1` boundaries: the fixed input endpoint into layer 1,
//! the `L - 1` inter-layer boundaries, and the fixed output endpoint out of
//! layer `L` (the classifier head, with unit multiplier). Entries are
//! precomputed per boundary over that boundary's feasible channel values.

use crate::error::{Error, Result};
use crate::space::{NetworkWidth, WidthSpace};

#[derive(Debug, Clone)]
struct BoundaryTable {
    in_options: Vec<usize>,
    out_options: Vec<usize>,
    multiplier: f64,
    /// Row-major `in_options.len() x out_options.len()` MAC counts, scaled.
    entries: Vec<f64>,
}

impl BoundaryTable {
    fn build(in_options: Vec<usize>, out_options: Vec<usize>, multiplier: f64) -> Self {
        let mut entries = Vec::with_capacity(in_options.len() * out_options.len());
        for &ci in &in_options {
            for &cj in &out_options {
                entries.push(ci as f64 * cj as f64 * multiplier);
            }
        }
        Self {
            in_options,
            out_options,
            multiplier,
            entries,
        }
    }

    fn entry(&self, in_idx: usize, out_idx: usize) -> f64 {
        self.entries[in_idx * self.out_options.len() + out_idx]
    }

    fn index_of(options: &[usize], value: usize) -> Option<usize> {
        options.binary_search(&value).ok()
    }
}

/// Precomputed per-boundary FLOPs lookup for one [`WidthSpace`].
#[derive(Debug, Clone)]
pub struct FlopsTable {
    boundaries: Vec<BoundaryTable>,
    layer_count: usize,
}

impl FlopsTable {
    /// Build the lookup table for every boundary of the space.
    pub fn build(space: &WidthSpace) -> Self {
        let l = space.layer_count();
        let mut boundaries = Vec::with_capacity(l + 1);
        // Input endpoint into layer 1.
        boundaries.push(BoundaryTable::build(
            vec![space.input_dim()],
            space.width_options(0),
            space.layer(0).cost_multiplier,
        ));
        // Inter-layer boundaries; the multiplier belongs to the consuming layer.
        for i in 1..l {
            boundaries.push(BoundaryTable::build(
                space.width_options(i - 1),
                space.width_options(i),
                space.layer(i).cost_multiplier,
            ));
        }
        // Output endpoint: the classifier head, unit multiplier.
        boundaries.push(BoundaryTable::build(
            space.width_options(l - 1),
            vec![space.output_dim()],
            1.0,
        ));
        Self {
            boundaries,
            layer_count: l,
        }
    }

    /// Number of boundaries (`L + 1`).
    pub fn boundary_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    /// The channel values admitted on the input side of `boundary`.
    pub fn in_options(&self, boundary: usize) -> &[usize] {
        &self.boundaries[boundary].in_options
    }

    /// The channel values admitted on the output side of `boundary`.
    pub fn out_options(&self, boundary: usize) -> &[usize] {
        &self.boundaries[boundary].out_options
    }

    pub fn multiplier(&self, boundary: usize) -> f64 {
        self.boundaries[boundary].multiplier
    }

    /// Table entry by option index (not channel value); used by solvers that
    /// iterate option grids directly.
    pub fn entry_by_index(&self, boundary: usize, in_idx: usize, out_idx: usize) -> f64 {
        self.boundaries[boundary].entry(in_idx, out_idx)
    }

    /// Table entry by channel values.
    pub fn lookup(&self, boundary: usize, c_in: usize, c_out: usize) -> Result<f64> {
        let table = &self.boundaries[boundary];
        let i = BoundaryTable::index_of(&table.in_options, c_in).ok_or(Error::ChannelOutOfRange {
            channel: c_in,
            max_channels: *table.in_options.last().unwrap_or(&0),
        })?;
        let j = BoundaryTable::index_of(&table.out_options, c_out).ok_or(Error::ChannelOutOfRange {
            channel: c_out,
            max_channels: *table.out_options.last().unwrap_or(&0),
        })?;
        Ok(table.entry(i, j))
    }

    /// Total FLOPs of a width: the sum of boundary entries along it.
    pub fn flops_of(&self, width: &NetworkWidth) -> f64 {
        debug_assert_eq!(width.len(), self.layer_count);
        let channels = width.channels();
        let mut total = 0.0;
        for (b, table) in self.boundaries.iter().enumerate() {
            let c_in = if b == 0 { table.in_options[0] } else { channels[b - 1] };
            let c_out = if b == self.layer_count {
                table.out_options[0]
            } else {
                channels[b]
            };
            total += self
                .lookup(b, c_in, c_out)
                .expect("width channels are valid table options");
        }
        total
    }
}

/// The uniform baseline: the largest single group index applied to every
/// layer whose FLOPs fit the budget. Ties break toward the larger index.
pub fn uniform_scale_width(
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
) -> Result<NetworkWidth> {
    for g in (1..=space.group_count()).rev() {
        let width = space.width_from_groups(&vec![g; space.layer_count()])?;
        if table.flops_of(&width) <= budget {
            return Ok(width);
        }
    }
    Err(Error::InfeasibleBudget {
        budget,
        minimum: table.flops_of(&space.min_width()),
    })
}

/// Repair a width to the hard budget by repeatedly decrementing the group
/// index of the layer whose decrement frees the most FLOPs. Returns the
/// repaired width and the number of decrements applied.
pub fn repair_to_budget(
    space: &WidthSpace,
    table: &FlopsTable,
    budget: f64,
    width: &NetworkWidth,
) -> Result<(NetworkWidth, usize)> {
    let min_flops = table.flops_of(&space.min_width());
    if budget < min_flops {
        return Err(Error::InfeasibleBudget { budget, minimum: min_flops });
    }
    let mut groups = space.groups_of(width);
    let mut current = space.width_from_groups(&groups)?;
    let mut steps = 0;
    while table.flops_of(&current) > budget {
        let flops_now = table.flops_of(&current);
        let mut best: Option<(usize, f64)> = None;
        for layer in 0..groups.len() {
            if groups[layer] <= 1 {
                continue;
            }
            groups[layer] -= 1;
            let gain = flops_now - table.flops_of(&space.width_from_groups(&groups)?);
            groups[layer] += 1;
            let better = match best {
                None => true,
                Some((_, best_gain)) => gain > best_gain,
            };
            if better {
                best = Some((layer, gain));
            }
        }
        let (layer, _) = best.expect("budget >= min width flops leaves a decrement available");
        groups[layer] -= 1;
        steps += 1;
        current = space.width_from_groups(&groups)?;
    }
    Ok((current, steps))
}
