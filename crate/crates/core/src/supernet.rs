//! Shared-weight supernet over dense layers.
//!
//! The supernet holds maximal-width weight matrices; a network width selects
//! a sub-network through one of two coupled paths. The left path of width
//! `c` at a layer of `l` channels owns channel rows `[0, c)`; the right path
//! owns rows `[l - c, l)` and consumes the previous layer's right columns, so
//! each path is a consistent end-to-end sub-network. Training averages both
//! path losses and, under the complementary strategy, trains each sampled
//! width together with its complement so that every channel of every layer
//! receives the same number of gradient updates.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::space::{LayerSpec, NetworkWidth, WidthSpace};

/// Which of the two coupled sub-networks a forward pass runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSide {
    Left,
    Right,
}

/// Channel-assignment principle: unilateral uses the left path only,
/// bilateral averages the left and right paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Principle {
    #[serde(alias = "ua")]
    Unilateral,
    #[serde(alias = "bc")]
    Bilateral,
}

/// Whether each sampled width is trained alone or together with its
/// complementary width on the same batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStrategy {
    Plain,
    Complementary,
}

/// One maximal-width dense layer: row-major `out_dim x in_dim` weights plus
/// a bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) out_dim: usize,
    pub(crate) in_dim: usize,
}

impl DenseLayer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            out_dim,
            in_dim,
        }
    }

    fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = (3.0 / in_dim as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight,
            bias: vec![0.0; out_dim],
            out_dim,
            in_dim,
        }
    }

    #[inline]
    pub fn w(&self, row: usize, col: usize) -> f64 {
        self.weight[row * self.in_dim + col]
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
}

/// Addresses one scalar parameter of a supernet; `layer == layer_count`
/// addresses the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRef {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

/// Maximal-width shared weights: one dense layer per searchable layer plus a
/// fixed-width output head.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetWeights {
    layers: Vec<DenseLayer>,
    head: DenseLayer,
}

impl SupernetWeights {
    /// Zero-mean scaled-uniform initialization: entries of a layer with
    /// fan-in `f` are uniform on `[-sqrt(3/f), sqrt(3/f)]` (standard
    /// deviation `1/sqrt(f)`), biases zero. Deterministic per seed; draws
    /// happen in layer declaration order, row-major.
    pub fn init(space: &WidthSpace, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut layers = Vec::with_capacity(space.layer_count());
        let mut fan_in = space.input_dim();
        for spec in space.layers() {
            layers.push(DenseLayer::init(spec.max_channels, fan_in, &mut rng));
            fan_in = spec.max_channels;
        }
        let head = DenseLayer::init(space.output_dim(), fan_in, &mut rng);
        Self { layers, head }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &DenseLayer {
        &self.layers[i]
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.head.out_dim
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn layer_or_head(&self, i: usize) -> &DenseLayer {
        if i == self.layers.len() {
            &self.head
        } else {
            &self.layers[i]
        }
    }

    fn layer_or_head_mut(&mut self, i: usize) -> &mut DenseLayer {
        if i == self.layers.len() {
            &mut self.head
        } else {
            &mut self.layers[i]
        }
    }

    pub fn param(&self, r: ParamRef) -> f64 {
        match r {
            ParamRef::Weight { layer, row, col } => self.layer_or_head(layer).w(row, col),
            ParamRef::Bias { layer, row } => self.layer_or_head(layer).bias[row],
        }
    }

    pub fn param_mut(&mut self, r: ParamRef) -> &mut f64 {
        match r {
            ParamRef::Weight { layer, row, col } => {
                let l = self.layer_or_head_mut(layer);
                let idx = row * l.in_dim + col;
                &mut l.weight[idx]
            }
            ParamRef::Bias { layer, row } => &mut self.layer_or_head_mut(layer).bias[row],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Check that this supernet was shaped for `space`.
    pub fn check_space(&self, space: &WidthSpace) -> Result<()> {
        let ok = self.layers.len() == space.layer_count()
            && self.input_dim() == space.input_dim()
            && self.output_dim() == space.output_dim()
            && self
                .layers
                .iter()
                .zip(space.layers())
                .all(|(l, s)| l.out_dim == s.max_channels);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: "supernet weights do not match the width space".into(),
            })
        }
    }

    fn check_width(&self, width: &NetworkWidth) -> Result<()> {
        if width.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: format!("width has {} layers, supernet has {}", width.len(), self.layers.len()),
            });
        }
        for (i, (&c, l)) in width.channels().iter().zip(&self.layers).enumerate() {
            if c == 0 || c > l.out_dim {
                return Err(Error::InvalidWidth {
                    reason: format!("layer {i}: {c} channels outside [1, {}]", l.out_dim),
                });
            }
        }
        Ok(())
    }

    /// Every weight and bias entry read by a forward pass of `width` on
    /// `side`. Useful for probing gradients entry by entry.
    pub fn active_param_refs(&self, width: &NetworkWidth, side: PathSide) -> Vec<ParamRef> {
        let mut refs = Vec::new();
        let mut prev_cols: Range<usize> = 0..self.input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            let rows = side_rows(layer.out_dim, width.channels()[i], side);
            for r in rows.clone() {
                refs.push(ParamRef::Bias { layer: i, row: r });
                for c in prev_cols.clone() {
                    refs.push(ParamRef::Weight { layer: i, row: r, col: c });
                }
            }
            prev_cols = rows;
        }
        let head_idx = self.layers.len();
        for r in 0..self.head.out_dim {
            refs.push(ParamRef::Bias { layer: head_idx, row: r });
            for c in prev_cols.clone() {
                refs.push(ParamRef::Weight { layer: head_idx, row: r, col: c });
            }
        }
        refs
    }
}

/// 0-based channel rows owned by a path: left takes the leading `c`, right
/// takes the trailing `c`.
pub fn side_rows(l: usize, c: usize, side: PathSide) -> Range<usize> {
    match side {
        PathSide::Left => 0..c,
        PathSide::Right => (l - c)..l,
    }
}

/// Logits and mean cross-entropy of one masked forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Row-major `batch_len x output_dim`.
    pub logits: Vec<f64>,
    pub loss: f64,
}

struct ForwardTrace {
    /// Per hidden layer: row-major `n x out_dim` activations (zero outside
    /// the active rows).
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
    loss: f64,
}

fn run_forward(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    side: PathSide,
    batch: &Batch,
) -> Result<ForwardTrace> {
    weights.check_width(width)?;
    if batch.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if batch.input_dim() != weights.input_dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "batch features have {} dims, supernet expects {}",
                batch.input_dim(),
                weights.input_dim()
            ),
        });
    }
    let n = batch.len();
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(weights.layers.len());
    let mut prev_cols: Range<usize> = 0..weights.input_dim();
    for (i, layer) in weights.layers.iter().enumerate() {
        let rows = side_rows(layer.out_dim, width.channels()[i], side);
        let mut out = vec![0.0; n * layer.out_dim];
        for s in 0..n {
            let input: &[f64] = if i == 0 {
                batch.row(s).0
            } else {
                &activations[i - 1][s * weights.layers[i - 1].out_dim..(s + 1) * weights.layers[i - 1].out_dim]
            };
            for r in rows.clone() {
                let mut z = layer.bias[r];
                let w_row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                for c in prev_cols.clone() {
                    z += w_row[c] * input[c];
                }
                out[s * layer.out_dim + r] = if z > 0.0 { z } else { 0.0 };
            }
        }
        activations.push(out);
        prev_cols = rows;
    }

    let head = &weights.head;
    let classes = head.out_dim;
    let last_dim = weights.layers.last().unwrap().out_dim;
    let mut logits = vec![0.0; n * classes];
    let mut loss = 0.0;
    for s in 0..n {
        let input = &activations[weights.layers.len() - 1][s * last_dim..(s + 1) * last_dim];
        for o in 0..classes {
            let mut z = head.bias[o];
            let w_row = &head.weight[o * head.in_dim..(o + 1) * head.in_dim];
            for c in prev_cols.clone() {
                z += w_row[c] * input[c];
            }
            logits[s * classes + o] = z;
        }
        let row = &logits[s * classes..(s + 1) * classes];
        let label = batch.row(s).1;
        loss += cross_entropy(row, label);
    }
    loss /= n as f64;
    Ok(ForwardTrace { activations, logits, loss })
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[label]
}

/// Masked forward pass of one path. Only weights inside the path's index
/// sets are read, so perturbing any inactive entry cannot change the output.
pub fn forward_path(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    side: PathSide,
    batch: &Batch,
) -> Result<ForwardOutput> {
    let trace = run_forward(weights, width, side, batch)?;
    Ok(ForwardOutput { logits: trace.logits, loss: trace.loss })
}

/// The ReLU gate pattern of a path forward pass: one flag per hidden unit
/// per sample. Finite-difference probes compare patterns at the perturbed
/// weights to confirm the loss is differentiable on the probed interval.
pub fn relu_gates(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    side: PathSide,
    batch: &Batch,
) -> Result<Vec<bool>> {
    let trace = run_forward(weights, width, side, batch)?;
    Ok(trace
        .activations
        .iter()
        .flat_map(|layer| layer.iter().map(|&a| a > 0.0))
        .collect())
}

/// Mean of the two path losses.
pub fn bilateral_loss(weights: &SupernetWeights, width: &NetworkWidth, batch: &Batch) -> Result<f64> {
    let left = forward_path(weights, width, PathSide::Left, batch)?.loss;
    let right = forward_path(weights, width, PathSide::Right, batch)?.loss;
    Ok(0.5 * (left + right))
}

/// Gradients with the same shapes as the weights; entries outside the active
/// path are exactly zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<DenseLayer>,
    head: DenseLayer,
}

impl Gradients {
    fn zeros_like(weights: &SupernetWeights) -> Self {
        Self {
            layers: weights
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.out_dim, l.in_dim))
                .collect(),
            head: DenseLayer::zeros(weights.head.out_dim, weights.head.in_dim),
        }
    }

    fn layer_or_head(&self, i: usize) -> &DenseLayer {
        if i == self.layers.len() {
            &self.head
        } else {
            &self.layers[i]
        }
    }

    pub fn value(&self, r: ParamRef) -> f64 {
        match r {
            ParamRef::Weight { layer, row, col } => self.layer_or_head(layer).w(row, col),
            ParamRef::Bias { layer, row } => self.layer_or_head(layer).bias[row],
        }
    }
}

/// Exact gradient of the path loss with respect to the active weights.
pub fn analytic_gradient(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    batch: &Batch,
    side: PathSide,
) -> Result<Gradients> {
    let (_, grads) = loss_and_grad(weights, width, side, batch)?;
    Ok(grads)
}

fn loss_and_grad(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    side: PathSide,
    batch: &Batch,
) -> Result<(f64, Gradients)> {
    let trace = run_forward(weights, width, side, batch)?;
    if batch.num_classes() != weights.output_dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "dataset has {} classes, supernet head emits {}",
                batch.num_classes(),
                weights.output_dim()
            ),
        });
    }
    let n = batch.len();
    let classes = weights.head.out_dim;
    let mut grads = Gradients::zeros_like(weights);

    // d loss / d logits = (softmax - onehot) / n
    let mut dlogits = vec![0.0; n * classes];
    for s in 0..n {
        let row = &trace.logits[s * classes..(s + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += (z - max).exp();
        }
        let label = batch.row(s).1;
        for o in 0..classes {
            let p = (row[o] - max).exp() / denom;
            dlogits[s * classes + o] = (p - if o == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }

    let layer_count = weights.layers.len();
    let last_dim = weights.layers[layer_count - 1].out_dim;
    let head_cols = side_rows(last_dim, width.channels()[layer_count - 1], side);

    // Head backward plus gradient with respect to the last activations.
    let mut d_act = vec![0.0; n * last_dim];
    for s in 0..n {
        let act = &trace.activations[layer_count - 1][s * last_dim..(s + 1) * last_dim];
        for o in 0..classes {
            let d = dlogits[s * classes + o];
            grads.head.bias[o] += d;
            let g_row = &mut grads.head.weight[o * weights.head.in_dim..(o + 1) * weights.head.in_dim];
            let w_row = &weights.head.weight[o * weights.head.in_dim..(o + 1) * weights.head.in_dim];
            for c in head_cols.clone() {
                g_row[c] += d * act[c];
                d_act[s * last_dim + c] += w_row[c] * d;
            }
        }
    }

    // Hidden layers, last to first.
    for i in (0..layer_count).rev() {
        let layer = &weights.layers[i];
        let rows = side_rows(layer.out_dim, width.channels()[i], side);
        let prev_cols: Range<usize> = if i == 0 {
            0..weights.input_dim()
        } else {
            side_rows(weights.layers[i - 1].out_dim, width.channels()[i - 1], side)
        };
        let prev_dim = if i == 0 { weights.input_dim() } else { weights.layers[i - 1].out_dim };
        let mut d_prev = vec![0.0; n * prev_dim];
        for s in 0..n {
            let act_row = &trace.activations[i][s * layer.out_dim..(s + 1) * layer.out_dim];
            for r in rows.clone() {
                // ReLU gate: the stored activation is positive iff the
                // pre-activation was.
                if act_row[r] <= 0.0 {
                    continue;
                }
                let dz = d_act[s * layer.out_dim + r];
                if dz == 0.0 {
                    continue;
                }
                grads.layers[i].bias[r] += dz;
                let g_row = &mut grads.layers[i].weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                let w_row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                if i == 0 {
                    let input = batch.row(s).0;
                    for c in prev_cols.clone() {
                        g_row[c] += dz * input[c];
                        d_prev[s * prev_dim + c] += w_row[c] * dz;
                    }
                } else {
                    let input = &trace.activations[i - 1][s * prev_dim..(s + 1) * prev_dim];
                    for c in prev_cols.clone() {
                        g_row[c] += dz * input[c];
                        d_prev[s * prev_dim + c] += w_row[c] * dz;
                    }
                }
            }
        }
        d_act = d_prev;
    }

    Ok((trace.loss, grads))
}

/// Per-channel gradient-update counts, split into an overall tally and a
/// tally restricted to unclamped complementary pairs (the fairness audit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateCounters {
    counts: Vec<Vec<u64>>,
    pair_counts: Vec<Vec<u64>>,
    clamped_pairs: u64,
    unclamped_pairs: u64,
}

impl UpdateCounters {
    pub fn new(space: &WidthSpace) -> Self {
        let dims: Vec<Vec<u64>> = space.layers().iter().map(|l| vec![0; l.max_channels]).collect();
        Self {
            counts: dims.clone(),
            pair_counts: dims,
            clamped_pairs: 0,
            unclamped_pairs: 0,
        }
    }

    pub fn reset(&mut self) {
        for l in self.counts.iter_mut().chain(self.pair_counts.iter_mut()) {
            l.iter_mut().for_each(|c| *c = 0);
        }
        self.clamped_pairs = 0;
        self.unclamped_pairs = 0;
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Counts restricted to unclamped complementary pairs.
    pub fn pair_counts(&self) -> &[Vec<u64>] {
        &self.pair_counts
    }

    pub fn clamped_pairs(&self) -> u64 {
        self.clamped_pairs
    }

    pub fn unclamped_pairs(&self) -> u64 {
        self.unclamped_pairs
    }

    /// Max minus min update count per layer.
    pub fn per_layer_spread(&self) -> Vec<u64> {
        spread_of(&self.counts)
    }

    /// Max minus min per layer over the unclamped-pair tally.
    pub fn pair_spread(&self) -> Vec<u64> {
        spread_of(&self.pair_counts)
    }

    fn bump(&mut self, layer: usize, rows: Range<usize>, audited: bool) {
        for r in rows {
            self.counts[layer][r] += 1;
            if audited {
                self.pair_counts[layer][r] += 1;
            }
        }
    }

    fn note_pair(&mut self, clamped: bool) {
        if clamped {
            self.clamped_pairs += 1;
        } else {
            self.unclamped_pairs += 1;
        }
    }
}

fn spread_of(counts: &[Vec<u64>]) -> Vec<u64> {
    counts
        .iter()
        .map(|l| {
            let max = l.iter().max().copied().unwrap_or(0);
            let min = l.iter().min().copied().unwrap_or(0);
            max - min
        })
        .collect()
}

/// The `m` lowest-loss sampled widths seen during supernet training, kept
/// sorted ascending by loss. A width holds one entry carrying the loss of
/// its most recent sampling; averaging or keeping historical minima would
/// bias the potential-error statistics toward widths that happen to be
/// revisited more often (complements revisit some widths and never others).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLedger {
    capacity: usize,
    entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub width: NetworkWidth,
    pub loss: f64,
}

impl LossLedger {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig {
                reason: "ledger capacity must be at least 1".into(),
            });
        }
        Ok(Self { capacity, entries: Vec::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn record(&mut self, width: NetworkWidth, loss: f64) {
        if let Some(pos) = self.entries.iter().position(|e| e.width == width) {
            self.entries.remove(pos);
        }
        let at = self.entries.partition_point(|e| e.loss <= loss);
        self.entries.insert(at, LedgerEntry { width, loss });
        self.entries.truncate(self.capacity);
    }
}

/// Learning-rate schedule over the whole training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Supernet / retraining hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
    pub ledger_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.ledger_size == 0 {
            return Err(Error::InvalidConfig {
                reason: "epochs, batch_size and ledger_size must be positive".into(),
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig {
                reason: format!("learning_rate must be positive, got {}", self.learning_rate),
            });
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig {
                reason: "weight_decay must be nonnegative".into(),
            });
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = step as f64 / total_steps.max(1) as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// One SGD step on the width's path loss. Under the bilateral principle the
/// step descends the averaged two-path loss and bumps each path's channel
/// counters once; under the unilateral principle only the left path is used.
/// Returns the pre-step loss.
pub fn train_step(
    weights: &mut SupernetWeights,
    width: &NetworkWidth,
    batch: &Batch,
    lr: f64,
    weight_decay: f64,
    counters: &mut UpdateCounters,
    principle: Principle,
) -> Result<f64> {
    train_step_impl(weights, width, batch, lr, weight_decay, counters, principle, false)
}

#[allow(clippy::too_many_arguments)]
fn train_step_impl(
    weights: &mut SupernetWeights,
    width: &NetworkWidth,
    batch: &Batch,
    lr: f64,
    weight_decay: f64,
    counters: &mut UpdateCounters,
    principle: Principle,
    audited: bool,
) -> Result<f64> {
    let (loss, sides) = match principle {
        Principle::Unilateral => {
            let (loss, grads) = loss_and_grad(weights, width, PathSide::Left, batch)?;
            (loss, vec![(PathSide::Left, grads, 1.0)])
        }
        Principle::Bilateral => {
            let (loss_l, grads_l) = loss_and_grad(weights, width, PathSide::Left, batch)?;
            let (loss_r, grads_r) = loss_and_grad(weights, width, PathSide::Right, batch)?;
            (
                0.5 * (loss_l + loss_r),
                vec![(PathSide::Left, grads_l, 0.5), (PathSide::Right, grads_r, 0.5)],
            )
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("training loss diverged on width {width}"),
        });
    }

    // Combine the per-path gradients and mark the touched entries so weight
    // decay is applied exactly once per active weight.
    let layer_count = weights.layers.len();
    for i in 0..=layer_count {
        let (out_dim, in_dim) = {
            let l = weights.layer_or_head(i);
            (l.out_dim, l.in_dim)
        };
        let mut w_delta = vec![0.0; out_dim * in_dim];
        let mut b_delta = vec![0.0; out_dim];
        let mut w_mask = vec![false; out_dim * in_dim];
        let mut b_mask = vec![false; out_dim];
        for (side, grads, scale) in &sides {
            let rows = if i == layer_count {
                0..out_dim
            } else {
                side_rows(out_dim, width.channels()[i], *side)
            };
            let cols = if i == 0 {
                0..in_dim
            } else {
                side_rows(in_dim, width.channels()[i - 1], *side)
            };
            let g = grads.layer_or_head(i);
            for r in rows {
                b_mask[r] = true;
                b_delta[r] += scale * g.bias[r];
                for c in cols.clone() {
                    let idx = r * in_dim + c;
                    w_mask[idx] = true;
                    w_delta[idx] += scale * g.w(r, c);
                }
            }
        }
        let layer = weights.layer_or_head_mut(i);
        for idx in 0..w_delta.len() {
            if w_mask[idx] {
                let w = layer.weight[idx];
                layer.weight[idx] = w - lr * (w_delta[idx] + weight_decay * w);
            }
        }
        for r in 0..out_dim {
            if b_mask[r] {
                layer.bias[r] -= lr * b_delta[r];
            }
        }
    }

    for (side, _, _) in &sides {
        for (i, layer) in weights.layers.iter().enumerate() {
            counters.bump(i, side_rows(layer.out_dim, width.channels()[i], *side), audited);
        }
    }

    if !weights.all_finite() {
        return Err(Error::NonFinite {
            context: "weights left the finite range after an update".into(),
        });
    }
    Ok(loss)
}

/// Outcome of training a sampled width together with its complement.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub loss: f64,
    pub complement_loss: f64,
    pub complement: NetworkWidth,
    /// True when some layer of the complement was clamped up from zero; such
    /// pairs are excluded from the fairness tally.
    pub clamped: bool,
}

/// Train `width` and its complementary width on the same batch. Unclamped
/// pairs feed the fairness tally of `counters`.
#[allow(clippy::too_many_arguments)]
pub fn train_pair(
    weights: &mut SupernetWeights,
    space: &WidthSpace,
    width: &NetworkWidth,
    batch: &Batch,
    lr: f64,
    weight_decay: f64,
    counters: &mut UpdateCounters,
    principle: Principle,
) -> Result<PairOutcome> {
    let comp = space.complement(width);
    let audited = !comp.any_clamped();
    let loss = train_step_impl(weights, width, batch, lr, weight_decay, counters, principle, audited)?;
    let complement_loss =
        train_step_impl(weights, &comp.width, batch, lr, weight_decay, counters, principle, audited)?;
    counters.note_pair(!audited);
    Ok(PairOutcome {
        loss,
        complement_loss,
        complement: comp.width,
        clamped: !audited,
    })
}

/// Result of a full supernet training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: SupernetWeights,
    pub ledger: LossLedger,
    pub counters: UpdateCounters,
    pub steps: usize,
}

/// Train the supernet by uniformly sampling one width per batch. Under the
/// complementary strategy each sampled width trains together with its
/// complement on the same batch. The ledger records every trained width with
/// its pre-step loss, keeping the lowest-loss entries.
pub fn train_supernet(
    mut weights: SupernetWeights,
    space: &WidthSpace,
    dataset: &Dataset,
    config: &TrainConfig,
    strategy: TrainStrategy,
    principle: Principle,
) -> Result<TrainOutcome> {
    config.validate()?;
    weights.check_space(space)?;
    if dataset.num_classes() != space.output_dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "dataset has {} classes, space output_dim is {}",
                dataset.num_classes(),
                space.output_dim()
            ),
        });
    }
    let train_rows = dataset.split_indices(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut shuffle_rng = rng_from(derive_seed(config.seed, "supernet/shuffle"));
    let mut width_rng = rng_from(derive_seed(config.seed, "supernet/widths"));

    let mut ledger = LossLedger::new(config.ledger_size)?;
    let mut counters = UpdateCounters::new(space);
    let mut order: Vec<usize> = train_rows.to_vec();
    let batches_per_epoch = order.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut step = 0;

    for _ in 0..config.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.batch(chunk);
            let lr = config.lr_at(step, total_steps);
            let width = space.uniform_sample_with(&mut width_rng);
            match strategy {
                TrainStrategy::Plain => {
                    let loss = train_step(
                        &mut weights,
                        &width,
                        &batch,
                        lr,
                        config.weight_decay,
                        &mut counters,
                        principle,
                    )?;
                    ledger.record(width, loss);
                }
                TrainStrategy::Complementary => {
                    let pair = train_pair(
                        &mut weights,
                        space,
                        &width,
                        &batch,
                        lr,
                        config.weight_decay,
                        &mut counters,
                        principle,
                    )?;
                    ledger.record(width, pair.loss);
                    ledger.record(pair.complement, pair.complement_loss);
                }
            }
            step += 1;
        }
    }
    Ok(TrainOutcome { weights, ledger, counters, steps: step })
}

fn shuffle<R: Rng>(items: &mut [usize], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn path_correct(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    side: PathSide,
    set: &Batch,
) -> Result<usize> {
    let out = forward_path(weights, width, side, set)?;
    let classes = weights.output_dim();
    let mut correct = 0;
    for s in 0..set.len() {
        let row = &out.logits[s * classes..(s + 1) * classes];
        let mut arg = 0;
        for (o, &z) in row.iter().enumerate() {
            if z > row[arg] {
                arg = o;
            }
        }
        if arg == set.row(s).1 {
            correct += 1;
        }
    }
    Ok(correct)
}

/// Fraction of argmax-correct predictions of one path.
pub fn path_accuracy(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    side: PathSide,
    set: &Batch,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    Ok(path_correct(weights, width, side, set)? as f64 / set.len() as f64)
}

/// Bilateral width evaluation: the mean of the left-path and right-path
/// accuracies.
pub fn evaluate_width(weights: &SupernetWeights, width: &NetworkWidth, set: &Batch) -> Result<f64> {
    let left = path_accuracy(weights, width, PathSide::Left, set)?;
    let right = path_accuracy(weights, width, PathSide::Right, set)?;
    Ok(0.5 * (left + right))
}

/// Width evaluation under a given principle: bilateral averages both paths,
/// unilateral scores the left path alone.
pub fn evaluate_width_by(
    weights: &SupernetWeights,
    width: &NetworkWidth,
    set: &Batch,
    principle: Principle,
) -> Result<f64> {
    match principle {
        Principle::Bilateral => evaluate_width(weights, width, set),
        Principle::Unilateral => path_accuracy(weights, width, PathSide::Left, set),
    }
}

/// Result of retraining a fixed width from scratch.
#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub weights: SupernetWeights,
    pub space: WidthSpace,
    pub test_accuracy: f64,
}

/// Train a standalone network of exactly `width` (fresh initialization, no
/// masking) and report its test-split accuracy.
pub fn retrain_from_scratch(
    space: &WidthSpace,
    width: &NetworkWidth,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<RetrainOutcome> {
    space.validate_width(width)?;
    let layers: Result<Vec<LayerSpec>> = width
        .channels()
        .iter()
        .zip(space.layers())
        .map(|(&c, spec)| LayerSpec::new(c, spec.cost_multiplier))
        .collect();
    let sub_space = WidthSpace::new(layers?, 1, space.input_dim(), space.output_dim())?;
    let weights = SupernetWeights::init(&sub_space, derive_seed(config.seed, "retrain/init"));
    let outcome = train_supernet(
        weights,
        &sub_space,
        dataset,
        config,
        TrainStrategy::Plain,
        Principle::Unilateral,
    )?;
    let test = dataset.split_batch(Split::Test);
    let test_accuracy =
        path_accuracy(&outcome.weights, &sub_space.full_width(), PathSide::Left, &test)?;
    Ok(RetrainOutcome { weights: outcome.weights, space: sub_space, test_accuracy })
}

const WEIGHTS_MAGIC: &[u8; 4] = b"BCNW";
const WEIGHTS_VERSION: u32 = 1;

/// Persist weights: magic `BCNW`, format version, the space descriptor as
/// length-prefixed JSON, then row-major little-endian f32 weights and biases
/// per layer in declaration order, head last.
pub fn save_weights<W: Write>(mut w: W, space: &WidthSpace, weights: &SupernetWeights) -> Result<()> {
    weights.check_space(space)?;
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    let descriptor = serde_json::to_vec(space)?;
    w.write_all(&(descriptor.len() as u32).to_le_bytes())?;
    w.write_all(&descriptor)?;
    for layer in weights.layers.iter().chain(std::iter::once(&weights.head)) {
        for &v in layer.weight.iter().chain(layer.bias.iter()) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_weights_file(path: &Path, space: &WidthSpace, weights: &SupernetWeights) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save_weights(std::io::BufWriter::new(file), space, weights)
}

pub fn load_weights<R: Read>(mut r: R) -> Result<(WidthSpace, SupernetWeights)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::WeightsFormat {
            reason: format!("bad magic {magic:?}"),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != WEIGHTS_VERSION {
        return Err(Error::WeightsFormat {
            reason: format!("unsupported version {version}"),
        });
    }
    r.read_exact(&mut u32buf)?;
    let desc_len = u32::from_le_bytes(u32buf) as usize;
    let mut descriptor = vec![0u8; desc_len];
    r.read_exact(&mut descriptor)?;
    let space: WidthSpace = serde_json::from_slice(&descriptor)?;

    let mut read_layer = |out_dim: usize, in_dim: usize| -> Result<DenseLayer> {
        let mut layer = DenseLayer::zeros(out_dim, in_dim);
        let mut f32buf = [0u8; 4];
        for slot in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            r.read_exact(&mut f32buf)?;
            *slot = f64::from(f32::from_le_bytes(f32buf));
        }
        Ok(layer)
    };
    let mut layers = Vec::with_capacity(space.layer_count());
    let mut fan_in = space.input_dim();
    for spec in space.layers() {
        layers.push(read_layer(spec.max_channels, fan_in)?);
        fan_in = spec.max_channels;
    }
    let head = read_layer(space.output_dim(), fan_in)?;
    Ok((space, SupernetWeights { layers, head }))
}

pub fn load_weights_file(path: &Path) -> Result<(WidthSpace, SupernetWeights)> {
    let file = std::fs::File::open(path)?;
    load_weights(std::io::BufReader::new(file))
}
