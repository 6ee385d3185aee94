//! Grouped width search space.
//!
//! A space of `L` layers, each with `l_i` channels divisible into `K` groups,
//! spans the `K^L` network widths whose per-layer channel counts are
//! `g_i * (l_i / K)` for group indices `g_i` in `[1, K]`. The module also
//! provides the channel-index arithmetic behind the two sub-network
//! assignment principles: unilateral (leftmost `c` channels) and bilateral
//! (leftmost `c` coupled with rightmost `c`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One layer of the search space: its maximal channel count and the cost of
/// a single multiply-accumulate through it (kernel area x spatial size for
/// convolution-shaped layers, 1.0 for plain dense layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub max_channels: usize,
    pub cost_multiplier: f64,
}

impl LayerSpec {
    pub fn new(max_channels: usize, cost_multiplier: f64) -> Result<Self> {
        if max_channels == 0 {
            return Err(Error::InvalidSpace {
                reason: "max_channels must be at least 1".into(),
            });
        }
        if !(cost_multiplier > 0.0) || !cost_multiplier.is_finite() {
            return Err(Error::InvalidSpace {
                reason: format!("cost_multiplier must be positive, got {cost_multiplier}"),
            });
        }
        Ok(Self {
            max_channels,
            cost_multiplier,
        })
    }

    /// Plain dense layer with unit multiply-accumulate cost.
    pub fn dense(max_channels: usize) -> Result<Self> {
        Self::new(max_channels, 1.0)
    }
}

/// Number of widths in a space, exact while it fits into a `u128`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpaceSize {
    Exact(u128),
    /// log10 of the count, for spaces too large to count exactly.
    Log10(f64),
}

impl SpaceSize {
    pub fn exact(&self) -> Option<u128> {
        match self {
            SpaceSize::Exact(n) => Some(*n),
            SpaceSize::Log10(_) => None,
        }
    }

    pub fn log10(&self) -> f64 {
        match self {
            SpaceSize::Exact(n) => (*n as f64).log10(),
            SpaceSize::Log10(x) => *x,
        }
    }
}

impl std::fmt::Display for SpaceSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpaceSize::Exact(n) => write!(f, "{n}"),
            SpaceSize::Log10(x) => write!(f, "10^{x:.2}"),
        }
    }
}

/// The grouped search space over network widths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthSpace {
    layers: Vec<LayerSpec>,
    group_count: usize,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Deserialize)]
struct WidthSpaceRepr {
    layers: Vec<LayerSpec>,
    group_count: usize,
    input_dim: usize,
    output_dim: usize,
}

impl<'de> Deserialize<'de> for WidthSpace {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let repr = WidthSpaceRepr::deserialize(deserializer)?;
        WidthSpace::new(repr.layers, repr.group_count, repr.input_dim, repr.output_dim)
            .map_err(serde::de::Error::custom)
    }
}

impl WidthSpace {
    /// Construct a validated space. Every layer's `max_channels` must be
    /// divisible by `group_count`; construction rejects anything else so that
    /// group indices map one-to-one onto channel counts.
    pub fn new(
        layers: Vec<LayerSpec>,
        group_count: usize,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpace {
                reason: "a space needs at least one layer".into(),
            });
        }
        if group_count == 0 {
            return Err(Error::InvalidSpace {
                reason: "group_count must be at least 1".into(),
            });
        }
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidSpace {
                reason: "input_dim and output_dim must be at least 1".into(),
            });
        }
        for (i, spec) in layers.iter().enumerate() {
            // Re-validate: LayerSpec may come straight from deserialization.
            LayerSpec::new(spec.max_channels, spec.cost_multiplier).map_err(|_| {
                Error::InvalidSpace {
                    reason: format!(
                        "layer {i}: max_channels {} / cost_multiplier {} invalid",
                        spec.max_channels, spec.cost_multiplier
                    ),
                }
            })?;
            if spec.max_channels % group_count != 0 {
                return Err(Error::IndivisibleLayer {
                    layer: i,
                    max_channels: spec.max_channels,
                    group_count,
                });
            }
        }
        Ok(Self {
            layers,
            group_count,
            input_dim,
            output_dim,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerSpec {
        &self.layers[index]
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Channels per group at `layer`.
    pub fn group_size(&self, layer: usize) -> usize {
        self.layers[layer].max_channels / self.group_count
    }

    /// The channel counts available at `layer`, ascending.
    pub fn width_options(&self, layer: usize) -> Vec<usize> {
        let step = self.group_size(layer);
        (1..=self.group_count).map(|g| g * step).collect()
    }

    /// `K^L`, exact up to `u128`, as a log10 beyond that.
    pub fn size(&self) -> SpaceSize {
        let k = self.group_count as u128;
        let mut n: u128 = 1;
        for _ in 0..self.layers.len() {
            match n.checked_mul(k) {
                Some(m) => n = m,
                None => {
                    let log10 = self.layers.len() as f64 * (self.group_count as f64).log10();
                    return SpaceSize::Log10(log10);
                }
            }
        }
        SpaceSize::Exact(n)
    }

    pub fn full_width(&self) -> NetworkWidth {
        NetworkWidth::new(self.layers.iter().map(|l| l.max_channels).collect())
    }

    pub fn min_width(&self) -> NetworkWidth {
        NetworkWidth::new((0..self.layers.len()).map(|i| self.group_size(i)).collect())
    }

    /// Width for a vector of group indices (each in `[1, K]`).
    pub fn width_from_groups(&self, groups: &[usize]) -> Result<NetworkWidth> {
        if groups.len() != self.layers.len() {
            return Err(Error::InvalidWidth {
                reason: format!(
                    "expected {} group indices, got {}",
                    self.layers.len(),
                    groups.len()
                ),
            });
        }
        let mut channels = Vec::with_capacity(groups.len());
        for (i, &g) in groups.iter().enumerate() {
            if g < 1 || g > self.group_count {
                return Err(Error::InvalidWidth {
                    reason: format!("layer {i}: group index {g} outside [1, {}]", self.group_count),
                });
            }
            channels.push(g * self.group_size(i));
        }
        Ok(NetworkWidth::new(channels))
    }

    /// Group indices of a width known to be valid in this space.
    pub fn groups_of(&self, width: &NetworkWidth) -> Vec<usize> {
        width
            .channels()
            .iter()
            .enumerate()
            .map(|(i, &c)| c / self.group_size(i))
            .collect()
    }

    /// Check that a width belongs to this space.
    pub fn validate_width(&self, width: &NetworkWidth) -> Result<()> {
        if width.len() != self.layers.len() {
            return Err(Error::InvalidWidth {
                reason: format!("expected {} layers, got {}", self.layers.len(), width.len()),
            });
        }
        for (i, &c) in width.channels().iter().enumerate() {
            let step = self.group_size(i);
            let max = self.layers[i].max_channels;
            if c == 0 || c > max || c % step != 0 {
                return Err(Error::InvalidWidth {
                    reason: format!(
                        "layer {i}: channel count {c} is not one of the {} multiples of {step} up to {max}",
                        self.group_count
                    ),
                });
            }
        }
        Ok(())
    }

    /// Draw a width with every layer's group index uniform on `[1, K]`.
    pub fn uniform_sample(&self, seed: u64) -> NetworkWidth {
        let mut rng = rng_from(seed);
        self.uniform_sample_with(&mut rng)
    }

    /// Same as [`uniform_sample`](Self::uniform_sample) against a caller-owned
    /// generator, for use inside sampling loops.
    pub fn uniform_sample_with<R: Rng>(&self, rng: &mut R) -> NetworkWidth {
        let channels = (0..self.layers.len())
            .map(|i| {
                let g = rng.random_range(1..=self.group_count);
                g * self.group_size(i)
            })
            .collect();
        NetworkWidth::new(channels)
    }

    /// Complementary width: per-layer group index `K - g`. A full-width layer
    /// would complement to zero channels, which has no forward pass; such
    /// layers are clamped to group index 1 and flagged so fairness audits can
    /// discount the pair.
    pub fn complement(&self, width: &NetworkWidth) -> ComplementWidth {
        let k = self.group_count;
        let groups = self.groups_of(width);
        let mut channels = Vec::with_capacity(groups.len());
        let mut clamped = Vec::with_capacity(groups.len());
        for (i, g) in groups.into_iter().enumerate() {
            let (comp, was_clamped) = if g >= k { (1, true) } else { (k - g, false) };
            channels.push(comp * self.group_size(i));
            clamped.push(was_clamped);
        }
        ComplementWidth {
            width: NetworkWidth::new(channels),
            clamped,
        }
    }

    /// Iterate every width of the space in lexicographic group order.
    /// Intended for spaces small enough to enumerate; see
    /// [`crate::oracle::exhaustive_best_width`] for a guarded variant.
    pub fn enumerate_widths(&self) -> impl Iterator<Item = NetworkWidth> + '_ {
        let l = self.layers.len();
        let k = self.group_count;
        let total = self.size().exact().unwrap_or(u128::MAX);
        (0..total).map(move |mut idx| {
            let mut groups = vec![1usize; l];
            for slot in (0..l).rev() {
                groups[slot] = (idx % k as u128) as usize + 1;
                idx /= k as u128;
            }
            self.width_from_groups(&groups).expect("enumerated groups are in range")
        })
    }
}

/// One point of the search space: per-layer channel counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkWidth {
    channels: Vec<usize>,
}

impl NetworkWidth {
    pub fn new(channels: Vec<usize>) -> Self {
        Self { channels }
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

impl std::fmt::Display for NetworkWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.channels.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Result of [`WidthSpace::complement`]: the complementary width plus
/// per-layer flags for layers whose raw complement was clamped up from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementWidth {
    pub width: NetworkWidth,
    pub clamped: Vec<bool>,
}

impl ComplementWidth {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }
}

/// A multiset of 1-based channel positions kept as sorted inclusive ranges.
/// Merging keeps both copies of overlapping positions; the bilateral
/// assignment relies on that multiplicity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    ranges: Vec<(usize, usize)>,
}

impl IndexSet {
    pub fn from_range(lo: usize, hi: usize) -> Self {
        debug_assert!(lo >= 1 && lo <= hi);
        Self { ranges: vec![(lo, hi)] }
    }

    /// Multiset merge: both operands' ranges are kept, in canonical order.
    pub fn merge(a: &IndexSet, b: &IndexSet) -> Self {
        let mut ranges: Vec<(usize, usize)> = a.ranges.iter().chain(b.ranges.iter()).copied().collect();
        ranges.sort_unstable();
        Self { ranges }
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    /// Number of positions counted with multiplicity.
    pub fn len(&self) -> usize {
        self.ranges.iter().map(|&(lo, hi)| hi - lo + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// How many of the merged ranges cover `position`.
    pub fn multiplicity(&self, position: usize) -> usize {
        self.ranges
            .iter()
            .filter(|&&(lo, hi)| lo <= position && position <= hi)
            .count()
    }

    /// All positions, with multiplicity, ascending within each range.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().flat_map(|&(lo, hi)| lo..=hi)
    }
}

fn check_channel(l: usize, c: usize) -> Result<()> {
    if c < 1 || c > l {
        return Err(Error::ChannelOutOfRange { channel: c, max_channels: l });
    }
    Ok(())
}

/// Channels evaluating width `c` under the unilateral principle: the leftmost
/// `c` positions.
pub fn unilateral_index_set(l: usize, c: usize) -> Result<IndexSet> {
    check_channel(l, c)?;
    Ok(IndexSet::from_range(1, c))
}

/// Channels evaluating width `c` under the bilateral principle: the leftmost
/// `c` positions paired with the rightmost `c` positions.
pub fn bilateral_index_sets(l: usize, c: usize) -> Result<(IndexSet, IndexSet)> {
    check_channel(l, c)?;
    Ok((IndexSet::from_range(1, c), IndexSet::from_range(l - c + 1, l)))
}

/// The multiset merge of the two bilateral paths; always `2c` positions.
pub fn bilateral_merged_index_set(l: usize, c: usize) -> Result<IndexSet> {
    let (left, right) = bilateral_index_sets(l, c)?;
    Ok(IndexSet::merge(&left, &right))
}

/// How many widths of a unilateral layer use channel `c`: `l - c + 1`.
pub fn unilateral_cardinality(l: usize, c: usize) -> Result<usize> {
    check_channel(l, c)?;
    Ok(l - c + 1)
}

/// How many width evaluations of a bilateral layer use channel `c`: the
/// constant `l + 1`, independent of the channel position.
pub fn bilateral_cardinality(l: usize, c: usize) -> Result<usize> {
    check_channel(l, c)?;
    Ok(l + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_space(max: &[usize], k: usize, input: usize, output: usize) -> WidthSpace {
        let layers = max.iter().map(|&m| LayerSpec::dense(m).unwrap()).collect();
        WidthSpace::new(layers, k, input, output).unwrap()
    }

    #[test]
    fn width_options_follow_group_arithmetic() {
        let space = dense_space(&[8, 8], 4, 4, 3);
        assert_eq!(space.width_options(0), vec![2, 4, 6, 8]);
        assert_eq!(space.width_options(1), vec![2, 4, 6, 8]);
    }

    #[test]
    fn indivisible_layer_is_rejected_by_name() {
        let layers = vec![LayerSpec::dense(6).unwrap()];
        let err = WidthSpace::new(layers, 4, 4, 2).unwrap_err();
        match err {
            Error::IndivisibleLayer { layer, max_channels, group_count } => {
                assert_eq!((layer, max_channels, group_count), (0, 6, 4));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn space_size_examples() {
        assert_eq!(dense_space(&[8, 8, 8], 4, 4, 2).size().exact(), Some(64));
        assert_eq!(dense_space(&[5; 10], 1, 4, 2).size().exact(), Some(1));
        assert_eq!(dense_space(&[20, 20], 20, 4, 2).size().exact(), Some(400));
        // 25 layers of 20 channels in 10 groups: 10^25 widths.
        let big = dense_space(&[20; 25], 10, 4, 2);
        assert_eq!(big.size().exact(), Some(10u128.pow(25)));
        // Beyond u128: falls back to log form.
        let huge = dense_space(&[20; 200], 20, 4, 2);
        assert!(huge.size().exact().is_none());
        assert!((huge.size().log10() - 200.0 * 20f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn uniform_sample_stays_in_range_and_is_seed_stable() {
        let space = dense_space(&[8, 8, 8], 4, 4, 2);
        for seed in 0..32 {
            let w = space.uniform_sample(seed);
            space.validate_width(&w).unwrap();
            assert_eq!(w, space.uniform_sample(seed));
        }
        let singleton = dense_space(&[6, 6, 6, 6], 1, 4, 2);
        for seed in 0..8 {
            assert_eq!(singleton.uniform_sample(seed), singleton.full_width());
        }
    }

    #[test]
    fn uniform_sample_frequencies_are_uniform() {
        // Independent frequency oracle: direct counting over 100k draws.
        let space = dense_space(&[8, 8], 4, 4, 2);
        let mut rng = crate::rng::rng_from(977);
        let mut counts = [[0u32; 4]; 2];
        let draws = 100_000;
        for _ in 0..draws {
            let w = space.uniform_sample_with(&mut rng);
            for (layer, &c) in w.channels().iter().enumerate() {
                counts[layer][c / 2 - 1] += 1;
            }
        }
        for layer in 0..2 {
            for g in 0..4 {
                let freq = f64::from(counts[layer][g]) / f64::from(draws);
                assert!((freq - 0.25).abs() < 0.01, "layer {layer} group {g}: {freq}");
            }
        }
    }

    #[test]
    fn complement_matches_reference_example() {
        // Three layers of six channels in six groups: (3,2,4) pairs with (3,4,2).
        let space = dense_space(&[6, 6, 6], 6, 4, 2);
        let w = NetworkWidth::new(vec![3, 2, 4]);
        let comp = space.complement(&w);
        assert_eq!(comp.width, NetworkWidth::new(vec![3, 4, 2]));
        assert!(!comp.any_clamped());
    }

    #[test]
    fn complement_midpoint_and_clamp() {
        let space = dense_space(&[8, 8], 4, 4, 2);
        // Group (2,2) is its own complement at K=4.
        let mid = space.width_from_groups(&[2, 2]).unwrap();
        assert_eq!(space.complement(&mid).width, mid);
        // A full-width layer clamps to group 1 and is flagged.
        let w = space.width_from_groups(&[4, 1]).unwrap();
        let comp = space.complement(&w);
        assert_eq!(space.groups_of(&comp.width), vec![1, 3]);
        assert_eq!(comp.clamped, vec![true, false]);
    }

    #[test]
    fn complement_is_an_involution_without_full_layers() {
        let space = dense_space(&[12, 12, 12], 4, 4, 2);
        for idx in 0..27 {
            let groups: Vec<usize> = vec![idx % 3 + 1, (idx / 3) % 3 + 1, (idx / 9) % 3 + 1];
            let w = space.width_from_groups(&groups).unwrap();
            let back = space.complement(&space.complement(&w).width).width;
            assert_eq!(back, w);
        }
    }

    #[test]
    fn index_sets_and_cardinalities() {
        let set = unilateral_index_set(6, 3).unwrap();
        assert_eq!(set.positions().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(unilateral_index_set(6, 6).unwrap().len(), 6);
        assert_eq!(unilateral_index_set(6, 1).unwrap().positions().collect::<Vec<_>>(), vec![1]);

        let (left, right) = bilateral_index_sets(6, 2).unwrap();
        assert_eq!(left.positions().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(right.positions().collect::<Vec<_>>(), vec![5, 6]);

        // Full width: both paths cover every channel, merge holds each twice.
        let merged = bilateral_merged_index_set(6, 6).unwrap();
        assert_eq!(merged.len(), 12);
        for c in 1..=6 {
            assert_eq!(merged.multiplicity(c), 2);
        }

        // Overlapping case: channels 3 and 4 appear twice.
        let merged = bilateral_merged_index_set(6, 4).unwrap();
        assert_eq!(merged.len(), 8);
        assert_eq!(merged.multiplicity(3), 2);
        assert_eq!(merged.multiplicity(4), 2);
        assert_eq!(merged.multiplicity(1), 1);
        assert_eq!(merged.multiplicity(6), 1);

        assert_eq!(unilateral_cardinality(6, 1).unwrap(), 6);
        assert_eq!(unilateral_cardinality(6, 6).unwrap(), 1);
        assert_eq!(unilateral_cardinality(10, 4).unwrap(), 7);
        assert_eq!(bilateral_cardinality(6, 3).unwrap(), 7);
        assert_eq!(bilateral_cardinality(1, 1).unwrap(), 2);
        assert_eq!(bilateral_cardinality(20, 13).unwrap(), 21);

        assert!(unilateral_index_set(6, 0).is_err());
        assert!(unilateral_index_set(6, 7).is_err());
        assert!(bilateral_index_sets(6, 7).is_err());
    }

    #[test]
    fn cardinality_decomposition_holds_everywhere() {
        for l in 1..=64 {
            for c in 1..=l {
                let bc = bilateral_cardinality(l, c).unwrap();
                let ua = unilateral_cardinality(l, c).unwrap();
                let ua_mirror = unilateral_cardinality(l, l + 1 - c).unwrap();
                assert_eq!(bc, ua + ua_mirror);
                assert_eq!(bc, l + 1);
            }
        }
    }

    #[test]
    fn bilateral_paths_have_c_elements_each() {
        for l in 1..=16 {
            for c in 1..=l {
                let (left, right) = bilateral_index_sets(l, c).unwrap();
                assert_eq!(left.len(), c);
                assert_eq!(right.len(), c);
                assert_eq!(IndexSet::merge(&left, &right).len(), 2 * c);
            }
        }
    }

    #[test]
    fn serde_round_trip_matches_schema() {
        let space = WidthSpace::new(
            vec![LayerSpec::new(8, 1.0).unwrap(), LayerSpec::new(16, 9.0).unwrap()],
            4,
            12,
            3,
        )
        .unwrap();
        let json = serde_json::to_string(&space).unwrap();
        assert!(json.contains("\"layers\""));
        assert!(json.contains("\"max_channels\":8"));
        assert!(json.contains("\"cost_multiplier\":9.0"));
        assert!(json.contains("\"group_count\":4"));
        let back: WidthSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, space);

        // Invalid documents are rejected on deserialization.
        let bad = r#"{"layers":[{"max_channels":6,"cost_multiplier":1.0}],"group_count":4,"input_dim":4,"output_dim":2}"#;
        assert!(serde_json::from_str::<WidthSpace>(bad).is_err());

        let w = NetworkWidth::new(vec![4, 6]);
        assert_eq!(serde_json::to_string(&w).unwrap(), "[4,6]");
        let parsed: NetworkWidth = serde_json::from_str("[4,6]").unwrap();
        assert_eq!(parsed, w);
    }

    #[test]
    fn enumerate_is_lexicographic_and_complete() {
        let space = dense_space(&[4, 4], 2, 4, 2);
        let all: Vec<NetworkWidth> = space.enumerate_widths().collect();
        assert_eq!(all.len(), 4);
        assert_eq!(all[0], space.width_from_groups(&[1, 1]).unwrap());
        assert_eq!(all[1], space.width_from_groups(&[1, 2]).unwrap());
        assert_eq!(all[3], space.width_from_groups(&[2, 2]).unwrap());
    }
}
