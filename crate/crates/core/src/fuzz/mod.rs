//! Random model generation and badness-guided repair.
//!
//! Models are grown as trees of layers over fresh inputs, then repaired one
//! failing layer at a time until the validator accepts them.

mod repair;
mod tree;

use alloc::vec::Vec;
use core::fmt;

use crate::ir::{ActivationFn, Bindings, KindTag, LayerKind, ModelGraph, Padding, ReluArgs};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use repair::{find_valid_model, generate_campaign_entry, CampaignEntry, InvalidState, Mutation, RepairOutcome};
pub use tree::{Frozen, GenLayer, GenTree, Path};

#[derive(Clone, Debug, PartialEq)]
pub enum GenError {
    EmptyPalette,
    BadConfig(&'static str),
}

impl fmt::Display for GenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenError::EmptyPalette => f.write_str("no layer kind available to draw"),
            GenError::BadConfig(why) => write!(f, "invalid generator configuration: {why}"),
        }
    }
}

impl core::error::Error for GenError {}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub max_level: usize,
    pub max_tries: usize,
    pub max_fanin: usize,
    /// Float data and weights are drawn from this interval.
    pub value_range: (f64, f64),
    /// Integer data and weights, used when `integer_values` is set.
    pub int_range: (i64, i64),
    pub integer_values: bool,
    /// Extent of each generated input dimension.
    pub dim_range: (usize, usize),
    /// Units, filters and repeat counts.
    pub size_range: (usize, usize),
    pub stop_probability: f64,
    /// Drawable kinds with their weights.
    pub palette: Vec<(KindTag, f64)>,
    /// Ranks of generated inputs, batch axis included.
    pub input_ranks: Vec<usize>,
    /// Chained coin flips for the mutation choice instead of a uniform draw.
    pub geometric_mutations: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            max_level: 6,
            max_tries: 200,
            max_fanin: 3,
            value_range: (-1.0, 1.0),
            int_range: (0, 10),
            integer_values: false,
            dim_range: (1, 4),
            size_range: (1, 4),
            stop_probability: 0.5,
            palette: KindTag::ALL.iter().map(|&t| (t, 1.0)).collect(),
            input_ranks: alloc::vec![2, 3, 4],
            geometric_mutations: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = GenError::BadConfig;
        if self.max_level < 1 {
            return Err(bad("max_level must be at least 1"));
        }
        if self.max_tries < 1 {
            return Err(bad("max_tries must be at least 1"));
        }
        if self.max_fanin < 1 {
            return Err(bad("max_fanin must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.stop_probability) {
            return Err(bad("stop_probability must lie in [0, 1]"));
        }
        let (lo, hi) = self.value_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(bad("value_range is empty"));
        }
        if self.int_range.0 > self.int_range.1 {
            return Err(bad("int_range is empty"));
        }
        if self.dim_range.0 < 1 || self.dim_range.0 > self.dim_range.1 {
            return Err(bad("dim_range must be a non-empty range of positive sizes"));
        }
        if self.size_range.0 < 1 || self.size_range.0 > self.size_range.1 {
            return Err(bad("size_range must be a non-empty range of positive sizes"));
        }
        if self.input_ranks.is_empty() || self.input_ranks.iter().any(|&r| r < 2) {
            return Err(bad("input_ranks must be non-empty and at least 2"));
        }
        if self.palette.iter().any(|&(_, w)| !w.is_finite() || w < 0.0) {
            return Err(bad("palette weights must be finite and non-negative"));
        }
        if !self.palette.iter().any(|&(_, w)| w > 0.0) {
            return Err(GenError::EmptyPalette);
        }
        Ok(())
    }

    fn value(&self, rng: &mut Rng) -> f64 {
        if self.integer_values {
            rng.range_i64(self.int_range.0, self.int_range.1) as f64
        } else {
            rng.uniform(self.value_range.0, self.value_range.1)
        }
    }

    fn tensor(&self, dims: Vec<usize>, rng: &mut Rng) -> Tensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| self.value(rng)).collect();
        Tensor::new(dims, data).expect("element count matches dims")
    }

    fn size(&self, rng: &mut Rng) -> usize {
        rng.range(self.size_range.0, self.size_range.1)
    }

    /// Non-batch shape of a fresh graph input.
    fn input_shape(&self, rng: &mut Rng) -> Vec<usize> {
        let rank = *rng.choose(&self.input_ranks);
        (1..rank).map(|_| rng.range(self.dim_range.0, self.dim_range.1)).collect()
    }
}

fn padding(rng: &mut Rng) -> Padding {
    if rng.chance(0.5) {
        Padding::Valid
    } else {
        Padding::Same
    }
}

fn pair(rng: &mut Rng, lo: usize, hi: usize) -> [usize; 2] {
    [rng.range(lo, hi), rng.range(lo, hi)]
}

/// Random arguments for `tag`. Input-dependent arguments (reshape targets,
/// permutations) are placeholders until the layer is materialized.
pub fn random_kind(tag: KindTag, cfg: &GenConfig, rng: &mut Rng) -> LayerKind {
    match tag {
        KindTag::Dense => LayerKind::Dense { units: cfg.size(rng) },
        KindTag::Conv1D => {
            LayerKind::Conv1D { filters: cfg.size(rng), kernel_size: rng.range(1, 3), strides: rng.range(1, 2), padding: padding(rng) }
        }
        KindTag::Conv2D => {
            LayerKind::Conv2D { filters: cfg.size(rng), kernel_size: pair(rng, 1, 3), strides: pair(rng, 1, 2), padding: padding(rng) }
        }
        KindTag::MaxPool1D => LayerKind::MaxPool1D { pool_size: rng.range(1, 3), strides: rng.range(1, 2), padding: padding(rng) },
        KindTag::AvgPool1D => LayerKind::AvgPool1D { pool_size: rng.range(1, 3), strides: rng.range(1, 2), padding: padding(rng) },
        KindTag::MaxPool2D => LayerKind::MaxPool2D { pool_size: pair(rng, 1, 3), strides: pair(rng, 1, 2), padding: padding(rng) },
        KindTag::AvgPool2D => LayerKind::AvgPool2D { pool_size: pair(rng, 1, 3), strides: pair(rng, 1, 2), padding: padding(rng) },
        KindTag::GlobalMaxPool1D => LayerKind::GlobalMaxPool1D,
        KindTag::GlobalAvgPool1D => LayerKind::GlobalAvgPool1D,
        KindTag::Flatten => LayerKind::Flatten,
        KindTag::Reshape => LayerKind::Reshape { target_shape: Vec::new() },
        KindTag::Permute => LayerKind::Permute { dims: Vec::new() },
        KindTag::RepeatVector => LayerKind::RepeatVector { n: cfg.size(rng) },
        KindTag::Cropping1D => LayerKind::Cropping1D { cropping: pair(rng, 0, 1) },
        KindTag::Cropping2D => LayerKind::Cropping2D { cropping: [rng.range(0, 1), rng.range(0, 1), rng.range(0, 1), rng.range(0, 1)] },
        KindTag::ZeroPadding1D => LayerKind::ZeroPadding1D { padding: pair(rng, 0, 2) },
        KindTag::ZeroPadding2D => LayerKind::ZeroPadding2D { padding: [rng.range(0, 2), rng.range(0, 2), rng.range(0, 2), rng.range(0, 2)] },
        KindTag::UpSampling1D => LayerKind::UpSampling1D { size: rng.range(1, 3) },
        KindTag::UpSampling2D => LayerKind::UpSampling2D { size: pair(rng, 1, 3) },
        KindTag::Concatenate => LayerKind::Concatenate { axis: *rng.choose(&[-1, 1, 2, 3]) },
        KindTag::Add => LayerKind::Add,
        KindTag::Subtract => LayerKind::Subtract,
        KindTag::Multiply => LayerKind::Multiply,
        KindTag::Average => LayerKind::Average,
        KindTag::Maximum => LayerKind::Maximum,
        KindTag::Minimum => LayerKind::Minimum,
        KindTag::ReLU => {
            let threshold = if rng.chance(0.5) { 0.0 } else { rng.uniform(-1.0, 1.0) };
            let negative_slope = if rng.chance(0.5) { 0.0 } else { rng.uniform(0.0, 0.5) };
            let max_value = rng.chance(0.5).then(|| threshold + rng.uniform(0.0, 6.0));
            LayerKind::ReLU(ReluArgs { max_value, negative_slope, threshold })
        }
        KindTag::Activation => LayerKind::Activation(*rng.choose(&ActivationFn::ALL)),
        KindTag::BatchNormalization => LayerKind::BatchNormalization { epsilon: rng.uniform(1e-3, 1e-2) },
        KindTag::Dropout => LayerKind::Dropout { rate: rng.unit() },
    }
}

/// A fresh layer without inputs. The kind is drawn by palette weight,
/// restricted to `options` when given.
pub fn generate_layer(options: Option<&[KindTag]>, cfg: &GenConfig, rng: &mut Rng) -> Result<GenLayer, GenError> {
    let allowed: Vec<(KindTag, f64)> =
        cfg.palette.iter().copied().filter(|(t, w)| *w > 0.0 && options.is_none_or(|o| o.contains(t))).collect();
    let weights: Vec<f64> = allowed.iter().map(|&(_, w)| w).collect();
    let pick = rng.weighted(&weights).ok_or(GenError::EmptyPalette)?;
    Ok(GenLayer::new(random_kind(allowed[pick].0, cfg, rng)))
}

/// A random layer tree of depth at most `level`, or `None` when the
/// recursion stops here. Children that stop become graph inputs.
pub fn recursive_generation(level: usize, cfg: &GenConfig, rng: &mut Rng) -> Result<Option<GenTree>, GenError> {
    if level == 0 || rng.chance(cfg.stop_probability) {
        return Ok(None);
    }
    grow(level, cfg, rng).map(Some)
}

fn grow(level: usize, cfg: &GenConfig, rng: &mut Rng) -> Result<GenTree, GenError> {
    let mut layer = generate_layer(None, cfg, rng)?;
    let fanin = if layer.kind.tag().is_merge() { rng.range(1, cfg.max_fanin) } else { 1 };
    for _ in 0..fanin {
        let child = match recursive_generation(level - 1, cfg, rng)? {
            Some(t) => t,
            None => GenTree::Input(cfg.input_shape(rng)),
        };
        layer.children.push(child);
    }
    Ok(GenTree::Layer(alloc::boxed::Box::new(layer)))
}

/// Like [`recursive_generation`] at `cfg.max_level`, but the root is always
/// a layer so every campaign entry has something to test.
pub fn generate_tree(cfg: &GenConfig, rng: &mut Rng) -> Result<GenTree, GenError> {
    cfg.validate()?;
    grow(cfg.max_level, cfg, rng)
}

/// One batch-1 tensor per graph input, each from its own split stream.
pub fn generate_inputs(g: &ModelGraph, cfg: &GenConfig, rng: &mut Rng) -> Bindings {
    let mut out = Bindings::new();
    for spec in g.inputs() {
        let mut stream = rng.split();
        let mut dims = alloc::vec![1];
        dims.extend_from_slice(&spec.shape);
        out.insert(spec.id.clone(), cfg.tensor(dims, &mut stream));
    }
    out
}
