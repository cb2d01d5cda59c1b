use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use super::tree::{Frozen, ShapeHint};
use super::{generate_inputs, generate_layer, generate_tree, random_kind, GenConfig, GenError, GenLayer, GenTree, Path};
use crate::ir::{Bindings, EvalTrace, KindTag, LayerKind, ModelGraph};
use crate::rng::Rng;
use crate::semantics;
use crate::validator::{infer_shapes, ErrorCode, PrecondViolation, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Fresh arguments and weights for the failing layer.
    RegenerateArgs,
    /// Reshape, upsampling, cropping or padding spliced in before the failing input.
    InsertAdapter,
    /// A fresh random layer in place of the failing one.
    ReplaceLayer,
    /// A fresh random layer (or input) in place of the failing input.
    ReplaceChild,
    /// Chained coin flips all came up false.
    Skip,
}

/// One rejected iteration of the repair loop.
#[derive(Clone, Debug, PartialEq)]
pub struct RepairStep {
    pub layer_id: String,
    pub location: Path,
    pub badness: f64,
    /// The step made no progress and the previous model was restored.
    pub restored: bool,
}

/// The invalid model one mutation away from the returned valid one.
#[derive(Clone, Debug, PartialEq)]
pub struct InvalidState {
    pub model: ModelGraph,
    pub violation: PrecondViolation,
    pub mutation: Mutation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepairOutcome {
    /// The repaired model, or `None` when `max_tries` ran out.
    pub model: Option<ModelGraph>,
    pub tree: GenTree,
    /// Validator runs, including the accepting one.
    pub tries: usize,
    pub steps: Vec<RepairStep>,
    pub last_invalid: Option<InvalidState>,
}

/// What the failing layer needs from one of its inputs.
#[derive(Clone, Debug, PartialEq)]
enum Want {
    Anything,
    /// Non-batch rank.
    Rank(usize),
    Exact(Vec<usize>),
    /// This many more steps along each spatial axis.
    Grow(usize),
}

struct Site {
    path: Path,
    violation: PrecondViolation,
    /// Output shapes of the failing layer's inputs, where defined.
    child_shapes: Vec<Option<Vec<usize>>>,
}

impl Site {
    fn new(frozen: &Frozen, shapes: &alloc::collections::BTreeMap<String, Vec<usize>>, violation: PrecondViolation) -> Self {
        let path = frozen.paths[&violation.layer_id].clone();
        let child_shapes = frozen
            .graph
            .node(&violation.layer_id)
            .map(|n| n.inputs.iter().map(|i| shapes.get(i).cloned()).collect())
            .unwrap_or_default();
        Site { path, violation, child_shapes }
    }

    fn culprit(&self, rng: &mut Rng) -> usize {
        match self.violation.input_index {
            Some(i) if i < self.child_shapes.len() => i,
            _ => rng.below(self.child_shapes.len().max(1) as u64) as usize,
        }
    }

    fn want(&self, kind: &LayerKind, input: usize) -> Want {
        let v = &self.violation;
        match (v.code, v.expected, v.observed) {
            (ErrorCode::Dim, Some(e), _) if e >= 2 => Want::Rank(e as usize - 1),
            (ErrorCode::InputShapeInconsistent, _, _) if input > 0 => {
                let (Some(Some(first)), Some(Some(mine))) = (self.child_shapes.first(), self.child_shapes.get(input)) else {
                    return Want::Anything;
                };
                let mut target = first.clone();
                if let LayerKind::Concatenate { axis } = kind {
                    let rank = target.len() as i64 + 1;
                    let resolved = if *axis < 0 { rank + axis } else { *axis };
                    if resolved >= 1 && (resolved as usize) <= target.len() && mine.len() == target.len() {
                        let inner = resolved as usize - 1;
                        target[inner] = mine[inner];
                    }
                }
                Want::Exact(target)
            }
            (ErrorCode::KernelTooLarge, Some(len), Some(window)) if window > len => Want::Grow((window - len) as usize),
            _ => Want::Anything,
        }
    }
}

fn pick_mutation(cfg: &GenConfig, rng: &mut Rng) -> Mutation {
    const ORDER: [Mutation; 4] = [Mutation::RegenerateArgs, Mutation::InsertAdapter, Mutation::ReplaceLayer, Mutation::ReplaceChild];
    if cfg.geometric_mutations {
        ORDER.into_iter().find(|_| rng.chance(0.5)).unwrap_or(Mutation::Skip)
    } else {
        *rng.choose(&ORDER)
    }
}

fn layer_mut<'a>(tree: &'a mut GenTree, path: &[usize]) -> &'a mut GenLayer {
    match tree.at_mut(path) {
        GenTree::Layer(l) => l,
        GenTree::Input(_) => panic!("mutation site is an input"),
    }
}

/// Children resized to the arity of `tag`, padding with fresh inputs.
fn fit_children(mut children: Vec<GenTree>, tag: KindTag, cfg: &GenConfig, rng: &mut Rng) -> Vec<GenTree> {
    let (lo, hi) = tag.arity();
    children.truncate(hi);
    while children.len() < lo {
        children.push(GenTree::Input(cfg.input_shape(rng)));
    }
    children
}

fn apply_hint(layer: &mut GenLayer, want: &Want) {
    layer.hint = match want {
        Want::Rank(r) => ShapeHint::Rank(*r),
        Want::Exact(t) => ShapeHint::Exact(t.clone()),
        Want::Anything | Want::Grow(_) => ShapeHint::Free,
    };
}

/// Adapter kinds that can sit on an input of non-batch shape `shape` and
/// move it towards `want`.
fn adapter_options(shape: Option<&Vec<usize>>, want: &Want) -> Vec<KindTag> {
    let spatial: &[KindTag] = match shape.map(Vec::len) {
        Some(2) => &[KindTag::UpSampling1D, KindTag::Cropping1D, KindTag::ZeroPadding1D],
        Some(3) => &[KindTag::UpSampling2D, KindTag::Cropping2D, KindTag::ZeroPadding2D],
        _ => &[],
    };
    let mut out = alloc::vec![KindTag::Reshape];
    let Some(s) = shape else { return out };
    match want {
        Want::Rank(_) => {}
        Want::Grow(_) => out.extend(spatial.iter().filter(|t| !matches!(t, KindTag::Cropping1D | KindTag::Cropping2D))),
        Want::Exact(t) => {
            let n = spatial_axes(s);
            let same_rest = t.len() == s.len() && t[n..] == s[n..];
            if same_rest {
                let axes = || s[..n].iter().zip(&t[..n]);
                for &tag in spatial {
                    let ok = match tag {
                        KindTag::ZeroPadding1D | KindTag::ZeroPadding2D => axes().all(|(a, b)| a <= b),
                        KindTag::Cropping1D | KindTag::Cropping2D => axes().all(|(a, b)| a >= b),
                        _ => axes().all(|(a, b)| b % a == 0),
                    };
                    if ok {
                        out.push(tag);
                    }
                }
            }
        }
        Want::Anything => out.extend_from_slice(spatial),
    }
    out
}

fn spatial_axes(shape: &[usize]) -> usize {
    shape.len().saturating_sub(1).min(2)
}

/// Sets the adapter's arguments so that it produces `want` from `shape`,
/// where that is possible.
fn inform_adapter(layer: &mut GenLayer, shape: Option<&Vec<usize>>, want: &Want, rng: &mut Rng) {
    apply_hint(layer, want);
    let Some(s) = shape else { return };
    let n = spatial_axes(s);
    let deltas: Vec<(usize, usize)> = match want {
        Want::Exact(t) if t.len() == s.len() => (0..n).map(|a| (s[a], t[a])).collect(),
        Want::Grow(k) => (0..n).map(|a| (s[a], s[a] + k)).collect(),
        _ => return,
    };
    let split = |total: usize, rng: &mut Rng| {
        let left = rng.range(0, total);
        [left, total - left]
    };
    match &mut layer.kind {
        LayerKind::ZeroPadding1D { padding } if deltas.len() == 1 && deltas[0].1 >= deltas[0].0 => {
            *padding = split(deltas[0].1 - deltas[0].0, rng);
        }
        LayerKind::ZeroPadding2D { padding } if deltas.len() == 2 && deltas.iter().all(|(a, b)| b >= a) => {
            let [t, b] = split(deltas[0].1 - deltas[0].0, rng);
            let [l, r] = split(deltas[1].1 - deltas[1].0, rng);
            *padding = [t, b, l, r];
        }
        LayerKind::Cropping1D { cropping } if deltas.len() == 1 && deltas[0].0 >= deltas[0].1 => {
            *cropping = split(deltas[0].0 - deltas[0].1, rng);
        }
        LayerKind::Cropping2D { cropping } if deltas.len() == 2 && deltas.iter().all(|(a, b)| a >= b) => {
            let [t, b] = split(deltas[0].0 - deltas[0].1, rng);
            let [l, r] = split(deltas[1].0 - deltas[1].1, rng);
            *cropping = [t, b, l, r];
        }
        LayerKind::UpSampling1D { size } if deltas.len() == 1 => *size = deltas[0].1.div_ceil(deltas[0].0),
        LayerKind::UpSampling2D { size } if deltas.len() == 2 => {
            *size = [deltas[0].1.div_ceil(deltas[0].0), deltas[1].1.div_ceil(deltas[1].0)];
        }
        _ => {}
    }
}

/// Applies `mutation` at the failing layer. Falls back to fresh arguments
/// when the chosen mutation cannot be applied there.
fn mutate(tree: &mut GenTree, site: &Site, mutation: Mutation, cfg: &GenConfig, rng: &mut Rng) {
    let depth = site.path.len();
    match mutation {
        Mutation::Skip => {}
        Mutation::RegenerateArgs => {
            let layer = layer_mut(tree, &site.path);
            layer.kind = random_kind(layer.kind.tag(), cfg, rng);
            layer.reset();
        }
        Mutation::InsertAdapter => {
            let i = site.culprit(rng);
            let layer = layer_mut(tree, &site.path);
            if i >= layer.children.len() || depth + 2 + layer.children[i].height() > cfg.max_level {
                return mutate(tree, site, Mutation::RegenerateArgs, cfg, rng);
            }
            let want = site.want(&layer.kind, i);
            let shape = site.child_shapes.get(i).and_then(Option::as_ref);
            let Ok(mut adapter) = generate_layer(Some(&adapter_options(shape, &want)), cfg, rng) else {
                return mutate(tree, site, Mutation::RegenerateArgs, cfg, rng);
            };
            inform_adapter(&mut adapter, shape, &want, rng);
            let child = core::mem::replace(&mut layer.children[i], GenTree::Input(Vec::new()));
            adapter.children.push(child);
            layer.children[i] = GenTree::Layer(Box::new(adapter));
        }
        Mutation::ReplaceLayer => {
            let Ok(mut fresh) = generate_layer(None, cfg, rng) else {
                return mutate(tree, site, Mutation::RegenerateArgs, cfg, rng);
            };
            let layer = layer_mut(tree, &site.path);
            fresh.children = fit_children(core::mem::take(&mut layer.children), fresh.kind.tag(), cfg, rng);
            *layer = fresh;
        }
        Mutation::ReplaceChild => {
            let i = site.culprit(rng);
            let layer = layer_mut(tree, &site.path);
            if i >= layer.children.len() {
                return mutate(tree, site, Mutation::RegenerateArgs, cfg, rng);
            }
            let want = site.want(&layer.kind, i);
            let replacement = match &mut layer.children[i] {
                GenTree::Input(_) => {
                    let shape = match (&want, rng.chance(0.5)) {
                        (Want::Exact(t), true) => t.clone(),
                        (Want::Rank(r), true) => (0..*r).map(|_| rng.range(cfg.dim_range.0, cfg.dim_range.1)).collect(),
                        _ => cfg.input_shape(rng),
                    };
                    GenTree::Input(shape)
                }
                GenTree::Layer(child) => {
                    let Ok(mut fresh) = generate_layer(None, cfg, rng) else {
                        return mutate(tree, site, Mutation::RegenerateArgs, cfg, rng);
                    };
                    apply_hint(&mut fresh, &want);
                    fresh.children = fit_children(core::mem::take(&mut child.children), fresh.kind.tag(), cfg, rng);
                    GenTree::Layer(Box::new(fresh))
                }
            };
            layer.children[i] = replacement;
        }
    }
}

/// Repairs `root` until the validator accepts it, for at most
/// `cfg.max_tries` validator runs.
///
/// A step that fails at the same layer as the last accepted state without
/// lowering its badness is undone, and the mutation is retried from that
/// state.
pub fn find_valid_model(root: GenTree, cfg: &GenConfig, rng: &mut Rng) -> RepairOutcome {
    let mut current = root;
    let mut steps = Vec::new();
    // last accepted invalid state, with its graph and failure site
    let mut saved: Option<(GenTree, ModelGraph, Site)> = None;
    let mut last_invalid = None;
    for tries in 1..=cfg.max_tries {
        let frozen = current.freeze(cfg, rng);
        let inference = infer_shapes(&frozen.graph, None, Report::First);
        let Some(violation) = inference.violations.into_iter().next() else {
            return RepairOutcome { model: Some(frozen.graph), tree: current, tries, steps, last_invalid };
        };
        let site = Site::new(&frozen, &inference.shapes, violation);
        let no_progress = saved.as_ref().is_some_and(|(_, _, s)| s.path == site.path && site.violation.badness >= s.violation.badness);
        steps.push(RepairStep {
            layer_id: site.violation.layer_id.clone(),
            location: site.path.clone(),
            badness: site.violation.badness,
            restored: no_progress,
        });
        if no_progress {
            current = saved.as_ref().unwrap().0.clone();
        } else {
            saved = Some((current.clone(), frozen.graph, site));
        }
        let (_, graph, site) = saved.as_ref().unwrap();
        let mutation = pick_mutation(cfg, rng);
        mutate(&mut current, site, mutation, cfg, rng);
        last_invalid = Some(InvalidState { model: graph.clone(), violation: site.violation.clone(), mutation });
    }
    RepairOutcome { model: None, tree: current, tries: cfg.max_tries, steps, last_invalid }
}

/// One model of a campaign, fully determined by `(cfg.seed, index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignEntry {
    pub index: usize,
    pub outcome: RepairOutcome,
    pub inputs: Option<Bindings>,
    /// Reference outputs of every node, for valid models.
    pub trace: Option<EvalTrace>,
}

impl CampaignEntry {
    /// Validator-clean and evaluable by the reference.
    pub fn is_valid(&self) -> bool {
        self.outcome.model.is_some() && self.trace.is_some()
    }
}

pub fn generate_campaign_entry(cfg: &GenConfig, index: usize) -> Result<CampaignEntry, GenError> {
    let mut rng = Rng::stream(cfg.seed, index as u64);
    let mut gen_rng = rng.split();
    let mut repair_rng = rng.split();
    let mut input_rng = rng.split();
    let tree = generate_tree(cfg, &mut gen_rng)?;
    let outcome = find_valid_model(tree, cfg, &mut repair_rng);
    let (inputs, trace) = match &outcome.model {
        Some(g) => {
            let inputs = generate_inputs(g, cfg, &mut input_rng);
            let trace = semantics::eval_model(g, &inputs).ok();
            (Some(inputs), trace)
        }
        None => (None, None),
    };
    Ok(CampaignEntry { index, outcome, inputs, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::validate_model;
    use alloc::vec;

    fn leaf(kind: LayerKind, children: Vec<GenTree>) -> GenTree {
        let mut l = GenLayer::new(kind);
        l.children = children;
        GenTree::Layer(Box::new(l))
    }

    #[test]
    fn valid_tree_returns_on_first_try() {
        let tree = leaf(LayerKind::Flatten, vec![GenTree::Input(vec![2, 3])]);
        let out = find_valid_model(tree.clone(), &GenConfig::default(), &mut Rng::new(1));
        assert_eq!(out.tries, 1);
        assert!(out.steps.is_empty());
        assert!(out.last_invalid.is_none());
        assert_eq!(out.tree.layer_count(), 1);
    }

    #[test]
    fn dense_into_conv1d_repairs_with_a_reshape() {
        let dense = leaf(LayerKind::Dense { units: 3 }, vec![GenTree::Input(vec![4])]);
        let conv = LayerKind::Conv1D { filters: 2, kernel_size: 1, strides: 1, padding: crate::ir::Padding::Valid };
        let tree = leaf(conv, vec![dense]);
        let cfg = GenConfig { palette: vec![(KindTag::Reshape, 1.0)], ..GenConfig::default() };
        let mut found = false;
        for seed in 0..20 {
            let out = find_valid_model(tree.clone(), &cfg, &mut Rng::new(seed));
            let Some(g) = out.model else { continue };
            assert!(validate_model(&g, None, Report::First).is_empty());
            if g.contains_kind(KindTag::Reshape) && g.contains_kind(KindTag::Conv1D) {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn restores_never_follow_twice_without_progress() {
        let cfg = GenConfig::default();
        for index in 0..30 {
            let entry = generate_campaign_entry(&GenConfig { seed: 5, ..cfg.clone() }, index).unwrap();
            for w in entry.outcome.steps.windows(2) {
                if w[1].location == w[0].location && !w[0].restored {
                    assert_eq!(w[1].badness >= w[0].badness, w[1].restored);
                }
            }
            if let Some(g) = &entry.outcome.model {
                assert!(entry.outcome.tree.height() <= cfg.max_level);
                assert!(validate_model(g, entry.inputs.as_ref(), Report::All).is_empty());
            }
        }
    }

    #[test]
    fn campaign_entries_are_reproducible() {
        let cfg = GenConfig { seed: 11, ..GenConfig::default() };
        for index in 0..5 {
            assert_eq!(generate_campaign_entry(&cfg, index), generate_campaign_entry(&cfg, index));
        }
    }
}
