use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::GenConfig;
use crate::ir::{InputSpec, LayerKind, LayerNode, ModelGraph};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::validator;

/// Child indices from the root down to a node.
pub type Path = Vec<usize>;

/// Preferred output shape of a materialized reshape.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum ShapeHint {
    Free,
    /// Non-batch rank.
    Rank(usize),
    Exact(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenLayer {
    pub kind: LayerKind,
    pub weights: Vec<Tensor>,
    pub children: Vec<GenTree>,
    /// Input shapes the weights and input-dependent args were drawn for.
    pub(crate) materialized_for: Option<Vec<Vec<usize>>>,
    pub(crate) hint: ShapeHint,
}

impl GenLayer {
    pub fn new(kind: LayerKind) -> Self {
        GenLayer { kind, weights: Vec::new(), children: Vec::new(), materialized_for: None, hint: ShapeHint::Free }
    }

    /// Forget materialized weights so they are drawn again on the next freeze.
    pub(crate) fn reset(&mut self) {
        self.weights.clear();
        self.materialized_for = None;
    }

    /// Draws weights and input-dependent args for the given input shapes.
    fn materialize(&mut self, shapes: &[&[usize]], cfg: &GenConfig, rng: &mut Rng) {
        let s = shapes[0];
        self.weights = match &mut self.kind {
            LayerKind::Dense { units } if !s.is_empty() => {
                vec![cfg.tensor(vec![s[s.len() - 1], *units], rng), cfg.tensor(vec![*units], rng)]
            }
            LayerKind::Conv1D { filters, kernel_size, .. } if s.len() == 2 => {
                vec![cfg.tensor(vec![*kernel_size, s[1], *filters], rng), cfg.tensor(vec![*filters], rng)]
            }
            LayerKind::Conv2D { filters, kernel_size, .. } if s.len() == 3 => {
                vec![cfg.tensor(vec![kernel_size[0], kernel_size[1], s[2], *filters], rng), cfg.tensor(vec![*filters], rng)]
            }
            LayerKind::BatchNormalization { .. } if !s.is_empty() => {
                let ch = s[s.len() - 1];
                let mut var = cfg.tensor(vec![ch], rng);
                var = var.map(f64::abs);
                vec![cfg.tensor(vec![ch], rng), cfg.tensor(vec![ch], rng), cfg.tensor(vec![ch], rng), var]
            }
            LayerKind::Reshape { target_shape } => {
                let count: usize = s.iter().product();
                *target_shape = match &self.hint {
                    ShapeHint::Exact(t) if t.iter().product::<usize>() == count => t.clone(),
                    ShapeHint::Rank(r) => factorize(count, *r, rng),
                    ShapeHint::Exact(t) => factorize(count, t.len(), rng),
                    ShapeHint::Free => factorize(count, rng.range(1, 3), rng),
                };
                Vec::new()
            }
            LayerKind::Permute { dims } => {
                let mut order: Vec<usize> = (1..=s.len()).collect();
                rng.shuffle(&mut order);
                *dims = order;
                Vec::new()
            }
            _ => Vec::new(),
        };
        self.materialized_for = Some(shapes.iter().map(|s| s.to_vec()).collect());
    }
}

/// Random factorization of `count` into `rank` positive dims.
fn factorize(count: usize, rank: usize, rng: &mut Rng) -> Vec<usize> {
    let rank = rank.max(1);
    let mut rest = count.max(1);
    let mut dims = Vec::with_capacity(rank);
    for _ in 1..rank {
        let divisors: Vec<usize> = (1..=rest).filter(|d| rest.is_multiple_of(*d)).collect();
        let d = *rng.choose(&divisors);
        dims.push(d);
        rest /= d;
    }
    dims.push(rest);
    dims
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenTree {
    /// Graph input with its non-batch shape.
    Input(Vec<usize>),
    Layer(Box<GenLayer>),
}

/// A tree frozen into a graph, with the tree position of every node id.
pub struct Frozen {
    pub graph: ModelGraph,
    pub paths: BTreeMap<String, Path>,
}

impl GenTree {
    /// Longest root-to-leaf edge count.
    pub fn height(&self) -> usize {
        match self {
            GenTree::Input(_) => 0,
            GenTree::Layer(l) => 1 + l.children.iter().map(GenTree::height).max().unwrap_or(0),
        }
    }

    pub fn layer_count(&self) -> usize {
        match self {
            GenTree::Input(_) => 0,
            GenTree::Layer(l) => 1 + l.children.iter().map(GenTree::layer_count).sum::<usize>(),
        }
    }

    pub fn at(&self, path: &[usize]) -> &GenTree {
        path.iter().fold(self, |t, &i| match t {
            GenTree::Layer(l) => &l.children[i],
            GenTree::Input(_) => panic!("path runs through an input"),
        })
    }

    pub fn at_mut(&mut self, path: &[usize]) -> &mut GenTree {
        path.iter().fold(self, |t, &i| match t {
            GenTree::Layer(l) => &mut l.children[i],
            GenTree::Input(_) => panic!("path runs through an input"),
        })
    }

    /// Materializes stale layers, then converts the tree to a graph. Layer
    /// ids are `<kind>_<n>` and input ids `input_<n>`, numbered in post-order.
    pub fn freeze(&mut self, cfg: &GenConfig, rng: &mut Rng) -> Frozen {
        let mut st = FreezeState { inputs: Vec::new(), nodes: Vec::new(), paths: BTreeMap::new(), counter: 0 };
        let mut path = Vec::new();
        let (root, _) = st.visit(self, &mut path, cfg, rng);
        let graph = ModelGraph::new(st.inputs, st.nodes, root).expect("generated trees are well-formed graphs");
        Frozen { graph, paths: st.paths }
    }
}

struct FreezeState {
    inputs: Vec<InputSpec>,
    nodes: Vec<LayerNode>,
    paths: BTreeMap<String, Path>,
    counter: usize,
}

impl FreezeState {
    /// Returns the node id and its output shape, when that is defined.
    fn visit(&mut self, t: &mut GenTree, path: &mut Path, cfg: &GenConfig, rng: &mut Rng) -> (String, Option<Vec<usize>>) {
        match t {
            GenTree::Input(shape) => {
                let id = format!("input_{}", self.counter);
                self.counter += 1;
                self.inputs.push(InputSpec { id: id.clone(), shape: shape.clone() });
                self.paths.insert(id.clone(), path.clone());
                (id, Some(shape.clone()))
            }
            GenTree::Layer(layer) => {
                let mut ids = Vec::new();
                let mut shapes = Vec::new();
                for (i, child) in layer.children.iter_mut().enumerate() {
                    path.push(i);
                    let (id, shape) = self.visit(child, path, cfg, rng);
                    path.pop();
                    ids.push(id);
                    shapes.push(shape);
                }
                let known: Option<Vec<Vec<usize>>> = shapes.into_iter().collect();
                let id = format!("{}_{}", layer.kind.tag().name().to_ascii_lowercase(), self.counter);
                self.counter += 1;
                let mut out = None;
                if let Some(known) = known.filter(|k| !k.is_empty()) {
                    let refs: Vec<&[usize]> = known.iter().map(Vec::as_slice).collect();
                    if layer.materialized_for.as_ref() != Some(&known) {
                        layer.materialize(&refs, cfg, rng);
                    }
                    let node = LayerNode { id: id.clone(), kind: layer.kind.clone(), weights: layer.weights.clone(), inputs: Vec::new() };
                    out = validator::infer_layer(&node, &refs).ok();
                }
                self.nodes.push(LayerNode { id: id.clone(), kind: layer.kind.clone(), weights: layer.weights.clone(), inputs: ids });
                self.paths.insert(id.clone(), path.clone());
                (id, out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::KindTag;

    #[test]
    fn factorization_preserves_count() {
        let mut rng = Rng::new(3);
        for count in 1..40 {
            for rank in 1..4 {
                let f = factorize(count, rank, &mut rng);
                assert_eq!(f.len(), rank);
                assert_eq!(f.iter().product::<usize>(), count);
            }
        }
    }

    #[test]
    fn reshape_materializes_against_its_input() {
        let cfg = GenConfig::default();
        let mut rng = Rng::new(9);
        let mut layer = GenLayer::new(LayerKind::Reshape { target_shape: Vec::new() });
        layer.hint = ShapeHint::Rank(3);
        layer.children.push(GenTree::Input(vec![2, 6]));
        let mut t = GenTree::Layer(Box::new(layer));
        let frozen = t.freeze(&cfg, &mut rng);
        let node = &frozen.graph.nodes()[0];
        assert_eq!(node.kind.tag(), KindTag::Reshape);
        let LayerKind::Reshape { target_shape } = &node.kind else { unreachable!() };
        assert_eq!(target_shape.len(), 3);
        assert_eq!(target_shape.iter().product::<usize>(), 12);
        assert_eq!(frozen.paths["reshape_1"], Vec::<usize>::new());
        assert_eq!(frozen.paths["input_0"], vec![0]);
    }
}
