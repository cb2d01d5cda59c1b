//! Layer-graph representation shared by the semantics, the validator, the
//! fuzzer and the backend adapters.
//!
//! Shapes in [`InputSpec`] exclude the batch axis; tensors always carry it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::Tensor;

/// Boundary mode for sliding-window layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "valid" => Some(Padding::Valid),
            "same" => Some(Padding::Same),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationFn {
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Linear,
}

impl ActivationFn {
    pub const ALL: [ActivationFn; 5] = [
        ActivationFn::Relu,
        ActivationFn::Sigmoid,
        ActivationFn::Tanh,
        ActivationFn::Softmax,
        ActivationFn::Linear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivationFn::Relu => "relu",
            ActivationFn::Sigmoid => "sigmoid",
            ActivationFn::Tanh => "tanh",
            ActivationFn::Softmax => "softmax",
            ActivationFn::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// Arguments of a ReLU layer. `max_value: None` means unbounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluArgs {
    pub max_value: Option<f64>,
    pub negative_slope: f64,
    pub threshold: f64,
}

impl Default for ReluArgs {
    fn default() -> Self {
        ReluArgs { max_value: None, negative_slope: 0.0, threshold: 0.0 }
    }
}

/// Layer kind together with its arguments.
///
/// Two-dimensional geometry is `[rows, cols]`; 2D cropping and padding are
/// `[top, bottom, left, right]`. `Permute::dims` is 1-based over the
/// non-batch axes, as in Keras. `Concatenate::axis` may be negative.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Dense { units: usize },
    Conv1D { filters: usize, kernel_size: usize, strides: usize, padding: Padding },
    Conv2D { filters: usize, kernel_size: [usize; 2], strides: [usize; 2], padding: Padding },
    MaxPool1D { pool_size: usize, strides: usize, padding: Padding },
    MaxPool2D { pool_size: [usize; 2], strides: [usize; 2], padding: Padding },
    AvgPool1D { pool_size: usize, strides: usize, padding: Padding },
    AvgPool2D { pool_size: [usize; 2], strides: [usize; 2], padding: Padding },
    GlobalMaxPool1D,
    GlobalAvgPool1D,
    Flatten,
    Reshape { target_shape: Vec<usize> },
    Permute { dims: Vec<usize> },
    RepeatVector { n: usize },
    Cropping1D { cropping: [usize; 2] },
    Cropping2D { cropping: [usize; 4] },
    ZeroPadding1D { padding: [usize; 2] },
    ZeroPadding2D { padding: [usize; 4] },
    UpSampling1D { size: usize },
    UpSampling2D { size: [usize; 2] },
    Concatenate { axis: i64 },
    Add,
    Subtract,
    Multiply,
    Average,
    Maximum,
    Minimum,
    ReLU(ReluArgs),
    Activation(ActivationFn),
    BatchNormalization { epsilon: f64 },
    Dropout { rate: f64 },
}

/// Argument-free discriminant of [`LayerKind`], used for palettes, filters
/// and the interchange `kind` field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KindTag {
    Dense,
    Conv1D,
    Conv2D,
    MaxPool1D,
    MaxPool2D,
    AvgPool1D,
    AvgPool2D,
    GlobalMaxPool1D,
    GlobalAvgPool1D,
    Flatten,
    Reshape,
    Permute,
    RepeatVector,
    Cropping1D,
    Cropping2D,
    ZeroPadding1D,
    ZeroPadding2D,
    UpSampling1D,
    UpSampling2D,
    Concatenate,
    Add,
    Subtract,
    Multiply,
    Average,
    Maximum,
    Minimum,
    ReLU,
    Activation,
    BatchNormalization,
    Dropout,
}

impl KindTag {
    pub const ALL: [KindTag; 30] = [
        KindTag::Dense,
        KindTag::Conv1D,
        KindTag::Conv2D,
        KindTag::MaxPool1D,
        KindTag::MaxPool2D,
        KindTag::AvgPool1D,
        KindTag::AvgPool2D,
        KindTag::GlobalMaxPool1D,
        KindTag::GlobalAvgPool1D,
        KindTag::Flatten,
        KindTag::Reshape,
        KindTag::Permute,
        KindTag::RepeatVector,
        KindTag::Cropping1D,
        KindTag::Cropping2D,
        KindTag::ZeroPadding1D,
        KindTag::ZeroPadding2D,
        KindTag::UpSampling1D,
        KindTag::UpSampling2D,
        KindTag::Concatenate,
        KindTag::Add,
        KindTag::Subtract,
        KindTag::Multiply,
        KindTag::Average,
        KindTag::Maximum,
        KindTag::Minimum,
        KindTag::ReLU,
        KindTag::Activation,
        KindTag::BatchNormalization,
        KindTag::Dropout,
    ];

    /// Interchange name; matches the Keras layer class.
    pub fn name(self) -> &'static str {
        match self {
            KindTag::Dense => "Dense",
            KindTag::Conv1D => "Conv1D",
            KindTag::Conv2D => "Conv2D",
            KindTag::MaxPool1D => "MaxPool1D",
            KindTag::MaxPool2D => "MaxPool2D",
            KindTag::AvgPool1D => "AvgPool1D",
            KindTag::AvgPool2D => "AvgPool2D",
            KindTag::GlobalMaxPool1D => "GlobalMaxPool1D",
            KindTag::GlobalAvgPool1D => "GlobalAvgPool1D",
            KindTag::Flatten => "Flatten",
            KindTag::Reshape => "Reshape",
            KindTag::Permute => "Permute",
            KindTag::RepeatVector => "RepeatVector",
            KindTag::Cropping1D => "Cropping1D",
            KindTag::Cropping2D => "Cropping2D",
            KindTag::ZeroPadding1D => "ZeroPadding1D",
            KindTag::ZeroPadding2D => "ZeroPadding2D",
            KindTag::UpSampling1D => "UpSampling1D",
            KindTag::UpSampling2D => "UpSampling2D",
            KindTag::Concatenate => "Concatenate",
            KindTag::Add => "Add",
            KindTag::Subtract => "Subtract",
            KindTag::Multiply => "Multiply",
            KindTag::Average => "Average",
            KindTag::Maximum => "Maximum",
            KindTag::Minimum => "Minimum",
            KindTag::ReLU => "ReLU",
            KindTag::Activation => "Activation",
            KindTag::BatchNormalization => "BatchNormalization",
            KindTag::Dropout => "Dropout",
        }
    }

    /// Also accepts the Keras class names of the pooling kinds.
    pub fn from_name(name: &str) -> Option<Self> {
        let canonical = match name {
            "MaxPooling1D" => "MaxPool1D",
            "MaxPooling2D" => "MaxPool2D",
            "AveragePooling1D" => "AvgPool1D",
            "AveragePooling2D" => "AvgPool2D",
            "GlobalMaxPooling1D" => "GlobalMaxPool1D",
            "GlobalAveragePooling1D" => "GlobalAvgPool1D",
            other => other,
        };
        Self::ALL.into_iter().find(|k| k.name() == canonical)
    }

    /// Merge kinds take 2..=3 inputs (Subtract exactly 2).
    pub fn is_merge(self) -> bool {
        matches!(
            self,
            KindTag::Concatenate
                | KindTag::Add
                | KindTag::Subtract
                | KindTag::Multiply
                | KindTag::Average
                | KindTag::Maximum
                | KindTag::Minimum
        )
    }

    /// Inclusive input-count bounds.
    pub fn arity(self) -> (usize, usize) {
        match self {
            KindTag::Subtract => (2, 2),
            k if k.is_merge() => (2, 3),
            _ => (1, 1),
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, KindTag::Dropout)
    }
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LayerKind {
    pub fn tag(&self) -> KindTag {
        match self {
            LayerKind::Dense { .. } => KindTag::Dense,
            LayerKind::Conv1D { .. } => KindTag::Conv1D,
            LayerKind::Conv2D { .. } => KindTag::Conv2D,
            LayerKind::MaxPool1D { .. } => KindTag::MaxPool1D,
            LayerKind::MaxPool2D { .. } => KindTag::MaxPool2D,
            LayerKind::AvgPool1D { .. } => KindTag::AvgPool1D,
            LayerKind::AvgPool2D { .. } => KindTag::AvgPool2D,
            LayerKind::GlobalMaxPool1D => KindTag::GlobalMaxPool1D,
            LayerKind::GlobalAvgPool1D => KindTag::GlobalAvgPool1D,
            LayerKind::Flatten => KindTag::Flatten,
            LayerKind::Reshape { .. } => KindTag::Reshape,
            LayerKind::Permute { .. } => KindTag::Permute,
            LayerKind::RepeatVector { .. } => KindTag::RepeatVector,
            LayerKind::Cropping1D { .. } => KindTag::Cropping1D,
            LayerKind::Cropping2D { .. } => KindTag::Cropping2D,
            LayerKind::ZeroPadding1D { .. } => KindTag::ZeroPadding1D,
            LayerKind::ZeroPadding2D { .. } => KindTag::ZeroPadding2D,
            LayerKind::UpSampling1D { .. } => KindTag::UpSampling1D,
            LayerKind::UpSampling2D { .. } => KindTag::UpSampling2D,
            LayerKind::Concatenate { .. } => KindTag::Concatenate,
            LayerKind::Add => KindTag::Add,
            LayerKind::Subtract => KindTag::Subtract,
            LayerKind::Multiply => KindTag::Multiply,
            LayerKind::Average => KindTag::Average,
            LayerKind::Maximum => KindTag::Maximum,
            LayerKind::Minimum => KindTag::Minimum,
            LayerKind::ReLU(_) => KindTag::ReLU,
            LayerKind::Activation(_) => KindTag::Activation,
            LayerKind::BatchNormalization { .. } => KindTag::BatchNormalization,
            LayerKind::Dropout { .. } => KindTag::Dropout,
        }
    }
}

/// Graph input: id plus shape without the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec {
    pub id: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub weights: Vec<Tensor>,
    pub inputs: Vec<String>,
}

/// Input bindings: one batched tensor per graph input id.
pub type Bindings = BTreeMap<String, Tensor>;

/// Per-node outputs of an evaluation, including the graph inputs.
pub type EvalTrace = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphError {
    DuplicateId(String),
    DanglingEdge { node: String, missing: String },
    CycleDetected(String),
    UnknownOutput(String),
    Unreachable(String),
    BadArity { node: String, expected: (usize, usize), found: usize },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::DuplicateId(id) => write!(f, "duplicate node id {id:?}"),
            GraphError::DanglingEdge { node, missing } => {
                write!(f, "node {node:?} references missing node {missing:?}")
            }
            GraphError::CycleDetected(id) => write!(f, "cycle through node {id:?}"),
            GraphError::UnknownOutput(id) => write!(f, "output {id:?} is not a node"),
            GraphError::Unreachable(id) => write!(f, "node {id:?} is not reachable from the output"),
            GraphError::BadArity { node, expected, found } => write!(
                f,
                "node {node:?} takes {}..={} inputs, found {found}",
                expected.0, expected.1
            ),
        }
    }
}

impl core::error::Error for GraphError {}

/// Directed acyclic graph of layers.
///
/// [`ModelGraph::new`] checks the structural invariants (unique ids, edges,
/// acyclicity, output reachability). Input arity is a layer precondition and
/// is left to the validator, so the fuzzer can represent arity faults;
/// [`ModelGraph::check_arity`] is the strict check used when loading files.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    inputs: Vec<InputSpec>,
    nodes: Vec<LayerNode>,
    output: String,
}

impl ModelGraph {
    pub fn new(inputs: Vec<InputSpec>, nodes: Vec<LayerNode>, output: String) -> Result<Self, GraphError> {
        let g = ModelGraph { inputs, nodes, output };
        let mut ids = BTreeSet::new();
        for id in g.inputs.iter().map(|i| &i.id).chain(g.nodes.iter().map(|n| &n.id)) {
            if !ids.insert(id.as_str()) {
                return Err(GraphError::DuplicateId(id.clone()));
            }
        }
        for n in &g.nodes {
            for src in &n.inputs {
                if !ids.contains(src.as_str()) {
                    return Err(GraphError::DanglingEdge { node: n.id.clone(), missing: src.clone() });
                }
            }
        }
        if !ids.contains(g.output.as_str()) {
            return Err(GraphError::UnknownOutput(g.output.clone()));
        }
        let order = g.topo_order()?;
        let reachable: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        if let Some(n) = g.nodes.iter().find(|n| !reachable.contains(n.id.as_str())) {
            return Err(GraphError::Unreachable(n.id.clone()));
        }
        Ok(g)
    }

    pub fn inputs(&self) -> &[InputSpec] {
        &self.inputs
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input(&self, id: &str) -> Option<&InputSpec> {
        self.inputs.iter().find(|i| i.id == id)
    }

    pub fn is_input(&self, id: &str) -> bool {
        self.input(id).is_some()
    }

    pub fn check_arity(&self) -> Result<(), GraphError> {
        for n in &self.nodes {
            let (lo, hi) = n.kind.tag().arity();
            if n.inputs.len() < lo || n.inputs.len() > hi {
                return Err(GraphError::BadArity {
                    node: n.id.clone(),
                    expected: (lo, hi),
                    found: n.inputs.len(),
                });
            }
        }
        Ok(())
    }

    pub fn has_stochastic(&self) -> bool {
        self.nodes.iter().any(|n| n.kind.tag().is_stochastic())
    }

    pub fn contains_kind(&self, tag: KindTag) -> bool {
        self.nodes.iter().any(|n| n.kind.tag() == tag)
    }

    /// Evaluation order: graph inputs first (declared order), then layers in
    /// depth-first post-order from the output, visiting each node's inputs in
    /// edge order. Independent of the order of the node list.
    pub fn topo_order(&self) -> Result<Vec<String>, GraphError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        let by_id: BTreeMap<&str, &LayerNode> = self.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        let mut order: Vec<String> = self.inputs.iter().map(|i| i.id.clone()).collect();
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        // explicit stack of (node, next input index)
        let mut stack: Vec<(&LayerNode, usize)> = Vec::new();
        if let Some(root) = by_id.get(self.output.as_str()) {
            marks.insert(root.id.as_str(), Mark::Active);
            stack.push((root, 0));
        }
        while let Some((node, next)) = stack.pop() {
            if next < node.inputs.len() {
                stack.push((node, next + 1));
                let src = node.inputs[next].as_str();
                match (marks.get(src), by_id.get(src)) {
                    (Some(Mark::Active), _) => return Err(GraphError::CycleDetected(String::from(src))),
                    (Some(Mark::Done), _) | (None, None) => {}
                    (None, Some(child)) => {
                        marks.insert(src, Mark::Active);
                        stack.push((child, 0));
                    }
                }
            } else {
                marks.insert(node.id.as_str(), Mark::Done);
                order.push(node.id.clone());
            }
        }
        // cycles not reachable from the output still make the graph invalid
        if order.len() - self.inputs.len() < self.nodes.len() {
            let mut state: BTreeMap<&str, usize> =
                self.nodes.iter().map(|n| (n.id.as_str(), n.inputs.iter().filter(|s| by_id.contains_key(s.as_str())).count())).collect();
            let mut ready: Vec<&str> = state.iter().filter(|(_, &c)| c == 0).map(|(&id, _)| id).collect();
            let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for n in &self.nodes {
                for s in &n.inputs {
                    consumers.entry(s.as_str()).or_default().push(n.id.as_str());
                }
            }
            while let Some(id) = ready.pop() {
                state.remove(id);
                for &c in consumers.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                    if let Some(count) = state.get_mut(c) {
                        *count -= 1;
                        if *count == 0 {
                            ready.push(c);
                        }
                    }
                }
            }
            if let Some((&id, _)) = state.iter().next() {
                return Err(GraphError::CycleDetected(String::from(id)));
            }
        }
        Ok(order)
    }

    /// Sub-graph computing `target`: its ancestors only, with `target` as output.
    pub fn probe(&self, target: &str) -> Option<ModelGraph> {
        if self.is_input(target) {
            return None;
        }
        let mut keep = BTreeSet::new();
        let mut work = alloc::vec![target];
        while let Some(id) = work.pop() {
            if keep.insert(id) {
                if let Some(n) = self.node(id) {
                    work.extend(n.inputs.iter().map(String::as_str));
                }
            }
        }
        let inputs = self.inputs.iter().filter(|i| keep.contains(i.id.as_str())).cloned().collect();
        let nodes = self.nodes.iter().filter(|n| keep.contains(n.id.as_str())).cloned().collect();
        ModelGraph::new(inputs, nodes, String::from(target)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn node(id: &str, kind: LayerKind, inputs: &[&str]) -> LayerNode {
        LayerNode {
            id: id.to_string(),
            kind,
            weights: vec![],
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn input(id: &str) -> InputSpec {
        InputSpec { id: id.to_string(), shape: vec![2, 2] }
    }

    fn crop_concat_graph(nodes: Vec<LayerNode>) -> ModelGraph {
        ModelGraph::new(vec![input("in0"), input("in1")], nodes, "Con1".to_string()).unwrap()
    }

    fn crop_concat_nodes() -> Vec<LayerNode> {
        vec![
            node("Max", LayerKind::MaxPool1D { pool_size: 1, strides: 1, padding: Padding::Valid }, &["in0"]),
            node("Con", LayerKind::Conv1D { filters: 2, kernel_size: 1, strides: 1, padding: Padding::Valid }, &["in1"]),
            node("Cro", LayerKind::Cropping1D { cropping: [5, 5] }, &["Con"]),
            node("Con1", LayerKind::Concatenate { axis: 1 }, &["Max", "Cro"]),
        ]
    }

    #[test]
    fn topo_order_inputs_first() {
        let g = crop_concat_graph(crop_concat_nodes());
        assert_eq!(g.topo_order().unwrap(), ["in0", "in1", "Max", "Con", "Cro", "Con1"]);
        let mut permuted = crop_concat_nodes();
        permuted.reverse();
        assert_eq!(crop_concat_graph(permuted).topo_order().unwrap(), g.topo_order().unwrap());
    }

    #[test]
    fn topo_order_chain_and_diamond() {
        let chain = ModelGraph::new(
            vec![input("x")],
            vec![node("c", LayerKind::Flatten, &["b"]), node("b", LayerKind::Flatten, &["a"]), node("a", LayerKind::Flatten, &["x"])],
            "c".to_string(),
        )
        .unwrap();
        assert_eq!(chain.topo_order().unwrap(), ["x", "a", "b", "c"]);

        let diamond = ModelGraph::new(
            vec![input("x")],
            vec![
                node("j", LayerKind::Add, &["l", "r"]),
                node("l", LayerKind::Flatten, &["s"]),
                node("r", LayerKind::Flatten, &["s"]),
                node("s", LayerKind::Flatten, &["x"]),
            ],
            "j".to_string(),
        )
        .unwrap();
        let order = diamond.topo_order().unwrap();
        let pos = |id: &str| order.iter().position(|o| o == id).unwrap();
        assert!(pos("s") < pos("l") && pos("s") < pos("r"));
        assert!(pos("l") < pos("j") && pos("r") < pos("j"));
        assert_eq!(order.len(), 5);
    }

    #[test]
    fn structural_errors() {
        let dangling = ModelGraph::new(vec![input("x")], vec![node("a", LayerKind::Flatten, &["nope"])], "a".to_string());
        assert_eq!(dangling, Err(GraphError::DanglingEdge { node: "a".to_string(), missing: "nope".to_string() }));

        let cycle = ModelGraph::new(
            vec![input("x")],
            vec![node("a", LayerKind::Add, &["x", "b"]), node("b", LayerKind::Flatten, &["a"])],
            "a".to_string(),
        );
        assert!(matches!(cycle, Err(GraphError::CycleDetected(_))));

        let dup = ModelGraph::new(vec![input("x")], vec![node("x", LayerKind::Flatten, &["x"])], "x".to_string());
        assert_eq!(dup, Err(GraphError::DuplicateId("x".to_string())));

        let dead = ModelGraph::new(
            vec![input("x")],
            vec![node("a", LayerKind::Flatten, &["x"]), node("b", LayerKind::Flatten, &["x"])],
            "a".to_string(),
        );
        assert_eq!(dead, Err(GraphError::Unreachable("b".to_string())));
    }

    #[test]
    fn arity_is_checked_separately() {
        let g = ModelGraph::new(vec![input("x")], vec![node("a", LayerKind::Add, &["x"])], "a".to_string()).unwrap();
        assert!(matches!(g.check_arity(), Err(GraphError::BadArity { found: 1, .. })));
    }

    #[test]
    fn probe_keeps_ancestors() {
        let g = crop_concat_graph(crop_concat_nodes());
        let p = g.probe("Cro").unwrap();
        assert_eq!(p.topo_order().unwrap(), ["in1", "Con", "Cro"]);
        assert!(g.probe("in0").is_none());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in KindTag::ALL {
            assert_eq!(KindTag::from_name(k.name()), Some(k));
        }
        assert_eq!(KindTag::from_name("LSTM"), None);
        assert_eq!(KindTag::from_name("AveragePooling2D"), Some(KindTag::AvgPool2D));
    }
}
