//! Layer preconditions and model validation.
//!
//! Shape propagation here is symbolic: shapes exclude the batch axis, so a
//! model can be validated without any input tensors. The same per-layer rule
//! ([`infer_layer`]) guards every step of [`crate::semantics::eval_model`],
//! which keeps validation and evaluation in agreement.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::ir::{Bindings, LayerKind, LayerNode, ModelGraph, Padding};

/// Machine-readable violation code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorCode {
    Dim,
    InputShapeInconsistent,
    KernelTooLarge,
    WeightShape,
    AxisOutOfRange,
    ArgInvalid,
    EmptyOutput,
    Arity,
}

/// The three model-issue categories violations are reported under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    DimensionError,
    InconsistentInputShapes,
    ArgumentError,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::DimensionError => "Dimension Error",
            Category::InconsistentInputShapes => "Inconsistent Input Shapes",
            Category::ArgumentError => "Argument Error",
        }
    }
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 8] = [
        ErrorCode::Dim,
        ErrorCode::InputShapeInconsistent,
        ErrorCode::KernelTooLarge,
        ErrorCode::WeightShape,
        ErrorCode::AxisOutOfRange,
        ErrorCode::ArgInvalid,
        ErrorCode::EmptyOutput,
        ErrorCode::Arity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Dim => "E_DIM",
            ErrorCode::InputShapeInconsistent => "E_INPUT_SHAPE_INCONSISTENT",
            ErrorCode::KernelTooLarge => "E_KERNEL_TOO_LARGE",
            ErrorCode::WeightShape => "E_WEIGHT_SHAPE",
            ErrorCode::AxisOutOfRange => "E_AXIS_OOB",
            ErrorCode::ArgInvalid => "E_ARG_INVALID",
            ErrorCode::EmptyOutput => "E_EMPTY_OUTPUT",
            ErrorCode::Arity => "E_ARITY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn category(self) -> Category {
        match self {
            ErrorCode::Dim => Category::DimensionError,
            ErrorCode::InputShapeInconsistent => Category::InconsistentInputShapes,
            _ => Category::ArgumentError,
        }
    }

    /// Severity factor of the badness value.
    pub fn severity(self) -> f64 {
        match self {
            ErrorCode::Dim => 10.0,
            ErrorCode::InputShapeInconsistent => 6.0,
            ErrorCode::WeightShape => 4.0,
            ErrorCode::KernelTooLarge => 2.0,
            ErrorCode::AxisOutOfRange => 2.0,
            ErrorCode::ArgInvalid => 2.0,
            ErrorCode::EmptyOutput => 4.0,
            ErrorCode::Arity => 8.0,
        }
    }

    /// Message template. Placeholders: `{layer}`, `{expected}`, `{observed}`, `{shape}`.
    pub fn template(self) -> &'static str {
        match self {
            ErrorCode::Dim => "Dimension Error: unsupported input rank at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::InputShapeInconsistent => "Inconsistent Input Shapes: inputs do not match at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::KernelTooLarge => "Argument Error: window larger than input at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::WeightShape => "Argument Error: weights do not fit the input, either side may be at fault, at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::AxisOutOfRange => "Argument Error: axis out of range at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::ArgInvalid => "Argument Error: invalid layer argument at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::EmptyOutput => "Argument Error: empty layer output at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
            ErrorCode::Arity => "Argument Error: wrong number of inputs at layer {layer} (expected {expected}, observed {observed}), input shape {shape}",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `severity(code) × |expected − observed|`, or `severity(code)` when either
/// side is unknown.
pub fn badness(code: ErrorCode, expected: Option<i64>, observed: Option<i64>) -> f64 {
    let distance = match (expected, observed) {
        (Some(e), Some(o)) => e.abs_diff(o) as f64,
        _ => 1.0,
    };
    code.severity() * distance
}

/// A failed precondition, located at one layer (or graph input).
#[derive(Clone, Debug, PartialEq)]
pub struct PrecondViolation {
    pub code: ErrorCode,
    pub layer_id: String,
    pub message: String,
    pub badness: f64,
    pub expected: Option<i64>,
    pub observed: Option<i64>,
    /// Which input edge of the layer the fault was observed on, when known.
    pub input_index: Option<usize>,
}

impl fmt::Display for PrecondViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// Layer-local failure before it is attached to a layer id.
#[derive(Clone, Debug, PartialEq)]
pub struct Fault {
    pub code: ErrorCode,
    pub expected: Option<i64>,
    pub observed: Option<i64>,
    pub input_index: Option<usize>,
}

impl Fault {
    pub fn new(code: ErrorCode, expected: i64, observed: i64) -> Self {
        Fault { code, expected: Some(expected), observed: Some(observed), input_index: None }
    }

    pub fn bare(code: ErrorCode) -> Self {
        Fault { code, expected: None, observed: None, input_index: None }
    }

    pub fn on_input(mut self, index: usize) -> Self {
        self.input_index = Some(index);
        self
    }

    /// Attaches the fault to `layer_id`, rendering the message template.
    /// `input_shapes` exclude the batch axis; `batch` renders as `?` when unknown.
    pub fn at(self, layer_id: &str, input_shapes: &[&[usize]], batch: Option<usize>) -> PrecondViolation {
        let shape = render_shapes(input_shapes, batch);
        let message = render_message(self.code, layer_id, self.expected, self.observed, &shape);
        PrecondViolation {
            code: self.code,
            layer_id: layer_id.to_string(),
            message,
            badness: badness(self.code, self.expected, self.observed),
            expected: self.expected,
            observed: self.observed,
            input_index: self.input_index,
        }
    }
}

fn render_shapes(shapes: &[&[usize]], batch: Option<usize>) -> String {
    let mut out = String::new();
    for (i, s) in shapes.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push('[');
        match batch {
            Some(b) => out.push_str(&b.to_string()),
            None => out.push('?'),
        }
        for d in s.iter() {
            out.push(',');
            out.push_str(&d.to_string());
        }
        out.push(']');
    }
    if shapes.is_empty() {
        out.push_str("[]");
    }
    out
}

fn render_message(code: ErrorCode, layer: &str, expected: Option<i64>, observed: Option<i64>, shape: &str) -> String {
    let opt = |v: Option<i64>| v.map_or_else(|| String::from("n/a"), |v| v.to_string());
    code.template()
        .replace("{layer}", layer)
        .replace("{expected}", &opt(expected))
        .replace("{observed}", &opt(observed))
        .replace("{shape}", shape)
}

/// Output length and leading pad of a sliding window along one axis, or
/// `None` when a `valid` window does not fit.
pub fn window_geometry(len: usize, window: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if window > len {
                return None;
            }
            Some(((len - window) / stride + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out.saturating_sub(1)) * stride + window).saturating_sub(len);
            Some((out, total / 2))
        }
    }
}

fn rank_of(shape: &[usize]) -> i64 {
    shape.len() as i64 + 1
}

fn require_rank(shape: &[usize], rank: usize) -> Result<(), Fault> {
    if shape.len() + 1 != rank {
        return Err(Fault::new(ErrorCode::Dim, rank as i64, rank_of(shape)).on_input(0));
    }
    Ok(())
}

fn require_positive(values: &[usize]) -> Result<(), Fault> {
    match values.iter().find(|&&v| v == 0) {
        Some(_) => Err(Fault::new(ErrorCode::ArgInvalid, 1, 0)),
        None => Ok(()),
    }
}

fn check_weights(weights: &[crate::tensor::Tensor], expected: &[Vec<usize>]) -> Result<(), Fault> {
    if weights.len() != expected.len() {
        return Err(Fault::new(ErrorCode::WeightShape, expected.len() as i64, weights.len() as i64));
    }
    for (w, e) in weights.iter().zip(expected) {
        let dims = w.dims();
        if dims.len() != e.len() {
            return Err(Fault::new(ErrorCode::WeightShape, e.len() as i64, dims.len() as i64));
        }
        if let Some((&exp, &obs)) = e.iter().zip(dims).find(|(a, b)| a != b) {
            return Err(Fault::new(ErrorCode::WeightShape, exp as i64, obs as i64));
        }
    }
    Ok(())
}

fn check_windows(spatial: &[usize], window: &[usize], strides: &[usize], padding: Padding) -> Result<Vec<usize>, Fault> {
    require_positive(window)?;
    require_positive(strides)?;
    let mut out = Vec::with_capacity(spatial.len());
    for ((&len, &w), &s) in spatial.iter().zip(window).zip(strides) {
        match window_geometry(len, w, s, padding) {
            Some((o, _)) => out.push(o),
            None => return Err(Fault::new(ErrorCode::KernelTooLarge, len as i64, w as i64).on_input(0)),
        }
    }
    Ok(out)
}

fn check_merge_shapes(inputs: &[&[usize]], skip_axis: Option<usize>) -> Result<(), Fault> {
    let first = inputs[0];
    for (i, s) in inputs.iter().enumerate().skip(1) {
        if s.len() != first.len() {
            return Err(Fault::new(ErrorCode::Dim, rank_of(first), rank_of(s)).on_input(i));
        }
    }
    for (i, s) in inputs.iter().enumerate().skip(1) {
        for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
            if Some(d) != skip_axis && a != b {
                return Err(Fault::new(ErrorCode::InputShapeInconsistent, a as i64, b as i64).on_input(i));
            }
        }
    }
    Ok(())
}

/// Output shape of `node` given its input shapes (batch axis excluded), or
/// the first failed precondition.
pub fn infer_layer(node: &LayerNode, inputs: &[&[usize]]) -> Result<Vec<usize>, Fault> {
    let tag = node.kind.tag();
    let (lo, hi) = tag.arity();
    if inputs.len() < lo {
        return Err(Fault::new(ErrorCode::Arity, lo as i64, inputs.len() as i64));
    }
    if inputs.len() > hi {
        return Err(Fault::new(ErrorCode::Arity, hi as i64, inputs.len() as i64));
    }
    let s = inputs[0];
    let no_weights = || check_weights(&node.weights, &[]);
    let out = match &node.kind {
        LayerKind::Dense { units } => {
            if s.is_empty() {
                return Err(Fault::new(ErrorCode::Dim, 2, rank_of(s)).on_input(0));
            }
            require_positive(&[*units])?;
            let last = *s.last().unwrap();
            check_weights(&node.weights, &[vec![last, *units], vec![*units]])?;
            let mut out = s.to_vec();
            *out.last_mut().unwrap() = *units;
            out
        }
        LayerKind::Conv1D { filters, kernel_size, strides, padding } => {
            require_rank(s, 3)?;
            require_positive(&[*filters])?;
            let o = check_windows(&s[..1], &[*kernel_size], &[*strides], *padding)?;
            check_weights(&node.weights, &[vec![*kernel_size, s[1], *filters], vec![*filters]])?;
            vec![o[0], *filters]
        }
        LayerKind::Conv2D { filters, kernel_size, strides, padding } => {
            require_rank(s, 4)?;
            require_positive(&[*filters])?;
            let o = check_windows(&s[..2], kernel_size, strides, *padding)?;
            check_weights(&node.weights, &[vec![kernel_size[0], kernel_size[1], s[2], *filters], vec![*filters]])?;
            vec![o[0], o[1], *filters]
        }
        LayerKind::MaxPool1D { pool_size, strides, padding } | LayerKind::AvgPool1D { pool_size, strides, padding } => {
            require_rank(s, 3)?;
            let o = check_windows(&s[..1], &[*pool_size], &[*strides], *padding)?;
            no_weights()?;
            vec![o[0], s[1]]
        }
        LayerKind::MaxPool2D { pool_size, strides, padding } | LayerKind::AvgPool2D { pool_size, strides, padding } => {
            require_rank(s, 4)?;
            let o = check_windows(&s[..2], pool_size, strides, *padding)?;
            no_weights()?;
            vec![o[0], o[1], s[2]]
        }
        LayerKind::GlobalMaxPool1D | LayerKind::GlobalAvgPool1D => {
            require_rank(s, 3)?;
            no_weights()?;
            vec![s[1]]
        }
        LayerKind::Flatten => {
            if s.is_empty() {
                return Err(Fault::new(ErrorCode::Dim, 2, rank_of(s)).on_input(0));
            }
            no_weights()?;
            vec![s.iter().product()]
        }
        LayerKind::Reshape { target_shape } => {
            if target_shape.is_empty() {
                return Err(Fault::new(ErrorCode::ArgInvalid, 1, 0));
            }
            require_positive(target_shape)?;
            let have: usize = s.iter().product();
            let want: usize = target_shape.iter().product();
            if have != want {
                return Err(Fault::new(ErrorCode::ArgInvalid, have as i64, want as i64));
            }
            no_weights()?;
            target_shape.clone()
        }
        LayerKind::Permute { dims } => {
            if dims.len() != s.len() {
                return Err(Fault::new(ErrorCode::Dim, dims.len() as i64 + 1, rank_of(s)).on_input(0));
            }
            let mut seen = vec![false; dims.len()];
            for &d in dims {
                if d == 0 || d > dims.len() || seen[d - 1] {
                    return Err(Fault::bare(ErrorCode::ArgInvalid));
                }
                seen[d - 1] = true;
            }
            no_weights()?;
            dims.iter().map(|&d| s[d - 1]).collect()
        }
        LayerKind::RepeatVector { n } => {
            require_rank(s, 2)?;
            require_positive(&[*n])?;
            no_weights()?;
            vec![*n, s[0]]
        }
        LayerKind::Cropping1D { cropping } => {
            require_rank(s, 3)?;
            no_weights()?;
            let total = cropping[0] + cropping[1];
            if total >= s[0] {
                return Err(Fault::new(ErrorCode::EmptyOutput, s[0] as i64 - 1, total as i64).on_input(0));
            }
            vec![s[0] - total, s[1]]
        }
        LayerKind::Cropping2D { cropping } => {
            require_rank(s, 4)?;
            no_weights()?;
            let mut out = s.to_vec();
            for axis in 0..2 {
                let total = cropping[2 * axis] + cropping[2 * axis + 1];
                if total >= s[axis] {
                    return Err(Fault::new(ErrorCode::EmptyOutput, s[axis] as i64 - 1, total as i64).on_input(0));
                }
                out[axis] = s[axis] - total;
            }
            out
        }
        LayerKind::ZeroPadding1D { padding } => {
            require_rank(s, 3)?;
            no_weights()?;
            vec![s[0] + padding[0] + padding[1], s[1]]
        }
        LayerKind::ZeroPadding2D { padding } => {
            require_rank(s, 4)?;
            no_weights()?;
            vec![s[0] + padding[0] + padding[1], s[1] + padding[2] + padding[3], s[2]]
        }
        LayerKind::UpSampling1D { size } => {
            require_rank(s, 3)?;
            require_positive(&[*size])?;
            no_weights()?;
            vec![s[0] * size, s[1]]
        }
        LayerKind::UpSampling2D { size } => {
            require_rank(s, 4)?;
            require_positive(size)?;
            no_weights()?;
            vec![s[0] * size[0], s[1] * size[1], s[2]]
        }
        LayerKind::Concatenate { axis } => {
            let rank = rank_of(s);
            let resolved = if *axis < 0 { rank + axis } else { *axis };
            if resolved <= 0 || resolved >= rank {
                let bound = if *axis < 0 {
                    -(rank - 1)
                } else if *axis == 0 {
                    1
                } else {
                    rank - 1
                };
                return Err(Fault::new(ErrorCode::AxisOutOfRange, bound, *axis));
            }
            let inner = resolved as usize - 1;
            check_merge_shapes(inputs, Some(inner))?;
            no_weights()?;
            let mut out = s.to_vec();
            out[inner] = inputs.iter().map(|i| i[inner]).sum();
            out
        }
        LayerKind::Add | LayerKind::Subtract | LayerKind::Multiply | LayerKind::Average | LayerKind::Maximum | LayerKind::Minimum => {
            check_merge_shapes(inputs, None)?;
            no_weights()?;
            s.to_vec()
        }
        LayerKind::ReLU(args) => {
            let finite = args.negative_slope.is_finite() && args.threshold.is_finite() && args.max_value.is_none_or(f64::is_finite);
            if !finite || args.negative_slope < 0.0 || args.max_value.is_some_and(|m| m < args.threshold) {
                return Err(Fault::bare(ErrorCode::ArgInvalid));
            }
            no_weights()?;
            s.to_vec()
        }
        LayerKind::Activation(_) => {
            no_weights()?;
            s.to_vec()
        }
        LayerKind::BatchNormalization { epsilon } => {
            if s.is_empty() {
                return Err(Fault::new(ErrorCode::Dim, 2, rank_of(s)).on_input(0));
            }
            if !epsilon.is_finite() || *epsilon < 0.0 {
                return Err(Fault::bare(ErrorCode::ArgInvalid));
            }
            let ch = *s.last().unwrap();
            check_weights(&node.weights, &[vec![ch], vec![ch], vec![ch], vec![ch]])?;
            if node.weights[3].data().iter().any(|&v| v.is_nan() || v < 0.0 || v + epsilon <= 0.0) {
                return Err(Fault::bare(ErrorCode::ArgInvalid));
            }
            s.to_vec()
        }
        LayerKind::Dropout { rate } => {
            if !(*rate >= 0.0 && *rate < 1.0) {
                return Err(Fault::bare(ErrorCode::ArgInvalid));
            }
            no_weights()?;
            s.to_vec()
        }
    };
    if out.contains(&0) {
        return Err(Fault::new(ErrorCode::EmptyOutput, 1, 0));
    }
    Ok(out)
}

/// Checks a graph input's declared shape and, when present, its binding.
/// Returns the batch size of the binding, if any.
pub fn check_input(
    id: &str,
    declared: &[usize],
    binding: Option<&crate::tensor::Tensor>,
    inputs_given: bool,
    batch: Option<usize>,
) -> Result<Option<usize>, PrecondViolation> {
    if declared.contains(&0) {
        return Err(Fault::new(ErrorCode::ArgInvalid, 1, 0).at(id, &[declared], batch));
    }
    if !inputs_given {
        return Ok(None);
    }
    let Some(t) = binding else {
        return Err(Fault::bare(ErrorCode::ArgInvalid).at(id, &[declared], batch));
    };
    let dims = t.dims();
    if dims.len() != declared.len() + 1 {
        return Err(Fault::new(ErrorCode::Dim, declared.len() as i64 + 1, dims.len() as i64).at(id, &[declared], batch));
    }
    if let Some((&d, &o)) = declared.iter().zip(&dims[1..]).find(|(a, b)| a != b) {
        return Err(Fault::new(ErrorCode::InputShapeInconsistent, d as i64, o as i64).at(id, &[&dims[1..]], Some(dims[0])));
    }
    if let Some(b) = batch {
        if dims[0] != b {
            return Err(Fault::new(ErrorCode::InputShapeInconsistent, b as i64, dims[0] as i64).at(id, &[declared], Some(dims[0])));
        }
    }
    if dims[0] == 0 {
        return Err(Fault::new(ErrorCode::EmptyOutput, 1, 0).at(id, &[declared], Some(0)));
    }
    Ok(Some(dims[0]))
}

/// How many violations [`validate_model`] reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Report {
    /// Only the first failing layer in evaluation order.
    #[default]
    First,
    /// Every violation whose inputs were themselves valid.
    All,
}

/// Symbolic shapes of every node, plus the violations met on the way.
#[derive(Clone, Debug, Default)]
pub struct ShapeInference {
    /// Output shape (batch excluded) per node; absent for failed or skipped nodes.
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub violations: Vec<PrecondViolation>,
    pub batch: Option<usize>,
}

/// Propagates shapes through `g` in evaluation order. With `inputs`, the
/// bindings are checked against the declared input shapes as well.
pub fn infer_shapes(g: &ModelGraph, inputs: Option<&Bindings>, report: Report) -> ShapeInference {
    let mut result = ShapeInference::default();
    let order = match g.topo_order() {
        Ok(o) => o,
        Err(e) => {
            result.violations.push(Fault::bare(ErrorCode::ArgInvalid).at(&e.to_string(), &[], None));
            return result;
        }
    };
    for id in &order {
        if let Some(spec) = g.input(id) {
            match check_input(id, &spec.shape, inputs.and_then(|b| b.get(id)), inputs.is_some(), result.batch) {
                Ok(b) => {
                    if result.batch.is_none() {
                        result.batch = b;
                    }
                    result.shapes.insert(id.clone(), spec.shape.clone());
                }
                Err(v) => {
                    result.violations.push(v);
                    if report == Report::First {
                        return result;
                    }
                }
            }
            continue;
        }
        let node = g.node(id).expect("topo order lists graph nodes");
        let Some(in_shapes) = node.inputs.iter().map(|s| result.shapes.get(s).map(Vec::as_slice)).collect::<Option<Vec<&[usize]>>>() else {
            continue;
        };
        match infer_layer(node, &in_shapes) {
            Ok(out) => {
                result.shapes.insert(id.clone(), out);
            }
            Err(fault) => {
                result.violations.push(fault.at(id, &in_shapes, result.batch));
                if report == Report::First {
                    return result;
                }
            }
        }
    }
    result
}

/// Checks every layer precondition of `g`. Empty iff the model is valid
/// (and evaluable on `inputs`, when given).
pub fn validate_model(g: &ModelGraph, inputs: Option<&Bindings>, report: Report) -> Vec<PrecondViolation> {
    infer_shapes(g, inputs, report).violations
}
