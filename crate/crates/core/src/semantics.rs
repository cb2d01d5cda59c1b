//! Reference layer semantics: the exact prediction each layer must produce.
//!
//! Every kernel is a direct, unoptimized definition. Tensors carry the batch
//! axis first and channels last.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::ir::{ActivationFn, Bindings, EvalTrace, LayerKind, LayerNode, ModelGraph, Padding, ReluArgs};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use crate::validator::{self, ErrorCode, Fault, PrecondViolation};

#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    WeightShapeMismatch,
    KernelTooLarge,
    DimensionError { expected: usize, found: usize },
    ShapeMismatch,
    BadArity,
    ElementCountMismatch,
    BadPermutation,
    AxisOutOfRange,
    BadArgument,
    CountMismatch,
    Tensor(TensorError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::WeightShapeMismatch => f.write_str("weight shape mismatch"),
            EvalError::KernelTooLarge => f.write_str("kernel larger than input"),
            EvalError::DimensionError { expected, found } => {
                write!(f, "expected rank {expected}, found {found}")
            }
            EvalError::ShapeMismatch => f.write_str("input shapes differ"),
            EvalError::BadArity => f.write_str("wrong number of inputs"),
            EvalError::ElementCountMismatch => f.write_str("element count mismatch"),
            EvalError::BadPermutation => f.write_str("bad permutation"),
            EvalError::AxisOutOfRange => f.write_str("axis out of range"),
            EvalError::BadArgument => f.write_str("bad argument"),
            EvalError::CountMismatch => f.write_str("input and output element counts differ"),
            EvalError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::ElementCountMismatch { .. } => EvalError::ElementCountMismatch,
            TensorError::AxisOutOfRange { .. } => EvalError::AxisOutOfRange,
            TensorError::BadPermutation => EvalError::BadPermutation,
            TensorError::ShapeMismatch { .. } | TensorError::RankMismatch { .. } => EvalError::ShapeMismatch,
            other => EvalError::Tensor(other),
        }
    }
}

impl EvalError {
    fn code(&self) -> ErrorCode {
        match self {
            EvalError::WeightShapeMismatch => ErrorCode::WeightShape,
            EvalError::KernelTooLarge => ErrorCode::KernelTooLarge,
            EvalError::DimensionError { .. } => ErrorCode::Dim,
            EvalError::ShapeMismatch => ErrorCode::InputShapeInconsistent,
            EvalError::BadArity => ErrorCode::Arity,
            EvalError::AxisOutOfRange => ErrorCode::AxisOutOfRange,
            _ => ErrorCode::ArgInvalid,
        }
    }
}

fn require_rank(t: &Tensor, rank: usize) -> Result<(), EvalError> {
    if t.rank() != rank {
        return Err(EvalError::DimensionError { expected: rank, found: t.rank() });
    }
    Ok(())
}

/// `input · kernel + bias` on the innermost axis; outer axes are carried through.
pub fn eval_dense(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor, EvalError> {
    if input.rank() < 2 {
        return Err(EvalError::DimensionError { expected: 2, found: input.rank() });
    }
    let in_dim = *input.dims().last().unwrap();
    if kernel.rank() != 2 || bias.rank() != 1 || kernel.dims()[0] != in_dim || kernel.dims()[1] != bias.dims()[0] {
        return Err(EvalError::WeightShapeMismatch);
    }
    let units = bias.dims()[0];
    let rows = input.len() / in_dim.max(1);
    let (x, w, b) = (input.data(), kernel.data(), bias.data());
    let mut out = Vec::with_capacity(rows * units);
    for r in 0..rows {
        let row = &x[r * in_dim..(r + 1) * in_dim];
        for u in 0..units {
            let mut acc = b[u];
            for (i, &xi) in row.iter().enumerate() {
                acc += xi * w[i * units + u];
            }
            out.push(acc);
        }
    }
    let mut dims = input.dims().to_vec();
    *dims.last_mut().unwrap() = units;
    Ok(Tensor::new(dims, out)?)
}

/// Geometry of a 2D sliding window over `[batch, rows, cols, channels]`.
struct Window {
    size: [usize; 2],
    strides: [usize; 2],
    out: [usize; 2],
    pad: [usize; 2],
}

impl Window {
    fn new(input: &Tensor, size: [usize; 2], strides: [usize; 2], padding: Padding) -> Result<Self, EvalError> {
        if size.contains(&0) || strides.contains(&0) {
            return Err(EvalError::BadArgument);
        }
        let mut out = [0; 2];
        let mut pad = [0; 2];
        for a in 0..2 {
            let (o, p) = validator::window_geometry(input.dims()[1 + a], size[a], strides[a], padding)
                .ok_or(EvalError::KernelTooLarge)?;
            out[a] = o;
            pad[a] = p;
        }
        Ok(Window { size, strides, out, pad })
    }

    /// In-range input coordinates covered by the window at output `(y, x)`,
    /// with the tap offsets inside the window.
    fn taps(&self, rows: usize, cols: usize, y: usize, x: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let y0 = (y * self.strides[0]) as isize - self.pad[0] as isize;
        let x0 = (x * self.strides[1]) as isize - self.pad[1] as isize;
        (0..self.size[0]).flat_map(move |i| (0..self.size[1]).map(move |j| (i, j))).filter_map(move |(i, j)| {
            let (r, c) = (y0 + i as isize, x0 + j as isize);
            (r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols).then_some((r as usize, c as usize, i, j))
        })
    }
}

fn conv2d_core(input: &Tensor, kernel: &Tensor, bias: &Tensor, window: &Window) -> Result<Tensor, EvalError> {
    let [batch, rows, cols, ch] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let filters = bias.dims()[0];
    let expected = [window.size[0], window.size[1], ch, filters];
    if kernel.dims() != expected {
        return Err(EvalError::WeightShapeMismatch);
    }
    let (x, w, b) = (input.data(), kernel.data(), bias.data());
    let mut out = Vec::with_capacity(batch * window.out[0] * window.out[1] * filters);
    for n in 0..batch {
        for y in 0..window.out[0] {
            for xo in 0..window.out[1] {
                for f in 0..filters {
                    let mut acc = b[f];
                    for (r, c, i, j) in window.taps(rows, cols, y, xo) {
                        let xbase = ((n * rows + r) * cols + c) * ch;
                        let wbase = (i * window.size[1] + j) * ch * filters;
                        for k in 0..ch {
                            acc += x[xbase + k] * w[wbase + k * filters + f];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(Tensor::new(vec![batch, window.out[0], window.out[1], filters], out)?)
}

/// 1D convolution over `[batch, steps, channels]` with kernel
/// `[kernel_size, channels, filters]`. Same padding reads zeros outside the
/// input and puts the odd pad on the right.
pub fn eval_conv1d(
    input: &Tensor,
    kernel_size: usize,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor, EvalError> {
    require_rank(input, 3)?;
    let [batch, steps, ch] = [input.dims()[0], input.dims()[1], input.dims()[2]];
    if kernel.rank() != 3 || bias.rank() != 1 || kernel.dims() != [kernel_size, ch, bias.dims()[0]] {
        return Err(EvalError::WeightShapeMismatch);
    }
    let as2d = input.reshape(vec![batch, steps, 1, ch])?;
    let k2d = kernel.reshape(vec![kernel_size, 1, ch, bias.dims()[0]])?;
    let window = Window::new(&as2d, [kernel_size, 1], [stride, 1], padding)?;
    let out = conv2d_core(&as2d, &k2d, bias, &window)?;
    let dims = vec![batch, window.out[0], bias.dims()[0]];
    Ok(out.reshape(dims)?)
}

/// 2D convolution over `[batch, rows, cols, channels]` with kernel
/// `[kh, kw, channels, filters]`.
pub fn eval_conv2d(
    input: &Tensor,
    kernel_size: [usize; 2],
    kernel: &Tensor,
    bias: &Tensor,
    strides: [usize; 2],
    padding: Padding,
) -> Result<Tensor, EvalError> {
    require_rank(input, 4)?;
    if kernel.rank() != 4 || bias.rank() != 1 {
        return Err(EvalError::WeightShapeMismatch);
    }
    let window = Window::new(input, kernel_size, strides, padding)?;
    conv2d_core(input, kernel, bias, &window)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Max or average pooling over 1 or 2 spatial axes (`pool.len()`).
/// Out-of-range taps under same padding are left out of the window, so
/// averages divide by the count of in-range taps.
pub fn eval_pool(input: &Tensor, pool: &[usize], strides: &[usize], padding: Padding, mode: PoolMode) -> Result<Tensor, EvalError> {
    let spatial = pool.len();
    if !(1..=2).contains(&spatial) || strides.len() != spatial {
        return Err(EvalError::BadArgument);
    }
    require_rank(input, spatial + 2)?;
    let dims = input.dims().to_vec();
    let (batch, ch) = (dims[0], dims[spatial + 1]);
    let (rows, cols) = (dims[1], if spatial == 2 { dims[2] } else { 1 });
    let as2d = input.reshape(vec![batch, rows, cols, ch])?;
    let size = [pool[0], if spatial == 2 { pool[1] } else { 1 }];
    let step = [strides[0], if spatial == 2 { strides[1] } else { 1 }];
    let window = Window::new(&as2d, size, step, padding)?;
    let x = as2d.data();
    let mut out = Vec::with_capacity(batch * window.out[0] * window.out[1] * ch);
    for n in 0..batch {
        for y in 0..window.out[0] {
            for xo in 0..window.out[1] {
                for k in 0..ch {
                    let mut acc = match mode {
                        PoolMode::Max => f64::NEG_INFINITY,
                        PoolMode::Avg => 0.0,
                    };
                    let mut count = 0usize;
                    for (r, c, _, _) in window.taps(rows, cols, y, xo) {
                        let v = x[((n * rows + r) * cols + c) * ch + k];
                        acc = match mode {
                            PoolMode::Max => acc.max(v),
                            PoolMode::Avg => acc + v,
                        };
                        count += 1;
                    }
                    if mode == PoolMode::Avg {
                        acc /= count as f64;
                    }
                    out.push(acc);
                }
            }
        }
    }
    let mut out_dims = vec![batch, window.out[0]];
    if spatial == 2 {
        out_dims.push(window.out[1]);
    }
    out_dims.push(ch);
    Ok(Tensor::new(out_dims, out)?)
}

/// Global pooling over the steps axis of `[batch, steps, channels]`.
pub fn eval_global_pool(input: &Tensor, mode: PoolMode) -> Result<Tensor, EvalError> {
    require_rank(input, 3)?;
    let steps = input.dims()[1];
    let pooled = eval_pool(input, &[steps], &[1], Padding::Valid, mode)?;
    Ok(pooled.reshape(vec![input.dims()[0], input.dims()[2]])?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MergeOp {
    Add,
    Subtract,
    Multiply,
    Average,
    Maximum,
    Minimum,
    /// Axis over the full rank, batch included.
    Concat(usize),
}

pub fn eval_merge(inputs: &[Tensor], op: MergeOp) -> Result<Tensor, EvalError> {
    let first = inputs.first().ok_or(EvalError::BadArity)?;
    if let MergeOp::Concat(axis) = op {
        if inputs.len() < 2 {
            return Err(EvalError::BadArity);
        }
        return Ok(Tensor::concat(inputs, axis)?);
    }
    let arity_ok = match op {
        MergeOp::Subtract => inputs.len() == 2,
        _ => (2..=3).contains(&inputs.len()),
    };
    if !arity_ok {
        return Err(EvalError::BadArity);
    }
    if inputs.iter().any(|t| t.shape() != first.shape()) {
        return Err(EvalError::ShapeMismatch);
    }
    let n = inputs.len() as f64;
    let data = (0..first.len())
        .map(|i| {
            let mut vals = inputs.iter().map(|t| t.data()[i]);
            let head = vals.next().unwrap();
            match op {
                MergeOp::Add => vals.fold(head, |a, v| a + v),
                MergeOp::Subtract => vals.fold(head, |a, v| a - v),
                MergeOp::Multiply => vals.fold(head, |a, v| a * v),
                MergeOp::Average => vals.fold(head, |a, v| a + v) / n,
                MergeOp::Maximum => vals.fold(head, f64::max),
                MergeOp::Minimum => vals.fold(head, f64::min),
                MergeOp::Concat(_) => unreachable!(),
            }
        })
        .collect();
    Ok(Tensor::new(first.shape().clone(), data)?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ShapeOp<'a> {
    Flatten,
    /// Target dims without the batch axis.
    Reshape(&'a [usize]),
    /// 1-based order of the non-batch axes.
    Permute(&'a [usize]),
    RepeatVector(usize),
}

pub fn eval_shape_op(input: &Tensor, op: ShapeOp<'_>) -> Result<Tensor, EvalError> {
    let batch = input.dims()[0];
    match op {
        ShapeOp::Flatten => {
            if input.rank() < 2 {
                return Err(EvalError::DimensionError { expected: 2, found: input.rank() });
            }
            let rest: usize = input.dims()[1..].iter().product();
            Ok(input.reshape(vec![batch, rest])?)
        }
        ShapeOp::Reshape(target) => {
            if target.is_empty() {
                return Err(EvalError::BadArgument);
            }
            let mut dims = vec![batch];
            dims.extend_from_slice(target);
            Ok(input.reshape(dims)?)
        }
        ShapeOp::Permute(order) => {
            if order.len() + 1 != input.rank() {
                return Err(EvalError::DimensionError { expected: order.len() + 1, found: input.rank() });
            }
            if order.contains(&0) {
                return Err(EvalError::BadPermutation);
            }
            let full: Vec<usize> = core::iter::once(0).chain(order.iter().copied()).collect();
            Ok(input.permute(&full)?)
        }
        ShapeOp::RepeatVector(n) => {
            require_rank(input, 2)?;
            let features = input.dims()[1];
            let mut data = Vec::with_capacity(batch * n * features);
            for b in 0..batch {
                let row = &input.data()[b * features..(b + 1) * features];
                for _ in 0..n {
                    data.extend_from_slice(row);
                }
            }
            Ok(Tensor::new(vec![batch, n, features], data)?)
        }
    }
}

/// Resizing layers. 2D amounts are `[top, bottom, left, right]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResizeOp {
    Crop1D([usize; 2]),
    Crop2D([usize; 4]),
    ZeroPad1D([usize; 2]),
    ZeroPad2D([usize; 4]),
    UpSample1D(usize),
    UpSample2D([usize; 2]),
}

/// Cropping past the end of an axis yields an empty tensor, not an error.
pub fn eval_resize_op(input: &Tensor, op: ResizeOp) -> Result<Tensor, EvalError> {
    fn crop(t: &Tensor, axis: usize, left: usize, right: usize) -> Result<Tensor, EvalError> {
        let len = *t.dims().get(axis).ok_or(EvalError::AxisOutOfRange)?;
        let from = left.min(len);
        let to = len.saturating_sub(right).max(from);
        Ok(t.slice(axis, from, to)?)
    }
    match op {
        ResizeOp::Crop1D([l, r]) => {
            require_rank(input, 3)?;
            crop(input, 1, l, r)
        }
        ResizeOp::Crop2D([t, b, l, r]) => {
            require_rank(input, 4)?;
            crop(&crop(input, 1, t, b)?, 2, l, r)
        }
        ResizeOp::ZeroPad1D([l, r]) => {
            require_rank(input, 3)?;
            Ok(input.pad(1, l, r, 0.0)?)
        }
        ResizeOp::ZeroPad2D([t, b, l, r]) => {
            require_rank(input, 4)?;
            Ok(input.pad(1, t, b, 0.0)?.pad(2, l, r, 0.0)?)
        }
        ResizeOp::UpSample1D(size) => {
            require_rank(input, 3)?;
            if size == 0 {
                return Err(EvalError::BadArgument);
            }
            Ok(input.repeat_along(1, size)?)
        }
        ResizeOp::UpSample2D([sh, sw]) => {
            require_rank(input, 4)?;
            if sh == 0 || sw == 0 {
                return Err(EvalError::BadArgument);
            }
            Ok(input.repeat_along(1, sh)?.repeat_along(2, sw)?)
        }
    }
}

/// Documented piecewise ReLU, applied verbatim for any threshold sign.
pub fn relu(x: f64, args: &ReluArgs) -> f64 {
    match args.max_value {
        Some(m) if x >= m => m,
        _ if x >= args.threshold => x,
        _ => args.negative_slope * (x - args.threshold),
    }
}

/// Elementwise activation; softmax normalizes over the last axis.
pub fn eval_activation(input: &Tensor, f: ActivationFn, relu_args: Option<&ReluArgs>) -> Result<Tensor, EvalError> {
    if let Some(a) = relu_args {
        let finite = a.negative_slope.is_finite() && a.threshold.is_finite() && a.max_value.is_none_or(f64::is_finite);
        if !finite || a.negative_slope < 0.0 || a.max_value.is_some_and(|m| m < a.threshold) {
            return Err(EvalError::BadArgument);
        }
    }
    let relu_args = relu_args.copied().unwrap_or_default();
    Ok(match f {
        ActivationFn::Relu => input.map(|x| relu(x, &relu_args)),
        ActivationFn::Sigmoid => input.map(|x| 1.0 / (1.0 + libm::exp(-x))),
        ActivationFn::Tanh => input.map(libm::tanh),
        ActivationFn::Linear => input.clone(),
        ActivationFn::Softmax => {
            let last = input.dims().last().copied().unwrap_or(1).max(1);
            let mut data = Vec::with_capacity(input.len());
            for row in input.data().chunks(last) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - max)).collect();
                let sum: f64 = exps.iter().sum();
                data.extend(exps.iter().map(|e| e / sum));
            }
            Tensor::new(input.shape().clone(), data)?
        }
    })
}

/// Inference-mode batch normalization over the last axis.
pub fn eval_batchnorm(input: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &Tensor, var: &Tensor, epsilon: f64) -> Result<Tensor, EvalError> {
    let ch = *input.dims().last().ok_or(EvalError::DimensionError { expected: 2, found: 0 })?;
    if [gamma, beta, mean, var].iter().any(|p| p.dims() != [ch]) {
        return Err(EvalError::WeightShapeMismatch);
    }
    if !epsilon.is_finite() || epsilon < 0.0 || var.data().iter().any(|&v| v.is_nan() || v < 0.0 || v + epsilon <= 0.0) {
        return Err(EvalError::BadArgument);
    }
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = i % ch;
            gamma.data()[c] * (x - mean.data()[c]) / libm::sqrt(var.data()[c] + epsilon) + beta.data()[c]
        })
        .collect();
    Ok(Tensor::new(input.shape().clone(), data)?)
}

/// Tolerances of the dropout property check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StochasticCheckConfig {
    pub accepted_rate_diff: f64,
    /// Also require kept values to be scaled by `1 / (1 - rate)`.
    pub scaling_check: bool,
}

impl Default for StochasticCheckConfig {
    fn default() -> Self {
        StochasticCheckConfig { accepted_rate_diff: 0.15, scaling_check: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticVerdict {
    pub passed: bool,
    pub expected_rate: f64,
    /// `(zeros_out - zeros_in) / (n - zeros_in)`; NaN when every input is zero.
    pub real_rate: f64,
    /// Nonzero inputs, i.e. the sample size behind `real_rate`.
    pub eligible: usize,
    pub scaling_ok: Option<bool>,
    pub message: String,
}

impl StochasticVerdict {
    /// Whether the sample is large enough for the rate check to mean
    /// anything: the accepted difference must cover four binomial standard
    /// deviations of the observed rate.
    pub fn resolvable(&self, cfg: &StochasticCheckConfig) -> bool {
        let p = self.expected_rate;
        self.eligible > 0 && 16.0 * p * (1.0 - p) <= self.eligible as f64 * cfg.accepted_rate_diff * cfg.accepted_rate_diff
    }
}

/// Dropout property check of an observed output against its input.
pub fn check_stochastic(input: &Tensor, observed: &Tensor, rate: f64, cfg: &StochasticCheckConfig) -> Result<StochasticVerdict, EvalError> {
    if input.len() != observed.len() {
        return Err(EvalError::CountMismatch);
    }
    let n = input.len();
    let zeros_in = input.data().iter().filter(|&&v| v == 0.0).count();
    let zeros_out = observed.data().iter().filter(|&&v| v == 0.0).count();
    let eligible = n - zeros_in;
    let real_rate = if eligible == 0 {
        f64::NAN
    } else {
        (zeros_out as f64 - zeros_in as f64) / eligible as f64
    };
    let rate_ok = eligible == 0 || libm::fabs(rate - real_rate) <= cfg.accepted_rate_diff;
    let scaling_ok = cfg.scaling_check.then(|| {
        let scale = 1.0 / (1.0 - rate);
        input.data().iter().zip(observed.data()).all(|(&x, &y)| {
            y == 0.0 || libm::fabs(y - x * scale) <= 1e-4 * libm::fabs(x * scale)
        })
    });
    let passed = rate_ok && scaling_ok.unwrap_or(true);
    let message = if rate_ok {
        String::new()
    } else {
        format!("Expected Rate: {rate} Actual Rate: {real_rate}")
    };
    Ok(StochasticVerdict { passed, expected_rate: rate, real_rate, eligible, scaling_ok, message })
}

/// Concatenation axis over the full rank; the batch axis is not allowed.
fn batch_axis(axis: i64, rank: usize) -> Result<usize, EvalError> {
    let resolved = if axis < 0 { rank as i64 + axis } else { axis };
    if resolved <= 0 || resolved >= rank as i64 {
        return Err(EvalError::AxisOutOfRange);
    }
    Ok(resolved as usize)
}

/// Output of a single (non-stochastic) layer application. Dropout is the
/// identity here.
pub fn eval_layer(node: &LayerNode, inputs: &[Tensor]) -> Result<Tensor, EvalError> {
    let (lo, hi) = node.kind.tag().arity();
    if inputs.len() < lo || inputs.len() > hi {
        return Err(EvalError::BadArity);
    }
    let x = &inputs[0];
    let w = &node.weights;
    let weight = |i: usize| w.get(i).ok_or(EvalError::WeightShapeMismatch);
    match &node.kind {
        LayerKind::Dense { .. } => eval_dense(x, weight(0)?, weight(1)?),
        LayerKind::Conv1D { kernel_size, strides, padding, .. } => {
            eval_conv1d(x, *kernel_size, weight(0)?, weight(1)?, *strides, *padding)
        }
        LayerKind::Conv2D { kernel_size, strides, padding, .. } => {
            eval_conv2d(x, *kernel_size, weight(0)?, weight(1)?, *strides, *padding)
        }
        LayerKind::MaxPool1D { pool_size, strides, padding } => eval_pool(x, &[*pool_size], &[*strides], *padding, PoolMode::Max),
        LayerKind::AvgPool1D { pool_size, strides, padding } => eval_pool(x, &[*pool_size], &[*strides], *padding, PoolMode::Avg),
        LayerKind::MaxPool2D { pool_size, strides, padding } => eval_pool(x, pool_size, strides, *padding, PoolMode::Max),
        LayerKind::AvgPool2D { pool_size, strides, padding } => eval_pool(x, pool_size, strides, *padding, PoolMode::Avg),
        LayerKind::GlobalMaxPool1D => eval_global_pool(x, PoolMode::Max),
        LayerKind::GlobalAvgPool1D => eval_global_pool(x, PoolMode::Avg),
        LayerKind::Flatten => eval_shape_op(x, ShapeOp::Flatten),
        LayerKind::Reshape { target_shape } => eval_shape_op(x, ShapeOp::Reshape(target_shape)),
        LayerKind::Permute { dims } => eval_shape_op(x, ShapeOp::Permute(dims)),
        LayerKind::RepeatVector { n } => eval_shape_op(x, ShapeOp::RepeatVector(*n)),
        LayerKind::Cropping1D { cropping } => eval_resize_op(x, ResizeOp::Crop1D(*cropping)),
        LayerKind::Cropping2D { cropping } => eval_resize_op(x, ResizeOp::Crop2D(*cropping)),
        LayerKind::ZeroPadding1D { padding } => eval_resize_op(x, ResizeOp::ZeroPad1D(*padding)),
        LayerKind::ZeroPadding2D { padding } => eval_resize_op(x, ResizeOp::ZeroPad2D(*padding)),
        LayerKind::UpSampling1D { size } => eval_resize_op(x, ResizeOp::UpSample1D(*size)),
        LayerKind::UpSampling2D { size } => eval_resize_op(x, ResizeOp::UpSample2D(*size)),
        LayerKind::Concatenate { axis } => eval_merge(inputs, MergeOp::Concat(batch_axis(*axis, x.rank())?)),
        LayerKind::Add => eval_merge(inputs, MergeOp::Add),
        LayerKind::Subtract => eval_merge(inputs, MergeOp::Subtract),
        LayerKind::Multiply => eval_merge(inputs, MergeOp::Multiply),
        LayerKind::Average => eval_merge(inputs, MergeOp::Average),
        LayerKind::Maximum => eval_merge(inputs, MergeOp::Maximum),
        LayerKind::Minimum => eval_merge(inputs, MergeOp::Minimum),
        LayerKind::ReLU(args) => eval_activation(x, ActivationFn::Relu, Some(args)),
        LayerKind::Activation(f) => eval_activation(x, *f, None),
        LayerKind::BatchNormalization { epsilon } => eval_batchnorm(x, weight(0)?, weight(1)?, weight(2)?, weight(3)?, *epsilon),
        LayerKind::Dropout { rate } if (0.0..1.0).contains(rate) => Ok(x.clone()),
        LayerKind::Dropout { .. } => Err(EvalError::BadArgument),
    }
}

/// Reference prediction: every node's output, computed in evaluation order.
/// Each layer's preconditions are checked before it runs.
pub fn eval_model(g: &ModelGraph, inputs: &Bindings) -> Result<EvalTrace, PrecondViolation> {
    eval_model_with(g, inputs, &EvalTrace::new())
}

/// [`eval_model`] with some node outputs supplied from outside (used to
/// splice in observed outputs of stochastic layers).
pub fn eval_model_with(g: &ModelGraph, inputs: &Bindings, overrides: &EvalTrace) -> Result<EvalTrace, PrecondViolation> {
    eval_model_hooked(g, inputs, &mut |node, _| overrides.get(&node.id).cloned().map(Ok))
}

/// Replacement kernel: `Some` overrides the layer's output.
pub type LayerHook<'a> = dyn FnMut(&LayerNode, &[Tensor]) -> Option<Result<Tensor, EvalError>> + 'a;

/// [`eval_model`] where `hook` may replace any layer's kernel by returning
/// `Some`. Preconditions are still checked first, and a replacement must
/// keep the inferred output shape.
pub fn eval_model_hooked(
    g: &ModelGraph,
    inputs: &Bindings,
    hook: &mut LayerHook<'_>,
) -> Result<EvalTrace, PrecondViolation> {
    let order = g
        .topo_order()
        .map_err(|e| Fault::bare(ErrorCode::ArgInvalid).at(&alloc::string::ToString::to_string(&e), &[], None))?;
    let mut trace = EvalTrace::new();
    let mut batch = None;
    for id in order {
        if let Some(spec) = g.input(&id) {
            let b = validator::check_input(&id, &spec.shape, inputs.get(&id), true, batch)?;
            batch = batch.or(b);
            trace.insert(id.clone(), inputs[&id].clone());
            continue;
        }
        let node = g.node(&id).expect("topo order lists graph nodes");
        let args: Vec<Tensor> = node.inputs.iter().map(|s| trace[s].clone()).collect();
        let shapes: Vec<&[usize]> = args.iter().map(|t| &t.dims()[1..]).collect();
        let expected = validator::infer_layer(node, &shapes).map_err(|f| f.at(&id, &shapes, batch))?;
        let out = hook(node, &args)
            .unwrap_or_else(|| eval_layer(node, &args))
            .map_err(|e| Fault::bare(e.code()).at(&id, &shapes, batch))?;
        if out.rank() == 0 || out.dims()[1..] != expected[..] {
            let observed = out.dims().iter().skip(1).product::<usize>() as i64;
            let want = expected.iter().product::<usize>() as i64;
            return Err(Fault::new(ErrorCode::InputShapeInconsistent, want, observed).at(&id, &shapes, batch));
        }
        trace.insert(id, out);
    }
    Ok(trace)
}

/// Training-mode dropout: zeroes each element with probability `rate` and
/// scales the survivors by `1 / (1 - rate)`.
pub fn sample_dropout(input: &Tensor, rate: f64, rng: &mut Rng) -> Tensor {
    let scale = 1.0 / (1.0 - rate);
    let data = input.data().iter().map(|&x| if rng.chance(rate) { 0.0 } else { x * scale }).collect();
    Tensor::new(input.shape().clone(), data).expect("same shape as the input")
}

/// Failure of [`eval_unchecked`]: the first layer whose kernel rejected its
/// inputs or produced an empty tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFailure {
    pub layer_id: String,
    /// `None` when the kernel ran but its output was empty.
    pub error: Option<EvalError>,
}

/// Evaluates `g` with the kernels alone, without any precondition pass.
/// Missing or mis-ranked bindings fail at the graph input.
pub fn eval_unchecked(g: &ModelGraph, inputs: &Bindings) -> Result<EvalTrace, KernelFailure> {
    let fail = |id: &str, error| KernelFailure { layer_id: String::from(id), error };
    let order = g.topo_order().map_err(|_| fail(g.output(), Some(EvalError::BadArgument)))?;
    let mut trace = EvalTrace::new();
    for id in order {
        let out = if g.is_input(&id) {
            let t = inputs.get(&id).ok_or_else(|| fail(&id, Some(EvalError::BadArgument)))?;
            if t.rank() == 0 {
                return Err(fail(&id, Some(EvalError::DimensionError { expected: 1, found: 0 })));
            }
            t.clone()
        } else {
            let node = g.node(&id).expect("topo order lists graph nodes");
            let args: Vec<Tensor> = node.inputs.iter().map(|s| trace[s].clone()).collect();
            eval_layer(node, &args).map_err(|e| fail(&id, Some(e)))?
        };
        if out.is_empty() {
            return Err(fail(&id, None));
        }
        trace.insert(id, out);
    }
    Ok(trace)
}

/// Output tensor of a trace produced for `g`.
pub fn model_output<'a>(g: &ModelGraph, trace: &'a EvalTrace) -> &'a Tensor {
    &trace[g.output()]
}
