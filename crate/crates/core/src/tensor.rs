//! Dense row-major `f64` tensors and the shape algebra the layer rules are
//! written against.
//!
//! Tensors are immutable values: every operation returns a freshly
//! materialized tensor. Empty tensors (some dim equal to zero) are legal.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Ordered list of dimensions, batch axis first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Self {
        Shape(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Product of all dims; zero if any dim is zero.
    pub fn elements(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.elements() == 0
    }

    /// Row-major strides; the innermost stride is 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    pub fn into_dims(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for Shape {
    fn from(dims: Vec<usize>) -> Self {
        Shape(dims)
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    ElementCountMismatch { expected: usize, found: usize },
    AxisOutOfRange { axis: usize, rank: usize },
    BoundsInvalid { from: usize, to: usize, len: usize },
    RankMismatch { expected: usize, found: usize },
    ShapeMismatch { expected: Shape, found: Shape },
    BadPermutation,
    EmptyConcat,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ElementCountMismatch { expected, found } => {
                write!(f, "element count mismatch: expected {expected}, found {found}")
            }
            TensorError::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            TensorError::BoundsInvalid { from, to, len } => {
                write!(f, "invalid slice bounds {from}..{to} for length {len}")
            }
            TensorError::RankMismatch { expected, found } => {
                write!(f, "rank mismatch: expected {expected}, found {found}")
            }
            TensorError::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected}, found {found}")
            }
            TensorError::BadPermutation => f.write_str("axis order is not a permutation"),
            TensorError::EmptyConcat => f.write_str("concat of zero tensors"),
        }
    }
}

impl core::error::Error for TensorError {}

/// Shape plus flat row-major payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.elements() != data.len() {
            return Err(TensorError::ElementCountMismatch {
                expected: shape.elements(),
                found: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        let data = vec![value; shape.elements()];
        Tensor { shape, data }
    }

    /// Rank-1 tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: Shape(vec![data.len()]), data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value at a full multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.rank());
        let mut offset = 0;
        let mut stride = 1;
        for (i, d) in index.iter().zip(self.dims()).rev() {
            offset += i * stride;
            stride *= d;
        }
        self.data[offset]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshape(&self, new: impl Into<Shape>) -> Result<Tensor, TensorError> {
        let new = new.into();
        if new.elements() != self.data.len() {
            return Err(TensorError::ElementCountMismatch {
                expected: self.data.len(),
                found: new.elements(),
            });
        }
        Ok(Tensor { shape: new, data: self.data.clone() })
    }

    /// Keeps `from..to` along `axis`. `from == to` yields an empty tensor.
    pub fn slice(&self, axis: usize, from: usize, to: usize) -> Result<Tensor, TensorError> {
        self.check_axis(axis)?;
        let len = self.dims()[axis];
        if from > to || to > len {
            return Err(TensorError::BoundsInvalid { from, to, len });
        }
        let (outer, inner) = self.outer_inner(axis);
        let mut dims = self.dims().to_vec();
        dims[axis] = to - from;
        let mut data = Vec::with_capacity(outer * (to - from) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&self.data[base + from * inner..base + to * inner]);
        }
        Ok(Tensor { shape: Shape(dims), data })
    }

    /// Grows `axis` by `left + right` entries filled with `value`.
    pub fn pad(&self, axis: usize, left: usize, right: usize, value: f64) -> Result<Tensor, TensorError> {
        self.check_axis(axis)?;
        let len = self.dims()[axis];
        let (outer, inner) = self.outer_inner(axis);
        let mut dims = self.dims().to_vec();
        dims[axis] = len + left + right;
        let mut data = Vec::with_capacity(outer * dims[axis] * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend(core::iter::repeat_n(value, left * inner));
            data.extend_from_slice(&self.data[base..base + len * inner]);
            data.extend(core::iter::repeat_n(value, right * inner));
        }
        Ok(Tensor { shape: Shape(dims), data })
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(ts: &[Tensor], axis: usize) -> Result<Tensor, TensorError> {
        let first = ts.first().ok_or(TensorError::EmptyConcat)?;
        first.check_axis(axis)?;
        for t in &ts[1..] {
            if t.rank() != first.rank() {
                return Err(TensorError::RankMismatch { expected: first.rank(), found: t.rank() });
            }
            let same = t
                .dims()
                .iter()
                .zip(first.dims())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(TensorError::ShapeMismatch {
                    expected: first.shape.clone(),
                    found: t.shape.clone(),
                });
            }
        }
        let (outer, inner) = first.outer_inner(axis);
        let mut dims = first.dims().to_vec();
        dims[axis] = ts.iter().map(|t| t.dims()[axis]).sum();
        let mut data = Vec::with_capacity(dims.iter().product());
        for o in 0..outer {
            for t in ts {
                let chunk = t.dims()[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor { shape: Shape(dims), data })
    }

    /// Output axis `i` is input axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Tensor, TensorError> {
        if order.len() != self.rank() {
            return Err(TensorError::RankMismatch { expected: self.rank(), found: order.len() });
        }
        let mut seen = vec![false; order.len()];
        for &a in order {
            if a >= order.len() || seen[a] {
                return Err(TensorError::BadPermutation);
            }
            seen[a] = true;
        }
        let in_strides = self.shape.strides();
        let dims: Vec<usize> = order.iter().map(|&a| self.dims()[a]).collect();
        let strides: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
        let n = self.data.len();
        let mut data = Vec::with_capacity(n);
        let mut index = vec![0usize; dims.len()];
        for _ in 0..n {
            let offset: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[offset]);
            for k in (0..dims.len()).rev() {
                index[k] += 1;
                if index[k] < dims[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        Ok(Tensor { shape: Shape(dims), data })
    }

    /// Repeats every entry along `axis` `times` times in place (nearest upsampling).
    pub fn repeat_along(&self, axis: usize, times: usize) -> Result<Tensor, TensorError> {
        self.check_axis(axis)?;
        let len = self.dims()[axis];
        let (outer, inner) = self.outer_inner(axis);
        let mut dims = self.dims().to_vec();
        dims[axis] = len * times;
        let mut data = Vec::with_capacity(outer * len * times * inner);
        for o in 0..outer {
            for s in 0..len {
                let base = (o * len + s) * inner;
                for _ in 0..times {
                    data.extend_from_slice(&self.data[base..base + inner]);
                }
            }
        }
        Ok(Tensor { shape: Shape(dims), data })
    }

    fn check_axis(&self, axis: usize) -> Result<(), TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange { axis, rank: self.rank() });
        }
        Ok(())
    }

    fn outer_inner(&self, axis: usize) -> (usize, usize) {
        let dims = self.dims();
        (dims[..axis].iter().product(), dims[axis + 1..].iter().product())
    }
}

/// Result of a tolerance comparison between two tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonStats {
    pub shape_equal: bool,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    /// Elements violating `|a - b| <= atol + rtol * |b|` (or a non-finite mismatch).
    pub mismatches: usize,
    pub compared: usize,
}

impl ComparisonStats {
    pub fn passed(&self) -> bool {
        self.shape_equal && self.mismatches == 0
    }
}

/// Elementwise tolerance check of `a` against reference-side `b`.
///
/// NaN never equals NaN. Infinities must match exactly.
pub fn approx_equal(a: &Tensor, b: &Tensor, rtol: f64, atol: f64) -> ComparisonStats {
    if a.shape() != b.shape() {
        return ComparisonStats {
            shape_equal: false,
            max_abs_diff: f64::INFINITY,
            max_rel_diff: f64::INFINITY,
            mismatches: a.len().max(b.len()),
            compared: 0,
        };
    }
    let mut stats = ComparisonStats {
        shape_equal: true,
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
        mismatches: 0,
        compared: a.len(),
    };
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if !x.is_finite() || !y.is_finite() {
            if x.is_nan() || y.is_nan() || x != y {
                stats.mismatches += 1;
                stats.max_abs_diff = f64::INFINITY;
                stats.max_rel_diff = f64::INFINITY;
            }
            continue;
        }
        let diff = libm::fabs(x - y);
        let rel = if y != 0.0 { diff / libm::fabs(y) } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        stats.max_abs_diff = stats.max_abs_diff.max(diff);
        stats.max_rel_diff = stats.max_rel_diff.max(rel);
        if diff > atol + rtol * libm::fabs(y) {
            stats.mismatches += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (1..=n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn reshape_preserves_order() {
        let t = seq(&[2, 3]).reshape(vec![3, 2]).unwrap();
        assert_eq!(t.dims(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(seq(&[1, 4]).reshape(vec![2, 2]).unwrap().dims(), &[2, 2]);
        assert_eq!(
            seq(&[2, 3]).reshape(vec![2, 2]),
            Err(TensorError::ElementCountMismatch { expected: 6, found: 4 })
        );
    }

    #[test]
    fn slice_cases() {
        let t = seq(&[1, 2, 2]);
        let s = t.slice(1, 0, 1).unwrap();
        assert_eq!(s.dims(), &[1, 1, 2]);
        assert_eq!(s.data(), &[1.0, 2.0]);
        let e = t.slice(1, 1, 1).unwrap();
        assert_eq!(e.dims(), &[1, 0, 2]);
        assert!(e.is_empty());
        assert_eq!(t.slice(3, 0, 1), Err(TensorError::AxisOutOfRange { axis: 3, rank: 3 }));
        assert!(matches!(t.slice(1, 1, 3), Err(TensorError::BoundsInvalid { .. })));
    }

    #[test]
    fn pad_cases() {
        let t = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let p = t.pad(1, 1, 1, 0.0).unwrap();
        assert_eq!(p.dims(), &[1, 4]);
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 0.0]);
        assert_eq!(t.pad(1, 0, 0, 0.0).unwrap(), t);
        let empty = Tensor::zeros(vec![1, 0, 2]);
        let p = empty.pad(1, 1, 0, 0.0).unwrap();
        assert_eq!(p.dims(), &[1, 1, 2]);
        assert_eq!(p.data(), &[0.0, 0.0]);
        assert!(matches!(t.pad(2, 1, 1, 0.0), Err(TensorError::AxisOutOfRange { .. })));
    }

    #[test]
    fn concat_cases() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 0).unwrap();
        assert_eq!(c.dims(), &[2, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
        let c1 = Tensor::concat(&[a.clone(), b], 1).unwrap();
        assert_eq!(c1.data(), &[1.0, 2.0, 3.0, 4.0]);

        let x = seq(&[1, 2, 2]);
        let empty = Tensor::zeros(vec![1, 0, 2]);
        assert_eq!(Tensor::concat(&[x.clone(), empty], 1).unwrap(), x);

        let wide = Tensor::zeros(vec![1, 3]);
        assert!(matches!(Tensor::concat(&[a, wide], 0), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn permute_transposes() {
        let t = seq(&[1, 2, 3]);
        let p = t.permute(&[0, 2, 1]).unwrap();
        assert_eq!(p.dims(), &[1, 3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.permute(&[0, 1, 1]), Err(TensorError::BadPermutation));
    }

    #[test]
    fn repeat_along_axis() {
        let t = Tensor::new(vec![1, 2, 1], vec![1.0, 2.0]).unwrap();
        let r = t.repeat_along(1, 2).unwrap();
        assert_eq!(r.dims(), &[1, 4, 1]);
        assert_eq!(r.data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn approx_equal_cases() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let s = approx_equal(&a, &a, 0.0, 0.0);
        assert!(s.passed());
        assert_eq!((s.max_abs_diff, s.max_rel_diff), (0.0, 0.0));

        let s = approx_equal(&Tensor::vector(vec![1.0]), &Tensor::vector(vec![1.001]), 1e-4, 0.0);
        assert!(!s.passed());
        assert_eq!(s.mismatches, 1);

        let s = approx_equal(&Tensor::vector(vec![0.0; 2]), &Tensor::vector(vec![0.0; 3]), 1.0, 1.0);
        assert!(!s.shape_equal);
        assert!(!s.passed());

        let nan = Tensor::vector(vec![f64::NAN]);
        assert!(!approx_equal(&nan, &nan, 1.0, 1.0).passed());
        let inf = Tensor::vector(vec![f64::INFINITY]);
        assert!(approx_equal(&inf, &inf, 0.0, 0.0).passed());
        assert!(!approx_equal(&inf, &Tensor::vector(vec![1.0]), 1.0, 1.0).passed());
    }

    #[test]
    fn get_is_row_major() {
        let t = seq(&[2, 3, 4]);
        assert_eq!(t.get(&[1, 2, 3]), 24.0);
        assert_eq!(t.get(&[0, 1, 0]), 5.0);
        assert_eq!(t.shape().strides(), vec![12, 4, 1]);
    }
}
