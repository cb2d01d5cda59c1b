mod naive;

use naive::{Pad, Reduce};
use nnsem_core::ir::{ActivationFn, Padding, ReluArgs};
use nnsem_core::semantics::{
    eval_activation, eval_batchnorm, eval_conv1d, eval_conv2d, eval_dense, eval_pool, relu, EvalError, PoolMode,
};
use nnsem_core::Tensor;
use proptest::prelude::*;

// Quarter-integers keep every sum exact, whatever the summation order.
fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-16i32..=16).prop_map(|v| f64::from(v) / 4.0), len)
}

fn padding() -> impl Strategy<Value = Pad> {
    prop_oneof![Just(Pad::Valid), Just(Pad::Same)]
}

fn to_padding(p: Pad) -> Padding {
    match p {
        Pad::Valid => Padding::Valid,
        Pad::Same => Padding::Same,
    }
}

fn tensor(dims: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
}

fn agree(got: Result<Tensor, EvalError>, want: Option<(Vec<usize>, Vec<f64>)>) -> Result<(), TestCaseError> {
    match (got, want) {
        (Ok(t), Some((dims, data))) => {
            prop_assert_eq!(t.dims(), &dims[..]);
            prop_assert_eq!(t.data(), &data[..]);
        }
        (Err(e), None) => prop_assert_eq!(e, EvalError::KernelTooLarge),
        (got, want) => prop_assert!(false, "kernel {:?} vs oracle {:?}", got, want),
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Conv2dCase {
    dims: [usize; 4],
    k: [usize; 2],
    s: [usize; 2],
    filters: usize,
    pad: Pad,
    x: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
}

fn conv2d_case() -> impl Strategy<Value = Conv2dCase> {
    (1..=2usize, 1..=6usize, 1..=6usize, 1..=3usize, 1..=6usize, 1..=6usize, 1..=3usize, 1..=3usize, 1..=3usize, padding())
        .prop_flat_map(|(n, h, w, c, kh, kw, sh, sw, f, pad)| {
            (values(n * h * w * c), values(kh * kw * c * f), values(f)).prop_map(move |(x, wt, b)| Conv2dCase {
                dims: [n, h, w, c],
                k: [kh, kw],
                s: [sh, sw],
                filters: f,
                pad,
                x,
                w: wt,
                b,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn conv2d_matches_padded_scan(c in conv2d_case()) {
        let got = eval_conv2d(
            &tensor(&c.dims, &c.x),
            c.k,
            &tensor(&[c.k[0], c.k[1], c.dims[3], c.filters], &c.w),
            &tensor(&[c.filters], &c.b),
            c.s,
            to_padding(c.pad),
        );
        agree(got, naive::conv2d(&c.x, c.dims, &c.w, c.k, &c.b, c.s, c.pad))?;
    }

    #[test]
    fn conv1d_matches_shifted_reads(
        (n, steps, ch, k, s, f, pad, x, w, b) in (1..=2usize, 1..=6usize, 1..=4usize, 1..=6usize, 1..=4usize, 1..=3usize, padding())
            .prop_flat_map(|(n, steps, ch, k, s, f, pad)| {
                (Just(n), Just(steps), Just(ch), Just(k), Just(s), Just(f), Just(pad),
                 values(n * steps * ch), values(k * ch * f), values(f))
            })
    ) {
        let got = eval_conv1d(&tensor(&[n, steps, ch], &x), k, &tensor(&[k, ch, f], &w), &tensor(&[f], &b), s, to_padding(pad));
        agree(got, naive::conv1d(&x, [n, steps, ch], &w, k, &b, s, pad))?;
    }

    #[test]
    fn pool2d_matches_padded_scan(
        (dims, k, s, pad, max, x) in (1..=2usize, 1..=6usize, 1..=6usize, 1..=3usize, 1..=6usize, 1..=6usize, 1..=3usize, 1..=3usize, padding(), any::<bool>())
            .prop_flat_map(|(n, h, w, c, kh, kw, sh, sw, pad, max)| {
                (Just([n, h, w, c]), Just([kh, kw]), Just([sh, sw]), Just(pad), Just(max), values(n * h * w * c))
            })
    ) {
        let (mode, reduce) = if max { (PoolMode::Max, Reduce::Max) } else { (PoolMode::Avg, Reduce::Avg) };
        let got = eval_pool(&tensor(&dims, &x), &k, &s, to_padding(pad), mode);
        agree(got, naive::pool2d(&x, dims, k, s, pad, reduce))?;
    }

    #[test]
    fn pool1d_matches_padded_scan(
        (dims, k, s, pad, max, x) in (1..=2usize, 1..=6usize, 1..=4usize, 1..=6usize, 1..=4usize, padding(), any::<bool>())
            .prop_flat_map(|(n, steps, c, k, s, pad, max)| {
                (Just([n, steps, c]), Just(k), Just(s), Just(pad), Just(max), values(n * steps * c))
            })
    ) {
        let (mode, reduce) = if max { (PoolMode::Max, Reduce::Max) } else { (PoolMode::Avg, Reduce::Avg) };
        let got = eval_pool(&tensor(&dims, &x), &[k], &[s], to_padding(pad), mode);
        agree(got, naive::pool1d(&x, dims, k, s, pad, reduce))?;
    }

    #[test]
    fn dense_on_higher_rank_is_dense_per_row(
        (lead, units, inner, x, w, b) in (1..=3usize, 1..=4usize, 1..=4usize)
            .prop_flat_map(|(lead, units, inner)| {
                (Just(lead), Just(units), Just(inner), values(2 * lead * inner), values(inner * units), values(units))
            })
    ) {
        let kernel = tensor(&[inner, units], &w);
        let bias = tensor(&[units], &b);
        let whole = eval_dense(&tensor(&[2, lead, inner], &x), &kernel, &bias).unwrap();
        prop_assert_eq!(whole.dims(), &[2, lead, units][..]);
        for (row, chunk) in x.chunks(inner).enumerate() {
            let one = eval_dense(&tensor(&[1, inner], chunk), &kernel, &bias).unwrap();
            prop_assert_eq!(one.data(), &whole.data()[row * units..(row + 1) * units]);
        }
    }

    #[test]
    fn batchnorm_matches_scalar_formula(
        (c, x, gamma, beta, mean, var) in (1..=4usize)
            .prop_flat_map(|c| (Just(c), values(3 * c), values(c), values(c), values(c), values(c)))
    ) {
        let var: Vec<f64> = var.into_iter().map(f64::abs).collect();
        let eps = 1e-3;
        let out = eval_batchnorm(
            &tensor(&[3, c], &x),
            &tensor(&[c], &gamma),
            &tensor(&[c], &beta),
            &tensor(&[c], &mean),
            &tensor(&[c], &var),
            eps,
        )
        .unwrap();
        for (i, (&got, &v)) in out.data().iter().zip(&x).enumerate() {
            let k = i % c;
            let want = gamma[k] * (v - mean[k]) / (var[k] + eps).sqrt() + beta[k];
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", got, want);
        }
    }
}

// Keras' piecewise definition, evaluated branch by branch.
fn relu_by_cases(x: f64, a: &ReluArgs) -> f64 {
    match a.max_value {
        Some(m) if x >= m => m,
        _ if x >= a.threshold => x,
        _ => a.negative_slope * (x - a.threshold),
    }
}

#[test]
fn relu_matches_piecewise_definition_on_grid() {
    let grid: Vec<f64> = (-12..=12).map(|v| f64::from(v) / 4.0).collect();
    for &threshold in &[-1.0, 0.0, 0.5, 2.0] {
        for &negative_slope in &[0.0, 0.1, 1.0, 3.0] {
            for max_value in [None, Some(2.0), Some(2.5), Some(threshold)] {
                let a = ReluArgs { max_value, negative_slope, threshold };
                for &x in &grid {
                    assert_eq!(relu(x, &a), relu_by_cases(x, &a), "x={x} {a:?}");
                }
                let t = tensor(&[1, grid.len()], &grid);
                let out = eval_activation(&t, ActivationFn::Relu, Some(&a)).unwrap();
                let want: Vec<f64> = grid.iter().map(|&x| relu_by_cases(x, &a)).collect();
                assert_eq!(out.data(), &want[..]);
            }
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let t = tensor(&[2, 3], &[1.0, 2.0, 3.0, -50.0, 0.0, 50.0]);
    let out = eval_activation(&t, ActivationFn::Softmax, None).unwrap();
    for row in out.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.windows(2).all(|w| w[0] < w[1]));
    }
}
