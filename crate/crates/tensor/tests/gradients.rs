//! Finite-difference checks for every differentiable op, plus backward
//! semantics (accumulation, multi-use, scalar requirement).

use std::rc::Rc;

use fusedepth_tensor::{
    concat, conv2d, conv2d_grouped, conv3d, grad_check, stack, Backward, Result, Tensor, TensorError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn random_positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(0.5..2.0)).collect(), shape).unwrap()
}

fn assert_grad<F: Fn(&[Tensor]) -> Result<Tensor>>(name: &str, f: F, inputs: &[Tensor]) {
    let report = grad_check(f, inputs, EPS).unwrap();
    assert!(report.passes(TOL), "{name}: max rel error {:e}", report.max_rel_error);
}

#[test]
fn binary_ops_with_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[1, 4]);
    let c = random_positive(&mut rng, &[4]);
    assert_grad("add", |t| t[0].add(&t[1]), &[a.clone(), b.clone()]);
    assert_grad("sub", |t| t[0].sub(&t[1]), &[a.clone(), b.clone()]);
    assert_grad("mul", |t| t[0].mul(&t[1]), &[a.clone(), b.clone()]);
    assert_grad("div", |t| t[0].div(&t[1]), &[a.clone(), c.clone()]);
    assert_grad("div-lhs-broadcast", |t| t[1].div(&t[0]), &[random_positive(&mut rng, &[2, 3, 4]), b]);
}

#[test]
fn unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[2, 5]);
    assert_grad("exp", |t| t[0].exp(), std::slice::from_ref(&x));
    assert_grad("ln", |t| t[0].exp()?.shift(0.5)?.ln(), std::slice::from_ref(&x));
    assert_grad("neg", |t| t[0].neg(), std::slice::from_ref(&x));
    assert_grad("abs", |t| t[0].abs(), std::slice::from_ref(&x));
    assert_grad("softplus", |t| t[0].softplus(), std::slice::from_ref(&x));
    assert_grad("relu", |t| t[0].relu(), std::slice::from_ref(&x));
    assert_grad("silu", |t| t[0].silu(), std::slice::from_ref(&x));
    assert_grad("sigmoid", |t| t[0].sigmoid(), std::slice::from_ref(&x));
    assert_grad("scale-shift", |t| t[0].scale(-2.5)?.shift(0.3), std::slice::from_ref(&x));
}

#[test]
fn silu_gradient_matches_central_differences_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let v: f64 = rng.random_range(-4.0..4.0);
        let x = Tensor::param(vec![v], &[1]).unwrap();
        x.silu().unwrap().sum().unwrap().backward().unwrap();
        let silu = |z: f64| z / (1.0 + (-z).exp());
        let fd = (silu(v + 1e-5) - silu(v - 1e-5)) / 2e-5;
        assert!((x.grad().unwrap()[0] - fd).abs() < 1e-6);
    }
}

#[test]
fn reductions_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&mut rng, &[3, 4, 2]);
    assert_grad("sum", |t| t[0].sum(), std::slice::from_ref(&x));
    assert_grad("mean", |t| t[0].mean(), std::slice::from_ref(&x));
    for axis in 0..3 {
        assert_grad("sum_axis", |t| t[0].sum_axis(axis), std::slice::from_ref(&x));
        assert_grad("softmax", |t| t[0].softmax(axis), std::slice::from_ref(&x));
    }
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&mut rng, &[2, 3, 4]);
    let y = random(&mut rng, &[2, 2, 4]);
    assert_grad("reshape", |t| t[0].reshape(&[6, 4]), std::slice::from_ref(&x));
    assert_grad("permute", |t| t[0].permute(&[2, 0, 1]), std::slice::from_ref(&x));
    assert_grad("narrow", |t| t[0].narrow(1, 1, 2), std::slice::from_ref(&x));
    assert_grad("upsample", |t| t[0].upsample_nearest(2, 2), std::slice::from_ref(&x));
    assert_grad("concat", |t| concat(&[t[0].clone(), t[1].clone()], 1), &[x.clone(), y]);
    assert_grad("stack", |t| stack(&[t[0].clone(), t[1].clone()]), &[x.clone(), x.clone()]);
    let idx: Rc<[usize]> = vec![0, 5, 5, 23, 1].into();
    assert_grad("gather", move |t| t[0].gather(idx.clone(), &[5]), std::slice::from_ref(&x));
}

#[test]
fn matmul_and_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    assert_grad("matmul", |t| t[0].matmul(&t[1]), &[a, b]);

    let x = random(&mut rng, &[2, 5, 5]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    for (s, p) in [(1, 1), (2, 1), (1, 0)] {
        assert_grad("conv2d", |t| conv2d(&t[0], &t[1], s, p), &[x.clone(), w.clone()]);
    }
    let wd = random(&mut rng, &[2, 1, 3, 3]);
    assert_grad("depthwise", |t| conv2d_grouped(&t[0], &t[1], 1, 1, 2), &[x, wd]);

    let v = random(&mut rng, &[2, 4, 3, 3]);
    let w3 = random(&mut rng, &[2, 2, 3, 3, 3]);
    for (s, p) in [(1, 1), (2, 1)] {
        assert_grad("conv3d", |t| conv3d(&t[0], &t[1], s, p), &[v.clone(), w3.clone()]);
    }
}

#[test]
fn composite_conv_softmax_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random(&mut rng, &[2, 4, 4]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let report = grad_check(
        |t| {
            let y = conv2d(&t[0], &t[1], 1, 1)?.silu()?;
            y.softmax(0)?.mul(&y)?.sum()
        },
        &[x, w],
        EPS,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn backward_of_sum_is_ones() {
    let x = Tensor::param(vec![1.0, -2.0, 3.0], &[3]).unwrap();
    x.sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
}

#[test]
fn backward_of_square_sum_is_twice_x() {
    let x = Tensor::param(vec![1.5, -2.0, 0.25], &[3]).unwrap();
    x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![3.0, -4.0, 0.5]);
}

#[test]
fn backward_requires_scalar() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(x.exp().unwrap().backward(), Err(TensorError::NotScalar { .. })));
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let x = Tensor::param(vec![2.0], &[1]).unwrap();
    for _ in 0..2 {
        x.scale(3.0).unwrap().sum().unwrap().backward().unwrap();
    }
    assert_eq!(x.grad().unwrap(), vec![6.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn multi_use_equals_sum_of_single_uses() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base = random(&mut rng, &[4]);
    let w: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[4])).collect();

    let x = base.detach_param();
    let mut total = x.mul(&w[0]).unwrap().exp().unwrap().sum().unwrap();
    for wk in &w[1..] {
        total = total.add(&x.mul(wk).unwrap().exp().unwrap().sum().unwrap()).unwrap();
    }
    total.backward().unwrap();
    let combined = x.grad().unwrap();

    let mut separate = vec![0.0; 4];
    for wk in &w {
        let x1 = base.detach_param();
        x1.mul(wk).unwrap().exp().unwrap().sum().unwrap().backward().unwrap();
        for (s, g) in separate.iter_mut().zip(x1.grad().unwrap()) {
            *s += g;
        }
    }
    for (a, b) in combined.iter().zip(&separate) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn no_grad_builds_no_graph() {
    let x = Tensor::param(vec![1.0], &[1]).unwrap();
    let y = fusedepth_tensor::no_grad(|| x.exp().unwrap());
    assert!(!y.requires_grad());
    assert!(x.exp().unwrap().requires_grad());
}

#[test]
fn gradcheck_linear_map_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = random(&mut rng, &[3, 3]);
    let x = random(&mut rng, &[3, 2]);
    let report = grad_check(|t| a.matmul(&t[0]), &[x], EPS).unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn gradcheck_softmax_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let logits = random(&mut rng, &[5]);
    let target = Tensor::new(vec![0.0, 0.0, 1.0, 0.0, 0.0], &[5]).unwrap();
    let report = grad_check(
        |t| {
            t[0].softmax(0)?.mul(&target)?.sum()?.ln()?.neg()
        },
        &[logits],
        EPS,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

/// `2·x` forward with a backward that claims `4·g`: a planted mutation.
struct WrongDouble(Tensor);

impl Backward for WrongDouble {
    fn name(&self) -> &'static str {
        "wrong_double"
    }
    fn inputs(&self) -> Vec<Tensor> {
        vec![self.0.clone()]
    }
    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| 4.0 * v).collect())]
    }
}

#[test]
fn gradcheck_catches_wrong_backward() {
    let x = Tensor::new(vec![0.3, -1.2, 2.0], &[3]).unwrap();
    let report = grad_check(
        |t| {
            let data = t[0].data().iter().map(|v| 2.0 * v).collect();
            Tensor::from_op(data, t[0].shape(), Box::new(WrongDouble(t[0].clone())))?.sum()
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert!((report.max_rel_error - 1.0).abs() < 1e-6, "{report:?}");
    assert!(!report.passes(TOL));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_normalizes(values in prop::collection::vec(-50.0f64..50.0, 1..24), rows in 1usize..4) {
        let n = values.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| values.iter().map(move |v| v * (r as f64 + 1.0))).collect();
        let y = Tensor::new(data, &[rows, n]).unwrap().softmax(1).unwrap().to_vec();
        for r in 0..rows {
            let s: f64 = y[r * n..(r + 1) * n].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(y[r * n..(r + 1) * n].iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn random_shape_grad_checks(d0 in 1usize..5, d1 in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[d0, d1]);
        let y = random(&mut rng, &[d1]);
        let report = grad_check(
            |t| t[0].mul(&t[1])?.silu()?.softmax(1)?.add(&t[0].sigmoid()?),
            &[x, y],
            EPS,
        ).unwrap();
        prop_assert!(report.passes(TOL), "{:?}", report);
    }
}
