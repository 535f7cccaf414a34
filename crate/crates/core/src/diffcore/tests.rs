use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

const EPS: f64 = 1e-5;
const RTOL: f64 = 1e-4;

fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()) + 1e-9
}

/// Central differences of `f` with respect to every parameter entry,
/// evaluated by rebuilding the forward pass from perturbed copies.
fn numeric_grads(
    params: &ParamSet<f64>,
    f: &dyn Fn(&mut Graph<f64>, &ParamSet<f64>) -> NodeId,
) -> Vec<Vec<f64>> {
    let eval = |ps: &ParamSet<f64>| {
        let mut g = Graph::new(ps);
        let out = f(&mut g, ps);
        g.value(out).data()[0]
    };
    let mut out = Vec::new();
    for id in params.ids() {
        let mut col = Vec::new();
        for k in 0..params.get(id).len() {
            let mut plus = params.clone();
            plus.get_mut(id).data_mut()[k] += EPS;
            let mut minus = params.clone();
            minus.get_mut(id).data_mut()[k] -= EPS;
            col.push((eval(&plus) - eval(&minus)) / (2.0 * EPS));
        }
        out.push(col);
    }
    out
}

fn check_grads(params: &ParamSet<f64>, f: &dyn Fn(&mut Graph<f64>, &ParamSet<f64>) -> NodeId) {
    let mut g = Graph::new(params);
    let out = f(&mut g, params);
    let grads = g.backward(out).unwrap();
    let numeric = numeric_grads(params, f);
    for id in params.ids() {
        for (k, (&a, &n)) in grads.param(id).data().iter().zip(&numeric[id.index()]).enumerate() {
            assert!(
                close(a, n, RTOL),
                "param {} entry {k}: analytic {a} numeric {n}",
                params.name(id)
            );
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random projection `sum(r * y)` turning a vector output into a scalar.
fn project(g: &mut Graph<f64>, y: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
    let n = g.value(y).len();
    let r = g.input(rand_tensor(&mut rng, &[n], 1.0));
    let m = g.mul(y, r).unwrap();
    g.sum(m)
}

#[test]
fn affine_examples() {
    let ps = ParamSet::<f64>::new();
    let mut g = Graph::new(&ps);
    let x = g.input(Tensor::vector(vec![3.0, -1.0]));
    let w = g.input(Tensor::identity(2));
    let b = g.input(Tensor::vector(vec![0.0, 0.0]));
    let y = g.affine(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, -1.0]);

    let x = g.input(Tensor::vector(vec![1.0, 1.0]));
    let w = g.input(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 0.0, 1.0]).unwrap());
    let b = g.input(Tensor::vector(vec![1.0, 0.0]));
    let y = g.affine(x, w, b).unwrap();
    // independent matrix-vector routine
    let reference: Vec<f64> = [[1.0, 2.0], [0.0, 1.0]]
        .iter()
        .zip([1.0, 0.0])
        .map(|(row, bias)| row[0] * 1.0 + row[1] * 1.0 + bias)
        .collect();
    assert_eq!(g.value(y).data(), &reference[..]);
    assert_eq!(g.value(y).data(), &[4.0, 1.0]);

    let x = g.input(Tensor::vector(vec![7.0, -2.5, 0.3]));
    let w = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::vector(vec![5.0, 5.0]));
    let y = g.affine(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[5.0, 5.0]);
}

#[test]
fn affine_shape_mismatch_names_both_shapes() {
    let ps = ParamSet::<f64>::new();
    let mut g = Graph::new(&ps);
    let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let w = g.input(Tensor::zeros(&[2, 2]));
    let b = g.input(Tensor::zeros(&[2]));
    match g.affine(x, w, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 2]);
            assert_eq!(right, vec![3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
    let msg = g.affine(x, w, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn elu_examples() {
    assert_eq!(elu(2.0_f64, 1.0), 2.0);
    assert_eq!(elu(0.0_f64, 1.0), 0.0);
    assert!((elu(-1.0_f64, 1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    assert!((elu(-1.0_f64, 1.0) + 0.6321206).abs() < 1e-7);
}

#[test]
fn log_softmax_examples() {
    let ps = ParamSet::<f64>::new();
    let mut g = Graph::new(&ps);
    let x = g.input(Tensor::zeros(&[10]));
    let y = g.log_softmax(x);
    for &v in g.value(y).data() {
        assert!((v - (0.1f64).ln()).abs() < 1e-12);
        assert!((v + 2.3025851).abs() < 1e-7);
    }

    let x = g.input(Tensor::vector(vec![1000.0, 0.0]));
    let y = g.log_softmax(x);
    let v = g.value(y).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!(v[0].abs() < 1e-12);
    assert!((v[1] + 1000.0).abs() < 1e-9);

    let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = g.log_softmax(x);
    // direct logsumexp evaluation
    let lse = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    let expect = [1.0 - lse, 2.0 - lse, 3.0 - lse];
    for (a, b) in g.value(y).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((g.value(y).data()[0] + 2.4076059).abs() < 1e-7);
    assert!((g.value(y).data()[2] + 0.4076059).abs() < 1e-7);
}

#[test]
fn log_softmax_normalizes_over_wide_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ps = ParamSet::<f64>::new();
    for _ in 0..200 {
        let n = rng.random_range(2..20);
        let mut g = Graph::new(&ps);
        let x = g.input(rand_tensor(&mut rng, &[n], 1e3));
        let y = g.log_softmax(x);
        let total: f64 = g.value(y).data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }
}

#[test]
fn linear_loss_gradient_is_outer_product() {
    let mut ps = ParamSet::<f64>::new();
    let w = ps.add("w", Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap());
    let b = ps.add("b", Tensor::zeros(&[2]));
    let mut g = Graph::new(&ps);
    let x = g.input(Tensor::vector(vec![1.0, -2.0, 4.0]));
    let (wn, bn) = (g.param(&ps, w), g.param(&ps, b));
    let y = g.affine(x, wn, bn).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(w).data(), &[1.0, -2.0, 4.0, 1.0, -2.0, 4.0]);
    assert_eq!(grads.param(b).data(), &[1.0, 1.0]);
}

#[test]
fn disconnected_parameter_gets_exact_zero() {
    let mut ps = ParamSet::<f64>::new();
    let used = ps.add("used", Tensor::vector(vec![1.0, 2.0]));
    let unused = ps.add("unused", Tensor::vector(vec![3.0, 4.0, 5.0]));
    let mut g = Graph::new(&ps);
    let u = g.param(&ps, used);
    let _ = g.param(&ps, unused);
    let loss = g.sum(u);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(unused).data(), &[0.0, 0.0, 0.0]);
    assert_eq!(grads.param(unused).shape(), &[3]);
    assert_eq!(grads.param(used).data(), &[1.0, 1.0]);
}

#[test]
fn second_backward_is_stale() {
    let mut ps = ParamSet::<f64>::new();
    let p = ps.add("p", Tensor::vector(vec![1.0]));
    let mut g = Graph::new(&ps);
    let n = g.param(&ps, p);
    let loss = g.sum(n);
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(Error::StaleGraph)));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut ps = ParamSet::<f64>::new();
    let p = ps.add("p", Tensor::vector(vec![1.0, 2.0]));
    let mut g = Graph::new(&ps);
    let n = g.param(&ps, p);
    assert!(matches!(g.backward(n), Err(Error::NotScalar(_))));
}

type Builder = fn(&mut Graph<f64>, &ParamSet<f64>, u64) -> NodeId;

fn unary_case(seed: u64, op: fn(&mut Graph<f64>, NodeId) -> NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..8);
    let mut ps = ParamSet::new();
    ps.add("x", rand_tensor(&mut rng, &[n], 3.0));
    let f = move |g: &mut Graph<f64>, ps: &ParamSet<f64>| {
        let x = g.param(ps, ParamId(0));
        let y = op(g, x);
        project(g, y, seed)
    };
    check_grads(&ps, &f);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let unary: [(&str, fn(&mut Graph<f64>, NodeId) -> NodeId); 6] = [
        ("relu", |g, x| g.relu(x)),
        ("elu", |g, x| g.elu(x, 1.0)),
        ("hardtanh", |g, x| g.hardtanh(x, -1.0, 1.0)),
        ("sigmoid", |g, x| g.sigmoid(x)),
        ("tanh", |g, x| g.tanh(x)),
        ("log_softmax", |g, x| g.log_softmax(x)),
    ];
    for seed in 0..100 {
        for (_, op) in unary {
            unary_case(seed, op);
        }
    }

    let multi: [(&str, Builder); 5] = [
        ("affine", |g, ps, seed| {
            let (x, w, b) = (g.param(ps, ParamId(0)), g.param(ps, ParamId(1)), g.param(ps, ParamId(2)));
            let y = g.affine(x, w, b).unwrap();
            project(g, y, seed)
        }),
        ("add", |g, ps, seed| {
            let b = g.param(ps, ParamId(2));
            let t = g.tanh(b);
            let y = g.add(b, t).unwrap();
            project(g, y, seed)
        }),
        ("mul", |g, ps, seed| {
            let a = g.param(ps, ParamId(2));
            let y = g.mul(a, a).unwrap();
            project(g, y, seed)
        }),
        ("concat", |g, ps, seed| {
            let (x, b) = (g.param(ps, ParamId(0)), g.param(ps, ParamId(2)));
            let y = g.concat(&[x, b, x]).unwrap();
            project(g, y, seed)
        }),
        ("pick_scale", |g, ps, _| {
            let b = g.param(ps, ParamId(2));
            let s = g.scale(b, -2.5);
            g.pick(s, 0).unwrap()
        }),
    ];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (m, n) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut ps = ParamSet::new();
        ps.add("x", rand_tensor(&mut rng, &[n], 2.0));
        ps.add("w", rand_tensor(&mut rng, &[m, n], 2.0));
        ps.add("b", rand_tensor(&mut rng, &[m], 2.0));
        for (_, build) in multi {
            let f = move |g: &mut Graph<f64>, ps: &ParamSet<f64>| build(g, ps, seed);
            check_grads(&ps, &f);
        }
    }
}

#[test]
fn composite_graph_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        ps.add("w1", rand_tensor(&mut rng, &[5, 4], 1.0));
        ps.add("b1", rand_tensor(&mut rng, &[5], 1.0));
        ps.add("w2", rand_tensor(&mut rng, &[3, 10], 1.0));
        ps.add("b2", rand_tensor(&mut rng, &[3], 1.0));
        let x = rand_tensor(&mut rng, &[4], 1.0);
        let f = move |g: &mut Graph<f64>, ps: &ParamSet<f64>| {
            let xi = g.input(x.clone());
            let (w1, b1) = (g.param(ps, ParamId(0)), g.param(ps, ParamId(1)));
            let (w2, b2) = (g.param(ps, ParamId(2)), g.param(ps, ParamId(3)));
            let h = g.affine(xi, w1, b1).unwrap();
            let a = g.tanh(h);
            let e = g.elu(h, 1.0);
            let z = g.concat(&[a, e]).unwrap();
            let y = g.affine(z, w2, b2).unwrap();
            let lp = g.log_softmax(y);
            let p = g.pick(lp, 1).unwrap();
            g.scale(p, -1.0)
        };
        check_grads(&ps, &f);
    }
}

#[test]
fn elu_chain_preserves_gradient_on_positive_inputs() {
    let mut ps = ParamSet::<f64>::new();
    let p = ps.add("x", Tensor::vector(vec![0.3, 1.7, 4.2]));
    let mut g = Graph::new(&ps);
    let mut h = g.param(&ps, p);
    for _ in 0..50 {
        h = g.elu(h, 1.0);
    }
    let loss = g.sum(h);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(p).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn injected_seeds_accumulate() {
    let mut ps = ParamSet::<f64>::new();
    let p = ps.add("p", Tensor::vector(vec![1.0, -1.0]));
    let mut g = Graph::new(&ps);
    let n = g.param(&ps, p);
    let y = g.scale(n, 2.0);
    let grads = g
        .backward_with(&[
            (y, Tensor::vector(vec![1.0, 0.0])),
            (y, Tensor::vector(vec![0.5, 3.0])),
        ])
        .unwrap();
    assert_eq!(grads.param(p).data(), &[3.0, 6.0]);
    assert_eq!(grads.node(y).unwrap().data(), &[1.5, 3.0]);
}

#[test]
fn f32_graph_runs() {
    let mut ps = ParamSet::<f32>::new();
    let w = ps.add("w", Tensor::identity(3));
    let b = ps.add("b", Tensor::zeros(&[3]));
    let mut g = Graph::new(&ps);
    let x = g.input(Tensor::vector(vec![1.0f32, 2.0, 3.0]));
    let (wn, bn) = (g.param(&ps, w), g.param(&ps, b));
    let y = g.affine(x, wn, bn).unwrap();
    let lp = g.log_softmax(y);
    let l = g.pick(lp, 2).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.all_finite());
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
}
