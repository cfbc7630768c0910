use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn store() -> ParamStore<f64> {
    ParamStore::new()
}

fn mat(g: &mut Graph<f64>, r: usize, c: usize, v: &[f64]) -> Var {
    g.constant(Tensor::matrix(r, c, v.to_vec()).unwrap())
}

#[test]
fn matmul_identity_zero_and_hand_case() {
    let p = store();
    let mut g = Graph::new(&p);
    let a = mat(&mut g, 2, 3, &[1., 2., 3., 4., 5., 6.]);
    let eye = mat(&mut g, 3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
    let y = g.matmul(a, eye).unwrap();
    assert_eq!(g.value(y), g.value(a));

    let z = mat(&mut g, 2, 2, &[0.; 4]);
    let b = mat(&mut g, 2, 3, &[7., 8., 9., 1., 2., 3.]);
    let zy = g.matmul(z, b).unwrap();
    assert!(g.value(zy).iter().all(|&x| x == 0.0));

    let a = mat(&mut g, 2, 2, &[1., 2., 3., 4.]);
    let ones = mat(&mut g, 2, 1, &[1., 1.]);
    let y = g.matmul(a, ones).unwrap();
    assert_eq!(g.shape(y), &[2, 1]);
    assert_eq!(g.value(y), &[3., 7.]);
}

#[test]
fn matmul_dimension_mismatch_names_both_shapes() {
    let p = store();
    let mut g = Graph::new(&p);
    let a = mat(&mut g, 2, 3, &[0.; 6]);
    let b = mat(&mut g, 2, 3, &[0.; 6]);
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn unary_identities() {
    let p = store();
    let mut g = Graph::new(&p);
    let x = g.constant_vec(vec![0.0]);
    let s = g.sigmoid(x).unwrap();
    let t = g.tanh(x).unwrap();
    assert_eq!(g.value(s), &[0.5]);
    assert_eq!(g.value(t), &[0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-40.0..40.0)).collect();
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    let a = g.constant_vec(xs);
    let b = g.constant_vec(neg);
    let sa = g.sigmoid(a).unwrap();
    let sb = g.sigmoid(b).unwrap();
    for (u, v) in g.value(sa).iter().zip(g.value(sb)) {
        assert!((u + v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn log_of_non_positive_is_domain_error() {
    let p = store();
    let mut g = Graph::new(&p);
    let x = g.constant_vec(vec![1.0, 0.0]);
    assert!(matches!(
        g.unary(Unary::Log, x),
        Err(TensorError::Domain { op: "log", .. })
    ));
    let y = g.constant_vec(vec![-2.0]);
    assert!(g.unary(Unary::Log, y).is_err());
}

#[test]
fn softmax_examples() {
    let p = store();
    let mut g = Graph::new(&p);
    let eq = g.constant_vec(vec![0.7; 4]);
    let u = g.softmax(eq, None).unwrap();
    assert!(g.value(u).iter().all(|&x| (x - 0.25).abs() < 1e-15));

    let v = g.constant_vec(vec![1.0, 2.0, 3.0]);
    let s = g.softmax(v, None).unwrap();
    // direct evaluation: e^i / (e + e^2 + e^3)
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
    for (a, b) in g.value(s).iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    let rounded: Vec<f64> = g
        .value(s)
        .iter()
        .map(|x| (x * 1e4).round() / 1e4)
        .collect();
    assert_eq!(rounded, vec![0.0900, 0.2447, 0.6652]);

    let shifted = g.constant_vec(vec![1001.0, 1002.0, 1003.0]);
    let s2 = g.softmax(shifted, None).unwrap();
    for (a, b) in g.value(s).iter().zip(g.value(s2)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_mask_zeroes_and_rejects_full_mask() {
    let p = store();
    let mut g = Graph::new(&p);
    let v = g.constant_vec(vec![5.0, 1.0, 2.0]);
    let s = g.softmax(v, Some(&[false, true, true])).unwrap();
    assert_eq!(g.value(s)[0], 0.0);
    assert!((g.value(s)[1] + g.value(s)[2] - 1.0).abs() < 1e-15);
    assert_eq!(
        g.softmax(v, Some(&[false, false, false])),
        Err(TensorError::InvalidMask)
    );
}

#[test]
fn concat_examples() {
    let p = store();
    let mut g = Graph::new(&p);
    let x = g.constant_vec(vec![1.0, 2.0]);
    let c = g.concat(&[x], 0).unwrap();
    assert_eq!(g.value(c), g.value(x));

    let idx = g.zeros(32);
    let f = g.zeros(256);
    let v = g.zeros(256);
    let r = g.concat(&[idx, f, v], 0).unwrap();
    assert_eq!(g.shape(r), &[544]);

    let m = mat(&mut g, 2, 3, &[0.; 6]);
    assert!(matches!(
        g.concat(&[x, m], 0),
        Err(TensorError::Shape { op: "concat", .. })
    ));
}

#[test]
fn concat_gradient_splits_back() {
    let p = store();
    let mut g = Graph::new(&p);
    let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let b = g.leaf(Tensor::vector(vec![3.0, 4.0, 5.0]));
    let c = g.concat(&[a, b], 0).unwrap();
    let w = g.constant_vec(vec![1., 2., 3., 4., 5.]);
    let l = g.dot(c, w).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.leaf(a).unwrap(), vec![1., 2.]);
    assert_eq!(grads.leaf(b).unwrap(), vec![3., 4., 5.]);
}

#[test]
fn concat_axis1_matrices() {
    let p = store();
    let mut g = Graph::new(&p);
    let a = mat(&mut g, 2, 1, &[1., 2.]);
    let b = mat(&mut g, 2, 2, &[3., 4., 5., 6.]);
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[2, 3]);
    assert_eq!(g.value(c), &[1., 3., 4., 2., 5., 6.]);
}

#[test]
fn gather_rows_examples() {
    let p = store();
    let mut g = Graph::new(&p);
    let eye = g.leaf(Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
    let r = g.gather_rows(eye, &[0]).unwrap();
    assert_eq!(g.value(r), &[1., 0., 0.]);
    let r = g.gather_rows(eye, &[2, 0]).unwrap();
    assert_eq!(g.value(r), &[0., 0., 1., 1., 0., 0.]);
    assert!(matches!(
        g.gather_rows(eye, &[3]),
        Err(TensorError::Index { index: 3, bound: 3, .. })
    ));

    let rep = g.gather_rows(eye, &[1, 1]).unwrap();
    let l = g.sum(rep);
    let grads = g.backward(l).unwrap();
    assert_eq!(
        grads.leaf(eye).unwrap(),
        vec![0., 0., 0., 2., 2., 2., 0., 0., 0.]
    );
}

#[test]
fn nll_examples() {
    let p = store();
    let mut g = Graph::new(&p);
    let one = g.constant_vec(vec![0.0, 1.0, 0.0]);
    let l = g.nll(one, 1).unwrap();
    assert_eq!(g.scalar(l), 0.0);
    let uni = g.constant_vec(vec![0.25; 4]);
    for t in 0..4 {
        let l = g.nll(uni, t).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-15);
    }
    assert_eq!((4f64.ln() * 1e4).round() / 1e4, 1.3863);
    assert_eq!(g.nll_clamped(), 0);
    let l = g.nll(one, 0).unwrap();
    assert!((g.scalar(l) - (-NLL_FLOOR.ln())).abs() < 1e-9);
    assert_eq!(g.nll_clamped(), 1);
}

#[test]
fn backward_simple_cases() {
    let p = store();
    let mut g = Graph::new(&p);
    let x = g.leaf(Tensor::vector(vec![0.3, -1.0, 2.0]));
    let l = g.sum(x);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.leaf(x).unwrap(), vec![1.0; 3]);

    let mut g = Graph::new(&p);
    let w = g.leaf(Tensor::vector(vec![0.0]));
    let c = 1.7;
    let s = g.sigmoid(w).unwrap();
    let l = g.affine(s, c, 0.0);
    let l = g.sum(l);
    let grads = g.backward(l).unwrap();
    assert!((grads.leaf(w).unwrap()[0] - 0.25 * c).abs() < 1e-15);

    // unreachable leaves receive zero
    let mut g = Graph::new(&p);
    let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let b = g.leaf(Tensor::vector(vec![3.0]));
    let l = g.sum(a);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.leaf(b).unwrap(), vec![0.0]);
}

#[test]
fn backward_rejects_non_scalar_and_is_repeatable() {
    let p = store();
    let mut g = Graph::new(&p);
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let t = g.tanh(x).unwrap();
    assert!(matches!(g.backward(t), Err(TensorError::Contract(_))));
    let l = g.dot(t, x).unwrap();
    let g1 = g.backward(l).unwrap();
    let g2 = g.backward(l).unwrap();
    assert_eq!(g1.leaf(x), g2.leaf(x));
}

#[test]
fn param_nodes_are_shared_and_unreached_params_get_zero() {
    let mut p = store();
    let w = p.insert("w", Tensor::vector(vec![2.0, 3.0])).unwrap();
    let u = p.insert("u", Tensor::vector(vec![1.0])).unwrap();
    let mut g = Graph::new(&p);
    let a = g.param(w);
    let b = g.param(w);
    assert_eq!(a, b);
    let l = g.dot(a, b).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.param(w), vec![4.0, 6.0]);
    assert_eq!(grads.param(u), vec![0.0]);
    assert!(grads.params.get(u).is_none());
}

fn random_store(rng: &mut ChaCha8Rng, shapes: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.insert(name, Tensor::new(shape.to_vec(), data).unwrap())
            .unwrap();
    }
    p
}

// Every primitive, one composite loss each, on several random draws.
#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let p = random_store(
            &mut rng,
            &[
                ("a", &[3, 4]),
                ("b", &[4, 2]),
                ("x", &[4]),
                ("y", &[3]),
                ("s", &[1]),
                ("e", &[5, 3]),
                ("pos", &[3]),
            ],
        );
        let ids: Vec<ParamId> = p.ids().collect();
        let [a, b, x, y, s, e, pos] = ids[..] else { unreachable!() };
        let report = grad_check::<TensorError, _>(&p, 1e-5, |g| {
            composite_loss(g, [a, b, x, y, s, e, pos])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.entries_checked, p.numel());
    }
}

fn composite_loss(g: &mut Graph<f64>, ids: [ParamId; 7]) -> Result<Var, TensorError> {
    let [a, b, x, y, s, e, pos] = ids.map(|id| g.param(id));
    let ab = g.matmul(a, b)?; // [3,2]
    let ax = g.matvec(a, x)?; // [3]
    let ya = g.vecmat(y, a)?; // [4]
    let t = g.tanh(ax)?;
    let sg = g.sigmoid(y)?;
    let m = g.mul(t, sg)?;
    let d = g.sub(m, y)?;
    let sc = g.scale(d, s)?;
    let ex = g.unary(Unary::Exp, sc)?;
    let sq = g.mul(pos, pos)?;
    let shifted = g.affine(sq, 1.0, 0.5);
    let lg = g.unary(Unary::Log, shifted)?;
    let sum3 = g.add_n(&[ex, lg, y])?;
    let sm = g.softmax(sum3, Some(&[true, false, true]))?;
    let row = g.row(ab, 2)?;
    let ar = g.add_row(ab, row)?;
    let flat = g.reshape(ar, vec![6])?;
    let sl = g.slice(flat, 1, 3)?;
    let cat = g.concat(&[sl, sm, ya], 0)?; // [10]
    let gath = g.gather_rows(e, &[4, 1, 4])?; // [3,3]
    let st = g.stack(&[sm, sl, y])?; // [3,3]
    let cat1 = g.concat(&[gath, st], 1)?; // [3,6]
    let colsum = g.vecmat(y, cat1)?; // [6]
    let padded = g.pad(colsum, 10)?;
    let mix = g.add(padded, cat)?;
    let tm = g.tanh(mix)?;
    let scat = g.scatter_add(tm, &[0, 1, 1, 2, 0, 3, 3, 3, 4, 1], 5)?;
    let probs = g.softmax(scat, None)?;
    let n1 = g.nll(probs, 3)?;
    let pk = g.pick(tm, 7)?;
    let dt = g.dot(sl, y)?;
    let out = g.add_n(&[n1, pk, dt])?;
    Ok(out)
}

#[test]
fn quadratic_and_constant_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_store(&mut rng, &[("w", &[6])]);
    let w = p.id("w").unwrap();
    let r = grad_check::<TensorError, _>(&p, 1e-5, |g| {
        let v = g.param(w);
        let sq = g.dot(v, v)?;
        Ok(g.affine(sq, 0.5, 0.0))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-9, "{r:?}");

    let r = grad_check::<TensorError, _>(&p, 1e-5, |g| {
        let _ = g.param(w);
        Ok(g.constant_scalar(3.0))
    })
    .unwrap();
    assert_eq!(r.max_rel_error, 0.0);
}

#[test]
fn evaluation_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_store(
            &mut rng,
            &[
                ("a", &[3, 4]),
                ("b", &[4, 2]),
                ("x", &[4]),
                ("y", &[3]),
                ("s", &[1]),
                ("e", &[5, 3]),
                ("pos", &[3]),
            ],
        );
        let ids: Vec<ParamId> = p.ids().collect();
        let mut g = Graph::new(&p);
        let l = composite_loss(&mut g, ids.try_into().unwrap()).unwrap();
        let gr = g.backward(l).unwrap();
        (g.scalar(l).to_bits(), gr.param(ParamId(0)))
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(
        v in prop::collection::vec(-80.0f64..80.0, 1..24),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Vec<bool> = v.iter().map(|_| rng.random_bool(0.6)).collect();
        let keep = rng.random_range(0..v.len());
        mask[keep] = true;
        let p = ParamStore::new();
        let mut g = Graph::<f64>::new(&p);
        let x = g.constant_vec(v.clone());
        let s = g.softmax(x, Some(&mask)).unwrap();
        let out = g.value(s);
        prop_assert!(out.iter().all(|&y| y >= 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        for (y, m) in out.iter().zip(&mask) {
            if !m { prop_assert_eq!(*y, 0.0); }
        }
        let c = g.constant_vec(v.iter().map(|x| x + 17.5).collect());
        let s2 = g.softmax(c, Some(&mask)).unwrap();
        for (a, b) in g.value(s).iter().zip(g.value(s2)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
