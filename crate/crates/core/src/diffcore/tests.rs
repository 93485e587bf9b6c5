use proptest::prelude::*;

use super::gradcheck::{check_inputs, Tolerance};
use super::*;
use crate::error::Error;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

#[test]
fn relu_sigmoid_mse_values() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
    let z = g.input(&t(&[1], &[0.0]));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s), &[0.5]);
    let a = g.input(&t(&[2], &[1.0, 1.0]));
    let b = g.input(&t(&[2], &[0.0, 0.0]));
    let m = g.mse(a, b).unwrap();
    assert_eq!(g.value(m), &[1.0]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&t(&[3], &[1.0, 2.0, 3.0]).with_grad());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn sigmoid_slope_at_zero() {
    let mut g = Graph::<f64>::new();
    let w = g.input(&t(&[1], &[0.0]).with_grad());
    let one = g.scalar(1.0);
    let p = g.mul(w, one).unwrap();
    let s = g.sigmoid(p);
    g.backward(s).unwrap();
    assert!((g.grad(w).unwrap()[0] - 0.25).abs() < 1e-15);
}

#[test]
fn backward_twice_fails() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&t(&[2], &[1.0, 2.0]).with_grad());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::AlreadyBackpropagated)));
    g.reset_grads();
    g.backward(s).unwrap();
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&t(&[2], &[1.0, 2.0]).with_grad());
    let e = g.exp(x);
    assert!(matches!(g.backward(e), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f64>::new();
    let a = g.input(&t(&[2, 3], &[0.0; 6]));
    let b = g.input(&t(&[4], &[0.0; 4]));
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    let w = g.input(&t(&[4, 2], &[0.0; 8]));
    let err = g.linear(a, w, None).unwrap_err().to_string();
    assert!(err.starts_with("linear"), "{err}");
}

#[test]
fn checked_tensor_rejects_nan() {
    assert!(Tensor::<f32>::new_checked(&[2], vec![1.0, f32::NAN]).is_err());
    assert!(Tensor::<f32>::new_checked(&[1], vec![f32::INFINITY]).is_err());
    assert!(Tensor::<f32>::new(&[2], vec![1.0]).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::scalar(1.0), false).unwrap();
    store.get_mut("w").unwrap().tensor.grad = Some(vec![1.0]);
    let mut adam = Adam::new(AdamConfig::default());
    adam.step_uniform(&mut store, 0.01).unwrap();
    let w = store.get("w").unwrap().tensor.values()[0];
    assert!((1.0 - w - 0.01).abs() < 1e-8, "moved by {}", 1.0 - w);
}

#[test]
fn adam_zero_lr_and_frozen_unchanged() {
    let mut store = ParamStore::<f32>::new();
    store.insert("a", Tensor::new(&[2], vec![0.3, -0.7]).unwrap(), false).unwrap();
    store.insert("frozen", Tensor::new(&[2], vec![1.5, 2.5]).unwrap(), true).unwrap();
    let before = store.clone();
    store.get_mut("a").unwrap().tensor.grad = Some(vec![1.0, -2.0]);
    store.get_mut("frozen").unwrap().tensor.grad = Some(vec![5.0, 5.0]);
    let mut adam = Adam::new(AdamConfig::default());
    adam.step_uniform(&mut store, 0.0).unwrap();
    for name in ["a", "frozen"] {
        let a: Vec<u32> = store.get(name).unwrap().tensor.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = before.get(name).unwrap().tensor.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{name}");
    }
    adam.step_uniform(&mut store, 0.1).unwrap();
    assert_eq!(
        store.get("frozen").unwrap().tensor.values(),
        before.get("frozen").unwrap().tensor.values()
    );
    assert_ne!(store.get("a").unwrap().tensor.values(), before.get("a").unwrap().tensor.values());
}

#[test]
fn adam_requires_grads() {
    let mut store = ParamStore::<f32>::new();
    store.insert("a", Tensor::scalar(1.0), false).unwrap();
    store.insert("b", Tensor::scalar(1.0), true).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    assert!(matches!(adam.step_uniform(&mut store, 0.1), Err(Error::MissingGrad(n)) if n == "a"));
}

#[test]
fn frozen_params_still_receive_grads() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", t(&[2, 1], &[0.5, -0.5]), true).unwrap();
    let mut g = Graph::new();
    let x = g.input(&t(&[1, 2], &[1.0, 2.0]));
    let w = g.param(&store, "w").unwrap();
    let y = g.linear(x, w, None).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    let grads = g.param_grads();
    assert_eq!(grads, vec![("w".to_string(), vec![1.0, 2.0])]);
}

#[test]
fn checkpoint_round_trip_and_magic() {
    let mut store = ParamStore::<f32>::new();
    store.insert("b.x", Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap(), false).unwrap();
    store.insert("a.y", Tensor::scalar(0.25), true).unwrap();
    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&store, &mut bytes).unwrap();
    assert_eq!(&bytes[..6], b"ENERF1");
    // first entry is "a.y" (sorted)
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 3);
    assert_eq!(&bytes[10..13], b"a.y");
    assert_eq!(bytes[13], 1);
    let back: ParamStore<f32> = checkpoint::read_checkpoint(&bytes[..]).unwrap();
    assert_eq!(back, store);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::read_checkpoint::<f32, _>(&bad[..]).is_err());
    let truncated = &bytes[..bytes.len() - 2];
    assert!(checkpoint::read_checkpoint::<f32, _>(truncated).is_err());
}

#[test]
fn checkpoint_shape_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut saved = ParamStore::<f32>::new();
    saved.insert("w", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), false).unwrap();
    checkpoint::save(&saved, &path).unwrap();
    let mut model = ParamStore::<f32>::new();
    model.insert("w", Tensor::new(&[1, 3], vec![0.0; 3]).unwrap(), false).unwrap();
    assert!(checkpoint::load_into(&mut model, &path).is_err());
    let mut model = ParamStore::<f32>::new();
    model.insert("w", Tensor::new(&[3], vec![0.0; 3]).unwrap(), false).unwrap();
    checkpoint::load_into(&mut model, &path).unwrap();
    assert_eq!(model.get("w").unwrap().tensor.values(), &[1.0, 2.0, 3.0]);
}

#[test]
fn broadcasting_column_and_scalar() {
    let mut g = Graph::<f64>::new();
    let a = g.input(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad());
    let c = g.input(&t(&[2, 1], &[10.0, 100.0]).with_grad());
    let m = g.mul(a, c).unwrap();
    assert_eq!(g.value(m), &[10.0, 20.0, 30.0, 400.0, 500.0, 600.0]);
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert_eq!(g.grad(c).unwrap(), &[6.0, 15.0]);
    assert_eq!(g.grad(a).unwrap(), &[10.0, 10.0, 10.0, 100.0, 100.0, 100.0]);
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> crate::Result<Var>) {
    let report = check_inputs(&inputs, Tolerance::default(), f).unwrap();
    assert!(report.passed(), "{:?}", report.mismatches);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_linear(x in values(6), w in values(12), b in values(4)) {
        check(vec![t(&[2, 3], &x), t(&[3, 4], &w), t(&[4], &b)], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        });
    }

    #[test]
    fn grad_unary_chain(x in values(5)) {
        // keep relu/clamp away from kinks and log on positive values
        let x: Vec<f64> = x.iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect();
        check(vec![t(&[5], &x)], |g, v| {
            let s = g.sigmoid(v[0]);
            let l = g.log(s);
            let e = g.exp(l);
            let r = g.relu(v[0]);
            let a = g.affine(r, 1.5, 0.25);
            let p = g.mul(e, a)?;
            Ok(g.sum(p))
        });
    }

    #[test]
    fn grad_clamp(x in values(5)) {
        let x: Vec<f64> = x.iter().map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.9 } else { *v }).collect();
        check(vec![t(&[5], &x)], |g, v| {
            let c = g.clamp(v[0], -1.0, 1.0);
            let c2 = g.mul(c, c)?;
            Ok(g.sum(c2))
        });
    }

    #[test]
    fn grad_binary_broadcast(a in values(6), b in values(2), s in values(1)) {
        check(vec![t(&[2, 3], &a), t(&[2, 1], &b), t(&[1], &s)], |g, v| {
            let m = g.mul(v[0], v[1])?;
            let d = g.sub(m, v[2])?;
            let q = g.add(d, v[1])?;
            let q2 = g.mul(q, q)?;
            Ok(g.mean(q2))
        });
    }

    #[test]
    fn grad_concat_slice_gather_mse(a in values(4), b in values(6), c in values(9)) {
        check(vec![t(&[2, 2], &a), t(&[2, 3], &b), t(&[3, 3], &c)], |g, v| {
            let cat = g.concat(&[v[0], v[1], v[0]])?;
            let sl = g.slice_cols(cat, 1, 3)?;
            let gat = g.gather_rows(v[2], vec![2, 0])?;
            g.mse(sl, gat)
        });
    }
}
