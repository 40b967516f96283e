//! Every differentiable op against central finite differences (h = 1e-5).

mod common;

use cbgt_net::numerics::{AdamConfig, AdamState, BatchNormMode, ParamStore, Tape, Tensor, Var};
use cbgt_net::Result;
use common::{finite_difference, normal, rel_error, rng};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Projects the op output onto a fixed random direction so every output
/// element contributes to the scalar loss.
fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let probe_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.shape(out).to_vec()
    };
    let probe = normal(&mut rng(99), &probe_shape);
    let loss_of = |tape: &mut Tape<f64>, vars: &[Var]| -> Var {
        let out = build(tape, vars).unwrap();
        let p = tape.constant(probe.clone());
        let prod = tape.mul(out, p).unwrap();
        tape.sum(prod)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = loss_of(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let numeric = finite_difference(&inputs, H, |xs| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = loss_of(&mut tape, &vars);
        tape.value(loss).data()[0]
    });
    for (i, (v, num)) in vars.iter().zip(&numeric).enumerate() {
        let analytic = grads
            .wrt(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; num.len()]);
        let err = rel_error(&analytic, num);
        assert!(err < TOL, "{name}: input {i} relative error {err:e}");
    }
}

#[test]
fn matmul_add_mul_scale() {
    let mut r = rng(1);
    check("matmul", vec![normal(&mut r, &[3, 4]), normal(&mut r, &[4, 5])], |t, v| t.matmul(v[0], v[1]));
    check("add", vec![normal(&mut r, &[2, 3]), normal(&mut r, &[2, 3])], |t, v| t.add(v[0], v[1]));
    check("mul", vec![normal(&mut r, &[2, 3]), normal(&mut r, &[2, 3])], |t, v| t.mul(v[0], v[1]));
    check("scale", vec![normal(&mut r, &[5])], |t, v| Ok(t.scale(v[0], -2.5)));
    check("add_bias", vec![normal(&mut r, &[4, 3]), normal(&mut r, &[3])], |t, v| t.add_bias(v[0], v[1]));
}

#[test]
fn activations() {
    let mut r = rng(2);
    check("relu", vec![normal(&mut r, &[3, 7])], |t, v| Ok(t.relu(v[0])));
    check("tanh", vec![normal(&mut r, &[3, 7])], |t, v| Ok(t.tanh(v[0])));
    check("sigmoid", vec![normal(&mut r, &[3, 7])], |t, v| Ok(t.sigmoid(v[0])));
    check("softmax", vec![normal(&mut r, &[4, 6])], |t, v| t.softmax(v[0]));
}

#[test]
fn cross_entropy_through_softmax() {
    let mut r = rng(3);
    check("softmax+xent", vec![normal(&mut r, &[5, 4])], |t, v| {
        let p = t.softmax(v[0])?;
        t.cross_entropy(p, &[0, 3, 1, 1, 2], 1e-12)
    });
}

#[test]
fn convolution_pooling_subsampling() {
    let mut r = rng(4);
    check(
        "conv2d pad1 stride1",
        vec![normal(&mut r, &[2, 3, 6, 5]), normal(&mut r, &[4, 3, 3, 3]), normal(&mut r, &[4])],
        |t, v| t.conv2d(v[0], v[1], v[2], 1, 1),
    );
    check(
        "conv2d valid stride2",
        vec![normal(&mut r, &[2, 2, 7, 7]), normal(&mut r, &[3, 2, 3, 2]), normal(&mut r, &[3])],
        |t, v| t.conv2d(v[0], v[1], v[2], 2, 0),
    );
    check("avg_pool", vec![normal(&mut r, &[2, 3, 4, 6])], |t, v| t.avg_pool(v[0], 2));
    check("subsample", vec![normal(&mut r, &[2, 3, 4, 6])], |t, v| t.subsample(v[0], 2));
}

#[test]
fn batch_norm_both_modes() {
    let mut r = rng(5);
    check(
        "batch_norm batch",
        vec![normal(&mut r, &[3, 2, 3, 3]), normal(&mut r, &[2]), normal(&mut r, &[2])],
        |t, v| Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Batch)?.0),
    );
    let mean = [0.3, -0.2];
    let var = [1.5, 0.7];
    check(
        "batch_norm fixed",
        vec![normal(&mut r, &[3, 2, 3, 3]), normal(&mut r, &[2]), normal(&mut r, &[2])],
        |t, v| Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Fixed { mean: &mean, var: &var })?.0),
    );
}

#[test]
fn indexing_and_reductions() {
    let mut r = rng(6);
    check("reshape", vec![normal(&mut r, &[2, 3, 2])], |t, v| t.reshape(v[0], &[3, 4]));
    check("scatter_rows", vec![normal(&mut r, &[2, 3])], |t, v| t.scatter_rows(v[0], &[3, 1], 4));
    check("gather_rows", vec![normal(&mut r, &[4, 3])], |t, v| t.gather_rows(v[0], &[2, 0, 2]));
    check("slice_cols", vec![normal(&mut r, &[3, 8])], |t, v| t.slice_cols(v[0], 2, 4));
    check("sum", vec![normal(&mut r, &[3, 2])], |t, v| Ok(t.sum(v[0])));
    check("mean", vec![normal(&mut r, &[3, 2])], |t, v| Ok(t.mean(v[0])));
}

#[test]
fn sum_and_half_square_norm_gradients() {
    let mut store = ParamStore::<f64>::new();
    let p = store
        .add("p", Tensor::from_slice(&[0.5, -2.0, 3.0]).unwrap())
        .unwrap();
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let s = tape.sum(v);
    tape.backward(s).unwrap().accumulate_into(&mut store);
    assert_eq!(store.grad(p).data(), &[1.0, 1.0, 1.0]);

    store.zero_grads();
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq);
    let half = tape.scale(s, 0.5);
    tape.backward(half).unwrap().accumulate_into(&mut store);
    assert_eq!(store.grad(p).data(), store.value(p).data());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn two_layer_network_parameters() {
    let mut r = rng(7);
    let mut store = ParamStore::<f64>::new();
    let w1 = store.add("w1", normal(&mut r, &[4, 6])).unwrap();
    let b1 = store.add("b1", normal(&mut r, &[6])).unwrap();
    let w2 = store.add("w2", normal(&mut r, &[6, 3])).unwrap();
    let b2 = store.add("b2", normal(&mut r, &[3])).unwrap();
    let x = normal(&mut r, &[5, 4]);
    let targets = [0usize, 2, 1, 1, 0];

    let forward = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let (w1, b1, w2, b2) = (
            tape.param(store, w1),
            tape.param(store, b1),
            tape.param(store, w2),
            tape.param(store, b2),
        );
        let h = tape.matmul(xi, w1).unwrap();
        let h = tape.add_bias(h, b1).unwrap();
        let h = tape.tanh(h);
        let o = tape.matmul(h, w2).unwrap();
        let o = tape.add_bias(o, b2).unwrap();
        let p = tape.softmax(o).unwrap();
        let loss = tape.cross_entropy(p, &targets, 1e-12).unwrap();
        (tape, loss)
    };
    let (tape, loss) = forward(&store);
    tape.backward(loss).unwrap().accumulate_into(&mut store);

    let ids: Vec<_> = store.ids().collect();
    let values: Vec<Tensor<f64>> = ids.iter().map(|&id| store.value(id).clone()).collect();
    let numeric = finite_difference(&values, H, |xs| {
        let mut probe = store.clone();
        for (&id, t) in ids.iter().zip(xs) {
            *probe.value_mut(id) = t.clone();
        }
        let (tape, loss) = forward(&probe);
        tape.value(loss).data()[0]
    });
    for (&id, num) in ids.iter().zip(&numeric) {
        let err = rel_error(store.grad(id).data(), num);
        assert!(err < TOL, "{}: {err:e}", store.name(id));
    }

    // one optimizer step changes the parameters because the gradient is non-zero
    let before = store.flat_values();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    adam.step(&mut store).unwrap();
    assert_ne!(store.flat_values(), before);
}

#[test]
fn forward_ops_are_pure() {
    let mut r = rng(8);
    let x = normal(&mut r, &[2, 3, 8, 8]);
    let w = normal(&mut r, &[4, 3, 3, 3]);
    let b = normal(&mut r, &[4]);
    let run = || {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
        let y = tape.avg_pool(y, 2).unwrap();
        let y = tape.flatten(y).unwrap();
        let y = tape.softmax(y).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run(), run());
}
