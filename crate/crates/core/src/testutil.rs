//! Finite-difference oracle for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParameterStore, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;

pub fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn eval(store: &ParameterStore, build: &impl Fn(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::new(store);
    let l = build(&mut g);
    g.value(l).get(0, 0)
}

/// Worst relative error between the tape gradient of `build`'s scalar
/// output with respect to `id` and central differences.
pub fn max_grad_error(store: &ParameterStore, id: ParamId, build: impl Fn(&mut Graph) -> Var) -> f64 {
    let analytic = {
        let mut g = Graph::new(store);
        let l = build(&mut g);
        g.backward(l).unwrap().param_or_zeros(store, id)
    };
    let mut probe = store.clone();
    let base = store.get(id).clone();
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[k] += FD_STEP;
        probe.set(id, plus).unwrap();
        let fp = eval(&probe, &build);
        let mut minus = base.clone();
        minus.data_mut()[k] -= FD_STEP;
        probe.set(id, minus).unwrap();
        let fm = eval(&probe, &build);
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic.data()[k], numeric));
    }
    worst
}

pub fn assert_grad_matches(store: &ParameterStore, id: ParamId, build: impl Fn(&mut Graph) -> Var) {
    let err = max_grad_error(store, id, build);
    assert!(err < FD_TOL, "{}: relative error {err:e}", store.name(id));
}
