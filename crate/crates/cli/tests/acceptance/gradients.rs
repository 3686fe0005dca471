//! Central-difference check of every differentiable operation: the graph
//! primitives on their inputs, and each model and the PPO loss on their
//! parameters.

use dicg_core::autodiff::{Graph, ParameterStore, Tensor, Var};
use dicg_core::dicg::BaselineMode;
use dicg_core::model::{Algo, Model, ModelSpec, NetSizes};
use dicg_core::trainer::{ppo_loss, Normalizers, PpoConfig, Prepared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: usize = 100;
pub const TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Values at least `gap` away from `kink`.
fn away_from(rng: &mut ChaCha8Rng, rows: usize, cols: usize, kink: f64, gap: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let m = rng.gen_range(gap..2.0);
        if rng.gen_bool(0.5) {
            kink + m
        } else {
            kink - m
        }
    })
}

fn flags(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<bool> {
    (0..len).map(|_| rng.gen_bool(p)).collect()
}

type Op = dyn Fn(&mut Graph, &[Var]) -> Var;

/// Worst relative error of `d sum(W ⊙ op(inputs)) / d inputs` with random `W`.
fn input_error(inputs: &[Tensor], op: &Op, rng: &mut ChaCha8Rng) -> f64 {
    let store = ParameterStore::new();
    let shape = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = op(&mut g, &vars);
        g.shape(out)
    };
    let w = uniform(rng, shape.0, shape.1, -1.0, 1.0);
    let value = |xs: &[Tensor]| {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = op(&mut g, &vars);
        let l = g.weighted_sum(out, w.clone()).unwrap();
        g.value(l).get(0, 0)
    };
    let mut g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = op(&mut g, &vars);
    let l = g.weighted_sum(out, w.clone()).unwrap();
    let grads = g.backward(l).unwrap();

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (a, var) in vars.iter().enumerate() {
        let analytic = grads
            .input(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[a].rows(), inputs[a].cols()));
        for k in 0..inputs[a].len() {
            let base = inputs[a].data()[k];
            xs[a].data_mut()[k] = base + STEP;
            let fp = value(&xs);
            xs[a].data_mut()[k] = base - STEP;
            let fm = value(&xs);
            xs[a].data_mut()[k] = base;
            worst = worst.max(rel_err(analytic.data()[k], (fp - fm) / (2.0 * STEP)));
        }
    }
    worst
}

/// Worst relative error of a scalar loss's gradient with respect to every
/// parameter entry in `store`.
fn param_error(store: &ParameterStore, loss: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.backward(l).unwrap()
    };
    let value = |s: &ParameterStore| {
        let mut g = Graph::new(s);
        let l = loss(&mut g);
        g.value(l).get(0, 0)
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let base = store.get(id).clone();
        let analytic = grads.param_or_zeros(store, id);
        for k in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[k] += STEP;
            probe.set(id, t.clone()).unwrap();
            let fp = value(&probe);
            t.data_mut()[k] -= 2.0 * STEP;
            probe.set(id, t).unwrap();
            let fm = value(&probe);
            worst = worst.max(rel_err(analytic.data()[k], (fp - fm) / (2.0 * STEP)));
        }
        probe.set(id, base).unwrap();
    }
    worst
}

/// A random-size graph primitive case: its inputs and the operation.
type Case = (Vec<Tensor>, Box<Op>);

fn primitive(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let r = rng.gen_range(1..6);
    let c = rng.gen_range(1..6);
    let u = |rng: &mut ChaCha8Rng, rows, cols| uniform(rng, rows, cols, -2.0, 2.0);
    match name {
        "matmul" => {
            let k = rng.gen_range(1..6);
            (
                vec![u(rng, r, k), u(rng, k, c)],
                Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
            )
        }
        "add" => (
            vec![u(rng, r, c), u(rng, r, c)],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
        ),
        "sub" => (
            vec![u(rng, r, c), u(rng, r, c)],
            Box::new(|g, v| g.sub(v[0], v[1]).unwrap()),
        ),
        "mul" => (
            vec![u(rng, r, c), u(rng, r, c)],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
        ),
        "scale" => {
            let s = rng.gen_range(-3.0..3.0);
            (vec![u(rng, r, c)], Box::new(move |g, v| g.scale(v[0], s)))
        }
        "add_scalar" => {
            let s = rng.gen_range(-3.0..3.0);
            (vec![u(rng, r, c)], Box::new(move |g, v| g.add_scalar(v[0], s)))
        }
        "add_row" => (
            vec![u(rng, r, c), u(rng, 1, c)],
            Box::new(|g, v| g.add_row(v[0], v[1]).unwrap()),
        ),
        "mul_col" => (
            vec![u(rng, r, c), u(rng, r, 1)],
            Box::new(|g, v| g.mul_col(v[0], v[1]).unwrap()),
        ),
        "tanh" => (vec![u(rng, r, c)], Box::new(|g, v| g.tanh(v[0]))),
        "exp" => (vec![u(rng, r, c)], Box::new(|g, v| g.exp(v[0]))),
        "relu" => (vec![away_from(rng, r, c, 0.0, 0.01)], Box::new(|g, v| g.relu(v[0]))),
        "clamp" => {
            let x = Tensor::from_fn(r, c, |_, _| {
                let edge = if rng.gen_bool(0.5) { -0.5 } else { 0.5 };
                let m = rng.gen_range(0.01..1.5);
                if rng.gen_bool(0.5) {
                    edge + m
                } else {
                    edge - m
                }
            });
            (vec![x], Box::new(|g, v| g.clamp(v[0], -0.5, 0.5)))
        }
        "minimum" => {
            let a = u(rng, r, c);
            let d = away_from(rng, r, c, 0.0, 0.01);
            let b = Tensor::from_fn(r, c, |i, j| a.get(i, j) + d.get(i, j));
            (vec![a, b], Box::new(|g, v| g.minimum(v[0], v[1]).unwrap()))
        }
        "softmax_rows" => (vec![u(rng, r, c)], Box::new(|g, v| g.softmax_rows(v[0], None).unwrap())),
        "softmax_rows_masked" => {
            let mut mask = flags(rng, r * c, 0.6);
            for i in 0..r {
                let j = rng.gen_range(0..c);
                mask[i * c + j] = true;
            }
            (
                vec![u(rng, r, c)],
                Box::new(move |g, v| g.softmax_rows(v[0], Some(&mask)).unwrap()),
            )
        }
        "log_prob" => {
            let actions: Vec<Option<usize>> = (0..r).map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..c))).collect();
            (
                vec![u(rng, r, c)],
                Box::new(move |g, v| g.log_prob(v[0], &actions).unwrap()),
            )
        }
        "entropy" => {
            let rows = flags(rng, r, 0.8);
            (
                vec![u(rng, r, c)],
                Box::new(move |g, v| g.entropy(v[0], &rows).unwrap()),
            )
        }
        "sum" => (vec![u(rng, r, c)], Box::new(|g, v| g.sum(v[0]))),
        "mean" => (vec![u(rng, r, c)], Box::new(|g, v| g.mean(v[0]))),
        "weighted_sum" => {
            let w = u(rng, r, c);
            (
                vec![u(rng, r, c)],
                Box::new(move |g, v| g.weighted_sum(v[0], w.clone()).unwrap()),
            )
        }
        "reshape" => (vec![u(rng, r, c)], Box::new(move |g, v| g.reshape(v[0], c, r).unwrap())),
        "concat_cols" => {
            let c2 = rng.gen_range(1..4);
            let c3 = rng.gen_range(1..4);
            (
                vec![u(rng, r, c), u(rng, r, c2), u(rng, r, c3)],
                Box::new(|g, v| g.concat_cols(v).unwrap()),
            )
        }
        "block_matmul_abt" => {
            let block = rng.gen_range(1..4);
            let rows = block * rng.gen_range(1..4);
            (
                vec![u(rng, rows, c), u(rng, rows, c)],
                Box::new(move |g, v| g.block_matmul_abt(v[0], v[1], block).unwrap()),
            )
        }
        "block_matmul" => {
            let block = rng.gen_range(1..4);
            let rows = block * rng.gen_range(1..4);
            (
                vec![u(rng, rows, block), u(rng, rows, c)],
                Box::new(move |g, v| g.block_matmul(v[0], v[1], block).unwrap()),
            )
        }
        "segment_sum" => {
            let block = rng.gen_range(1..4);
            let rows = block * rng.gen_range(1..4);
            let w: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (
                vec![u(rng, rows, c)],
                Box::new(move |g, v| g.segment_sum(v[0], &w, block).unwrap()),
            )
        }
        other => panic!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: [&str; 27] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "add_row",
    "mul_col",
    "tanh",
    "exp",
    "relu",
    "clamp",
    "minimum",
    "softmax_rows",
    "softmax_rows_masked",
    "log_prob",
    "entropy",
    "sum",
    "mean",
    "weighted_sum",
    "reshape",
    "concat_cols",
    "block_matmul_abt",
    "block_matmul",
    "segment_sum",
    "model_forward",
    "ppo_loss",
];

struct Setup {
    model: Model,
    store: ParameterStore,
    obs: Tensor,
    alive: Vec<bool>,
    n_actions: usize,
}

fn random_model(algo: Algo, baseline: BaselineMode, rng: &mut ChaCha8Rng) -> Setup {
    let n = rng.gen_range(2..5);
    let obs_dim = rng.gen_range(2..5);
    let n_actions = rng.gen_range(2..5);
    let steps = rng.gen_range(1..4);
    let w = |rng: &mut ChaCha8Rng| rng.gen_range(2..5);
    let sizes = NetSizes {
        encoder_widths: vec![w(rng)],
        embed_dim: w(rng),
        gcn_layers: rng.gen_range(1..3),
        policy_widths: vec![w(rng)],
        critic_widths: vec![w(rng)],
    };
    let mut store = ParameterStore::new();
    let spec = ModelSpec {
        algo,
        n_agents: n,
        obs_dim,
        n_actions,
        sizes,
        baseline,
    };
    let model = Model::new(&mut store, spec, rng).unwrap();
    let obs = uniform(rng, steps * n, obs_dim, -1.5, 1.5);
    let mut alive = flags(rng, steps * n, 0.75);
    for t in 0..steps {
        alive[t * n + rng.gen_range(0..n)] = true;
    }
    Setup {
        model,
        store,
        obs,
        alive,
        n_actions,
    }
}

pub fn variants() -> Vec<(Algo, BaselineMode)> {
    let mut v: Vec<_> = Algo::ALL.iter().map(|&a| (a, BaselineMode::Mean)).collect();
    v.push((Algo::DicgDe, BaselineMode::PerAgent));
    v.push((Algo::DicgDeUniform, BaselineMode::PerAgent));
    v
}

fn model_forward_error(algo: Algo, baseline: BaselineMode, rng: &mut ChaCha8Rng) -> f64 {
    let s = random_model(algo, baseline, rng);
    let (lw, vw) = {
        let mut g = Graph::new(&s.store);
        let out = s.model.forward(&mut g, &s.obs, &s.alive).unwrap();
        (g.shape(out.logits), g.shape(out.values))
    };
    let wl = uniform(rng, lw.0, lw.1, -1.0, 1.0);
    let wv = uniform(rng, vw.0, vw.1, -1.0, 1.0);
    param_error(&s.store, &|g: &mut Graph| {
        let out = s.model.forward(g, &s.obs, &s.alive).unwrap();
        let a = g.weighted_sum(out.logits, wl.clone()).unwrap();
        let b = g.weighted_sum(out.values, wv.clone()).unwrap();
        g.add(a, b).unwrap()
    })
}

fn ppo_loss_error(algo: Algo, baseline: BaselineMode, rng: &mut ChaCha8Rng) -> f64 {
    let s = random_model(algo, baseline, rng);
    let n = s.model.spec.n_agents;
    let steps = s.obs.rows() / n;
    let vw = s.model.value_width();
    let actions: Vec<usize> = (0..s.alive.len()).map(|_| rng.gen_range(0..s.n_actions)).collect();
    let current = {
        let mut g = Graph::new(&s.store);
        let out = s.model.forward(&mut g, &s.obs, &s.alive).unwrap();
        let picked: Vec<Option<usize>> = actions.iter().zip(&s.alive).map(|(&a, &l)| l.then_some(a)).collect();
        let lp = g.log_prob(out.logits, &picked).unwrap();
        g.value(lp).data().to_vec()
    };
    // Old log-probabilities shifted so ratios land on both sides of the
    // clip range, kept clear of its edges.
    let log_probs = current
        .iter()
        .map(|&c| {
            let shift = loop {
                let d: f64 = rng.gen_range(-0.5..0.5);
                let ratio = d.exp();
                if (ratio - 0.8).abs() > 0.01 && (ratio - 1.2).abs() > 0.01 {
                    break d;
                }
            };
            c - shift
        })
        .collect();
    let data = Prepared {
        n_agents: n,
        obs_dim: s.model.spec.obs_dim,
        value_width: vw,
        obs: s.obs.data().to_vec(),
        alive: s.alive.clone(),
        actions,
        log_probs,
        advantages: s
            .alive
            .iter()
            .map(|&a| if a { rng.gen_range(-2.0..2.0) } else { 0.0 })
            .collect(),
        returns: (0..steps * vw).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        value_mask: (0..steps * vw).map(|k| vw == 1 || s.alive[k]).collect(),
    };
    let all: Vec<usize> = (0..steps).collect();
    let config = PpoConfig::default();
    let norm = Normalizers::for_steps(&data, &all);
    param_error(&s.store, &|g: &mut Graph| {
        ppo_loss(g, &s.model, &data, &all, &config, norm).unwrap().loss
    })
}

/// Worst error over `CASES` random cases of one named operation; the two
/// model-level entries cycle through every algorithm variant.
pub fn worst_error(name: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variants = variants();
    (0..CASES)
        .map(|case| match name {
            "model_forward" => {
                let (a, b) = variants[case % variants.len()];
                model_forward_error(a, b, &mut rng)
            }
            "ppo_loss" => {
                let (a, b) = variants[case % variants.len()];
                ppo_loss_error(a, b, &mut rng)
            }
            _ => {
                let (inputs, op) = primitive(name, &mut rng);
                input_error(&inputs, op.as_ref(), &mut rng)
            }
        })
        .fold(0.0, f64::max)
}
