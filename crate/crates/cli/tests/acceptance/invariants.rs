//! Structural properties of the coordination-graph network on random
//! networks and batches.

use dicg_core::autodiff::{Graph, ParameterStore, Tensor};
use dicg_core::dicg::{gcn_layer, AdjacencyKind, AgentBatch, BaselineMode, DicgConfig, DicgMode, DicgNet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: usize = 100;

struct Case {
    net: DicgNet,
    store: ParameterStore,
    batch: AgentBatch,
}

fn random_case(rng: &mut ChaCha8Rng, all_alive: bool) -> Case {
    let n = rng.gen_range(2..7);
    let obs_dim = rng.gen_range(2..6);
    let steps = rng.gen_range(1..4);
    let config = DicgConfig {
        n_agents: n,
        obs_dim,
        encoder_widths: vec![rng.gen_range(2..8)],
        embed_dim: rng.gen_range(2..8),
        gcn_layers: rng.gen_range(1..4),
        n_actions: rng.gen_range(2..5),
        mode: if rng.gen_bool(0.5) {
            DicgMode::Ctce
        } else {
            DicgMode::Ctde
        },
        head_widths: vec![4],
        baseline: BaselineMode::Mean,
        adjacency: AdjacencyKind::Attention,
    };
    let mut store = ParameterStore::new();
    let net = DicgNet::new(&mut store, config, rng).unwrap();
    let obs = Tensor::from_fn(steps * n, obs_dim, |_, _| rng.gen_range(-2.0..2.0));
    let mut alive: Vec<bool> = (0..steps * n).map(|_| all_alive || rng.gen_bool(0.7)).collect();
    for t in 0..steps {
        alive[t * n + rng.gen_range(0..n)] = true;
    }
    Case {
        net,
        store,
        batch: AgentBatch::new(obs, alive, n).unwrap(),
    }
}

/// `(E⁽⁰⁾, M, Ẽ)` values.
fn run(case: &Case, batch: &AgentBatch) -> (Tensor, Tensor, Tensor) {
    let mut g = Graph::new(&case.store);
    let out = case.net.forward(&mut g, batch).unwrap();
    (
        g.value(out.embeddings).clone(),
        g.value(out.adjacency).clone(),
        g.value(out.integrated).clone(),
    )
}

/// Worst deviation of an alive row's sum from 1, or infinity if an entry
/// is misplaced (non-positive among alive pairs, non-zero elsewhere).
pub fn row_stochastic(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let case = random_case(&mut rng, false);
        let (_, m, _) = run(&case, &case.batch);
        let n = case.batch.n;
        for r in 0..m.rows() {
            let block = case.batch.step_alive(r / n);
            let row_alive = case.batch.alive[r];
            for j in 0..n {
                let v = m.get(r, j);
                let ok = if row_alive && block[j] { v > 0.0 } else { v == 0.0 };
                if !ok {
                    return f64::INFINITY;
                }
            }
            if row_alive {
                worst = worst.max((m.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}

/// Graph convolution with an explicit degree normalization,
/// `tanh(D^{-1/2} M D^{-1/2} H W)` per step, where `D` holds the row sums
/// of `M` and a zero degree contributes nothing.
fn normalized_gcn_oracle(m: &Tensor, h: &Tensor, w: &Tensor, n: usize) -> Tensor {
    let hw = h.matmul(w).unwrap();
    let d = h.cols();
    let mut out = Tensor::zeros(h.rows(), d);
    for t in 0..h.rows() / n {
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let deg: f64 = m.row(t * n + i).iter().sum();
                if deg > 0.0 {
                    1.0 / deg.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        for i in 0..n {
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += inv_sqrt[i] * m.get(t * n + i, j) * inv_sqrt[j] * hw.get(t * n + j, c);
                }
                out.set(t * n + i, c, acc.tanh());
            }
        }
    }
    out
}

/// Worst deviation between the layer used by the network and the
/// degree-normalized oracle on the network's own adjacency.
pub fn simplified_matches_normalized(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let case = random_case(&mut rng, false);
        let n = case.batch.n;
        let d = case.net.config.embed_dim;
        let (_, m, _) = run(&case, &case.batch);
        let h = Tensor::from_fn(m.rows(), d, |_, _| rng.gen_range(-2.0..2.0));
        let w = Tensor::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new(&case.store);
        let (mv, hv, wv) = (g.constant(m.clone()), g.constant(h.clone()), g.constant(w.clone()));
        let layer = gcn_layer(&mut g, hv, mv, wv, n).unwrap();
        worst = worst.max(g.value(layer).max_abs_diff(&normalized_gcn_oracle(&m, &h, &w, n)));
    }
    worst
}

/// Whether zero graph-convolution weights leave `Ẽ = E⁽⁰⁾` bit for bit.
pub fn zero_gcn_is_identity(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CASES).all(|_| {
        let mut case = random_case(&mut rng, false);
        for &id in &case.net.gcn {
            let (r, c) = case.store.get(id).shape();
            case.store.set(id, Tensor::zeros(r, c)).unwrap();
        }
        let (e0, _, integrated) = run(&case, &case.batch);
        e0 == integrated
    })
}

/// Worst deviation from `1 / n_alive` over alive pairs when `Wₐ = 0`.
pub fn zero_attention_is_uniform(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case_no in 0..CASES {
        let mut case = random_case(&mut rng, case_no % 2 == 0);
        let wa = case.net.attention.unwrap();
        let (r, c) = case.store.get(wa).shape();
        case.store.set(wa, Tensor::zeros(r, c)).unwrap();
        let (_, m, _) = run(&case, &case.batch);
        let n = case.batch.n;
        for row in 0..m.rows() {
            if !case.batch.alive[row] {
                continue;
            }
            let block = case.batch.step_alive(row / n);
            let k = block.iter().filter(|&&a| a).count() as f64;
            for j in 0..n {
                let expected = if block[j] { 1.0 / k } else { 0.0 };
                worst = worst.max((m.get(row, j) - expected).abs());
            }
        }
    }
    worst
}

/// Worst deviation between `forward(P·obs)` and `(P·Ẽ, P·M·Pᵀ)` for a
/// random permutation of each step's agent slots.
pub fn permutation_equivariance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let case = random_case(&mut rng, false);
        let n = case.batch.n;
        let steps = case.batch.steps();
        let perms: Vec<Vec<usize>> = (0..steps)
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        // Slot i of step t in the permuted batch holds agent perms[t][i].
        let src = |r: usize| (r / n) * n + perms[r / n][r % n];
        let rows = steps * n;
        let obs = Tensor::from_fn(rows, case.batch.obs.cols(), |r, c| case.batch.obs.get(src(r), c));
        let alive = (0..rows).map(|r| case.batch.alive[src(r)]).collect();
        let permuted = AgentBatch::new(obs, alive, n).unwrap();
        let (_, m, e) = run(&case, &case.batch);
        let (_, pm, pe) = run(&case, &permuted);
        for r in 0..rows {
            for c in 0..e.cols() {
                worst = worst.max((pe.get(r, c) - e.get(src(r), c)).abs());
            }
            for j in 0..n {
                worst = worst.max((pm.get(r, j) - m.get(src(r), perms[r / n][j])).abs());
            }
        }
    }
    worst
}

/// Whether changing dead agents' observations leaves every alive row of
/// `Ẽ` bit for bit unchanged.
pub fn dead_agents_are_isolated(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CASES).all(|_| {
        let case = random_case(&mut rng, false);
        let mut zeroed = case.batch.clone();
        for r in 0..zeroed.obs.rows() {
            if !zeroed.alive[r] {
                zeroed.obs.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (_, _, a) = run(&case, &case.batch);
        let (_, _, b) = run(&case, &zeroed);
        (0..a.rows())
            .filter(|&r| case.batch.alive[r])
            .all(|r| a.row(r) == b.row(r))
    })
}
