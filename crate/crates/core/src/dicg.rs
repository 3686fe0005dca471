//! Deep implicit coordination graph network.
//!
//! Per-agent observations go through a shared encoder to embeddings `E⁽⁰⁾`.
//! A bilinear attention score `e_jᵀ Wₐ e_i`, softmaxed over `j`, gives a
//! row-stochastic soft adjacency `M`. `m` graph-convolution layers
//! `H⁽ˡ⁺¹⁾ = tanh(M H⁽ˡ⁾ W_c⁽ˡ⁾)` integrate information along it and a
//! residual connection yields `Ẽ = E⁽⁰⁾ + E⁽ᵐ⁾`.
//!
//! All batched entry points take `steps × n` agent rows: rows
//! `t·n .. (t+1)·n` belong to step `t`. Dead agent slots produce zero rows
//! and are excluded from every softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{alive_column, glorot, Activation, Linear, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DicgMode {
    /// Integrated embeddings feed a shared policy head.
    Ctce,
    /// Integrated embeddings feed the centralized baseline only.
    Ctde,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// One value per step: mean of the per-agent linear readout.
    #[default]
    Mean,
    /// One value per agent slot.
    PerAgent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyKind {
    #[default]
    Attention,
    /// Fixed `1 / n_alive` weights, no attention parameters.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DicgConfig {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub gcn_layers: usize,
    pub n_actions: usize,
    pub mode: DicgMode,
    pub head_widths: Vec<usize>,
    pub baseline: BaselineMode,
    pub adjacency: AdjacencyKind,
}

impl DicgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Model(m.to_string()));
        if self.gcn_layers == 0 {
            return bad("gcn_layers must be at least 1");
        }
        if self.embed_dim == 0 || self.n_agents == 0 || self.obs_dim == 0 {
            return bad("embedding size, agent count and observation size must be positive");
        }
        if self.mode == DicgMode::Ctce && self.n_actions == 0 {
            return bad("CTCE mode needs at least one action");
        }
        Ok(())
    }
}

/// `steps × n` agent rows of observations with their alive flags.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentBatch {
    pub obs: Tensor,
    pub alive: Vec<bool>,
    pub n: usize,
}

impl AgentBatch {
    pub fn new(obs: Tensor, alive: Vec<bool>, n: usize) -> Result<Self> {
        if n == 0 || obs.rows() % n != 0 || alive.len() != obs.rows() {
            return Err(Error::Model(format!(
                "agent batch: {} observation rows, {} alive flags, {} agents per step",
                obs.rows(),
                alive.len(),
                n
            )));
        }
        Ok(Self { obs, alive, n })
    }

    /// One joint observation.
    pub fn single(obs: Tensor, alive: Vec<bool>) -> Result<Self> {
        let n = obs.rows();
        Self::new(obs, alive, n)
    }

    pub fn steps(&self) -> usize {
        self.obs.rows() / self.n
    }

    pub fn step_alive(&self, t: usize) -> &[bool] {
        &self.alive[t * self.n..(t + 1) * self.n]
    }
}

/// Softmax mask letting row `i` of step `t` see exactly the alive columns of
/// step `t`. Steps with no alive agent see every column (their rows are
/// zeroed afterwards).
pub(crate) fn adjacency_mask(alive: &[bool], n: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(alive.len() * n);
    for block in alive.chunks(n) {
        let empty = !block.iter().any(|&a| a);
        for _ in 0..n {
            mask.extend(block.iter().map(|&a| a || empty));
        }
    }
    mask
}

/// Row weights that average the alive rows of each step; empty steps
/// average every row.
pub(crate) fn alive_mean_weights(alive: &[bool], n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(alive.len());
    for block in alive.chunks(n) {
        let k = block.iter().filter(|&&a| a).count();
        if k == 0 {
            w.extend(std::iter::repeat_n(1.0 / n as f64, n));
        } else {
            w.extend(block.iter().map(|&a| if a { 1.0 / k as f64 } else { 0.0 }));
        }
    }
    w
}

/// Uniform `1 / n_alive` adjacency over alive pairs for every step of a
/// batch, zero elsewhere. Empty steps yield zero blocks.
pub(crate) fn uniform_blocks(alive: &[bool], n: usize) -> Tensor {
    let mut m = Tensor::zeros(alive.len(), n);
    for (t, block) in alive.chunks(n).enumerate() {
        let k = block.iter().filter(|&&a| a).count();
        if k == 0 {
            continue;
        }
        for i in 0..n {
            if !block[i] {
                continue;
            }
            for j in 0..n {
                if block[j] {
                    m.set(t * n + i, j, 1.0 / k as f64);
                }
            }
        }
    }
    m
}

/// One graph-convolution layer `tanh(M H W)` on `steps × n` rows.
pub fn gcn_layer(g: &mut Graph, h: Var, m: Var, weight: Var, n: usize) -> Result<Var> {
    let (hw_rows, d) = g.shape(h);
    let (wr, wc) = g.shape(weight);
    if wr != d || wc != d || g.shape(m) != (hw_rows, n) {
        return Err(Error::Model(format!(
            "gcn_layer: H {hw_rows}x{d}, M {:?}, W {wr}x{wc} are inconsistent",
            g.shape(m)
        )));
    }
    let hw = g.matmul(h, weight)?;
    let mixed = g.block_matmul(m, hw, n)?;
    Ok(g.tanh(mixed))
}

/// Forward pass results kept for heads and probes.
#[derive(Clone, Copy, Debug)]
pub struct DicgOutput {
    /// Encoder embeddings `E⁽⁰⁾`.
    pub embeddings: Var,
    /// Soft adjacency `M`, `steps·n × n`.
    pub adjacency: Var,
    /// Integrated embeddings `Ẽ = E⁽⁰⁾ + E⁽ᵐ⁾`.
    pub integrated: Var,
}

#[derive(Clone, Debug)]
pub struct DicgNet {
    pub config: DicgConfig,
    pub encoder: Mlp,
    pub attention: Option<ParamId>,
    pub gcn: Vec<ParamId>,
    pub head: Option<Mlp>,
    pub aggregator: Option<Linear>,
}

impl DicgNet {
    /// Registers `encoder.*`, `attention.Wa`, `gcn.L<i>.Wc` and either
    /// `head.*` (CTCE) or `aggregator.*` (CTDE).
    pub fn new(store: &mut ParameterStore, config: DicgConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut dims = vec![config.obs_dim];
        dims.extend(&config.encoder_widths);
        dims.push(d);
        let encoder = Mlp::new(store, "encoder", &dims, Activation::Tanh, rng)?;
        let attention = match config.adjacency {
            AdjacencyKind::Attention => Some(store.add("attention.Wa", glorot(d, d, rng))?),
            AdjacencyKind::Uniform => None,
        };
        let gcn = (0..config.gcn_layers)
            .map(|l| store.add(format!("gcn.L{l}.Wc"), glorot(d, d, rng)))
            .collect::<Result<Vec<_>, _>>()?;
        let (head, aggregator) = match config.mode {
            DicgMode::Ctce => {
                let mut hd = vec![d];
                hd.extend(&config.head_widths);
                hd.push(config.n_actions);
                (Some(Mlp::new(store, "head", &hd, Activation::Identity, rng)?), None)
            }
            DicgMode::Ctde => (None, Some(Linear::new(store, "aggregator", d, 1, rng)?)),
        };
        Ok(Self {
            config,
            encoder,
            attention,
            gcn,
            head,
            aggregator,
        })
    }

    fn check_batch(&self, batch: &AgentBatch) -> Result<()> {
        if batch.obs.cols() != self.config.obs_dim {
            return Err(Error::Model(format!(
                "observation width {} does not match obs_dim {}",
                batch.obs.cols(),
                self.config.obs_dim
            )));
        }
        if batch.n != self.config.n_agents {
            return Err(Error::Model(format!(
                "batch has {} agents per step, network expects {}",
                batch.n, self.config.n_agents
            )));
        }
        Ok(())
    }

    /// Shared encoder on every agent row; dead rows are zero.
    pub fn encode(&self, g: &mut Graph, batch: &AgentBatch) -> Result<Var> {
        self.check_batch(batch)?;
        let obs = g.constant(batch.obs.clone());
        self.encode_var(g, obs, &batch.alive)
    }

    pub(crate) fn encode_var(&self, g: &mut Graph, obs: Var, alive: &[bool]) -> Result<Var> {
        let e = self.encoder.forward(g, obs)?;
        let mask = g.constant(alive_column(alive));
        Ok(g.mul_col(e, mask)?)
    }

    /// Attention adjacency; every step must have at least one alive agent.
    pub fn attention_adjacency(&self, g: &mut Graph, e0: Var, alive: &[bool], n: usize) -> Result<Var> {
        if alive.chunks(n).any(|b| !b.iter().any(|&a| a)) {
            return Err(Error::Model("attention over a step with no alive agents".into()));
        }
        self.adjacency(g, e0, alive, n)
    }

    fn adjacency(&self, g: &mut Graph, e0: Var, alive: &[bool], n: usize) -> Result<Var> {
        match self.attention {
            Some(wa) => {
                let wa = g.param(wa);
                attention_scores_adjacency(g, e0, wa, alive, n)
            }
            None => Ok(g.constant(uniform_blocks(alive, n))),
        }
    }

    /// Encoder, adjacency, graph convolutions and the residual sum.
    pub fn forward(&self, g: &mut Graph, batch: &AgentBatch) -> Result<DicgOutput> {
        self.check_batch(batch)?;
        let obs = g.constant(batch.obs.clone());
        self.forward_var(g, obs, &batch.alive, batch.n)
    }

    pub(crate) fn forward_var(&self, g: &mut Graph, obs: Var, alive: &[bool], n: usize) -> Result<DicgOutput> {
        let e0 = self.encode_var(g, obs, alive)?;
        let m = self.adjacency(g, e0, alive, n)?;
        let mut h = e0;
        for &w in &self.gcn {
            let w = g.param(w);
            h = gcn_layer(g, h, m, w, n)?;
        }
        let integrated = g.add(e0, h)?;
        Ok(DicgOutput {
            embeddings: e0,
            adjacency: m,
            integrated,
        })
    }

    /// CTCE policy logits, `steps·n × k`; dead rows are all-zero logits.
    pub fn ctce_logits(&self, g: &mut Graph, integrated: Var, alive: &[bool]) -> Result<Var> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Model("ctce_logits called on a CTDE network".into()))?;
        let logits = head.forward(g, integrated)?;
        let mask = g.constant(alive_column(alive));
        Ok(g.mul_col(logits, mask)?)
    }

    /// CTDE centralized baseline: `steps × 1` (mean mode) or `steps × n`
    /// (per-agent mode). Every step needs an alive agent.
    pub fn ctde_baseline(&self, g: &mut Graph, integrated: Var, alive: &[bool], n: usize) -> Result<Var> {
        if alive.chunks(n).any(|b| !b.iter().any(|&a| a)) {
            return Err(Error::Model("baseline of a step with no alive agents".into()));
        }
        self.baseline(g, integrated, alive, n)
    }

    /// As [`Self::ctde_baseline`], but a step with no alive agent gets the
    /// readout of a zero embedding.
    pub(crate) fn baseline(&self, g: &mut Graph, integrated: Var, alive: &[bool], n: usize) -> Result<Var> {
        let agg = self
            .aggregator
            .as_ref()
            .ok_or_else(|| Error::Model("ctde_baseline called on a CTCE network".into()))?;
        let per_row = agg.forward(g, integrated)?;
        match self.config.baseline {
            BaselineMode::Mean => Ok(g.segment_sum(per_row, &alive_mean_weights(alive, n), n)?),
            BaselineMode::PerAgent => {
                let rows = g.shape(per_row).0;
                Ok(g.reshape(per_row, rows / n, n)?)
            }
        }
    }
}

/// `M = masked_softmax_rows(S)` with `S_ij = e_jᵀ Wₐ e_i`, dead rows zeroed.
pub fn attention_scores_adjacency(g: &mut Graph, e0: Var, wa: Var, alive: &[bool], n: usize) -> Result<Var> {
    let scores = attention_scores(g, e0, wa, n)?;
    let mask = adjacency_mask(alive, n);
    let m = g.softmax_rows(scores, Some(&mask))?;
    let rows = g.constant(alive_column(alive));
    Ok(g.mul_col(m, rows)?)
}

/// Raw scores, `steps·n × n`, with entry `(i, j)` equal to `e_jᵀ Wₐ e_i`.
pub fn attention_scores(g: &mut Graph, e0: Var, wa: Var, n: usize) -> Result<Var> {
    let projected = g.matmul(e0, wa)?;
    Ok(g.block_matmul_abt(e0, projected, n)?)
}
