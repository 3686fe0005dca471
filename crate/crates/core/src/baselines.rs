//! Comparison architectures: decentralized and centralized MLP policies, a
//! critic on the concatenated joint observation, the fixed uniform
//! adjacency, and the attention-MLP baseline.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParameterStore, Tensor, Var};
use crate::dicg::{attention_scores_adjacency, uniform_blocks};
use crate::error::{Error, Result};
use crate::nn::{alive_column, glorot, Activation, Mlp};

/// Shared per-agent policy acting on local observations only.
#[derive(Clone, Debug)]
pub struct DecPolicy {
    pub mlp: Mlp,
    pub n_actions: usize,
}

impl DecPolicy {
    /// Registers `<prefix>.L<i>` for `obs_dim → widths → n_actions`.
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        obs_dim: usize,
        widths: &[usize],
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend(widths);
        dims.push(n_actions);
        Ok(Self {
            mlp: Mlp::new(store, prefix, &dims, Activation::Identity, rng)?,
            n_actions,
        })
    }

    /// Logits for every agent row; dead rows are zero.
    pub fn forward(&self, g: &mut Graph, obs: Var, alive: &[bool]) -> Result<Var> {
        let logits = self.mlp.forward(g, obs)?;
        let mask = g.constant(alive_column(alive));
        Ok(g.mul_col(logits, mask)?)
    }
}

/// One MLP on the concatenation of all agent observations with a factored
/// `n × k` output.
#[derive(Clone, Debug)]
pub struct CentPolicy {
    pub mlp: Mlp,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
}

impl CentPolicy {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        n_agents: usize,
        obs_dim: usize,
        widths: &[usize],
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![n_agents * obs_dim];
        dims.extend(widths);
        dims.push(n_agents * n_actions);
        Ok(Self {
            mlp: Mlp::new(store, prefix, &dims, Activation::Identity, rng)?,
            n_agents,
            obs_dim,
            n_actions,
        })
    }

    /// `joint` is `steps × (n·obs_dim)`; the result is `steps·n × k`.
    pub fn forward(&self, g: &mut Graph, joint: Var, alive: &[bool]) -> Result<Var> {
        let (steps, cols) = g.shape(joint);
        if cols != self.n_agents * self.obs_dim {
            return Err(Error::Model(format!(
                "centralized policy expects {} concatenated inputs, got {cols}",
                self.n_agents * self.obs_dim
            )));
        }
        let out = self.mlp.forward(g, joint)?;
        let logits = g.reshape(out, steps * self.n_agents, self.n_actions)?;
        let mask = g.constant(alive_column(alive));
        Ok(g.mul_col(logits, mask)?)
    }
}

/// Value MLP on the concatenated joint observation, one scalar per step.
#[derive(Clone, Debug)]
pub struct ConcatCritic {
    pub mlp: Mlp,
    pub input_dim: usize,
}

impl ConcatCritic {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(widths);
        dims.push(1);
        Ok(Self {
            mlp: Mlp::new(store, prefix, &dims, Activation::Identity, rng)?,
            input_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, joint: Var) -> Result<Var> {
        if g.shape(joint).1 != self.input_dim {
            return Err(Error::Model(format!(
                "critic expects {} inputs, got {}",
                self.input_dim,
                g.shape(joint).1
            )));
        }
        Ok(self.mlp.forward(g, joint)?)
    }
}

/// Fixed adjacency with `1 / n_alive` between alive agents and zero
/// elsewhere. At least one agent must be alive.
pub fn uniform_adjacency(alive: &[bool]) -> Result<Tensor> {
    if !alive.iter().any(|&a| a) {
        return Err(Error::Model("uniform adjacency needs at least one alive agent".into()));
    }
    Ok(uniform_blocks(alive, alive.len()))
}

/// Attention-MLP baseline: shared encoder and attention as in the
/// coordination-graph network, but `flatten(E⁽⁰⁾) ++ flatten(M)` goes
/// through an MLP instead of graph convolutions and an aggregator.
#[derive(Clone, Debug)]
pub struct AmlpBaseline {
    pub encoder: Mlp,
    pub attention: ParamId,
    pub mlp: Mlp,
    pub n_agents: usize,
    pub embed_dim: usize,
}

impl AmlpBaseline {
    /// Registers `encoder.*`, `attention.Wa` and `amlp.*`.
    pub fn new(
        store: &mut ParameterStore,
        n_agents: usize,
        obs_dim: usize,
        encoder_widths: &[usize],
        embed_dim: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend(encoder_widths);
        dims.push(embed_dim);
        let encoder = Mlp::new(store, "encoder", &dims, Activation::Tanh, rng)?;
        let attention = store.add("attention.Wa", glorot(embed_dim, embed_dim, rng))?;
        let mut dims = vec![n_agents * embed_dim + n_agents * n_agents];
        dims.extend(widths);
        dims.push(1);
        let mlp = Mlp::new(store, "amlp", &dims, Activation::Identity, rng)?;
        Ok(Self {
            encoder,
            attention,
            mlp,
            n_agents,
            embed_dim,
        })
    }

    /// Embeddings and adjacency, both `steps·n` rows.
    pub fn embed(&self, g: &mut Graph, obs: Var, alive: &[bool]) -> Result<(Var, Var)> {
        let e = self.encoder.forward(g, obs)?;
        let mask = g.constant(alive_column(alive));
        let e0 = g.mul_col(e, mask)?;
        let wa = g.param(self.attention);
        let m = attention_scores_adjacency(g, e0, wa, alive, self.n_agents)?;
        Ok((e0, m))
    }

    /// `steps × 1` baseline from `E⁽⁰⁾` (`steps·n × d`) and `M` (`steps·n × n`).
    pub fn baseline(&self, g: &mut Graph, e0: Var, m: Var) -> Result<Var> {
        let n = self.n_agents;
        let (er, ec) = g.shape(e0);
        let (mr, mc) = g.shape(m);
        if ec != self.embed_dim || mc != n || er != mr || er % n != 0 {
            return Err(Error::Model(format!(
                "attention-MLP baseline: embeddings {er}x{ec} and adjacency {mr}x{mc} do not fit {n} agents of size {}",
                self.embed_dim
            )));
        }
        let steps = er / n;
        let flat_e = g.reshape(e0, steps, n * ec)?;
        let flat_m = g.reshape(m, steps, n * n)?;
        let x = g.concat_cols(&[flat_e, flat_m])?;
        Ok(self.mlp.forward(g, x)?)
    }
}
