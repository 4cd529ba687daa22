//! The agent: an encoder producing the fast latent `z`, a damped gated
//! recurrent cell producing the slow global latent `g`, an
//! action-conditioned decoder predicting the next observation from `g`, and
//! a policy over the detached state `[z; p_prev; g]`.
//!
//! Gradient routing:
//!
//! - the policy reads its state through `stop_gradient`, so actor and
//!   entropy terms only ever reach policy weights;
//! - the decoder mixture is weighted by a detached copy of `π`, so
//!   prediction and smoothness terms never reach policy weights;
//! - `g_{t−1}` enters every step as a constant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NamedTensor, NodeId, ParamId, ParameterStore};
use crate::error::{ConfigError, DiffError};
use crate::tensor::Tensor;

/// Sign convention of the actor term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorSign {
    /// `+adv · log π(a)`: high-cost actions become less likely.
    CostPenalizing,
    /// `−adv · log π(a)`, the objective exactly as written.
    PaperLiteral,
}

impl ActorSign {
    fn factor(self) -> f64 {
        match self {
            ActorSign::CostPenalizing => 1.0,
            ActorSign::PaperLiteral => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub action_count: usize,
    pub z_dim: usize,
    pub g_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub policy_hidden: usize,
    /// Damping `d` in `g_t = (1−d)·g_{t−1} + d·h_t`.
    pub damping: f64,
    pub lambda_smooth: f64,
    pub lambda_actor: f64,
    pub lambda_ent: f64,
    pub actor_sign: ActorSign,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            obs_dim: 8,
            action_count: 5,
            z_dim: 16,
            g_dim: 12,
            encoder_hidden: 32,
            decoder_hidden: 32,
            policy_hidden: 32,
            damping: 0.1,
            lambda_smooth: 0.25,
            lambda_actor: 0.5,
            lambda_ent: 0.01,
            actor_sign: ActorSign::CostPenalizing,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            ("agent.obs_dim", self.obs_dim),
            ("agent.action_count", self.action_count),
            ("agent.z_dim", self.z_dim),
            ("agent.g_dim", self.g_dim),
            ("agent.encoder_hidden", self.encoder_hidden),
            ("agent.decoder_hidden", self.decoder_hidden),
            ("agent.policy_hidden", self.policy_hidden),
        ];
        for (key, v) in dims {
            if v < 1 {
                return Err(ConfigError::invalid(key, "must be >= 1"));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ConfigError::invalid("agent.damping", "must lie in (0, 1]"));
        }
        let lambdas = [
            ("agent.lambda_smooth", self.lambda_smooth),
            ("agent.lambda_actor", self.lambda_actor),
            ("agent.lambda_ent", self.lambda_ent),
        ];
        for (key, v) in lambdas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(key, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.z_dim + self.action_count + self.g_dim
    }
}

/// Handles for one affine layer.
#[derive(Debug, Clone, Copy)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct GruParams {
    input_reset: Layer,
    input_update: Layer,
    input_new: Layer,
    hidden_reset: Layer,
    hidden_update: Layer,
    hidden_new: Layer,
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    hidden: Layer,
    out: Layer,
}

/// Which sub-network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Gru,
    Decoder,
    Policy,
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<ParamGroup> {
        match name.split('.').next()? {
            "encoder" => Some(ParamGroup::Encoder),
            "gru" => Some(ParamGroup::Gru),
            "decoder" => Some(ParamGroup::Decoder),
            "policy" => Some(ParamGroup::Policy),
            _ => None,
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub x: NodeId,
    pub p_prev: NodeId,
    pub g_prev: NodeId,
    pub z: NodeId,
    pub h: NodeId,
    pub g: NodeId,
    pub s: NodeId,
    pub logits: NodeId,
    pub pi: NodeId,
    pub log_pi: NodeId,
}

/// Values of one timestep's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub p_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub logits: Vec<f64>,
    pub pi: Vec<f64>,
}

impl ForwardNodes {
    pub fn state(&self, graph: &Graph) -> AgentState {
        let v = |n: NodeId| graph.value(n).values().to_vec();
        AgentState {
            x: v(self.x),
            p_prev: v(self.p_prev),
            z: v(self.z),
            h: v(self.h),
            g: v(self.g),
            s: v(self.s),
            logits: v(self.logits),
            pi: v(self.pi),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub mixture: NodeId,
    pub pred: NodeId,
    pub smooth: NodeId,
    pub cost: NodeId,
    pub actor: NodeId,
    pub entropy: NodeId,
    pub total: NodeId,
}

/// Scalar values of every loss term for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_pred: f64,
    pub l_smooth: f64,
    /// Prediction error of the executed action.
    pub cost: f64,
    pub baseline: f64,
    pub advantage: f64,
    pub l_actor: f64,
    pub entropy: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    store: ParameterStore,
    encoder: Mlp,
    gru: GruParams,
    decoder: Mlp,
    policy: Mlp,
}

impl Agent {
    /// Weights and biases drawn from U(−1/√fan_in, 1/√fan_in).
    pub fn new<R: Rng>(config: AgentConfig, rng: &mut R) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let mut layer = |name: &str, out: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            let w = draw(out * fan_in);
            let b = draw(out);
            Layer {
                weight: store.add(format!("{name}.weight"), tensor(vec![out, fan_in], w)),
                bias: store.add(format!("{name}.bias"), Tensor::vector(b)),
            }
        };
        let c = &config;
        let enc_in = c.obs_dim + c.action_count;
        let encoder = Mlp {
            hidden: layer("encoder.hidden", c.encoder_hidden, enc_in),
            out: layer("encoder.out", c.z_dim, c.encoder_hidden),
        };
        let gru_in = c.z_dim + c.action_count;
        let gru = GruParams {
            input_reset: layer("gru.input_reset", c.g_dim, gru_in),
            input_update: layer("gru.input_update", c.g_dim, gru_in),
            input_new: layer("gru.input_new", c.g_dim, gru_in),
            hidden_reset: layer("gru.hidden_reset", c.g_dim, c.g_dim),
            hidden_update: layer("gru.hidden_update", c.g_dim, c.g_dim),
            hidden_new: layer("gru.hidden_new", c.g_dim, c.g_dim),
        };
        let decoder = Mlp {
            hidden: layer("decoder.hidden", c.decoder_hidden, c.g_dim + c.action_count),
            out: layer("decoder.out", c.obs_dim, c.decoder_hidden),
        };
        let policy = Mlp {
            hidden: layer("policy.hidden", c.policy_hidden, c.state_dim()),
            out: layer("policy.out", c.action_count, c.policy_hidden),
        };
        Ok(Self {
            config,
            store,
            encoder,
            gru,
            decoder,
            policy,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Overrides the damping, allowing the degenerate `d = 0` that
    /// configuration validation rejects.
    pub fn set_damping(&mut self, d: f64) {
        assert!((0.0..=1.0).contains(&d), "damping must lie in [0, 1]");
        self.config.damping = d;
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.store.to_named()
    }

    pub fn load_named(&mut self, tensors: &[NamedTensor], step: u64) -> Result<(), DiffError> {
        self.store.load_named(tensors, step)
    }

    /// Parameter ids belonging to `group`.
    pub fn group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|id| ParamGroup::of(self.store.name(*id)) == Some(group))
            .collect()
    }

    fn apply(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        layer: Layer,
        input: NodeId,
    ) -> Result<NodeId, DiffError> {
        let w = graph.param(store, layer.weight)?;
        let b = graph.param(store, layer.bias)?;
        graph.affine(input, w, b)
    }

    /// `z_t = tanh(W₂ tanh(W₁ [x; p_prev] + b₁) + b₂)`.
    pub fn encode(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        x: NodeId,
        p_prev: NodeId,
    ) -> Result<NodeId, DiffError> {
        let input = graph.concat(&[x, p_prev])?;
        let a = self.apply(graph, store, self.encoder.hidden, input)?;
        let hidden = graph.tanh(a)?;
        let o = self.apply(graph, store, self.encoder.out, hidden)?;
        graph.tanh(o)
    }

    /// Gated recurrent cell on input `[z; p_prev]` with hidden state
    /// `g_prev`, followed by damping. Returns `(h_t, g_t)`.
    pub fn update_global(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        z: NodeId,
        p_prev: NodeId,
        g_prev: NodeId,
    ) -> Result<(NodeId, NodeId), DiffError> {
        let input = graph.concat(&[z, p_prev])?;
        let gate = |graph: &mut Graph, i: Layer, h: Layer| -> Result<NodeId, DiffError> {
            let a = self.apply(graph, store, i, input)?;
            let b = self.apply(graph, store, h, g_prev)?;
            let s = graph.add(a, b)?;
            graph.sigmoid(s)
        };
        let reset = gate(graph, self.gru.input_reset, self.gru.hidden_reset)?;
        let update = gate(graph, self.gru.input_update, self.gru.hidden_update)?;
        let xn = self.apply(graph, store, self.gru.input_new, input)?;
        let hn = self.apply(graph, store, self.gru.hidden_new, g_prev)?;
        let gated = graph.mul(reset, hn)?;
        let pre = graph.add(xn, gated)?;
        let candidate = graph.tanh(pre)?;
        // h = (1 − u)·n + u·g_prev
        let keep = graph.mul(update, g_prev)?;
        let one_minus = graph.linear(update, -1.0, 1.0)?;
        let fresh = graph.mul(one_minus, candidate)?;
        let h = graph.add(fresh, keep)?;

        let d = self.config.damping;
        let old = graph.scale(g_prev, 1.0 - d)?;
        let new = graph.scale(h, d)?;
        let g = graph.add(old, new)?;
        Ok((h, g))
    }

    /// Returns `(s_t, logits, π, log π)`; logits see `stop_gradient(s_t)`.
    pub fn policy_forward(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        z: NodeId,
        p_prev: NodeId,
        g: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId, NodeId), DiffError> {
        let s = graph.concat(&[z, p_prev, g])?;
        let detached = graph.stop_gradient(s)?;
        let a = self.apply(graph, store, self.policy.hidden, detached)?;
        let hidden = graph.tanh(a)?;
        let logits = self.apply(graph, store, self.policy.out, hidden)?;
        let pi = graph.softmax(logits)?;
        let log_pi = graph.log_softmax(logits)?;
        Ok((s, logits, pi, log_pi))
    }

    /// `x̂^{(a)} = W₂ tanh(W₁ [g; onehot(a)] + b₁) + b₂`.
    pub fn decode(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        g: NodeId,
        action: usize,
    ) -> Result<NodeId, DiffError> {
        let mut one_hot = vec![0.0; self.config.action_count];
        *one_hot.get_mut(action).ok_or(DiffError::ShapeMismatch {
            op: "decode",
            expected: vec![self.config.action_count],
            got: vec![action],
        })? = 1.0;
        let a = graph.constant_vec(&one_hot)?;
        let input = graph.concat(&[g, a])?;
        let pre = self.apply(graph, store, self.decoder.hidden, input)?;
        let hidden = graph.tanh(pre)?;
        self.apply(graph, store, self.decoder.out, hidden)
    }

    /// Full forward pass using this agent's own parameters.
    pub fn forward(
        &self,
        graph: &mut Graph,
        x: &[f64],
        p_prev: &[f64],
        g_prev: &[f64],
    ) -> Result<ForwardNodes, DiffError> {
        self.forward_with(graph, &self.store, x, p_prev, g_prev)
    }

    /// Forward pass reading weights from `store`, which must share this
    /// agent's layout (used by finite-difference probes).
    pub fn forward_with(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        x: &[f64],
        p_prev: &[f64],
        g_prev: &[f64],
    ) -> Result<ForwardNodes, DiffError> {
        let c = &self.config;
        check_len("x", x, c.obs_dim)?;
        check_len("p_prev", p_prev, c.action_count)?;
        check_len("g_prev", g_prev, c.g_dim)?;
        let x = graph.constant_vec(x)?;
        let p_prev = graph.constant_vec(p_prev)?;
        let g_prev = graph.constant_vec(g_prev)?;
        let z = self.encode(graph, store, x, p_prev)?;
        let (h, g) = self.update_global(graph, store, z, p_prev, g_prev)?;
        let (s, logits, pi, log_pi) = self.policy_forward(graph, store, z, p_prev, g)?;
        Ok(ForwardNodes {
            x,
            p_prev,
            g_prev,
            z,
            h,
            g,
            s,
            logits,
            pi,
            log_pi,
        })
    }

    /// `x̂ = Σ_a π̃(a)·x̂^{(a)}` with `weights` already detached.
    pub fn mixture_prediction(
        &self,
        graph: &mut Graph,
        weights: NodeId,
        predictions: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        let mut acc: Option<NodeId> = None;
        for (a, &pred) in predictions.iter().enumerate() {
            let w = graph.index(weights, a)?;
            let term = graph.scale_by(pred, w)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => graph.add(prev, term)?,
            });
        }
        acc.ok_or(DiffError::ShapeMismatch {
            op: "mixture",
            expected: vec![self.config.action_count],
            got: vec![0],
        })
    }

    /// Builds every loss term for the executed `action` and the observed
    /// `x_next`. `advantage` maps the internal cost `c_t` to `(b_t, adv_t)`;
    /// `actor_weight` gates the actor term (0 during warm-up).
    pub fn compute_losses(
        &self,
        graph: &mut Graph,
        fwd: &ForwardNodes,
        action: usize,
        x_next: &[f64],
        actor_weight: f64,
        advantage: impl FnOnce(f64) -> (f64, f64),
    ) -> Result<(LossNodes, LossBundle), DiffError> {
        self.compute_losses_with(
            graph,
            &self.store,
            fwd,
            action,
            x_next,
            actor_weight,
            advantage,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn compute_losses_with(
        &self,
        graph: &mut Graph,
        store: &ParameterStore,
        fwd: &ForwardNodes,
        action: usize,
        x_next: &[f64],
        actor_weight: f64,
        advantage: impl FnOnce(f64) -> (f64, f64),
    ) -> Result<(LossNodes, LossBundle), DiffError> {
        let c = &self.config;
        check_len("x_next", x_next, c.obs_dim)?;
        let predictions = (0..c.action_count)
            .map(|a| self.decode(graph, store, fwd.g, a))
            .collect::<Result<Vec<_>, _>>()?;
        let target = graph.constant_vec(x_next)?;

        let weights = graph.stop_gradient(fwd.pi)?;
        let mixture = self.mixture_prediction(graph, weights, &predictions)?;
        let pred = graph.mse(mixture, target)?;
        let smooth = graph.mse(fwd.g, fwd.g_prev)?;

        let executed = *predictions.get(action).ok_or(DiffError::ShapeMismatch {
            op: "compute_losses",
            expected: vec![c.action_count],
            got: vec![action],
        })?;
        let cost = graph.mse(executed, target)?;
        let cost_value = graph.stop_gradient(cost)?;
        let (baseline, adv) = advantage(graph.scalar(cost_value));

        let log_prob = graph.index(fwd.log_pi, action)?;
        let actor = graph.scale(log_prob, c.actor_sign.factor() * adv)?;

        let plogp = graph.mul(fwd.pi, fwd.log_pi)?;
        let neg_entropy = graph.sum(plogp)?;
        let entropy = graph.scale(neg_entropy, -1.0)?;

        let smooth_term = graph.scale(smooth, c.lambda_smooth)?;
        let mut total = graph.add(pred, smooth_term)?;
        let actor_coef = c.lambda_actor * actor_weight;
        if actor_coef != 0.0 {
            let actor_term = graph.scale(actor, actor_coef)?;
            total = graph.add(total, actor_term)?;
        }
        let ent_term = graph.scale(neg_entropy, c.lambda_ent)?;
        total = graph.add(total, ent_term)?;

        let nodes = LossNodes {
            mixture,
            pred,
            smooth,
            cost,
            actor,
            entropy,
            total,
        };
        let bundle = LossBundle {
            l_pred: graph.scalar(pred),
            l_smooth: graph.scalar(smooth),
            cost: graph.scalar(cost),
            baseline,
            advantage: adv,
            l_actor: graph.scalar(actor),
            entropy: graph.scalar(entropy),
            l_total: graph.scalar(total),
        };
        Ok((nodes, bundle))
    }
}

/// Inverse-CDF draw over the action order.
pub fn sample_action<R: Rng>(pi: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in pi.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum.
    pi.iter().rposition(|p| *p > 0.0).unwrap_or(pi.len() - 1)
}

fn tensor(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
    Tensor::new(shape, values).expect("layer shape matches value count")
}

fn check_len(name: &'static str, v: &[f64], expected: usize) -> Result<(), DiffError> {
    if v.len() != expected {
        return Err(DiffError::ShapeMismatch {
            op: name,
            expected: vec![expected],
            got: vec![v.len()],
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DiffError::NonFinite { op: name });
    }
    Ok(())
}
