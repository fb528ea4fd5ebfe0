//! Value-based agents: DQN with a squared TD loss and a categorical
//! distributional DQN trained with a KL loss against the projected Bellman
//! target. Both use a soft-updated target network.

pub mod distributional;
pub mod replay;
pub mod train;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::battery_env::{encode_state, BatteryAction, EnvState, NormStats};
use crate::controller::{argmax, Controller};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, FeedForwardNet, ParamSet};

pub use distributional::{categorical_projection, expectation, AtomGrid, ReturnDistribution};
pub use replay::ReplayBuffer;
pub use train::{
    train, train_agent, BatteryTrainingEnv, Environment, EnvStep, LearningCurve, TrainConfig,
    TrainedAgent,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Ddqn { atoms: AtomGrid },
}

impl AgentKind {
    pub fn output_dim(&self) -> usize {
        match self {
            AgentKind::Dqn => BatteryAction::COUNT,
            AgentKind::Ddqn { atoms } => BatteryAction::COUNT * atoms.count,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn { .. } => "ddqn",
        }
    }
}

/// Online and target networks of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub online: FeedForwardNet,
    pub target: FeedForwardNet,
    pub kind: AgentKind,
}

impl AgentNets {
    pub fn new(online: FeedForwardNet, kind: AgentKind) -> Result<Self> {
        if online.output_dim() != kind.output_dim() {
            return Err(Error::Dimension { expected: kind.output_dim(), found: online.output_dim() });
        }
        Ok(AgentNets { target: online.clone(), online, kind })
    }
}

/// Per-action softmax over the atoms of one output row.
pub fn action_distributions(row: &[f64], atoms: &AtomGrid) -> Vec<Vec<f64>> {
    row.chunks(atoms.count).map(|logits| softmax(logits, 1.0)).collect()
}

/// Expected action values (`batch x 3`) from raw network outputs.
pub fn action_values(outputs: &Array2<f64>, kind: &AgentKind) -> Array2<f64> {
    match kind {
        AgentKind::Dqn => outputs.clone(),
        AgentKind::Ddqn { atoms } => {
            let mut q = Array2::zeros((outputs.nrows(), BatteryAction::COUNT));
            for (b, row) in outputs.rows().into_iter().enumerate() {
                let row = row.to_vec();
                for (a, dist) in action_distributions(&row, atoms).iter().enumerate() {
                    q[[b, a]] = expectation(atoms, dist);
                }
            }
            q
        }
    }
}

pub fn evaluate_action_values(
    net: &FeedForwardNet,
    kind: &AgentKind,
    features: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    Ok(action_values(&net.forward_batch(features)?, kind))
}

/// Epsilon-greedy choice using the online network.
pub fn select_action(
    nets: &AgentNets,
    features: &[f64],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<BatteryAction> {
    if rng.random::<f64>() < epsilon {
        let i = rng.random_range(0..BatteryAction::COUNT);
        return Ok(BatteryAction::from_index(i).unwrap());
    }
    greedy_action(&nets.online, &nets.kind, features)
}

pub fn greedy_action(net: &FeedForwardNet, kind: &AgentKind, features: &[f64]) -> Result<BatteryAction> {
    let x = ArrayView2::from_shape((1, features.len()), features)
        .map_err(|_| Error::Dimension { expected: net.input_dim(), found: features.len() })?;
    let q = evaluate_action_values(net, kind, x)?;
    let row = q.row(0).to_vec();
    Ok(BatteryAction::from_index(argmax(&row)).unwrap())
}

/// Minibatch of encoded transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `r + gamma * max_a Q_target(s', a)`, with no bootstrap on terminal steps.
pub fn dqn_td_targets(batch: &Batch, target: &FeedForwardNet, gamma: f64) -> Result<Vec<f64>> {
    let next_q = target.forward_batch(batch.next_states.view())?;
    Ok((0..batch.len())
        .map(|b| {
            if batch.dones[b] {
                batch.rewards[b]
            } else {
                let best = next_q.row(b).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                batch.rewards[b] + gamma * best
            }
        })
        .collect())
}

/// Mean squared TD error and its gradient with respect to the online parameters.
pub fn dqn_loss(batch: &Batch, nets: &AgentNets, gamma: f64) -> Result<(f64, ParamSet)> {
    let targets = dqn_td_targets(batch, &nets.target, gamma)?;
    let cache = nets.online.forward_cached(batch.states.view())?;
    let q = cache.output();
    let n = batch.len() as f64;
    let mut upstream = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for b in 0..batch.len() {
        let a = batch.actions[b];
        let err = q[[b, a]] - targets[b];
        loss += err * err / n;
        upstream[[b, a]] = 2.0 * err / n;
    }
    let grads = nets.online.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

/// Which network's expectations pick the next-state greedy action in the
/// distributional target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreedySource {
    #[default]
    Target,
    Online,
}

/// Projected distributional Bellman targets, one row per sample.
pub fn ddqn_targets(
    batch: &Batch,
    nets: &AgentNets,
    gamma: f64,
    greedy: GreedySource,
) -> Result<Vec<Vec<f64>>> {
    let AgentKind::Ddqn { atoms } = nets.kind else {
        return Err(Error::invalid("distributional loss needs a ddqn agent"));
    };
    let next = nets.target.forward_batch(batch.next_states.view())?;
    let chooser = match greedy {
        GreedySource::Target => action_values(&next, &nets.kind),
        GreedySource::Online => evaluate_action_values(&nets.online, &nets.kind, batch.next_states.view())?,
    };
    let mut out = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let row = next.row(b).to_vec();
        let a_star = argmax(&chooser.row(b).to_vec());
        let dist = softmax(&row[a_star * atoms.count..(a_star + 1) * atoms.count], 1.0);
        let g = if batch.dones[b] { 0.0 } else { gamma };
        out.push(categorical_projection(&dist, batch.rewards[b], g, &atoms));
    }
    Ok(out)
}

/// Mean `KL(projected target || predicted)` over the taken actions, and its
/// gradient with respect to the online parameters.
pub fn ddqn_loss(
    batch: &Batch,
    nets: &AgentNets,
    gamma: f64,
    greedy: GreedySource,
) -> Result<(f64, ParamSet)> {
    let AgentKind::Ddqn { atoms } = nets.kind else {
        return Err(Error::invalid("distributional loss needs a ddqn agent"));
    };
    let targets = ddqn_targets(batch, nets, gamma, greedy)?;
    let cache = nets.online.forward_cached(batch.states.view())?;
    let out = cache.output();
    let n = batch.len() as f64;
    let k = atoms.count;
    let mut upstream = Array2::zeros(out.dim());
    let mut loss = 0.0;
    for b in 0..batch.len() {
        let a = batch.actions[b];
        let logits = out.row(b).slice(ndarray::s![a * k..(a + 1) * k]).to_vec();
        let logp = log_softmax(&logits);
        let m = &targets[b];
        for i in 0..k {
            if m[i] > 0.0 {
                loss += m[i] * (m[i].ln() - logp[i]) / n;
            }
            upstream[[b, a * k + i]] = (logp[i].exp() - m[i]) / n;
        }
    }
    let grads = nets.online.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(online: &ParamSet, target: &mut ParamSet, tau: f64) {
    for (t, o) in target.slices_mut().zip(online.slices()) {
        for (tv, &ov) in t.iter_mut().zip(o) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
}

/// Greedy policy of a trained agent over battery observations.
#[derive(Debug, Clone)]
pub struct GreedyAgent {
    pub net: FeedForwardNet,
    pub kind: AgentKind,
    pub norm: NormStats,
}

impl GreedyAgent {
    pub fn action_values(&self, states: &[EnvState]) -> Result<Array2<f64>> {
        let x = encode_batch(states, &self.norm)?;
        evaluate_action_values(&self.net, &self.kind, x.view())
    }
}

impl Controller for GreedyAgent {
    fn name(&self) -> String {
        self.kind.label().to_string()
    }

    fn act(&self, state: &EnvState) -> Result<BatteryAction> {
        Ok(self.act_batch(std::slice::from_ref(state))?[0])
    }

    fn act_batch(&self, states: &[EnvState]) -> Result<Vec<BatteryAction>> {
        let q = self.action_values(states)?;
        Ok(q.rows()
            .into_iter()
            .map(|r| BatteryAction::from_index(argmax(&r.to_vec())).unwrap())
            .collect())
    }
}

pub fn encode_batch(states: &[EnvState], norm: &NormStats) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((states.len(), crate::battery_env::FEATURE_DIM));
    for (b, s) in states.iter().enumerate() {
        let f = encode_state(s, norm)?;
        x.row_mut(b).assign(&ndarray::ArrayView1::from(&f));
    }
    Ok(x)
}
