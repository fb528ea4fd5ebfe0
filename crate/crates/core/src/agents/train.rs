//! Episodic training loop shared by both agent kinds.

use chrono::NaiveDate;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ddqn_loss, dqn_loss, select_action, soft_update, AgentKind, AgentNets, AtomGrid, Batch,
    GreedyAgent, GreedySource, ReplayBuffer,
};
use crate::battery_env::{encode_state, BatteryAction, BatteryParams, DayEpisode, NormStats, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::eval::backtest;
use crate::market_data::{DatasetSplit, PriceSeries};
use crate::nn::{adam_step, AdamState, FeedForwardNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub episodes: usize,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the episodes over which epsilon decays linearly.
    pub epsilon_anneal_fraction: f64,
    /// Gradient steps per update round.
    pub updates_per_step: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    pub hidden_layers: Vec<usize>,
    pub atoms: AtomGrid,
    pub greedy_source: GreedySource,
    /// Episodes between validation evaluations.
    pub validation_every: usize,
    /// Multiplier applied to rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub initial_soc: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.999,
            tau: 0.1,
            episodes: 50_000,
            minibatch: 16_384,
            buffer_capacity: 1_000_000,
            learning_rate: 5e-4,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.4,
            updates_per_step: 1,
            update_every: 1,
            hidden_layers: vec![256, 128],
            atoms: AtomGrid::default(),
            greedy_source: GreedySource::Target,
            validation_every: 250,
            reward_scale: 1.0,
            initial_soc: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reduced sizes for single-machine runs.
    pub fn desk() -> Self {
        TrainConfig { minibatch: 256, buffer_capacity: 100_000, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau must lie in (0, 1]"));
        }
        if self.minibatch == 0
            || self.buffer_capacity == 0
            || self.updates_per_step == 0
            || self.update_every == 0
            || self.validation_every == 0
        {
            return Err(Error::invalid("counts must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.reward_scale > 0.0) {
            return Err(Error::invalid("learning rate and reward scale must be positive"));
        }
        self.atoms.validate()
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self.epsilon_anneal_fraction * self.episodes as f64;
        let frac = if span > 0.0 { (episode as f64 / span).min(1.0) } else { 1.0 };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub features: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment seen by the trainer.
pub trait Environment {
    fn feature_dim(&self) -> usize;

    /// Starts a new episode and returns the first observation's features.
    fn begin_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    fn step(&mut self, action: BatteryAction) -> Result<EnvStep>;
}

/// Training days drawn uniformly per episode.
#[derive(Debug)]
pub struct BatteryTrainingEnv<'a> {
    series: &'a PriceSeries,
    days: Vec<NaiveDate>,
    params: BatteryParams,
    norm: NormStats,
    initial_soc: f64,
    episode: Option<DayEpisode<'a>>,
}

impl<'a> BatteryTrainingEnv<'a> {
    pub fn new(
        series: &'a PriceSeries,
        params: &BatteryParams,
        norm: NormStats,
        initial_soc: f64,
    ) -> Result<Self> {
        params.validate()?;
        let days: Vec<_> = series.days().collect();
        if days.is_empty() {
            return Err(Error::InsufficientData("training split has no days".into()));
        }
        Ok(BatteryTrainingEnv { series, days, params: params.clone(), norm, initial_soc, episode: None })
    }
}

impl Environment for BatteryTrainingEnv<'_> {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn begin_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let day = self.days[rng.random_range(0..self.days.len())];
        let ep = DayEpisode::reset(self.series, day, self.initial_soc, &self.params)?;
        let f = encode_state(ep.state(), &self.norm)?.to_vec();
        self.episode = Some(ep);
        Ok(f)
    }

    fn step(&mut self, action: BatteryAction) -> Result<EnvStep> {
        let ep = self.episode.as_mut().ok_or(Error::EpisodeDone)?;
        let out = ep.step(action)?;
        Ok(EnvStep {
            features: encode_state(&out.next_state, &self.norm)?.to_vec(),
            reward: out.reward,
            done: out.done,
        })
    }
}

/// Validation profit recorded during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<(usize, f64)>,
}

impl LearningCurve {
    pub const CSV_HEADER: &'static str = "episode,validation_profit_eur_per_day_per_mwh";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (ep, profit) in &self.points {
            s.push_str(&format!("{ep},{profit}\n"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub nets: AgentNets,
    pub curve: LearningCurve,
    pub env_steps: usize,
    pub gradient_steps: usize,
}

#[derive(Debug, Clone)]
struct Experience {
    features: Vec<f64>,
    action: usize,
    reward: f64,
    next_features: Vec<f64>,
    done: bool,
}

fn assemble(samples: &[&Experience], dim: usize) -> Batch {
    let n = samples.len();
    let mut states = Array2::zeros((n, dim));
    let mut next_states = Array2::zeros((n, dim));
    for (b, e) in samples.iter().enumerate() {
        states.row_mut(b).assign(&ndarray::ArrayView1::from(&e.features[..]));
        next_states.row_mut(b).assign(&ndarray::ArrayView1::from(&e.next_features[..]));
    }
    Batch {
        states,
        actions: samples.iter().map(|e| e.action).collect(),
        rewards: samples.iter().map(|e| e.reward).collect(),
        next_states,
        dones: samples.iter().map(|e| e.done).collect(),
    }
}

/// Layer sizes for an agent: features, hidden layers, action outputs.
pub fn agent_dims(input: usize, hidden: &[usize], kind: &AgentKind) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(kind.output_dim());
    dims
}

/// Runs `config.episodes` episodes of epsilon-greedy interaction with
/// replay-buffer updates. `validate` is called every `validation_every`
/// episodes with the current agent; returned values form the learning curve.
pub fn train_agent<E: Environment>(
    kind: AgentKind,
    env: &mut E,
    config: &TrainConfig,
    mut validate: impl FnMut(usize, &AgentNets) -> Result<Option<f64>>,
) -> Result<TrainedAgent> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = env.feature_dim();
    let online = FeedForwardNet::new(&agent_dims(dim, &config.hidden_layers, &kind), &mut rng)?;
    let mut nets = AgentNets::new(online, kind)?;
    let mut adam = AdamState::new(&nets.online, config.learning_rate);
    let mut buffer: ReplayBuffer<Experience> = ReplayBuffer::new(config.buffer_capacity);
    let mut curve = LearningCurve::default();
    let mut env_steps = 0usize;
    let mut gradient_steps = 0usize;

    for episode in 0..config.episodes {
        let epsilon = config.epsilon(episode);
        let mut features = env.begin_episode(&mut rng)?;
        loop {
            let action = select_action(&nets, &features, epsilon, &mut rng)?;
            let step = env.step(action)?;
            buffer.push(Experience {
                features: std::mem::take(&mut features),
                action: action.index(),
                reward: step.reward * config.reward_scale,
                next_features: step.features.clone(),
                done: step.done,
            });
            env_steps += 1;

            if env_steps % config.update_every == 0 && buffer.len() >= config.minibatch {
                for _ in 0..config.updates_per_step {
                    let samples = buffer.sample(config.minibatch, &mut rng).unwrap();
                    let batch = assemble(&samples, dim);
                    let (loss, grads) = match kind {
                        AgentKind::Dqn => dqn_loss(&batch, &nets, config.gamma)?,
                        AgentKind::Ddqn { .. } => {
                            ddqn_loss(&batch, &nets, config.gamma, config.greedy_source)?
                        }
                    };
                    if !loss.is_finite() || !grads.all_finite() {
                        return Err(Error::Diverged(format!(
                            "non-finite loss {loss} at episode {episode}, gradient step {gradient_steps}"
                        )));
                    }
                    adam_step(nets.online.params_mut(), &grads, &mut adam)?;
                    soft_update(nets.online.params(), nets.target.params_mut(), config.tau);
                    gradient_steps += 1;
                }
            }

            if step.done {
                break;
            }
            features = step.features;
        }

        if (episode + 1) % config.validation_every == 0 {
            if let Some(v) = validate(episode + 1, &nets)? {
                log::info!("episode {}: validation {v:.2}", episode + 1);
                curve.points.push((episode + 1, v));
            }
        }
    }
    Ok(TrainedAgent { nets, curve, env_steps, gradient_steps })
}

/// Trains on the training split of a price dataset, validating the greedy
/// policy on the validation split.
pub fn train(
    kind: AgentKind,
    split: &DatasetSplit,
    params: &BatteryParams,
    config: &TrainConfig,
) -> Result<(TrainedAgent, NormStats)> {
    if split.train.is_empty() {
        return Err(Error::InsufficientData("training split is empty".into()));
    }
    let norm = NormStats::from_series(&split.train)?;
    let mut env = BatteryTrainingEnv::new(&split.train, params, norm, config.initial_soc)?;
    let validation = &split.validation;
    let trained = train_agent(kind, &mut env, config, |_, nets| {
        if validation.is_empty() {
            return Ok(None);
        }
        let agent = GreedyAgent { net: nets.online.clone(), kind: nets.kind, norm };
        let report = backtest(&agent, validation, params, config.initial_soc)?;
        Ok(Some(report.profit_per_day_per_mwh))
    })?;
    Ok((trained, norm))
}
