use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{CalendarContext, GridSpec};
use super::verify::{verify_collecting, ViolationReport};
use super::{correct_batch_with, distill_loss_and_grad, greedy, qp, teacher_policy, to3, ConstraintConfig};
use crate::agents::{encode_batch, GreedyAgent};
use crate::battery_env::{BatteryAction, BatteryParams, DayEpisode, EnvState, NormStats, FEATURE_DIM};
use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::market_data::PriceSeries;
use crate::nn::{adam_step, softmax, softmax_backward, AdamState, FeedForwardNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_layers: Vec<usize>,
    /// Teacher-trajectory states per minibatch. Each minibatch also carries
    /// as many cells of one context's lattice and the current violation
    /// feedback.
    pub trajectory_batch: usize,
    /// Lattice sampled into minibatches and used as support at inference.
    pub lattice: GridSpec,
    /// Grid checked after every epoch; violating states feed later batches.
    pub probe: GridSpec,
    /// Cap on feedback states carried per minibatch.
    pub feedback_limit: usize,
    /// Actions the monotonicity hints are repaired from during training.
    pub hint_source: HintSource,
    pub initial_soc: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            epochs: 600,
            learning_rate: 1e-3,
            hidden_layers: vec![64, 32],
            trajectory_batch: 64,
            lattice: GridSpec::default(),
            probe: GridSpec::default(),
            feedback_limit: 256,
            hint_source: HintSource::Teacher,
            initial_soc: 0.5,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.trajectory_batch == 0 {
            return Err(Error::invalid("learning rate and trajectory batch must be positive"));
        }
        self.lattice.validate()?;
        self.probe.validate()
    }
}

/// Whose greedy actions seed the correction layer's hints while training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintSource {
    /// The teacher's: the layer targets the monotone policy nearest the teacher.
    #[default]
    Teacher,
    /// The student's own pre-layer output, as at inference.
    Student,
}

/// Layer-free student: greedy action of the raw network output.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentPolicy {
    pub net: FeedForwardNet,
    pub norm: NormStats,
    pub constraints: ConstraintConfig,
    /// Lattice whose states accompany queried states through the layer.
    pub support: GridSpec,
}

impl StudentPolicy {
    pub fn probabilities(&self, states: &[EnvState]) -> Result<Vec<[f64; 3]>> {
        let x = encode_batch(states, &self.norm)?;
        let logits = self.net.forward_batch(x.view())?;
        Ok(logits.rows().into_iter().map(|r| to3(&softmax(&r.to_vec(), 1.0))).collect())
    }

    pub fn with_layer(&self) -> WithLayerStudent {
        WithLayerStudent { student: self.clone() }
    }
}

impl Controller for StudentPolicy {
    fn name(&self) -> String {
        "student".into()
    }

    fn act(&self, state: &EnvState) -> Result<BatteryAction> {
        Ok(self.act_batch(std::slice::from_ref(state))?[0])
    }

    fn act_batch(&self, states: &[EnvState]) -> Result<Vec<BatteryAction>> {
        Ok(self.probabilities(states)?.iter().map(greedy).collect())
    }
}

/// Student followed by the correction layer. Each queried state is corrected
/// together with the support lattice of its calendar context, so the
/// monotonicity cuts see a full neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct WithLayerStudent {
    pub student: StudentPolicy,
}

impl Controller for WithLayerStudent {
    fn name(&self) -> String {
        "student+layer".into()
    }

    fn act(&self, state: &EnvState) -> Result<BatteryAction> {
        Ok(self.act_batch(std::slice::from_ref(state))?[0])
    }

    fn act_batch(&self, states: &[EnvState]) -> Result<Vec<BatteryAction>> {
        let mut out = vec![BatteryAction::Idle; states.len()];
        let mut groups: std::collections::BTreeMap<CalendarContext, Vec<usize>> = Default::default();
        for (k, s) in states.iter().enumerate() {
            groups.entry(CalendarContext::of(s)).or_default().push(k);
        }
        let cfg = &self.student.constraints;
        for (ctx, members) in groups {
            let mut batch: Vec<EnvState> = members.iter().map(|&k| states[k]).collect();
            batch.extend(self.student.support.states(&ctx));
            let pre = self.student.probabilities(&batch)?;
            let hints = super::repair_hints(&batch, &pre.iter().map(greedy).collect::<Vec<_>>(), cfg);
            let mut set = super::build_constraints(&batch, cfg, &hints)?;
            set.constraints.retain(|c| c.state < members.len());
            let per_state = set.by_state(batch.len());
            for (m, &k) in members.iter().enumerate() {
                let mut cons = per_state[m].clone();
                let mut p = qp::project_state(pre[m], &cons, set.margin)?.point;
                if greedy(&p) != hints[m] {
                    let mut extra = super::ConstraintSet::new(set.margin);
                    extra.constraints = cons;
                    extra.force(m, hints[m], super::Property::P3);
                    cons = extra.constraints;
                    p = qp::project_state(pre[m], &cons, set.margin)?.point;
                }
                out[k] = greedy(&p);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct StudentTraining {
    pub student: StudentPolicy,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Layer-free violations on the probe grid after the last epoch.
    pub probe_report: ViolationReport,
}

/// Pre-action states visited by a controller's greedy rollout of every day.
pub fn rollout_states(
    controller: &impl Controller,
    series: &PriceSeries,
    params: &BatteryParams,
    initial_soc: f64,
) -> Result<Vec<EnvState>> {
    let mut episodes: Vec<DayEpisode> =
        series.days().map(|d| DayEpisode::reset(series, d, initial_soc, params)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(episodes.len() * params.steps_per_day());
    while episodes.iter().any(|e| !e.is_done()) {
        let states: Vec<EnvState> = episodes.iter().map(|e| *e.state()).collect();
        let actions = controller.act_batch(&states)?;
        out.extend_from_slice(&states);
        for (e, a) in episodes.iter_mut().zip(actions) {
            e.step(a)?;
        }
    }
    Ok(out)
}

/// Distils `teacher` into a small student through the correction layer.
pub fn train_student(
    teacher: &GreedyAgent,
    train_days: &PriceSeries,
    params: &BatteryParams,
    constraints: &ConstraintConfig,
    config: &DistillConfig,
) -> Result<StudentTraining> {
    constraints.validate()?;
    config.validate()?;
    if teacher.net.input_dim() != FEATURE_DIM {
        return Err(Error::Dimension { expected: FEATURE_DIM, found: teacher.net.input_dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![FEATURE_DIM];
    dims.extend_from_slice(&config.hidden_layers);
    dims.push(BatteryAction::COUNT);
    let net = FeedForwardNet::new(&dims, &mut rng)?;
    let mut student = StudentPolicy {
        net,
        norm: teacher.norm,
        constraints: constraints.clone(),
        support: config.lattice.clone(),
    };
    if config.epochs == 0 {
        let probe_report = probe(&student, config, constraints)?.0;
        return Ok(StudentTraining { student, epoch_losses: vec![], probe_report });
    }

    let trajectory = if train_days.is_empty() {
        Vec::new()
    } else {
        rollout_states(teacher, train_days, params, config.initial_soc)?
    };
    let mut adam = AdamState::new(&student.net, config.learning_rate);
    let mut feedback: Vec<EnvState> = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..trajectory.len()).collect();
    let mut batch_counter = 0usize;
    let mut probe_report = ViolationReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let chunks: Vec<&[usize]> = if order.is_empty() {
            vec![&[]]
        } else {
            order.chunks(config.trajectory_batch).collect()
        };
        let mut loss_sum = 0.0;
        for chunk in &chunks {
            let mut batch: Vec<EnvState> = chunk.iter().map(|&k| trajectory[k]).collect();
            let ctx = if batch_counter % 2 == 0 || trajectory.is_empty() {
                config.lattice.contexts[(batch_counter / 2) % config.lattice.contexts.len()]
            } else {
                CalendarContext::of(&trajectory[rng.random_range(0..trajectory.len())])
            };
            batch_counter += 1;
            let lattice = config.lattice.states(&ctx);
            let take = config.trajectory_batch.min(lattice.len());
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, lattice.len(), take).into_vec();
            picked.sort_unstable();
            batch.extend(picked.into_iter().map(|k| lattice[k]));
            if feedback.len() > config.feedback_limit {
                batch.extend(feedback.choose_multiple(&mut rng, config.feedback_limit).copied());
            } else {
                batch.extend_from_slice(&feedback);
            }
            loss_sum += minibatch_step(&mut student, teacher, &batch, constraints, &mut adam, config.hint_source, epoch)?;
        }
        epoch_losses.push(loss_sum / chunks.len() as f64);
        let (report, bad) = probe(&student, config, constraints)?;
        log::debug!(
            "distill epoch {}: loss {:.6}, probe violations {}",
            epoch + 1,
            epoch_losses[epoch],
            report.violating_states
        );
        feedback = bad;
        probe_report = report;
    }
    Ok(StudentTraining { student, epoch_losses, probe_report })
}

fn probe(
    student: &StudentPolicy,
    config: &DistillConfig,
    constraints: &ConstraintConfig,
) -> Result<(ViolationReport, Vec<EnvState>)> {
    verify_collecting(&mut |s: &[EnvState]| student.act_batch(s), &config.probe, constraints)
}

/// Loss and parameter gradient of the distillation objective on one batch
/// with a fixed constraint set.
pub fn distill_objective(
    net: &FeedForwardNet,
    norm: &NormStats,
    states: &[EnvState],
    teacher_probs: &[[f64; 3]],
    set: &super::ConstraintSet,
    config: &ConstraintConfig,
) -> Result<(f64, crate::nn::ParamSet)> {
    let x = encode_batch(states, norm)?;
    let cache = net.forward_cached(x.view())?;
    let pre: Vec<[f64; 3]> = cache.output().rows().into_iter().map(|r| to3(&softmax(&r.to_vec(), 1.0))).collect();
    let projection = super::project_policy(&pre, set)?;
    let (loss, d_pre) = distill_loss_and_grad(&pre, &projection, teacher_probs, config)?;
    let grads = net.backward(&cache, logits_upstream(&pre, &d_pre).view())?;
    Ok((loss, grads))
}

fn logits_upstream(pre: &[[f64; 3]], d_pre: &[[f64; 3]]) -> Array2<f64> {
    let mut up = Array2::zeros((pre.len(), 3));
    for (b, (p, d)) in pre.iter().zip(d_pre).enumerate() {
        let g = softmax_backward(p, d, 1.0);
        for i in 0..3 {
            up[[b, i]] = g[i];
        }
    }
    up
}

fn minibatch_step(
    student: &mut StudentPolicy,
    teacher: &GreedyAgent,
    batch: &[EnvState],
    constraints: &ConstraintConfig,
    adam: &mut AdamState,
    hint_source: HintSource,
    epoch: usize,
) -> Result<f64> {
    let mu = teacher_policy(teacher, batch, constraints.kd_temperature)?;
    let x = encode_batch(batch, &student.norm)?;
    let cache = student.net.forward_cached(x.view())?;
    let pre: Vec<[f64; 3]> = cache.output().rows().into_iter().map(|r| to3(&softmax(&r.to_vec(), 1.0))).collect();
    let reference: Vec<BatteryAction> = match hint_source {
        HintSource::Teacher => mu.iter().map(greedy).collect(),
        HintSource::Student => pre.iter().map(greedy).collect(),
    };
    let corrected = correct_batch_with(&pre, batch, &reference, constraints)?;
    let (loss, d_pre) = distill_loss_and_grad(&pre, &corrected.projection, &mu, constraints)?;
    let grads = student.net.backward(&cache, logits_upstream(&pre, &d_pre).view())?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Diverged(format!("non-finite distillation loss {loss} in epoch {}", epoch + 1)));
    }
    adam_step(student.net.params_mut(), &grads, adam)?;
    Ok(loss)
}
