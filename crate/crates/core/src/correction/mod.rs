//! Policy correction: a small student network distilled from a trained agent
//! through a projection layer that enforces three properties:
//!
//! 1. charge whenever the price is at or below `price_lower`,
//! 2. discharge whenever the price is at or above `price_upper`,
//! 3. the greedy action (charge > idle > discharge) never increases with
//!    price or state of charge.
//!
//! The projection is a least-squares problem over the probability simplex
//! with linear constraints derived from a monotone repair of the student's own
//! greedy actions. Training pushes the layer-free student towards its
//! corrected output, so the layer can be dropped at inference.

pub mod constraints;
pub mod grid;
pub mod qp;
pub mod repair;
pub mod student;
pub mod verify;

use serde::{Deserialize, Serialize};

use crate::agents::GreedyAgent;
use crate::battery_env::{BatteryAction, EnvState};
use crate::controller::argmax;
use crate::error::{Error, Result};
use crate::nn::{kl_divergence, kl_gradients, softmax};

pub use constraints::{build_constraints, Constraint, ConstraintSet, Property};
pub use grid::{Axis, CalendarContext, GridSpec};
pub use qp::{project_policy, project_policy_backward, Projection};
pub use repair::{is_monotone, repair_hints};
pub use student::{train_student, DistillConfig, HintSource, StudentPolicy, StudentTraining, WithLayerStudent};
pub use verify::{verify_controller, verify_properties, ViolationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    /// Prices at or below this must be answered with charge, EUR/MWh.
    pub price_lower: f64,
    /// Prices at or above this must be answered with discharge, EUR/MWh.
    pub price_upper: f64,
    /// Probability margin that makes a forced action the strict argmax.
    pub margin: f64,
    /// Weight of the teacher term in the distillation loss.
    pub omega: f64,
    /// Softmax temperature applied to teacher action values.
    pub kd_temperature: f64,
    /// Use `KL(teacher || corrected)` and `KL(corrected || raw)` instead.
    pub swap_kl: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            price_lower: -500.0,
            price_upper: 1500.0,
            margin: 1e-3,
            omega: 1e-4,
            kd_temperature: 1.0,
            swap_kl: false,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.price_lower < self.price_upper) {
            return Err(Error::invalid("price_lower must be below price_upper"));
        }
        if !(self.margin > 0.0 && self.margin < 1.0 / 3.0) {
            return Err(Error::invalid(format!("margin {} must lie in (0, 1/3)", self.margin)));
        }
        if !(self.omega > 0.0) || !(self.kd_temperature > 0.0) {
            return Err(Error::invalid("omega and kd_temperature must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn to3(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Softmax over action values divided by `temperature`.
pub fn policy_from_values(values: &[f64], temperature: f64) -> [f64; 3] {
    to3(&softmax(values, temperature))
}

/// Teacher action distribution for each state.
pub fn teacher_policy(teacher: &GreedyAgent, states: &[EnvState], temperature: f64) -> Result<Vec<[f64; 3]>> {
    let q = teacher.action_values(states)?;
    Ok(q.rows().into_iter().map(|r| policy_from_values(&r.to_vec(), temperature)).collect())
}

/// Greedy action of a probability vector.
pub fn greedy(p: &[f64; 3]) -> BatteryAction {
    BatteryAction::from_index(argmax(p)).unwrap()
}

fn check_congruent(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, found: b });
    }
    Ok(())
}

/// Mean over the batch of `omega * KL(post || teacher) + KL(pre || post)`
/// (arguments swapped inside each KL when `swap_kl` is set).
pub fn distill_loss(
    pre: &[[f64; 3]],
    post: &[[f64; 3]],
    teacher: &[[f64; 3]],
    config: &ConstraintConfig,
) -> Result<f64> {
    check_congruent(pre.len(), post.len())?;
    check_congruent(pre.len(), teacher.len())?;
    if pre.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pre
        .iter()
        .zip(post)
        .zip(teacher)
        .map(|((a, b), m)| {
            if config.swap_kl {
                config.omega * kl_divergence(m, b) + kl_divergence(b, a)
            } else {
                config.omega * kl_divergence(b, m) + kl_divergence(a, b)
            }
        })
        .sum();
    Ok(total / pre.len() as f64)
}

/// Loss and its gradient with respect to the pre-projection probabilities,
/// including the path through the projection.
pub fn distill_loss_and_grad(
    pre: &[[f64; 3]],
    projection: &Projection,
    teacher: &[[f64; 3]],
    config: &ConstraintConfig,
) -> Result<(f64, Vec<[f64; 3]>)> {
    let post = &projection.probs;
    let loss = distill_loss(pre, post, teacher, config)?;
    let n = pre.len() as f64;
    let mut d_post = Vec::with_capacity(pre.len());
    let mut d_pre = Vec::with_capacity(pre.len());
    for ((a, b), m) in pre.iter().zip(post).zip(teacher) {
        let (dpost, dpre) = if config.swap_kl {
            let (_, dq) = kl_gradients(m, b);
            let (dp, dq2) = kl_gradients(b, a);
            ((0..3).map(|i| config.omega * dq[i] + dp[i]).collect::<Vec<_>>(), dq2)
        } else {
            let (dp, _) = kl_gradients(b, m);
            let (dp2, dq2) = kl_gradients(a, b);
            ((0..3).map(|i| config.omega * dp[i] + dq2[i]).collect::<Vec<_>>(), dp2)
        };
        d_post.push([dpost[0] / n, dpost[1] / n, dpost[2] / n]);
        d_pre.push([dpre[0] / n, dpre[1] / n, dpre[2] / n]);
    }
    let through = project_policy_backward(projection, &d_post);
    for (d, t) in d_pre.iter_mut().zip(through) {
        for i in 0..3 {
            d[i] += t[i];
        }
    }
    Ok((loss, d_pre))
}

/// Output of the correction layer on a batch.
#[derive(Debug, Clone)]
pub struct CorrectedBatch {
    pub hints: Vec<BatteryAction>,
    pub constraints: ConstraintSet,
    pub projection: Projection,
}

/// Runs the correction layer: monotone hints from the greedy actions of
/// `pre`, constraints from the hints, projection, and extra forcing cuts for
/// any state whose projected argmax still differs from its hint.
pub fn correct_batch(pre: &[[f64; 3]], states: &[EnvState], config: &ConstraintConfig) -> Result<CorrectedBatch> {
    let greedy_pre: Vec<_> = pre.iter().map(greedy).collect();
    correct_batch_with(pre, states, &greedy_pre, config)
}

/// As [`correct_batch`], with the hints repaired from `reference` actions
/// instead of the greedy actions of `pre`.
pub fn correct_batch_with(
    pre: &[[f64; 3]],
    states: &[EnvState],
    reference: &[BatteryAction],
    config: &ConstraintConfig,
) -> Result<CorrectedBatch> {
    check_congruent(states.len(), pre.len())?;
    check_congruent(states.len(), reference.len())?;
    let hints = repair_hints(states, reference, config);
    let mut constraints = build_constraints(states, config, &hints)?;
    let mut projection = project_policy(pre, &constraints)?;
    for _ in 0..2 {
        let off: Vec<usize> = (0..states.len()).filter(|&k| greedy(&projection.probs[k]) != hints[k]).collect();
        if off.is_empty() {
            break;
        }
        for &k in &off {
            constraints.force(k, hints[k], Property::P3);
        }
        let per_state = constraints.by_state(states.len());
        for &k in &off {
            let sp = qp::project_state(pre[k], &per_state[k], constraints.margin)?;
            projection.probs[k] = sp.point;
            projection.active[k] = sp.active;
        }
    }
    Ok(CorrectedBatch { hints, constraints, projection })
}
