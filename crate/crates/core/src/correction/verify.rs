use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::grid::{CalendarContext, GridSpec};
use super::ConstraintConfig;
use crate::battery_env::{BatteryAction, EnvState};
use crate::controller::Controller;
use crate::error::{Error, Result};

pub const MAX_EXAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationExample {
    pub context: CalendarContext,
    pub price: f64,
    pub soc: f64,
    pub action: BatteryAction,
    /// For monotonicity breaches: the neighbouring cell with a higher action.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub neighbour: Option<(f64, f64, BatteryAction)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyViolations {
    pub count: usize,
    pub examples: Vec<ViolationExample>,
}

impl PropertyViolations {
    fn record(&mut self, example: ViolationExample) {
        self.count += 1;
        if self.examples.len() < MAX_EXAMPLES {
            self.examples.push(example);
        }
    }

    fn merge(&mut self, other: PropertyViolations) {
        self.count += other.count;
        for e in other.examples {
            if self.examples.len() < MAX_EXAMPLES {
                self.examples.push(e);
            }
        }
    }
}

/// Per-property violation counts over a probe grid. The monotonicity count
/// is the number of cells with a higher-priced or higher-SoC neighbour whose
/// action ranks above their own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub total_states: usize,
    pub p1: PropertyViolations,
    pub p2: PropertyViolations,
    pub p3: PropertyViolations,
    /// Distinct cells involved in at least one violation.
    pub violating_states: usize,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.p1.count == 0 && self.p2.count == 0 && self.p3.count == 0
    }

    pub fn violation_rate(&self) -> f64 {
        if self.total_states == 0 {
            0.0
        } else {
            self.violating_states as f64 / self.total_states as f64
        }
    }

    pub fn merge(&mut self, other: ViolationReport) {
        self.total_states += other.total_states;
        self.violating_states += other.violating_states;
        self.p1.merge(other.p1);
        self.p2.merge(other.p2);
        self.p3.merge(other.p3);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Checks one context's lattice of actions; returns the report and the
/// indices of violating cells.
pub fn check_lattice(
    grid: &GridSpec,
    context: &CalendarContext,
    actions: &[BatteryAction],
    config: &ConstraintConfig,
) -> Result<(ViolationReport, Vec<usize>)> {
    if actions.len() != grid.cells_per_context() {
        return Err(Error::Dimension { expected: grid.cells_per_context(), found: actions.len() });
    }
    let prices = grid.price.values();
    let socs = grid.soc.values();
    let mut report = ViolationReport { total_states: actions.len(), ..Default::default() };
    let mut bad = BTreeSet::new();
    let example = |i: usize, j: usize, a: BatteryAction| ViolationExample {
        context: *context,
        price: prices[i],
        soc: socs[j],
        action: a,
        neighbour: None,
    };
    for i in 0..prices.len() {
        for j in 0..socs.len() {
            let k = grid.cell(i, j);
            let a = actions[k];
            if prices[i] <= config.price_lower && a != BatteryAction::Charge {
                report.p1.record(example(i, j, a));
                bad.insert(k);
            }
            if prices[i] >= config.price_upper && a != BatteryAction::Discharge {
                report.p2.record(example(i, j, a));
                bad.insert(k);
            }
            let mut breach = None;
            for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                if ni < prices.len() && nj < socs.len() {
                    let nk = grid.cell(ni, nj);
                    if actions[nk].index() > a.index() {
                        bad.insert(nk);
                        breach.get_or_insert((ni, nj, actions[nk]));
                    }
                }
            }
            if let Some((ni, nj, na)) = breach {
                bad.insert(k);
                let mut e = example(i, j, a);
                e.neighbour = Some((prices[ni], socs[nj], na));
                report.p3.record(e);
            }
        }
    }
    report.violating_states = bad.len();
    Ok((report, bad.into_iter().collect()))
}

/// Evaluates `policy` on every context lattice of `grid` and counts property
/// violations. The policy receives one context's full lattice per call.
pub fn verify_properties(
    mut policy: impl FnMut(&[EnvState]) -> Result<Vec<BatteryAction>>,
    grid: &GridSpec,
    config: &ConstraintConfig,
) -> Result<ViolationReport> {
    Ok(verify_collecting(&mut policy, grid, config)?.0)
}

/// Like [`verify_properties`], also returning the violating states.
pub fn verify_collecting(
    policy: &mut impl FnMut(&[EnvState]) -> Result<Vec<BatteryAction>>,
    grid: &GridSpec,
    config: &ConstraintConfig,
) -> Result<(ViolationReport, Vec<EnvState>)> {
    grid.validate()?;
    config.validate()?;
    let mut report = ViolationReport::default();
    let mut states_out = Vec::new();
    for ctx in &grid.contexts {
        let states = grid.states(ctx);
        let actions = policy(&states)?;
        let (r, bad) = check_lattice(grid, ctx, &actions, config)?;
        report.merge(r);
        states_out.extend(bad.into_iter().map(|k| states[k]));
    }
    Ok((report, states_out))
}

pub fn verify_controller(
    controller: &impl Controller,
    grid: &GridSpec,
    config: &ConstraintConfig,
) -> Result<ViolationReport> {
    verify_properties(|s| controller.act_batch(s), grid, config)
}
