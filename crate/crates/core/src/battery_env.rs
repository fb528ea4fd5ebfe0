//! Battery arbitrage environment: one episode is one calendar day.
//!
//! The agent acts every `step_minutes` minutes starting at midnight, observing
//! the indicative price of the step's first minute. Energy exchanged during a
//! step is billed minute by minute at the settled price of the quarter hour
//! each minute belongs to.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{PriceRecord, PriceSeries, MINUTES_PER_DAY, MINUTES_PER_QH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    /// Usable energy capacity, MWh.
    pub capacity_mwh: f64,
    /// Maximum (dis)charging power, MW.
    pub p_max_mw: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub step_minutes: u32,
    /// Bill the commanded power even when the state of charge is clipped.
    pub bill_commanded_power: bool,
    /// Multiply rewards by the step duration in hours (EUR rewards). When
    /// false the reward is power times price.
    pub reward_in_energy: bool,
}

impl Default for BatteryParams {
    fn default() -> Self {
        let eta = 0.9f64.sqrt();
        BatteryParams {
            capacity_mwh: 8.0,
            p_max_mw: 4.0,
            eta_charge: eta,
            eta_discharge: eta,
            soc_min: 0.10,
            soc_max: 1.0,
            step_minutes: 2,
            bill_commanded_power: false,
            reward_in_energy: true,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.eta_charge) || !in_unit(self.eta_discharge) {
            return Err(Error::invalid("efficiencies must lie in (0, 1]"));
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max) || self.soc_max != 1.0 {
            return Err(Error::invalid("require 0 <= soc_min < soc_max = 1"));
        }
        if !(self.p_max_mw > 0.0 && self.capacity_mwh > 0.0) {
            return Err(Error::invalid("power and capacity must be positive"));
        }
        let step = self.step_minutes as usize;
        if step == 0 || step > 60 || 60 % step != 0 {
            return Err(Error::invalid(format!(
                "step_minutes {} must divide 60",
                self.step_minutes
            )));
        }
        Ok(())
    }

    pub fn step_hours(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    pub fn steps_per_day(&self) -> usize {
        MINUTES_PER_DAY / self.step_minutes as usize
    }

    pub fn valid_soc(&self, soc: f64) -> bool {
        soc >= self.soc_min && soc <= self.soc_max
    }
}

/// Three-level action. The index order matches the numeric order of power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatteryAction {
    Discharge = 0,
    Idle = 1,
    Charge = 2,
}

impl BatteryAction {
    pub const ALL: [BatteryAction; 3] =
        [BatteryAction::Discharge, BatteryAction::Idle, BatteryAction::Charge];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Commanded power in MW; positive charges the battery.
    pub fn power(self, params: &BatteryParams) -> f64 {
        match self {
            BatteryAction::Discharge => -params.p_max_mw,
            BatteryAction::Idle => 0.0,
            BatteryAction::Charge => params.p_max_mw,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BatteryAction::Discharge => "discharge",
            BatteryAction::Idle => "idle",
            BatteryAction::Charge => "charge",
        }
    }
}

/// Observation tuple seen by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub minute_of_qh: u8,
    pub qh_of_day: u8,
    pub month: u8,
    pub soc: f64,
    pub indicative_price: f64,
}

impl EnvState {
    pub fn calendar(&self) -> (u8, u8, u8) {
        (self.minute_of_qh, self.qh_of_day, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: BatteryAction,
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
}

/// SoC after one step, clipped to `[soc_min, soc_max]`.
pub fn soc_transition(soc: f64, action: BatteryAction, params: &BatteryParams) -> f64 {
    let power = action.power(params);
    let stored = power.max(0.0) * params.eta_charge + power.min(0.0) / params.eta_discharge;
    let next = soc + stored * params.step_hours() / params.capacity_mwh;
    next.clamp(params.soc_min, params.soc_max)
}

/// Grid-side power actually exchanged when the commanded action would push
/// the SoC past its limits.
pub fn delivered_power(soc: f64, action: BatteryAction, params: &BatteryParams) -> f64 {
    let dt = params.step_hours();
    match action {
        BatteryAction::Idle => 0.0,
        BatteryAction::Charge => {
            let room = (params.soc_max - soc).max(0.0) * params.capacity_mwh;
            params.p_max_mw.min(room / (params.eta_charge * dt))
        }
        BatteryAction::Discharge => {
            let avail = (soc - params.soc_min).max(0.0) * params.capacity_mwh;
            -params.p_max_mw.min(avail * params.eta_discharge / dt)
        }
    }
}

/// Reward of holding `power_mw` for a whole step at one settled price.
pub fn power_reward(power_mw: f64, settled_price: f64, params: &BatteryParams) -> f64 {
    let scale = if params.reward_in_energy { params.step_hours() } else { 1.0 };
    -power_mw * settled_price * scale
}

/// Negative energy cost of a commanded action over one step.
pub fn step_reward(action: BatteryAction, settled_price: f64, params: &BatteryParams) -> f64 {
    power_reward(action.power(params), settled_price, params)
}

/// Price normalisation frozen from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub price_mean: f64,
    pub price_std: f64,
}

impl NormStats {
    /// Mean and population standard deviation of the indicative prices.
    pub fn from_series(series: &PriceSeries) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InsufficientData("empty series".into()));
        }
        let n = series.len() as f64;
        let mean = series.indicative_prices().sum::<f64>() / n;
        let var = series.indicative_prices().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        Ok(NormStats { price_mean: mean, price_std: var.sqrt() })
    }
}

pub const FEATURE_DIM: usize = 5;

pub fn encode_state(state: &EnvState, norm: &NormStats) -> Result<[f64; FEATURE_DIM]> {
    if !(norm.price_std > 0.0) {
        return Err(Error::invalid("price standard deviation must be positive"));
    }
    Ok([
        state.minute_of_qh as f64 / 14.0,
        state.qh_of_day as f64 / 95.0,
        (state.month as f64 - 1.0) / 11.0,
        state.soc,
        (state.indicative_price - norm.price_mean) / norm.price_std,
    ])
}

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// Power actually exchanged with the grid, MW.
    pub power_mw: f64,
}

/// A single-day episode over a borrowed price series.
#[derive(Debug, Clone)]
pub struct DayEpisode<'a> {
    day: &'a [PriceRecord],
    params: BatteryParams,
    step: usize,
    state: EnvState,
    done: bool,
}

impl<'a> DayEpisode<'a> {
    pub fn reset(
        series: &'a PriceSeries,
        day: NaiveDate,
        initial_soc: f64,
        params: &BatteryParams,
    ) -> Result<Self> {
        params.validate()?;
        if !params.valid_soc(initial_soc) {
            return Err(Error::invalid(format!(
                "initial soc {initial_soc} outside [{}, {}]",
                params.soc_min, params.soc_max
            )));
        }
        let records = series.day(day)?;
        let state = observe(records, 0, initial_soc);
        Ok(DayEpisode { day: records, params: params.clone(), step: 0, state, done: false })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &BatteryParams {
        &self.params
    }

    pub fn date(&self) -> NaiveDate {
        self.day[0].date()
    }

    pub fn step(&mut self, action: BatteryAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let p = &self.params;
        let soc = self.state.soc;
        let power = if p.bill_commanded_power {
            action.power(p)
        } else {
            delivered_power(soc, action, p)
        };
        let start = self.step * p.step_minutes as usize;
        let minutes = &self.day[start..start + p.step_minutes as usize];
        let mean_settled =
            minutes.iter().map(|r| r.settled_price).sum::<f64>() / minutes.len() as f64;
        let reward = power_reward(power, mean_settled, p);
        let next_soc = soc_transition(soc, action, p);

        self.step += 1;
        self.done = self.step == p.steps_per_day();
        // The terminal observation wraps to midnight; it is never bootstrapped from.
        let minute = (self.step * p.step_minutes as usize) % MINUTES_PER_DAY;
        self.state = observe(self.day, minute, next_soc);
        Ok(StepOutcome { next_state: self.state, reward, done: self.done, power_mw: power })
    }
}

fn observe(day: &[PriceRecord], minute: usize, soc: f64) -> EnvState {
    let rec = &day[minute];
    EnvState {
        minute_of_qh: (minute % MINUTES_PER_QH) as u8,
        qh_of_day: (minute / MINUTES_PER_QH) as u8,
        month: rec.date().month() as u8,
        soc,
        indicative_price: rec.indicative_price,
    }
}
