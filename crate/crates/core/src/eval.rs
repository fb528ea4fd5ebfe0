//! Backtests, controller comparisons and the tables behind the figures.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::battery_env::{BatteryAction, BatteryParams, DayEpisode};
use crate::controller::Controller;
use crate::correction::{CalendarContext, GridSpec};
use crate::error::{Error, Result};
use crate::market_data::PriceSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfit {
    pub date: NaiveDate,
    pub profit: f64,
    pub final_soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub controller: String,
    /// EUR.
    pub total_profit: f64,
    pub day_count: usize,
    /// EUR per day per MWh of capacity.
    pub profit_per_day_per_mwh: f64,
    pub per_day: Vec<DayProfit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SocCarry {
    /// Every day starts at the initial SoC.
    #[default]
    Reset,
    /// Each day starts where the previous one ended.
    Carry,
}

/// Greedy rollout of every day with the SoC reset between days.
pub fn backtest(
    controller: &impl Controller,
    series: &PriceSeries,
    params: &BatteryParams,
    initial_soc: f64,
) -> Result<ProfitReport> {
    backtest_with(controller, series, params, initial_soc, SocCarry::Reset)
}

pub fn backtest_with(
    controller: &impl Controller,
    series: &PriceSeries,
    params: &BatteryParams,
    initial_soc: f64,
    carry: SocCarry,
) -> Result<ProfitReport> {
    if series.is_empty() {
        return Err(Error::InsufficientData("backtest series is empty".into()));
    }
    let days: Vec<NaiveDate> = series.days().collect();
    let mut per_day = Vec::with_capacity(days.len());
    match carry {
        SocCarry::Reset => {
            // all days advance in lockstep so the controller sees one batch per step
            let mut eps: Vec<DayEpisode> =
                days.iter().map(|&d| DayEpisode::reset(series, d, initial_soc, params)).collect::<Result<_>>()?;
            let mut profit = vec![0.0; eps.len()];
            while !eps[0].is_done() {
                let states: Vec<_> = eps.iter().map(|e| *e.state()).collect();
                let actions = controller.act_batch(&states)?;
                for ((e, a), p) in eps.iter_mut().zip(actions).zip(profit.iter_mut()) {
                    *p += e.step(a)?.reward;
                }
            }
            for ((d, e), p) in days.iter().zip(&eps).zip(profit) {
                per_day.push(DayProfit { date: *d, profit: p, final_soc: e.state().soc });
            }
        }
        SocCarry::Carry => {
            let mut soc = initial_soc;
            for &d in &days {
                let mut e = DayEpisode::reset(series, d, soc, params)?;
                let mut p = 0.0;
                while !e.is_done() {
                    let a = controller.act(e.state())?;
                    p += e.step(a)?.reward;
                }
                soc = e.state().soc;
                per_day.push(DayProfit { date: d, profit: p, final_soc: soc });
            }
        }
    }
    let total: f64 = per_day.iter().map(|d| d.profit).sum();
    Ok(ProfitReport {
        controller: controller.name(),
        total_profit: total,
        day_count: per_day.len(),
        profit_per_day_per_mwh: total / per_day.len() as f64 / params.capacity_mwh,
        per_day,
    })
}

/// Relative difference `(a - b) / b * 100`.
pub fn percent_difference(a: f64, b: f64) -> f64 {
    (a - b) / b * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// `(controller name, EUR/day/MWh)` in input order.
    pub rows: Vec<(String, f64)>,
}

impl ComparisonTable {
    pub fn from_profits(rows: Vec<(String, f64)>) -> Self {
        ComparisonTable { rows }
    }

    /// Improvement of row `a` over row `b` in percent.
    pub fn percent(&self, a: usize, b: usize) -> f64 {
        percent_difference(self.rows[a].1, self.rows[b].1)
    }

    /// Wide CSV: one row per controller, one `pct_vs_<name>` column per
    /// baseline.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["controller".to_string(), "profit_eur_per_day_per_mwh".to_string()];
        header.extend(self.rows.iter().map(|(n, _)| format!("pct_vs_{n}")));
        out.write_record(&header)?;
        for (i, (name, profit)) in self.rows.iter().enumerate() {
            let mut rec = vec![name.clone(), format!("{profit}")];
            for j in 0..self.rows.len() {
                rec.push(if i == j { String::new() } else { format!("{:.4}", self.percent(i, j)) });
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<comparison csv>", e))?;
        Ok(())
    }
}

pub fn compare_controllers(
    controllers: &[&dyn Controller],
    series: &PriceSeries,
    params: &BatteryParams,
    initial_soc: f64,
) -> Result<(ComparisonTable, Vec<ProfitReport>)> {
    if controllers.len() < 2 {
        return Err(Error::invalid("comparison needs at least two controllers"));
    }
    let reports = controllers
        .iter()
        .map(|c| backtest(c, series, params, initial_soc))
        .collect::<Result<Vec<_>>>()?;
    let table = ComparisonTable::from_profits(
        reports.iter().map(|r| (r.controller.clone(), r.profit_per_day_per_mwh)).collect(),
    );
    Ok((table, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub price: f64,
    pub soc: f64,
    pub action: BatteryAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapTable {
    pub context: CalendarContext,
    pub rows: Vec<HeatmapRow>,
}

impl HeatmapTable {
    pub fn file_name(&self) -> String {
        format!("heatmap_{}.csv", self.context.label())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["price_eur_mwh", "soc", "action_index", "action"])?;
        for r in &self.rows {
            out.write_record([
                format!("{}", r.price),
                format!("{}", r.soc),
                r.action.index().to_string(),
                r.action.name().to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<heatmap csv>", e))?;
        Ok(())
    }
}

/// Greedy action on every grid cell, one table per calendar context.
pub fn policy_heatmap(controller: &impl Controller, grid: &GridSpec) -> Result<Vec<HeatmapTable>> {
    grid.validate()?;
    grid.contexts
        .iter()
        .map(|ctx| {
            let states = grid.states(ctx);
            let actions = controller.act_batch(&states)?;
            Ok(HeatmapTable {
                context: *ctx,
                rows: states
                    .iter()
                    .zip(actions)
                    .map(|(s, a)| HeatmapRow { price: s.indicative_price, soc: s.soc, action: a })
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `(lower bin edge, frequency)`, contiguous from the lowest occupied bin.
    pub bins: Vec<(f64, f64)>,
    pub sample_count: usize,
    /// Share of settled prices strictly below -200 EUR/MWh.
    pub fraction_below_minus_200: f64,
}

impl Histogram {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lower_eur_mwh", "bin_upper_eur_mwh", "frequency"])?;
        for (lo, f) in &self.bins {
            out.write_record([format!("{lo}"), format!("{}", lo + self.bin_width), format!("{f}")])?;
        }
        out.flush().map_err(|e| Error::io("<histogram csv>", e))?;
        Ok(())
    }
}

/// Normalised histogram of the quarter-hour settled prices.
pub fn price_histogram(series: &PriceSeries, bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin width must be positive"));
    }
    histogram_of(&series.settled_quarter_hours(), bin_width)
}

pub fn histogram_of(samples: &[f64], bin_width: f64) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no prices to bin".into()));
    }
    let idx: Vec<i64> = samples.iter().map(|p| (p / bin_width).floor() as i64).collect();
    let lo = *idx.iter().min().unwrap();
    let hi = *idx.iter().max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for i in &idx {
        counts[(i - lo) as usize] += 1;
    }
    let n = samples.len() as f64;
    Ok(Histogram {
        bin_width,
        bins: counts.iter().enumerate().map(|(k, &c)| ((lo + k as i64) as f64 * bin_width, c as f64 / n)).collect(),
        sample_count: samples.len(),
        fraction_below_minus_200: samples.iter().filter(|&&p| p < -200.0).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub minute_of_day: usize,
    pub indicative_price: f64,
    pub action: BatteryAction,
    /// SoC before the action.
    pub soc: f64,
    /// EUR.
    pub reward: f64,
    pub power_mw: f64,
}

pub fn day_trace(
    controller: &impl Controller,
    series: &PriceSeries,
    day: NaiveDate,
    params: &BatteryParams,
    initial_soc: f64,
) -> Result<Vec<TraceRow>> {
    let mut e = DayEpisode::reset(series, day, initial_soc, params)?;
    let mut rows = Vec::with_capacity(params.steps_per_day());
    while !e.is_done() {
        let s = *e.state();
        let step = e.step_index();
        let a = controller.act(&s)?;
        let out = e.step(a)?;
        rows.push(TraceRow {
            step,
            minute_of_day: step * params.step_minutes as usize,
            indicative_price: s.indicative_price,
            action: a,
            soc: s.soc,
            reward: out.reward,
            power_mw: out.power_mw,
        });
    }
    Ok(rows)
}

pub fn write_trace_csv(rows: &[TraceRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "minute_of_day", "indicative_price_eur_mwh", "action", "soc", "reward_eur", "power_mw"])?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.minute_of_day.to_string(),
            format!("{}", r.indicative_price),
            r.action.name().to_string(),
            format!("{}", r.soc),
            format!("{}", r.reward),
            format!("{}", r.power_mw),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}
