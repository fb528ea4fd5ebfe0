//! Minimal-change monotone relabelling of greedy actions.
//!
//! Within one calendar context the corrected action must be non-increasing
//! (charge > idle > discharge) in both price and SoC, charge at or below the
//! lower price bound and discharge at or above the upper one. The relabelling
//! minimises the summed absolute change of action indices. That objective
//! splits into two independent binary problems, "action >= idle" and
//! "action = charge", each asking for a down-set of the (price, soc) order.
//! On the rank-compressed grid a down-set is a staircase of price cut-offs that
//! shrink as SoC grows, found by dynamic programming over SoC rows.

use std::collections::BTreeMap;

use super::grid::CalendarContext;
use super::ConstraintConfig;
use crate::battery_env::{BatteryAction, EnvState};

const FORCED: i64 = 1 << 40;

/// States of one calendar context placed on their distinct price and SoC values.
#[derive(Debug, Clone)]
pub(crate) struct RankGrid {
    pub members: Vec<usize>,
    pub price_rank: Vec<usize>,
    pub soc_rank: Vec<usize>,
    pub n_price: usize,
    pub n_soc: usize,
}

fn ranks(values: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let r = values
        .iter()
        .map(|v| sorted.binary_search_by(|x| x.total_cmp(v)).unwrap())
        .collect();
    (r, sorted.len())
}

impl RankGrid {
    pub fn new(states: &[EnvState], members: Vec<usize>) -> Self {
        let prices: Vec<f64> = members.iter().map(|&k| states[k].indicative_price).collect();
        let socs: Vec<f64> = members.iter().map(|&k| states[k].soc).collect();
        let (price_rank, n_price) = ranks(&prices);
        let (soc_rank, n_soc) = ranks(&socs);
        RankGrid { members, price_rank, soc_rank, n_price, n_soc }
    }
}

/// Batch indices grouped by calendar context, in context order.
pub(crate) fn context_groups(states: &[EnvState]) -> Vec<RankGrid> {
    let mut groups: BTreeMap<CalendarContext, Vec<usize>> = BTreeMap::new();
    for (k, s) in states.iter().enumerate() {
        groups.entry(CalendarContext::of(s)).or_default().push(k);
    }
    groups.into_values().map(|m| RankGrid::new(states, m)).collect()
}

/// Largest-cost-optimal staircase: returns per SoC row the number of price
/// ranks included, non-increasing in the row index. Ties favour inclusion.
fn staircase(grid: &RankGrid, in_cost: &[i64], out_cost: &[i64]) -> Vec<usize> {
    let (ni, nj) = (grid.n_price, grid.n_soc);
    let at = |j: usize, i: usize| j * ni + i;
    // row_cost[j][t]: include price ranks < t in row j
    let mut f = vec![vec![0i64; ni + 1]; nj];
    for j in 0..nj {
        let total_out: i64 = (0..ni).map(|i| out_cost[at(j, i)]).sum();
        let mut cost = total_out;
        let mut row = Vec::with_capacity(ni + 1);
        row.push(cost);
        for i in 0..ni {
            cost += in_cost[at(j, i)] - out_cost[at(j, i)];
            row.push(cost);
        }
        if j > 0 {
            // suffix minimum of the previous row: t_{j-1} >= t_j
            let prev = &f[j - 1];
            let mut best = i64::MAX;
            for t in (0..=ni).rev() {
                best = best.min(prev[t]);
                row[t] += best;
            }
        }
        f[j] = row;
    }
    let mut cuts = vec![0usize; nj];
    let mut lower = 0;
    for j in (0..nj).rev() {
        let row = &f[j];
        let mut best_t = ni;
        for t in (lower..=ni).rev() {
            if row[t] < row[best_t] {
                best_t = t;
            }
        }
        cuts[j] = best_t;
        lower = best_t;
    }
    cuts
}

/// Monotone relabelling of `actions` closest to them in summed index change,
/// computed separately per calendar context.
pub fn repair_hints(
    states: &[EnvState],
    actions: &[BatteryAction],
    config: &ConstraintConfig,
) -> Vec<BatteryAction> {
    assert_eq!(states.len(), actions.len());
    let mut out = actions.to_vec();
    for grid in context_groups(states) {
        let cells = grid.n_price * grid.n_soc;
        let mut level_in = [vec![0i64; cells], vec![0i64; cells]];
        let mut level_out = [vec![0i64; cells], vec![0i64; cells]];
        for (m, &k) in grid.members.iter().enumerate() {
            let c = grid.soc_rank[m] * grid.n_price + grid.price_rank[m];
            let price = states[k].indicative_price;
            let a = actions[k].index();
            for level in 0..2 {
                let above = a > level;
                if price <= config.price_lower {
                    level_out[level][c] += FORCED;
                } else if price >= config.price_upper {
                    level_in[level][c] += FORCED;
                } else if above {
                    level_out[level][c] += 1;
                } else {
                    level_in[level][c] += 1;
                }
            }
        }
        let at_least_idle = staircase(&grid, &level_in[0], &level_out[0]);
        let charge = staircase(&grid, &level_in[1], &level_out[1]);
        for (m, &k) in grid.members.iter().enumerate() {
            let (i, j) = (grid.price_rank[m], grid.soc_rank[m]);
            out[k] = if i < charge[j] {
                BatteryAction::Charge
            } else if i < at_least_idle[j].max(charge[j]) {
                BatteryAction::Idle
            } else {
                BatteryAction::Discharge
            };
        }
    }
    out
}

/// True when `actions` are non-increasing in price and SoC within every
/// calendar context (checked over all pairs).
pub fn is_monotone(states: &[EnvState], actions: &[BatteryAction]) -> bool {
    for grid in context_groups(states) {
        for (a, &ka) in grid.members.iter().enumerate() {
            for (b, &kb) in grid.members.iter().enumerate() {
                let le = grid.price_rank[a] <= grid.price_rank[b] && grid.soc_rank[a] <= grid.soc_rank[b];
                if le && actions[ka].index() < actions[kb].index() {
                    return false;
                }
            }
        }
    }
    true
}
