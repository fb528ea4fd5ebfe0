use serde::{Deserialize, Serialize};

use super::repair::context_groups;
use super::ConstraintConfig;
use crate::battery_env::{BatteryAction, EnvState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Property {
    /// Charge at or below the lower price bound.
    P1,
    /// Discharge at or above the upper price bound.
    P2,
    /// Greedy action non-increasing in price and SoC.
    P3,
}

/// `p[winner] - p[loser] >= margin` on the probability vector of `state`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub state: usize,
    pub winner: BatteryAction,
    pub loser: BatteryAction,
    pub property: Property,
}

impl Constraint {
    /// Coefficient row `g` with the constraint read as `g . p >= margin`.
    pub fn row(&self) -> [f64; 3] {
        let mut g = [0.0; 3];
        g[self.winner.index()] = 1.0;
        g[self.loser.index()] = -1.0;
        g
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub margin: f64,
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(margin: f64) -> Self {
        ConstraintSet { margin, constraints: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Adds the constraint unless the same state already has it.
    pub fn push(&mut self, c: Constraint) -> bool {
        let dup = self
            .constraints
            .iter()
            .any(|o| o.state == c.state && o.winner == c.winner && o.loser == c.loser);
        if !dup {
            self.constraints.push(c);
        }
        !dup
    }

    /// Adds the two constraints making `action` the strict argmax of `state`.
    pub fn force(&mut self, state: usize, action: BatteryAction, property: Property) {
        for other in BatteryAction::ALL {
            if other != action {
                self.push(Constraint { state, winner: action, loser: other, property });
            }
        }
    }

    /// Constraints grouped by state index.
    pub fn by_state(&self, n_states: usize) -> Vec<Vec<Constraint>> {
        let mut out = vec![Vec::new(); n_states];
        for c in &self.constraints {
            out[c.state].push(*c);
        }
        out
    }

    pub fn max_state(&self) -> Option<usize> {
        self.constraints.iter().map(|c| c.state).max()
    }
}

const BIT: [u8; 3] = [1, 2, 4];

/// Linear constraints for a batch of states.
///
/// Price-band states get their required action forced. For every ordered pair
/// `s <= s'` (same calendar context, price and SoC componentwise) the hints
/// are turned into cuts on one side of the pair: a charge hint at `s'` forces
/// charge at `s`, an idle hint at `s'` requires idle over discharge at `s`.
/// The mirror image applies downwards: a discharge hint at `s` forces
/// discharge at `s'`, an idle hint at `s` requires idle over charge at `s'`.
pub fn build_constraints(
    states: &[EnvState],
    config: &ConstraintConfig,
    hints: &[BatteryAction],
) -> Result<ConstraintSet> {
    config.validate()?;
    if hints.len() != states.len() {
        return Err(Error::Dimension { expected: states.len(), found: hints.len() });
    }
    let mut set = ConstraintSet::new(config.margin);
    for (k, s) in states.iter().enumerate() {
        if s.indicative_price <= config.price_lower {
            set.force(k, BatteryAction::Charge, Property::P1);
        }
        if s.indicative_price >= config.price_upper {
            set.force(k, BatteryAction::Discharge, Property::P2);
        }
    }

    for grid in context_groups(states) {
        let (ni, nj) = (grid.n_price, grid.n_soc);
        let at = |i: usize, j: usize| i * nj + j;
        let mut counts = vec![[0u32; 3]; ni * nj];
        for (m, &k) in grid.members.iter().enumerate() {
            counts[at(grid.price_rank[m], grid.soc_rank[m])][hints[k].index()] += 1;
        }
        let mask = |c: &[u32; 3]| (0..3).filter(|&a| c[a] > 0).fold(0u8, |acc, a| acc | BIT[a]);
        // up[i][j]: hints present at cells (>= i, >= j); down: cells (<= i, <= j)
        let mut up = vec![0u8; (ni + 1) * (nj + 1)];
        let mut down = vec![0u8; (ni + 1) * (nj + 1)];
        let w = nj + 1;
        for i in (0..ni).rev() {
            for j in (0..nj).rev() {
                up[i * w + j] = mask(&counts[at(i, j)]) | up[(i + 1) * w + j] | up[i * w + j + 1];
            }
        }
        for i in 0..ni {
            for j in 0..nj {
                down[(i + 1) * w + j + 1] = mask(&counts[at(i, j)]) | down[i * w + j + 1] | down[(i + 1) * w + j];
            }
        }
        for (m, &k) in grid.members.iter().enumerate() {
            let (i, j) = (grid.price_rank[m], grid.soc_rank[m]);
            let mut same = counts[at(i, j)];
            same[hints[k].index()] -= 1;
            let same = mask(&same);
            let above = same | up[(i + 1) * w + j] | up[i * w + j + 1];
            let below = same | down[i * w + j + 1] | down[(i + 1) * w + j];
            let has = |m: u8, a: BatteryAction| m & BIT[a.index()] != 0;
            if has(above, BatteryAction::Charge) {
                set.force(k, BatteryAction::Charge, Property::P3);
            }
            if has(above, BatteryAction::Idle) {
                set.push(Constraint { state: k, winner: BatteryAction::Idle, loser: BatteryAction::Discharge, property: Property::P3 });
            }
            if has(below, BatteryAction::Discharge) {
                set.force(k, BatteryAction::Discharge, Property::P3);
            }
            if has(below, BatteryAction::Idle) {
                set.push(Constraint { state: k, winner: BatteryAction::Idle, loser: BatteryAction::Charge, property: Property::P3 });
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use BatteryAction::*;

    fn st(price: f64, soc: f64) -> EnvState {
        EnvState { minute_of_qh: 0, qh_of_day: 10, month: 4, soc, indicative_price: price }
    }

    #[test]
    fn single_low_price_state_gets_p1_pair() {
        let set = build_constraints(&[st(-600.0, 0.5)], &ConstraintConfig::default(), &[Idle]).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.constraints.iter().all(|c| c.winner == Charge && c.property == Property::P1));
    }

    #[test]
    fn interior_single_state_is_unconstrained() {
        let set = build_constraints(&[st(0.0, 0.5)], &ConstraintConfig::default(), &[Idle]).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn charge_hint_above_forces_charge_below() {
        let states = [st(100.0, 0.5), st(200.0, 0.5)];
        let set = build_constraints(&states, &ConstraintConfig::default(), &[Charge, Charge]).unwrap();
        let on_low: Vec<_> = set.constraints.iter().filter(|c| c.state == 0).collect();
        assert_eq!(on_low.len(), 2);
        assert!(on_low.iter().all(|c| c.winner == Charge));
        assert!(set.constraints.iter().all(|c| c.state == 0));
    }

    #[test]
    fn idle_hint_above_and_discharge_below() {
        let states = [st(100.0, 0.5), st(200.0, 0.5)];
        let set = build_constraints(&states, &ConstraintConfig::default(), &[Discharge, Idle]).unwrap();
        let low: Vec<_> = set.constraints.iter().filter(|c| c.state == 0).map(|c| (c.winner, c.loser)).collect();
        assert_eq!(low, vec![(Idle, Discharge)]);
        let high: Vec<_> = set.constraints.iter().filter(|c| c.state == 1).map(|c| (c.winner, c.loser)).collect();
        assert_eq!(high, vec![(Discharge, Idle), (Discharge, Charge)]);
    }

    #[test]
    fn incomparable_and_cross_context_pairs_ignored() {
        let mut other = st(200.0, 0.5);
        other.month = 5;
        let states = [st(100.0, 0.9), st(200.0, 0.2), other];
        let set = build_constraints(&states, &ConstraintConfig::default(), &[Idle, Charge, Charge]).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn matches_pairwise_definition() {
        let prices = [-100.0, 0.0, 50.0, 120.0];
        let socs = [0.1, 0.4, 0.8];
        let mut states = Vec::new();
        let mut hints = Vec::new();
        let mut k = 0usize;
        for &p in &prices {
            for &s in &socs {
                states.push(st(p, s));
                hints.push(BatteryAction::from_index((k * 7 + 3) % 3).unwrap());
                k += 1;
            }
        }
        states.push(st(50.0, 0.4));
        hints.push(Discharge);
        let cfg = ConstraintConfig::default();
        let set = build_constraints(&states, &cfg, &hints).unwrap();
        let mut want = ConstraintSet::new(cfg.margin);
        for a in 0..states.len() {
            for b in 0..states.len() {
                if a == b {
                    continue;
                }
                let (sa, sb) = (&states[a], &states[b]);
                if sa.indicative_price <= sb.indicative_price && sa.soc <= sb.soc {
                    match hints[b] {
                        Charge => want.force(a, Charge, Property::P3),
                        Idle => {
                            want.push(Constraint { state: a, winner: Idle, loser: Discharge, property: Property::P3 });
                        }
                        Discharge => {}
                    }
                    match hints[a] {
                        Discharge => want.force(b, Discharge, Property::P3),
                        Idle => {
                            want.push(Constraint { state: b, winner: Idle, loser: Charge, property: Property::P3 });
                        }
                        Charge => {}
                    }
                }
            }
        }
        let key = |c: &Constraint| (c.state, c.winner, c.loser);
        let mut got: Vec<_> = set.constraints.iter().map(key).collect();
        let mut exp: Vec<_> = want.constraints.iter().map(key).collect();
        got.sort();
        exp.sort();
        assert_eq!(got, exp);
    }

    #[test]
    fn bad_margin_rejected() {
        let cfg = ConstraintConfig { margin: 0.4, ..ConstraintConfig::default() };
        assert!(build_constraints(&[st(0.0, 0.5)], &cfg, &[Idle]).is_err());
    }
}
