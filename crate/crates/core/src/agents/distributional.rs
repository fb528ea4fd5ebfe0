//! Categorical return distributions on a fixed, evenly spaced atom grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub count: usize,
}

impl Default for AtomGrid {
    fn default() -> Self {
        AtomGrid { v_min: -1e5, v_max: 1e5, count: 51 }
    }
}

impl AtomGrid {
    pub fn new(v_min: f64, v_max: f64, count: usize) -> Result<Self> {
        let grid = AtomGrid { v_min, v_max, count };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 || !(self.v_min < self.v_max) {
            return Err(Error::invalid(format!("bad atom grid {self:?}")));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.v_max - self.v_min) / (self.count - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.v_min + self.spacing() * i as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistribution {
    pub atoms: AtomGrid,
    pub probabilities: Vec<f64>,
}

impl ReturnDistribution {
    pub fn new(atoms: AtomGrid, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != atoms.count {
            return Err(Error::Dimension { expected: atoms.count, found: probabilities.len() });
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probabilities must be non-negative and sum to 1"));
        }
        Ok(ReturnDistribution { atoms, probabilities })
    }

    pub fn mean(&self) -> f64 {
        expectation(&self.atoms, &self.probabilities)
    }
}

pub fn expectation(atoms: &AtomGrid, probabilities: &[f64]) -> f64 {
    probabilities.iter().enumerate().map(|(i, p)| p * atoms.value(i)).sum()
}

/// Projects the distribution of `reward + gamma * Z` back onto the atom grid.
///
/// Each shifted atom is clipped to `[v_min, v_max]` and its mass split
/// between the two neighbouring grid atoms in proportion to proximity.
pub fn categorical_projection(
    probabilities: &[f64],
    reward: f64,
    gamma: f64,
    atoms: &AtomGrid,
) -> Vec<f64> {
    debug_assert_eq!(probabilities.len(), atoms.count);
    let n = atoms.count;
    let dz = atoms.spacing();
    let mut out = vec![0.0; n];
    for (j, &p) in probabilities.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let tz = (reward + gamma * atoms.value(j)).clamp(atoms.v_min, atoms.v_max);
        let b = ((tz - atoms.v_min) / dz).clamp(0.0, (n - 1) as f64);
        let lower = b.floor();
        let l = lower as usize;
        let frac = b - lower;
        if frac == 0.0 || l + 1 >= n {
            out[l.min(n - 1)] += p;
        } else {
            out[l] += p * (1.0 - frac);
            out[l + 1] += p * frac;
        }
    }
    out
}
