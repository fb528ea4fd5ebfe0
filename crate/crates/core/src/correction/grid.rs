use serde::{Deserialize, Serialize};

use crate::battery_env::EnvState;
use crate::error::{Error, Result};

/// Evenly spaced closed range `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let a = Axis { min, max, step };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.min <= self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::invalid(format!("bad grid axis {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + self.step * i as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalendarContext {
    pub minute_of_qh: u8,
    pub qh_of_day: u8,
    pub month: u8,
}

impl CalendarContext {
    pub fn of(state: &EnvState) -> Self {
        CalendarContext { minute_of_qh: state.minute_of_qh, qh_of_day: state.qh_of_day, month: state.month }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minute_of_qh > 14 || self.qh_of_day > 95 || !(1..=12).contains(&self.month) {
            return Err(Error::invalid(format!("bad calendar context {self:?}")));
        }
        Ok(())
    }

    pub fn state(&self, price: f64, soc: f64) -> EnvState {
        EnvState {
            minute_of_qh: self.minute_of_qh,
            qh_of_day: self.qh_of_day,
            month: self.month,
            soc,
            indicative_price: price,
        }
    }

    /// File-name friendly label, e.g. `m0_qh32_mo1`.
    pub fn label(&self) -> String {
        format!("m{}_qh{}_mo{}", self.minute_of_qh, self.qh_of_day, self.month)
    }
}

/// Price x SoC lattice evaluated at a list of calendar contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub price: Axis,
    pub soc: Axis,
    pub contexts: Vec<CalendarContext>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let ctx = |qh| CalendarContext { minute_of_qh: 0, qh_of_day: qh, month: 1 };
        GridSpec {
            price: Axis { min: -1000.0, max: 2000.0, step: 25.0 },
            soc: Axis { min: 0.1, max: 1.0, step: 0.05 },
            contexts: vec![ctx(8), ctx(32), ctx(48), ctx(72), ctx(88)],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.price.validate()?;
        self.soc.validate()?;
        if self.contexts.is_empty() {
            return Err(Error::invalid("grid needs at least one calendar context"));
        }
        self.contexts.iter().try_for_each(|c| c.validate())
    }

    pub fn cells_per_context(&self) -> usize {
        self.price.len() * self.soc.len()
    }

    pub fn total_states(&self) -> usize {
        self.cells_per_context() * self.contexts.len()
    }

    /// Index of cell `(price i, soc j)` within one context's lattice.
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.soc.len() + j
    }

    /// Lattice states for one context, price-major.
    pub fn states(&self, context: &CalendarContext) -> Vec<EnvState> {
        let socs = self.soc.values();
        let mut out = Vec::with_capacity(self.cells_per_context());
        for p in self.price.values() {
            for &s in &socs {
                out.push(context.state(p, s));
            }
        }
        out
    }
}
