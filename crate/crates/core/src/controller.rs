use crate::battery_env::{BatteryAction, EnvState};
use crate::error::Result;

/// Anything that maps an observation to a battery action.
pub trait Controller {
    fn name(&self) -> String;

    fn act(&self, state: &EnvState) -> Result<BatteryAction>;

    /// Greedy actions for a batch of states. Controllers whose decision
    /// depends on the whole batch (the projection layer) override this.
    fn act_batch(&self, states: &[EnvState]) -> Result<Vec<BatteryAction>> {
        states.iter().map(|s| self.act(s)).collect()
    }
}

impl<C: Controller + ?Sized> Controller for &C {
    fn name(&self) -> String {
        (**self).name()
    }

    fn act(&self, state: &EnvState) -> Result<BatteryAction> {
        (**self).act(state)
    }

    fn act_batch(&self, states: &[EnvState]) -> Result<Vec<BatteryAction>> {
        (**self).act_batch(states)
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn act(&self, state: &EnvState) -> Result<BatteryAction> {
        (**self).act(state)
    }

    fn act_batch(&self, states: &[EnvState]) -> Result<Vec<BatteryAction>> {
        (**self).act_batch(states)
    }
}

/// Always takes the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantController(pub BatteryAction);

impl Controller for ConstantController {
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    fn act(&self, _: &EnvState) -> Result<BatteryAction> {
        Ok(self.0)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
