//! Threshold rule-based controller.

use crate::battery_env::{BatteryAction, EnvState};
use crate::controller::Controller;
use crate::error::Result;
use crate::market_data::RbcThresholds;

/// Charge below the lower threshold, discharge above the upper one, idle in
/// between (boundaries included).
pub fn rbc_action(indicative_price: f64, thresholds: &RbcThresholds) -> BatteryAction {
    if indicative_price < thresholds.lower {
        BatteryAction::Charge
    } else if indicative_price > thresholds.upper {
        BatteryAction::Discharge
    } else {
        BatteryAction::Idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbcController {
    pub thresholds: RbcThresholds,
}

impl RbcController {
    pub fn new(thresholds: RbcThresholds) -> Self {
        RbcController { thresholds }
    }
}

impl Controller for RbcController {
    fn name(&self) -> String {
        "rbc".into()
    }

    fn act(&self, state: &EnvState) -> Result<BatteryAction> {
        Ok(rbc_action(state.indicative_price, &self.thresholds))
    }
}
