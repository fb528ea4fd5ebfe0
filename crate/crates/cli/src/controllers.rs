//! Controller specs on the command line: `rbc`, a checkpoint path, or
//! `raw:<student checkpoint>` for a student without its correction layer.

use std::path::Path;

use anyhow::{bail, Context, Result};
use arbitrage_core::battery_env::{BatteryAction, EnvState};
use arbitrage_core::controller::Controller;
use arbitrage_core::market_data::RbcThresholds;
use arbitrage_core::model::{load_model_file, LoadedModel};
use arbitrage_core::rbc::RbcController;

/// A controller labelled by the spec it came from.
pub struct Named {
    pub label: String,
    pub controller: Box<dyn Controller>,
}

impl Controller for Named {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn act(&self, state: &EnvState) -> arbitrage_core::Result<BatteryAction> {
        self.controller.act(state)
    }

    fn act_batch(&self, states: &[EnvState]) -> arbitrage_core::Result<Vec<BatteryAction>> {
        self.controller.act_batch(states)
    }
}

fn stem(path: &str) -> String {
    let name = Path::new(path).file_name().and_then(|n| n.to_str()).unwrap_or(path);
    name.strip_suffix(".ckpt.json")
        .or_else(|| name.strip_suffix(".json"))
        .or_else(|| name.strip_suffix(".ckpt"))
        .unwrap_or(name)
        .to_string()
}

pub fn parse(list: &str, rbc: impl Fn() -> Result<RbcThresholds>) -> Result<Vec<Named>> {
    let mut out = Vec::new();
    for spec in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let named = if spec == "rbc" {
            Named { label: "rbc".into(), controller: Box::new(RbcController::new(rbc()?)) }
        } else if let Some(path) = spec.strip_prefix("raw:") {
            match load_model_file(path).with_context(|| format!("loading {path}"))? {
                LoadedModel::Student(s) => Named { label: format!("{}-raw", stem(path)), controller: Box::new(s) },
                LoadedModel::Agent(_) => bail!("{path} is an agent checkpoint; raw: applies to students only"),
            }
        } else {
            let label = stem(spec);
            match load_model_file(spec).with_context(|| format!("loading {spec}"))? {
                LoadedModel::Agent(a) => Named { label, controller: Box::new(a) },
                LoadedModel::Student(s) => Named { label, controller: Box::new(s.with_layer()) },
            }
        };
        if out.iter().any(|o: &Named| o.label == named.label) {
            bail!("controller label {:?} appears twice", named.label);
        }
        out.push(named);
    }
    if out.is_empty() {
        bail!("no controllers given");
    }
    Ok(out)
}
