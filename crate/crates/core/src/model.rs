//! Checkpoint metadata for every model the pipeline produces.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, GreedyAgent};
use crate::battery_env::{BatteryAction, FEATURE_DIM};
use crate::correction::{ConstraintConfig, GridSpec, StudentPolicy};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelMeta {
    Agent { agent: AgentKind },
    Student { constraints: ConstraintConfig, support: GridSpec },
}

#[derive(Debug, Clone)]
pub enum LoadedModel {
    Agent(GreedyAgent),
    Student(StudentPolicy),
}

pub fn agent_checkpoint(agent: &GreedyAgent) -> Result<Vec<u8>> {
    save_checkpoint(&agent.net, agent.norm, ModelMeta::Agent { agent: agent.kind })
}

pub fn student_checkpoint(student: &StudentPolicy) -> Result<Vec<u8>> {
    save_checkpoint(
        &student.net,
        student.norm,
        ModelMeta::Student { constraints: student.constraints.clone(), support: student.support.clone() },
    )
}

pub fn load_model(bytes: &[u8]) -> Result<LoadedModel> {
    let (net, ckpt) = load_checkpoint::<ModelMeta>(bytes)?;
    if net.input_dim() != FEATURE_DIM {
        return Err(Error::Dimension { expected: FEATURE_DIM, found: net.input_dim() });
    }
    match ckpt.meta {
        ModelMeta::Agent { agent } => {
            if net.output_dim() != agent.output_dim() {
                return Err(Error::Dimension { expected: agent.output_dim(), found: net.output_dim() });
            }
            Ok(LoadedModel::Agent(GreedyAgent { net, kind: agent, norm: ckpt.norm_stats }))
        }
        ModelMeta::Student { constraints, support } => {
            if net.output_dim() != BatteryAction::COUNT {
                return Err(Error::Dimension { expected: BatteryAction::COUNT, found: net.output_dim() });
            }
            Ok(LoadedModel::Student(StudentPolicy { net, norm: ckpt.norm_stats, constraints, support }))
        }
    }
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes)
}
