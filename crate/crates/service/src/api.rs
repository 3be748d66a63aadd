//! Request and response bodies.

use bcie_core::critique::{ItemSide, Outcome, Strategy};
use bcie_core::EntityId;
use serde::{Deserialize, Serialize};

/// An entity given either by dense id or by its name in the id map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntityRef {
    Id(EntityId),
    Name(String),
}

/// Per-session overrides of the server's session defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub k: Option<usize>,
    pub max_steps: Option<usize>,
    pub alpha: Option<f64>,
    pub j0: Option<f64>,
    pub j_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub user_id: Option<EntityRef>,
    #[serde(default)]
    pub cold_start: bool,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub target_item: Option<EntityRef>,
    #[serde(default)]
    pub config: Option<ConfigOverrides>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostCritique {
    /// `relation:anchor:h|t`, as presented in a step payload.
    pub fact_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseSession {
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactChip {
    pub fact_id: String,
    pub relation: String,
    pub anchor: EntityId,
    pub anchor_name: String,
    pub side: ItemSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCard {
    pub id: EntityId,
    pub name: String,
    pub score: f64,
    pub facts: Vec<FactChip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCard {
    pub id: EntityId,
    pub name: String,
    pub rank: usize,
    pub facts: Vec<FactChip>,
}

/// What the client renders after creation and after each critique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub session_id: String,
    pub step: usize,
    pub max_steps: usize,
    pub strategy: Strategy,
    pub items: Vec<ItemCard>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetCard>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_rank: Option<usize>,
    /// Target rank at every step so far.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub dim: usize,
    pub entities: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: ModelInfo,
}
