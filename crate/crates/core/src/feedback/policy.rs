use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FeedbackError;

/// Interaction frequency levels, from no interaction to unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    None,
    Low,
    Intermediate,
    NoLimits,
}

impl FromStr for PolicyName {
    type Err = FeedbackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "none" => Ok(Self::None),
            "low" => Ok(Self::Low),
            "intermediate" => Ok(Self::Intermediate),
            "nolimits" | "unlimited" => Ok(Self::NoLimits),
            _ => Err(FeedbackError::InvalidPolicy(format!("unknown policy `{s}`"))),
        }
    }
}

/// Where in a run feedback may be delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligiblePoints {
    /// At any completion or time trigger.
    AfterEachEvent,
    /// Held until the next milestone completion: an event with no
    /// dependents, or with two or more.
    AfterMilestones,
    /// Held until every event is done.
    FinalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyPolicy {
    pub name: PolicyName,
    /// `None` means unlimited.
    pub max_interactions: Option<u32>,
    pub eligible_points: EligiblePoints,
}

impl FrequencyPolicy {
    pub fn new(
        name: PolicyName,
        max_interactions: Option<u32>,
        eligible_points: EligiblePoints,
    ) -> Result<Self, FeedbackError> {
        if name == PolicyName::None && max_interactions != Some(0) {
            return Err(FeedbackError::InvalidPolicy("the none policy allows zero interactions".into()));
        }
        Ok(Self { name, max_interactions, eligible_points })
    }

    /// Default configuration per level. Low allows one interaction and
    /// intermediate three; both deliver at milestones.
    pub fn preset(name: PolicyName) -> Self {
        let (max, points) = match name {
            PolicyName::None => (Some(0), EligiblePoints::FinalOnly),
            PolicyName::Low => (Some(1), EligiblePoints::AfterMilestones),
            PolicyName::Intermediate => (Some(3), EligiblePoints::AfterMilestones),
            PolicyName::NoLimits => (None, EligiblePoints::AfterEachEvent),
        };
        Self { name, max_interactions: max, eligible_points: points }
    }

    pub fn no_limits() -> Self {
        Self::preset(PolicyName::NoLimits)
    }
}

impl Default for FrequencyPolicy {
    fn default() -> Self {
        Self::no_limits()
    }
}
