//! Online goal inference. Each user input is scored per candidate goal with
//! a maximum-entropy likelihood built from a distance-based running cost and
//! value-to-go, and accumulated into a log-space posterior.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;

/// Per-goal probability floor applied after every update.
pub const PROBABILITY_FLOOR: f64 = 1e-6;
/// Normalization tolerance of a belief.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("distance must be finite and non-negative, got {0}")]
    InvalidDistance(f64),
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("goal set is empty")]
    EmptyGoalSet,
    #[error("no position known for goal {0}")]
    MissingGoal(NodeId),
    #[error("non-finite input sample")]
    NonFiniteSample,
}

/// Shape of the goal-directed cost. `c0` is the far-field cost, `delta`
/// the distance (m) below which cost falls linearly to zero, `k` and `b`
/// the slope (1/m) and offset of the value scaling, `eta` the inverse
/// temperature of the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub c0: f64,
    pub delta: f64,
    pub k: f64,
    pub b: f64,
    pub eta: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { c0: 1.0, delta: 0.15, k: 2.0, b: 0.5, eta: 20.0 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let all = [self.c0, self.delta, self.k, self.b, self.eta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::InvalidParams("all parameters must be finite".into()));
        }
        if self.c0 <= 0.0 || self.delta <= 0.0 || self.eta <= 0.0 {
            return Err(InferenceError::InvalidParams("c0, delta and eta must be positive".into()));
        }
        // Non-negative slope and offset keep the value monotone in distance.
        if self.k < 0.0 || self.b < 0.0 || self.k * self.delta + self.b <= 0.0 {
            return Err(InferenceError::InvalidParams("need k >= 0, b >= 0 and k*delta + b > 0".into()));
        }
        Ok(())
    }
}

fn check_distance(d: f64) -> Result<(), InferenceError> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(InferenceError::InvalidDistance(d))
    }
}

fn cost_unchecked(d: f64, p: &CostParams) -> f64 {
    if d <= p.delta {
        p.c0 / p.delta * d
    } else {
        p.c0
    }
}

fn value_unchecked(d: f64, p: &CostParams) -> f64 {
    cost_unchecked(d, p) * (p.k * d + p.b)
}

/// Cost of acting at distance `d` from the goal: linear up to `delta`, then flat at `c0`.
pub fn running_cost(d: f64, params: &CostParams) -> Result<f64, InferenceError> {
    check_distance(d)?;
    Ok(cost_unchecked(d, params))
}

/// Cost-to-go: the running cost scaled by `k d + b`, quadratic near the
/// goal and affine beyond `delta`.
pub fn value_to_go(d: f64, params: &CostParams) -> Result<f64, InferenceError> {
    check_distance(d)?;
    Ok(value_unchecked(d, params))
}

/// One observation: where the end-effector was and the translation the user commanded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSample {
    pub eef_position: Vector3<f64>,
    pub u_h: Vector3<f64>,
    pub tick: u64,
}

impl InputSample {
    pub fn new(eef_position: Vector3<f64>, u_h: Vector3<f64>, tick: u64) -> Self {
        Self { eef_position, u_h, tick }
    }

    fn is_finite(&self) -> bool {
        self.eef_position.iter().chain(self.u_h.iter()).all(|v| v.is_finite())
    }
}

/// Unnormalized log-likelihood `eta [V(d) - C(d) - V(d')]` of the sample under a goal.
pub fn step_log_likelihood(sample: &InputSample, goal_position: &Vector3<f64>, params: &CostParams) -> f64 {
    let d = (sample.eef_position - goal_position).norm();
    let d_next = (sample.eef_position + sample.u_h - goal_position).norm();
    params.eta * (value_unchecked(d, params) - cost_unchecked(d, params) - value_unchecked(d_next, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefStage {
    Grasping,
    Interaction,
}

/// Posterior over the active goal set, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalBelief {
    entries: BTreeMap<NodeId, f64>,
    stage: BeliefStage,
}

impl GoalBelief {
    pub fn stage(&self) -> BeliefStage {
        self.stage
    }

    pub fn log_probabilities(&self) -> &BTreeMap<NodeId, f64> {
        &self.entries
    }

    pub fn probability(&self, goal: NodeId) -> Option<f64> {
        self.entries.get(&goal).map(|l| l.exp())
    }

    pub fn probabilities(&self) -> BTreeMap<NodeId, f64> {
        self.entries.iter().map(|(k, v)| (*k, v.exp())).collect()
    }

    pub fn goals(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a belief from arbitrary log-weights, normalizing them.
    pub fn from_log_weights(weights: BTreeMap<NodeId, f64>, stage: BeliefStage) -> Result<Self, InferenceError> {
        if weights.is_empty() {
            return Err(InferenceError::EmptyGoalSet);
        }
        let norm = log_sum_exp(weights.values().copied());
        Ok(Self { entries: weights.into_iter().map(|(k, v)| (k, v - norm)).collect(), stage })
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Uniform prior over `goal_ids` (duplicates collapse).
pub fn reset_belief(goal_ids: &[NodeId], stage: BeliefStage) -> Result<GoalBelief, InferenceError> {
    if goal_ids.is_empty() {
        return Err(InferenceError::EmptyGoalSet);
    }
    let mut entries: BTreeMap<NodeId, f64> = goal_ids.iter().map(|g| (*g, 0.0)).collect();
    let log_p = -(entries.len() as f64).ln();
    entries.values_mut().for_each(|v| *v = log_p);
    Ok(GoalBelief { entries, stage })
}

/// Recursive Bayes update with the default [`PROBABILITY_FLOOR`].
pub fn update_belief(
    belief: &GoalBelief,
    sample: &InputSample,
    goal_positions: &BTreeMap<NodeId, Vector3<f64>>,
    params: &CostParams,
) -> Result<GoalBelief, InferenceError> {
    update_belief_with_floor(belief, sample, goal_positions, params, PROBABILITY_FLOOR)
}

/// Recursive Bayes update. After normalizing, every probability below
/// `floor` is raised to it and the belief renormalized; `floor = 0`
/// disables this.
pub fn update_belief_with_floor(
    belief: &GoalBelief,
    sample: &InputSample,
    goal_positions: &BTreeMap<NodeId, Vector3<f64>>,
    params: &CostParams,
    floor: f64,
) -> Result<GoalBelief, InferenceError> {
    if belief.entries.is_empty() {
        return Err(InferenceError::EmptyGoalSet);
    }
    if !sample.is_finite() {
        return Err(InferenceError::NonFiniteSample);
    }
    let mut weights = BTreeMap::new();
    for (&goal, &log_p) in &belief.entries {
        let pos = goal_positions.get(&goal).ok_or(InferenceError::MissingGoal(goal))?;
        weights.insert(goal, log_p + step_log_likelihood(sample, pos, params));
    }
    let mut next = GoalBelief::from_log_weights(weights, belief.stage)?;
    if floor > 0.0 {
        let log_floor = floor.ln();
        if next.entries.values().any(|&v| v < log_floor) {
            next.entries.values_mut().for_each(|v| *v = v.max(log_floor));
            next = GoalBelief::from_log_weights(next.entries, next.stage)?;
        }
    }
    Ok(next)
}

/// Most probable goal; exact ties go to the lowest id.
pub fn argmax_goal(belief: &GoalBelief) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for (&goal, &log_p) in &belief.entries {
        match best {
            Some((_, b)) if log_p <= b => {}
            _ => best = Some((goal, log_p)),
        }
    }
    best.map(|(g, _)| g)
}
