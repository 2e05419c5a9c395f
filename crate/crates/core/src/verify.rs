//! Tabular Q-learning verifier: severity states, confirm/reject/request-info
//! actions, and episodic updates from operator feedback.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{AnomalyEvent, EventStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Low, Severity::Medium, Severity::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Low => "Low",
            Severity::Medium => "Medium",
            Severity::High => "High",
        }
    }
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Confirm,
    Reject,
    RequestInfo,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Confirm, Action::Reject, Action::RequestInfo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Confirm => "confirm",
            Action::Reject => "reject",
            Action::RequestInfo => "request-info",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Agree,
    Disagree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub verdict: Verdict,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub operator: String,
}

impl FeedbackSignal {
    pub fn new(verdict: Verdict, operator: impl Into<String>) -> Self {
        Self {
            verdict,
            note: None,
            operator: operator.into(),
        }
    }
}

/// Point rubric: the error/threshold ratio earns 2 points at `>= high_ratio`
/// and 1 at `>= medium_ratio`; wind above `wind_cutoff` and any rain add one
/// each. At most 1 point is Low, 2 Medium, 3 or more High.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityRubric {
    pub high_ratio: f64,
    pub medium_ratio: f64,
    pub wind_cutoff: f64,
}

impl Default for SeverityRubric {
    fn default() -> Self {
        Self {
            high_ratio: 3.0,
            medium_ratio: 1.5,
            wind_cutoff: 15.0,
        }
    }
}

pub fn severity_points(event: &AnomalyEvent, rubric: &SeverityRubric) -> u32 {
    let z = if event.threshold > 0.0 {
        event.error / event.threshold
    } else {
        f64::INFINITY
    };
    let z_pts = if z >= rubric.high_ratio {
        2
    } else if z >= rubric.medium_ratio {
        1
    } else {
        0
    };
    let wind_pts = u32::from(event.context.wind.is_some_and(|w| w > rubric.wind_cutoff));
    let rain_pts = u32::from(event.context.rain.is_some_and(|r| r > 0.0));
    z_pts + wind_pts + rain_pts
}

pub fn severity_of(event: &AnomalyEvent, rubric: &SeverityRubric) -> Severity {
    match severity_points(event, rubric) {
        0 | 1 => Severity::Low,
        2 => Severity::Medium,
        _ => Severity::High,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardTable {
    pub correct: f64,
    pub incorrect: f64,
    pub request_info: f64,
}

impl Default for RewardTable {
    fn default() -> Self {
        Self {
            correct: 1.0,
            incorrect: -1.0,
            request_info: -0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QHyper {
    pub alpha: f64,
    /// Kept for multi-step chains; every verification is terminal, so it does
    /// not enter the update.
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub rewards: RewardTable,
}

impl Default for QHyper {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.1,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            rewards: RewardTable::default(),
        }
    }
}

impl QHyper {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.epsilon_min) {
            return Err("epsilon must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return Err("epsilon decay must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Action values indexed `[severity][action]`, visit counts, and the current
/// exploration rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: [[f64; 3]; 3],
    pub visits: [[u64; 3]; 3],
    pub epsilon: f64,
}

impl QTable {
    pub fn new(hyper: &QHyper) -> Self {
        Self {
            q: [[0.0; 3]; 3],
            visits: [[0; 3]; 3],
            epsilon: hyper.epsilon,
        }
    }

    pub fn value(&self, s: Severity, a: Action) -> f64 {
        self.q[s.index()][a.index()]
    }

    /// Highest-valued action among `allowed`, earliest listed on ties.
    pub fn greedy_among(&self, s: Severity, allowed: &[Action]) -> Action {
        let row = &self.q[s.index()];
        let mut best = allowed[0];
        for &a in &allowed[1..] {
            if row[a.index()] > row[best.index()] {
                best = a;
            }
        }
        best
    }

    pub fn greedy(&self, s: Severity) -> Action {
        self.greedy_among(s, &Action::ALL)
    }
}

/// Epsilon-greedy choice using the table's current exploration rate.
pub fn choose_action<R: Rng + ?Sized>(table: &QTable, state: Severity, rng: &mut R) -> Action {
    if rng.random::<f64>() < table.epsilon {
        Action::ALL[rng.random_range(0..Action::ALL.len())]
    } else {
        table.greedy(state)
    }
}

pub fn reward_of(action: Action, verdict: Verdict, rewards: &RewardTable) -> f64 {
    match (action, verdict) {
        (Action::RequestInfo, _) => rewards.request_info,
        (_, Verdict::Agree) => rewards.correct,
        (_, Verdict::Disagree) => rewards.incorrect,
    }
}

/// Record of one table update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QUpdate {
    pub state: Severity,
    pub action: Action,
    pub reward: f64,
    pub old: f64,
    pub new: f64,
    pub delta: f64,
}

/// Episodic update `Q <- Q + alpha (r - Q)` of one cell, then epsilon decay.
pub fn apply_feedback(
    table: &mut QTable,
    state: Severity,
    action: Action,
    verdict: Verdict,
    hyper: &QHyper,
) -> QUpdate {
    let reward = reward_of(action, verdict, &hyper.rewards);
    let (s, a) = (state.index(), action.index());
    let old = table.q[s][a];
    let new = old + hyper.alpha * (reward - old);
    table.q[s][a] = new;
    table.visits[s][a] += 1;
    table.epsilon = (table.epsilon * hyper.epsilon_decay).max(hyper.epsilon_min);
    QUpdate {
        state,
        action,
        reward,
        old,
        new,
        delta: new - old,
    }
}

/// Event status implied by the operator's verdict on the proposed action.
pub fn resolve_status(action: Action, verdict: Verdict) -> EventStatus {
    match (action, verdict) {
        (Action::Confirm, Verdict::Agree) | (Action::Reject, Verdict::Disagree) => EventStatus::Confirmed,
        (Action::Reject, Verdict::Agree) | (Action::Confirm, Verdict::Disagree) => EventStatus::Rejected,
        (Action::RequestInfo, _) => EventStatus::InfoRequested,
    }
}

/// After a request for information the follow-up proposal must settle the
/// event, so it picks greedily between confirm and reject.
pub fn follow_up_action(table: &QTable, state: Severity) -> Action {
    table.greedy_among(state, &[Action::Confirm, Action::Reject])
}
