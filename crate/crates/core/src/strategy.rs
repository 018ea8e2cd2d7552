//! Feedback impulse strategies: pure rules `(t, x) -> optional action`.
//!
//! Feedback rules depend on the past only through the current state, so
//! the induced controls are nonanticipative by construction. Strategies
//! are built from solved policies (nearest node in time and space, labels
//! taken verbatim), and support the restriction and concatenation
//! combinators used by the dynamic programming checks.

use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{ActionGrid, Axis};
use crate::intervention::{PolicySlice, Regime};
use crate::solver::SpaceTimeGrid;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("cannot concatenate strategies owned by different players")]
    PlayerMismatch,
    #[error("restriction window [{start}, {end}] is empty")]
    EmptyWindow { start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    I,
    II,
}

/// Closed time window `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictionWindow {
    pub start: f64,
    pub end: f64,
}

impl RestrictionWindow {
    pub fn new(start: f64, end: f64) -> Result<Self, StrategyError> {
        if start > end {
            return Err(StrategyError::EmptyWindow { start, end });
        }
        Ok(RestrictionWindow { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Debug, Clone)]
struct PolicyLookup {
    axes: Vec<Axis>,
    times: Vec<f64>,
    slices: Vec<PolicySlice>,
    actions_i: Vec<Vec<f64>>,
    actions_ii: Vec<Vec<f64>>,
}

impl PolicyLookup {
    fn nearest_slice(&self, t: f64) -> usize {
        // Times are sorted ascending; strategy queries happen once per
        // simulation step, so this sits on the Monte Carlo hot path.
        let upper = self.times.partition_point(|&tk| tk < t);
        let mut best = upper.min(self.times.len() - 1);
        if upper > 0 && (t - self.times[upper - 1]).abs() <= (self.times[best] - t).abs() {
            best = upper - 1;
        }
        best
    }

    fn nearest_node(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (d, axis) in self.axes.iter().enumerate() {
            let u = (x[d] - axis.min) / axis.spacing();
            let i = (u.round().max(0.0) as usize).min(axis.count - 1);
            flat = flat * axis.count + i;
        }
        flat
    }

    fn query(&self, player: Player, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let slice = &self.slices[self.nearest_slice(t)];
        let node = self.nearest_node(x);
        match (player, slice.regimes[node]) {
            (Player::I, Regime::ImpulseI { action }) => Some(self.actions_i[action].clone()),
            (Player::II, Regime::ImpulseII { action }) => Some(self.actions_ii[action].clone()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Rule {
    Silent,
    /// Fires the same action at every query; test scaffolding.
    Constant(Vec<f64>),
    Policy(Arc<PolicyLookup>),
    Restricted { inner: Box<Rule>, window: RestrictionWindow },
    Concat { first: Box<Rule>, second: Box<Rule>, switch_time: f64 },
}

impl Rule {
    fn query(&self, player: Player, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            Rule::Silent => None,
            Rule::Constant(action) => Some(action.clone()),
            Rule::Policy(lookup) => lookup.query(player, t, x),
            Rule::Restricted { inner, window } => {
                if window.contains(t) {
                    inner.query(player, t, x)
                } else {
                    None
                }
            }
            Rule::Concat { first, second, switch_time } => {
                if t < *switch_time {
                    first.query(player, t, x)
                } else {
                    second.query(player, t, x)
                }
            }
        }
    }
}

/// A feedback strategy for one player. The rule is a pure function of
/// `(t, x)`; strategies are immutable and cheap to share.
#[derive(Debug, Clone)]
pub struct FeedbackStrategy {
    pub player: Player,
    /// Hash of the source policy, recorded in simulation outputs.
    pub source_hash: Option<String>,
    rule: Rule,
}

impl FeedbackStrategy {
    pub fn silent(player: Player) -> Self {
        FeedbackStrategy { player, source_hash: None, rule: Rule::Silent }
    }

    pub fn constant(player: Player, action: Vec<f64>) -> Self {
        FeedbackStrategy { player, source_hash: None, rule: Rule::Constant(action) }
    }

    pub fn action_at(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        self.rule.query(self.player, t, x)
    }
}

/// Content hash of a policy stack, for provenance tracking.
pub fn policy_hash(policies: &[PolicySlice]) -> String {
    let mut hasher = Sha256::new();
    for slice in policies {
        hasher.update(slice.time.to_le_bytes());
        for regime in &slice.regimes {
            hasher.update([regime.label()]);
            let idx = regime.action_index().map_or(u32::MAX, |i| i as u32);
            hasher.update(idx.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Checks that every action index attached to a regime points into the
/// corresponding action list; policies read from external bundles pass
/// through here before a strategy is built on top of them.
pub fn validate_policy_actions(
    policies: &[PolicySlice],
    actions: &ActionGrid,
) -> Result<(), String> {
    for (k, slice) in policies.iter().enumerate() {
        for (node, regime) in slice.regimes.iter().enumerate() {
            let (limit, list) = match regime {
                Regime::Continue => continue,
                Regime::ImpulseI { action } => (actions.player_i.len(), action),
                Regime::ImpulseII { action } => (actions.player_ii.len(), action),
            };
            if *list >= limit {
                return Err(format!(
                    "policy slice {k} node {node}: action index {list} out of range ({limit} actions)"
                ));
            }
        }
    }
    Ok(())
}

/// Builds the feedback strategy a player reads off a solved policy stack:
/// nearest time slice, nearest space node, fire the attached action iff
/// the node's regime belongs to the player.
pub fn from_policy(
    policies: &[PolicySlice],
    grid: &SpaceTimeGrid,
    actions: &ActionGrid,
    player: Player,
) -> FeedbackStrategy {
    let lookup = PolicyLookup {
        axes: grid.space.clone(),
        times: policies.iter().map(|p| p.time).collect(),
        slices: policies.to_vec(),
        actions_i: actions.player_i.clone(),
        actions_ii: actions.player_ii.clone(),
    };
    FeedbackStrategy {
        player,
        source_hash: Some(policy_hash(policies)),
        rule: Rule::Policy(Arc::new(lookup)),
    }
}

/// Silences the strategy outside the window.
pub fn restrict(strategy: &FeedbackStrategy, window: RestrictionWindow) -> FeedbackStrategy {
    FeedbackStrategy {
        player: strategy.player,
        source_hash: strategy.source_hash.clone(),
        rule: Rule::Restricted { inner: Box::new(strategy.rule.clone()), window },
    }
}

/// Routes queries before `switch_time` to `first`, at or after to `second`.
pub fn concat(
    first: &FeedbackStrategy,
    second: &FeedbackStrategy,
    switch_time: f64,
) -> Result<FeedbackStrategy, StrategyError> {
    if first.player != second.player {
        return Err(StrategyError::PlayerMismatch);
    }
    Ok(FeedbackStrategy {
        player: first.player,
        source_hash: first.source_hash.clone().or_else(|| second.source_hash.clone()),
        rule: Rule::Concat {
            first: Box::new(first.rule.clone()),
            second: Box::new(second.rule.clone()),
            switch_time,
        },
    })
}
