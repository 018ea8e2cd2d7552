//! Euler-Maruyama simulation of the impulse-controlled state equation and
//! Monte Carlo evaluation of the gain functional.
//!
//! Impulses are realized on the step lattice: at each step boundary the
//! player-II strategy is queried first, then player I. When both fire in
//! the same step only player II's displacement is applied; player I's event
//! is recorded uncharged and costs nothing. Brownian increments are drawn
//! once per step and recorded so a path can be replayed under different
//! strategy pairs against common noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::problem::GameSpec;
use crate::strategy::{FeedbackStrategy, Player};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("player {player:?} exceeded the impulse cap of {cap} at t={time}")]
    ImpulseCapExceeded { player: Player, cap: usize, time: f64 },
    #[error("state became non-finite at step {step} (t={time}); coefficients may blow up")]
    NonFiniteState { step: usize, time: f64 },
    #[error("coefficient evaluation failed at t={time}: {source}")]
    Eval {
        time: f64,
        #[source]
        source: ExprError,
    },
    #[error("estimate needs at least 2 paths, got {0}")]
    TooFewPaths(usize),
    #[error("strategy for player {expected:?} was built for player {got:?}")]
    WrongPlayer { expected: Player, got: Player },
}

/// One realized impulse. `charged = false` marks a player-I action that
/// coincided with a player-II action in the same step: its displacement was
/// discarded and its cost is not charged.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseEvent {
    pub time: f64,
    pub player: Player,
    pub action: Vec<f64>,
    pub charged: bool,
}

/// One simulated trajectory. `states[k]` is the state at `t0 + k delta`
/// after the impulses of that boundary were applied; the last entry is the
/// terminal state (no impulses are applied at the horizon itself).
#[derive(Debug, Clone)]
pub struct SimPath {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub states: Vec<Vec<f64>>,
    pub events: Vec<ImpulseEvent>,
    pub seed: u64,
    /// Standard-normal increments, one row per step.
    pub noise: Vec<Vec<f64>>,
}

impl SimPath {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.delta
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("paths have at least the initial state")
    }
}

/// Monte Carlo estimate of the expected gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub delta: f64,
}

/// Heuristic per-path impulse cap enforcing finite activity at desk scale:
/// roughly 10 T sup|V| / (cheapest impulse), never below 16.
pub fn default_impulse_cap(spec: &GameSpec) -> Result<usize, SimError> {
    let mut sup_g = 0.0f64;
    let mut sup_f = 0.0f64;
    let probes = 33usize;
    let mut x = vec![0.0; spec.dim];
    for i in 0..probes {
        let frac = i as f64 / (probes - 1) as f64;
        for (d, (lo, hi)) in spec.domain.iter().enumerate() {
            x[d] = lo + frac * (hi - lo);
        }
        for t in [0.0, spec.horizon] {
            sup_f = sup_f.max(
                spec.running_gain_at(t, &x)
                    .map_err(|e| SimError::Eval { time: t, source: e })?
                    .abs(),
            );
        }
        sup_g = sup_g.max(
            spec.terminal_payoff_at(&x)
                .map_err(|e| SimError::Eval { time: spec.horizon, source: e })?
                .abs(),
        );
    }
    let grid = spec
        .actions
        .build_grid()
        .map_err(|e| SimError::Eval { time: 0.0, source: ExprError::Domain { message: e.to_string() } })?;
    let mut min_cost = f64::INFINITY;
    for a in &grid.player_i {
        min_cost = min_cost.min(
            spec.costs
                .cost_i_at(0.0, a)
                .map_err(|e| SimError::Eval { time: 0.0, source: e })?,
        );
    }
    for a in &grid.player_ii {
        min_cost = min_cost.min(
            spec.costs
                .cost_ii_at(0.0, a)
                .map_err(|e| SimError::Eval { time: 0.0, source: e })?,
        );
    }
    let bound = sup_g + spec.horizon * sup_f + 1.0;
    let cap = (10.0 * spec.horizon * bound / min_cost.max(1e-6)).ceil() as usize;
    Ok(cap.max(16))
}

/// Simulates one path of the controlled state equation from `(t0, x0)`
/// until the horizon with step `delta`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    spec: &GameSpec,
    strat_i: &FeedbackStrategy,
    strat_ii: &FeedbackStrategy,
    t0: f64,
    x0: &[f64],
    delta: f64,
    seed: u64,
    max_impulses: usize,
) -> Result<SimPath, SimError> {
    simulate_path_until(spec, strat_i, strat_ii, t0, x0, spec.horizon, delta, seed, max_impulses)
}

/// Simulation stopping at `t_end <= T`; the dynamic programming checks
/// integrate only up to an intermediate time.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path_until(
    spec: &GameSpec,
    strat_i: &FeedbackStrategy,
    strat_ii: &FeedbackStrategy,
    t0: f64,
    x0: &[f64],
    t_end: f64,
    delta: f64,
    seed: u64,
    max_impulses: usize,
) -> Result<SimPath, SimError> {
    if strat_i.player != Player::I {
        return Err(SimError::WrongPlayer { expected: Player::I, got: strat_i.player });
    }
    if strat_ii.player != Player::II {
        return Err(SimError::WrongPlayer { expected: Player::II, got: strat_ii.player });
    }
    assert!(delta > 0.0, "step size must be positive");
    assert!(max_impulses >= 1, "impulse cap must be at least 1");
    let span = t_end - t0;
    assert!(span >= 0.0, "t_end must not precede t0");
    let steps = (span / delta).round() as usize;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(steps + 1);
    let mut noise = Vec::with_capacity(steps);
    let mut events = Vec::new();
    let mut charged_i = 0usize;
    let mut charged_ii = 0usize;
    let sqrt_delta = delta.sqrt();

    for step in 0..steps {
        let t = t0 + step as f64 * delta;
        // Player II first; if both fire, only II's displacement applies.
        let act_ii = strat_ii.action_at(t, &x);
        let act_i = strat_i.action_at(t, &x);
        match (act_i, act_ii) {
            (Some(y), Some(z)) => {
                events.push(ImpulseEvent { time: t, player: Player::I, action: y, charged: false });
                events.push(ImpulseEvent {
                    time: t,
                    player: Player::II,
                    action: z.clone(),
                    charged: true,
                });
                charged_ii += 1;
                for (xd, zd) in x.iter_mut().zip(&z) {
                    *xd += zd;
                }
            }
            (Some(y), None) => {
                events.push(ImpulseEvent {
                    time: t,
                    player: Player::I,
                    action: y.clone(),
                    charged: true,
                });
                charged_i += 1;
                for (xd, yd) in x.iter_mut().zip(&y) {
                    *xd += yd;
                }
            }
            (None, Some(z)) => {
                events.push(ImpulseEvent {
                    time: t,
                    player: Player::II,
                    action: z.clone(),
                    charged: true,
                });
                charged_ii += 1;
                for (xd, zd) in x.iter_mut().zip(&z) {
                    *xd += zd;
                }
            }
            (None, None) => {}
        }
        if charged_i > max_impulses {
            return Err(SimError::ImpulseCapExceeded { player: Player::I, cap: max_impulses, time: t });
        }
        if charged_ii > max_impulses {
            return Err(SimError::ImpulseCapExceeded { player: Player::II, cap: max_impulses, time: t });
        }
        states.push(x.clone());

        // Common noise: one draw per step regardless of impulses.
        let xi: Vec<f64> = (0..spec.noise_dim).map(|_| rng.sample(StandardNormal)).collect();
        let b = spec.drift_at(t, &x).map_err(|e| SimError::Eval { time: t, source: e })?;
        let sigma = spec.diffusion_at(t, &x).map_err(|e| SimError::Eval { time: t, source: e })?;
        for d in 0..spec.dim {
            let mut dw = 0.0;
            for j in 0..spec.noise_dim {
                dw += sigma[d][j] * xi[j];
            }
            x[d] += b[d] * delta + dw * sqrt_delta;
        }
        noise.push(xi);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { step, time: t + delta });
        }
    }
    states.push(x);

    Ok(SimPath { t0, x0: x0.to_vec(), delta, states, events, seed, noise })
}

/// Realized gain of one path: left-endpoint quadrature of the running gain,
/// plus player-II impulse costs (gains for player I), minus charged
/// player-I impulse costs, plus the raw terminal payoff.
pub fn gain_functional(path: &SimPath, spec: &GameSpec) -> Result<f64, SimError> {
    let mut total = 0.0;
    for k in 0..path.steps() {
        let t = path.time_at(k);
        total += path.delta
            * spec
                .running_gain_at(t, &path.states[k])
                .map_err(|e| SimError::Eval { time: t, source: e })?;
    }
    for event in &path.events {
        match event.player {
            Player::II => {
                total += spec
                    .costs
                    .cost_ii_at(event.time, &event.action)
                    .map_err(|e| SimError::Eval { time: event.time, source: e })?;
            }
            Player::I if event.charged => {
                total -= spec
                    .costs
                    .cost_i_at(event.time, &event.action)
                    .map_err(|e| SimError::Eval { time: event.time, source: e })?;
            }
            Player::I => {}
        }
    }
    total += spec
        .terminal_payoff_at(path.final_state())
        .map_err(|e| SimError::Eval { time: spec.horizon, source: e })?;
    Ok(total)
}

/// Number of charged impulses of `player` with time in `[a, b]`.
pub fn impulse_count(path: &SimPath, player: Player, window: (f64, f64)) -> usize {
    path.events
        .iter()
        .filter(|e| e.player == player && e.charged && e.time >= window.0 && e.time <= window.1)
        .count()
}

/// Deterministic per-path seeds derived from one master seed.
pub fn split_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut seeder = ChaCha12Rng::seed_from_u64(master);
    (0..count).map(|_| seeder.random()).collect()
}

/// Monte Carlo estimate of the expected gain under a strategy pair. Any
/// invalid path aborts the estimate with its diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn estimate_value(
    spec: &GameSpec,
    strat_i: &FeedbackStrategy,
    strat_ii: &FeedbackStrategy,
    t0: f64,
    x0: &[f64],
    delta: f64,
    n_paths: usize,
    seed: u64,
    max_impulses: usize,
) -> Result<McEstimate, SimError> {
    if n_paths < 2 {
        return Err(SimError::TooFewPaths(n_paths));
    }
    let seeds = split_seeds(seed, n_paths);
    let mut gains = Vec::with_capacity(n_paths);
    for path_seed in seeds {
        let path =
            simulate_path(spec, strat_i, strat_ii, t0, x0, delta, path_seed, max_impulses)?;
        gains.push(gain_functional(&path, spec)?);
    }
    let mean = gains.iter().sum::<f64>() / n_paths as f64;
    let var = gains.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n_paths - 1) as f64;
    let stderr = (var / n_paths as f64).sqrt();
    Ok(McEstimate { mean, stderr, n_paths, seed, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_problem, LoadOptions};
    use crate::strategy::{restrict, FeedbackStrategy, RestrictionWindow};

    fn spec_with(b: &str, sigma: &str, f: &str, g: &str) -> GameSpec {
        let config = format!(
            "[horizon]\nT = 1\n[dynamics]\nn = 1\nb = \"{b}\"\nsigma = \"{sigma}\"\n\
             [gains]\nf = \"{f}\"\ng = \"{g}\"\n[costs]\nc = \"2\"\nchi = \"1\"\nh_min = 0.5\n\
             [actions]\nU = \"line\"\nV = \"line\"\nr_max = 4\nm_imp = 5\n\
             [domain]\nx_min = -10\nx_max = 10\n"
        );
        load_problem(&config, &LoadOptions::default()).unwrap()
    }

    fn silent_pair() -> (FeedbackStrategy, FeedbackStrategy) {
        (FeedbackStrategy::silent(Player::I), FeedbackStrategy::silent(Player::II))
    }

    #[test]
    fn frozen_dynamics_hold_still() {
        let spec = spec_with("0", "0", "0", "0");
        let (si, sii) = silent_pair();
        let path = simulate_path(&spec, &si, &sii, 0.0, &[3.0], 0.125, 7, 16).unwrap();
        assert_eq!(path.steps(), 8);
        assert!(path.states.iter().all(|s| s == &vec![3.0]));
        assert!(path.events.is_empty());
    }

    #[test]
    fn single_player_ii_jump() {
        let spec = spec_with("0", "0", "0", "0");
        let si = FeedbackStrategy::silent(Player::I);
        let jump = FeedbackStrategy::constant(Player::II, vec![2.0]);
        let sii = restrict(&jump, RestrictionWindow::new(0.0, 0.0).unwrap());
        let path = simulate_path(&spec, &si, &sii, 0.0, &[3.0], 0.25, 7, 16).unwrap();
        assert!(path.states.iter().all(|s| s == &vec![5.0]));
        assert_eq!(path.events.len(), 1);
        assert_eq!(path.events[0].player, Player::II);
        assert!(path.events[0].charged);
    }

    #[test]
    fn simultaneous_impulses_yield_to_player_ii() {
        let spec = spec_with("0", "0", "0", "0");
        let fire_i = FeedbackStrategy::constant(Player::I, vec![1.0]);
        let si = restrict(&fire_i, RestrictionWindow::new(0.0, 0.0).unwrap());
        let fire_ii = FeedbackStrategy::constant(Player::II, vec![2.0]);
        let sii = restrict(&fire_ii, RestrictionWindow::new(0.0, 0.0).unwrap());
        let path = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.25, 7, 16).unwrap();
        // Only player II's displacement applies.
        assert!(path.states.iter().all(|s| s == &vec![2.0]));
        assert_eq!(path.events.len(), 2);
        let ev_i = path.events.iter().find(|e| e.player == Player::I).unwrap();
        let ev_ii = path.events.iter().find(|e| e.player == Player::II).unwrap();
        assert!(!ev_i.charged);
        assert!(ev_ii.charged);
        // Charged counts per the simultaneity discard rule.
        assert_eq!(impulse_count(&path, Player::I, (0.0, 1.0)), 0);
        assert_eq!(impulse_count(&path, Player::II, (0.0, 1.0)), 1);
    }

    #[test]
    fn gain_of_pure_running_reward() {
        let spec = spec_with("0", "0", "1", "0");
        let (si, sii) = silent_pair();
        let path = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.25, 7, 16).unwrap();
        assert_eq!(gain_functional(&path, &spec).unwrap(), 1.0);
    }

    #[test]
    fn gain_adds_player_ii_cost_as_gain() {
        let spec = spec_with("0", "0", "1", "0");
        let si = FeedbackStrategy::silent(Player::I);
        let jump = FeedbackStrategy::constant(Player::II, vec![2.0]);
        let sii = restrict(&jump, RestrictionWindow::new(0.25, 0.25).unwrap());
        let path = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.25, 7, 16).unwrap();
        assert_eq!(gain_functional(&path, &spec).unwrap(), 2.0);
    }

    #[test]
    fn gain_sums_all_four_terms() {
        // Events: I alone at t=0 (charged, -2), I+II at t=0.25 (I uncharged,
        // II +1), II alone at t=0.5 (+1); f = 1 contributes 1; g = 0.
        let spec = spec_with("0", "0", "1", "0");
        let fire_i = FeedbackStrategy::constant(Player::I, vec![1.0]);
        let si = restrict(&fire_i, RestrictionWindow::new(0.0, 0.25).unwrap());
        let fire_ii = FeedbackStrategy::constant(Player::II, vec![2.0]);
        let sii = restrict(&fire_ii, RestrictionWindow::new(0.25, 0.5).unwrap());
        let path = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.25, 7, 16).unwrap();
        let charged_i: Vec<_> =
            path.events.iter().filter(|e| e.player == Player::I && e.charged).collect();
        let uncharged_i: Vec<_> =
            path.events.iter().filter(|e| e.player == Player::I && !e.charged).collect();
        let charged_ii: Vec<_> =
            path.events.iter().filter(|e| e.player == Player::II && e.charged).collect();
        assert_eq!((charged_i.len(), uncharged_i.len(), charged_ii.len()), (1, 1, 2));
        assert_eq!(gain_functional(&path, &spec).unwrap(), 1.0 - 2.0 + 1.0 + 1.0);
    }

    #[test]
    fn deterministic_estimate_has_zero_stderr() {
        let spec = spec_with("0", "0", "1", "0");
        let (si, sii) = silent_pair();
        let est = estimate_value(&spec, &si, &sii, 0.0, &[0.0], 0.25, 16, 42, 16).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn martingale_mean_stays_at_start() {
        // f = 0, g(x) = x, b = 0: E[g(X_T)] = x0.
        let spec = spec_with("0", "0.5", "0", "x1");
        let (si, sii) = silent_pair();
        let est = estimate_value(&spec, &si, &sii, 0.0, &[1.5], 0.0625, 4000, 42, 16).unwrap();
        assert!(
            (est.mean - 1.5).abs() <= 3.0 * est.stderr,
            "mean {} stderr {}",
            est.mean,
            est.stderr
        );
        assert!(est.stderr > 0.0);
    }

    #[test]
    fn estimates_are_reproducible_bitwise() {
        let spec = spec_with("0.1", "0.5", "x1", "x1^2/100");
        let (si, sii) = silent_pair();
        let a = estimate_value(&spec, &si, &sii, 0.0, &[0.5], 0.125, 64, 9, 16).unwrap();
        let b = estimate_value(&spec, &si, &sii, 0.0, &[0.5], 0.125, 64, 9, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replay_under_different_strategies_shares_noise() {
        let spec = spec_with("0", "0.5", "0", "0");
        let (si, sii) = silent_pair();
        let base = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.125, 3, 16).unwrap();
        let jump = FeedbackStrategy::constant(Player::II, vec![2.0]);
        let sii_jump = restrict(&jump, RestrictionWindow::new(0.0, 0.0).unwrap());
        let jumped = simulate_path(&spec, &si, &sii_jump, 0.0, &[0.0], 0.125, 3, 16).unwrap();
        assert_eq!(base.noise, jumped.noise);
    }

    #[test]
    fn quadrature_error_shrinks_linearly() {
        // f(t) = t, deterministic path: J(delta) = (T^2 - T delta)/2, so
        // halving delta moves J by delta/4 <= sup|f| delta.
        let spec = spec_with("0", "0", "t", "0");
        let (si, sii) = silent_pair();
        let coarse = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.25, 7, 16).unwrap();
        let fine = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.125, 7, 16).unwrap();
        let j_coarse = gain_functional(&coarse, &spec).unwrap();
        let j_fine = gain_functional(&fine, &spec).unwrap();
        assert!((j_fine - j_coarse).abs() <= 1.0 * 0.25 + 1e-15);
        assert!(((0.5 - 0.25 / 2.0) - j_coarse).abs() < 1e-15);
    }

    #[test]
    fn impulse_cap_is_enforced() {
        let spec = spec_with("0", "0", "0", "0");
        let si = FeedbackStrategy::constant(Player::I, vec![0.5]);
        let sii = FeedbackStrategy::silent(Player::II);
        let err = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.0625, 7, 3);
        assert!(matches!(err, Err(SimError::ImpulseCapExceeded { player: Player::I, .. })));
    }

    #[test]
    fn impulse_count_windows() {
        let spec = spec_with("0", "0", "0", "0");
        let (si, sii) = silent_pair();
        let empty = simulate_path(&spec, &si, &sii, 0.0, &[0.0], 0.25, 7, 16).unwrap();
        assert_eq!(impulse_count(&empty, Player::I, (0.0, 1.0)), 0);

        // Events at 0.1, 0.5, 0.9 for player II (delta = 0.1 lattice).
        let jump = FeedbackStrategy::constant(Player::II, vec![1.0]);
        let w = |a, b| RestrictionWindow::new(a, b).unwrap();
        let s1 = restrict(&jump, w(0.1, 0.1));
        let s2 = restrict(&jump, w(0.5, 0.5));
        let s3 = restrict(&jump, w(0.9, 0.9));
        let s12 = crate::strategy::concat(&s1, &s2, 0.3).unwrap();
        let s123 = crate::strategy::concat(&s12, &s3, 0.7).unwrap();
        let path = simulate_path(&spec, &si, &s123, 0.0, &[0.0], 0.1, 7, 16).unwrap();
        assert_eq!(path.events.len(), 3);
        assert_eq!(impulse_count(&path, Player::II, (0.2, 1.0)), 2);
    }
}
