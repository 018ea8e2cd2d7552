//! Nonlocal intervention operators and the implicit-obstacle fixed point.
//!
//! The two operators evaluate the best single impulse for each player on a
//! grid function: the sup-side operator takes `max_y V(x + y) - c(t, y)`
//! over the player-I action grid, the inf-side operator takes
//! `min_z V(x + z) + chi(t, z)` over the player-II grid. Displacements are
//! resolved by multilinear interpolation; actions that leave the truncated
//! space domain are inadmissible at that node.
//!
//! `qvi_fixed_point` resolves the implicit double obstacle at one time
//! level: starting from the continuation value `W`, it iterates
//! `V <- min(HinfV, max(W, HsupV))` (player-II priority) until the sup-norm
//! change vanishes, and labels every node with the regime that supports the
//! fixed point.

use thiserror::Error;

use crate::expr::ExprError;
use crate::grid::{ActionGrid, GridFunction};
use crate::problem::CostSpec;

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error("cost evaluation failed for action {action:?} at t={time}: {source}")]
    CostEval {
        time: f64,
        action: Vec<f64>,
        #[source]
        source: ExprError,
    },
    #[error("no admissible action at node {node}; the zero action should always be admissible")]
    NoAdmissibleAction { node: usize },
    #[error(
        "obstacle fixed point did not converge after {iterations} iterations \
         (last change {last_change:.3e}, tol {tol:.3e})"
    )]
    NonConvergence { iterations: usize, last_change: f64, tol: f64 },
}

/// Per-node best action index for one operator application.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgField {
    pub best: Vec<Option<usize>>,
}

/// Regime label of one node at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Continue,
    /// Player I impulses; the index points into the player-I action list.
    ImpulseI { action: usize },
    /// Player II impulses; the index points into the player-II action list.
    ImpulseII { action: usize },
}

impl Regime {
    /// Numeric label used by exports: 0 continue, 1 player I, 2 player II.
    pub fn label(&self) -> u8 {
        match self {
            Regime::Continue => 0,
            Regime::ImpulseI { .. } => 1,
            Regime::ImpulseII { .. } => 2,
        }
    }

    pub fn action_index(&self) -> Option<usize> {
        match self {
            Regime::Continue => None,
            Regime::ImpulseI { action } | Regime::ImpulseII { action } => Some(*action),
        }
    }
}

/// Per-node regime labels at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySlice {
    pub time: f64,
    pub regimes: Vec<Regime>,
}

/// Order of the obstacle projection. `InfPriority` resolves conflicts in
/// favor of player II (the game's simultaneity rule); `SupPriority` is the
/// mirrored nesting used by the value-gap diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nesting {
    #[default]
    InfPriority,
    SupPriority,
}

enum Side {
    Sup,
    Inf,
}

fn evaluate_costs(
    costs: &CostSpec,
    time: f64,
    actions: &[Vec<f64>],
    side: &Side,
) -> Result<Vec<f64>, InterventionError> {
    actions
        .iter()
        .map(|a| {
            match side {
                Side::Sup => costs.cost_i_at(time, a),
                Side::Inf => costs.cost_ii_at(time, a),
            }
            .map_err(|e| InterventionError::CostEval {
                time,
                action: a.clone(),
                source: e,
            })
        })
        .collect()
}

fn apply_side(
    v: &GridFunction,
    action_values: &[Vec<f64>],
    action_costs: &[f64],
    side: Side,
) -> Result<(GridFunction, ArgField), InterventionError> {
    let dim = v.dim();
    let mut out = Vec::with_capacity(v.node_count());
    let mut best_idx = Vec::with_capacity(v.node_count());
    let mut coords = vec![0.0; dim];
    let mut target = vec![0.0; dim];
    for node in 0..v.node_count() {
        v.node_coords(node, &mut coords);
        let mut best: Option<(f64, usize)> = None;
        for (a_idx, action) in action_values.iter().enumerate() {
            for d in 0..dim {
                target[d] = coords[d] + action[d];
            }
            let Some(interp) = v.interp(&target) else { continue };
            let candidate = match side {
                Side::Sup => interp - action_costs[a_idx],
                Side::Inf => interp + action_costs[a_idx],
            };
            let better = match best {
                None => true,
                Some((value, _)) => match side {
                    Side::Sup => candidate > value,
                    Side::Inf => candidate < value,
                },
            };
            if better {
                best = Some((candidate, a_idx));
            }
        }
        let (value, idx) = best.ok_or(InterventionError::NoAdmissibleAction { node })?;
        out.push(value);
        best_idx.push(Some(idx));
    }
    let field = GridFunction::new(v.axes().to_vec(), out, v.time)
        .expect("operator output has the input's shape");
    Ok((field, ArgField { best: best_idx }))
}

/// Best single player-I impulse: `max_y V(x + y) - c(t, y)` with `t` taken
/// from the grid function's stamp. Ties break toward the smallest action
/// index (the zero action first).
pub fn h_sup_c(
    v: &GridFunction,
    costs: &CostSpec,
    actions: &ActionGrid,
) -> Result<(GridFunction, ArgField), InterventionError> {
    let action_costs = evaluate_costs(costs, v.time, &actions.player_i, &Side::Sup)?;
    apply_side(v, &actions.player_i, &action_costs, Side::Sup)
}

/// Best single player-II impulse: `min_z V(x + z) + chi(t, z)`.
pub fn h_inf_chi(
    v: &GridFunction,
    costs: &CostSpec,
    actions: &ActionGrid,
) -> Result<(GridFunction, ArgField), InterventionError> {
    let action_costs = evaluate_costs(costs, v.time, &actions.player_ii, &Side::Inf)?;
    apply_side(v, &actions.player_ii, &action_costs, Side::Inf)
}

/// Convergence data for one fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointStats {
    /// Total update passes executed.
    pub iterations: usize,
    /// First pass whose sup-norm change fell below `tol`.
    pub passes_to_tol: usize,
    pub last_change: f64,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub value: GridFunction,
    pub policy: PolicySlice,
    pub stats: FixedPointStats,
}

/// Default fixed-point tolerance, scaled by the data.
pub fn default_tol(w: &GridFunction) -> f64 {
    1e-9 * (1.0 + w.sup_norm())
}

pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Extra passes allowed after the change drops below `tol`, chasing an
/// exactly stationary point. Exact stationarity makes downstream
/// order-comparison tests sharp; the budget guards against dithering.
const EXACT_TAIL_BUDGET: usize = 64;

pub fn qvi_fixed_point(
    w: &GridFunction,
    costs: &CostSpec,
    actions: &ActionGrid,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint, InterventionError> {
    qvi_fixed_point_from(w, costs, actions, tol, max_iter, Nesting::InfPriority, None)
}

/// Fixed point with explicit nesting and optional starting iterate.
pub fn qvi_fixed_point_from(
    w: &GridFunction,
    costs: &CostSpec,
    actions: &ActionGrid,
    tol: f64,
    max_iter: usize,
    nesting: Nesting,
    init: Option<&GridFunction>,
) -> Result<FixedPoint, InterventionError> {
    let sup_costs = evaluate_costs(costs, w.time, &actions.player_i, &Side::Sup)?;
    let inf_costs = evaluate_costs(costs, w.time, &actions.player_ii, &Side::Inf)?;

    let mut v = init.unwrap_or(w).clone();
    v.time = w.time;
    let mut iterations = 0;
    let mut passes_to_tol = 0;
    let mut tail = 0;
    let mut last_change;
    loop {
        iterations += 1;
        // Jacobi update: both obstacles from the same previous iterate.
        let (hs, _) = apply_side(&v, &actions.player_i, &sup_costs, Side::Sup)?;
        let (hi, _) = apply_side(&v, &actions.player_ii, &inf_costs, Side::Inf)?;
        let mut change = 0.0f64;
        let mut next = v.clone();
        for node in 0..w.node_count() {
            let projected = match nesting {
                Nesting::InfPriority => {
                    hi.values[node].min(w.values[node].max(hs.values[node]))
                }
                Nesting::SupPriority => {
                    hs.values[node].max(w.values[node].min(hi.values[node]))
                }
            };
            change = change.max((projected - v.values[node]).abs());
            next.values[node] = projected;
        }
        v = next;
        last_change = change;
        if change < tol && passes_to_tol == 0 {
            passes_to_tol = iterations;
        }
        if change == 0.0 {
            break;
        }
        if change < tol {
            tail += 1;
            if tail >= EXACT_TAIL_BUDGET {
                break;
            }
        } else {
            tail = 0;
            passes_to_tol = 0;
        }
        if iterations >= max_iter {
            return Err(InterventionError::NonConvergence {
                iterations,
                last_change: change,
                tol,
            });
        }
    }
    if passes_to_tol == 0 {
        passes_to_tol = iterations;
    }

    // Label regimes from the obstacles recomputed at the fixed point.
    let (hs, arg_sup) = apply_side(&v, &actions.player_i, &sup_costs, Side::Sup)?;
    let (hi, arg_inf) = apply_side(&v, &actions.player_ii, &inf_costs, Side::Inf)?;
    let mut regimes = Vec::with_capacity(w.node_count());
    for node in 0..w.node_count() {
        let upper = hi.values[node];
        let lower = hs.values[node];
        let base = w.values[node];
        let regime = match nesting {
            Nesting::InfPriority => {
                if upper < base.max(lower) - tol {
                    Regime::ImpulseII { action: arg_inf.best[node].expect("nonempty grid") }
                } else if lower > base + tol {
                    Regime::ImpulseI { action: arg_sup.best[node].expect("nonempty grid") }
                } else {
                    Regime::Continue
                }
            }
            Nesting::SupPriority => {
                if lower > base.min(upper) + tol {
                    Regime::ImpulseI { action: arg_sup.best[node].expect("nonempty grid") }
                } else if upper < base - tol {
                    Regime::ImpulseII { action: arg_inf.best[node].expect("nonempty grid") }
                } else {
                    Regime::Continue
                }
            }
        };
        regimes.push(regime);
    }

    Ok(FixedPoint {
        policy: PolicySlice { time: v.time, regimes },
        value: v,
        stats: FixedPointStats { iterations, passes_to_tol, last_change },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, state_vars};
    use crate::grid::Axis;
    use proptest::prelude::*;

    fn const_costs(c: &str, chi: &str) -> CostSpec {
        let vars = state_vars(1);
        CostSpec {
            cost_i: parse_expr(c, &vars).unwrap(),
            cost_ii: parse_expr(chi, &vars).unwrap(),
            h_min: 0.5,
        }
    }

    fn actions_1d(vals: &[f64]) -> ActionGrid {
        let list: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
        ActionGrid::new(
            crate::grid::order_actions(list.clone()),
            crate::grid::order_actions(list),
        )
        .unwrap()
    }

    fn grid_on(min: f64, max: f64, count: usize, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::tabulate(vec![Axis::new(min, max, count).unwrap()], 0.0, |x| f(x[0]))
    }

    #[test]
    fn sup_of_constant_field() {
        let v = grid_on(-5.0, 5.0, 11, |_| 5.0);
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[-1.0, 0.0, 1.0]);
        let (h, arg) = h_sup_c(&v, &costs, &actions).unwrap();
        assert!(h.values.iter().all(|&x| x == 3.0));
        // Smallest-index tie-break selects the zero action everywhere.
        assert!(arg.best.iter().all(|&i| i == Some(0)));
    }

    #[test]
    fn sup_with_linear_field_and_matching_cost() {
        // V(x) = x, c(t,y) = 1 + |y| over the nonnegative cone: the slope
        // cancels the cost growth, so the sup is x - 1 at every node.
        let v = grid_on(-10.0, 10.0, 21, |x| x);
        let vars = state_vars(1);
        let costs = CostSpec {
            cost_i: parse_expr("1 + abs(x1)", &vars).unwrap(),
            cost_ii: parse_expr("1", &vars).unwrap(),
            h_min: 0.1,
        };
        let actions = actions_1d(&[0.0, 0.5, 1.0, 1.5, 2.0]);
        let (h, _) = h_sup_c(&v, &costs, &actions).unwrap();
        let mut coords = [0.0];
        for node in 0..v.node_count() {
            v.node_coords(node, &mut coords);
            assert!(
                (h.values[node] - (coords[0] - 1.0)).abs() < 1e-12,
                "node {node}: {} vs {}",
                h.values[node],
                coords[0] - 1.0
            );
        }
    }

    #[test]
    fn sup_brute_force_three_nodes() {
        let v = GridFunction::new(
            vec![Axis::new(-1.0, 1.0, 3).unwrap()],
            vec![0.0, 4.0, 1.0],
            0.0,
        )
        .unwrap();
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[0.0, 1.0]);
        let (h, arg) = h_sup_c(&v, &costs, &actions).unwrap();
        // Node -1: max(0-2, 4-2) = 2 via action +1; node 0: max(4-2, 1-2) = 2
        // via action 0; node 1: +1 exits the domain, so 1-2 = -1.
        assert_eq!(h.values, vec![2.0, 2.0, -1.0]);
        assert_eq!(arg.best, vec![Some(1), Some(0), Some(0)]);
    }

    #[test]
    fn inf_of_constant_field() {
        let v = grid_on(-5.0, 5.0, 11, |_| 5.0);
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[-1.0, 0.0, 1.0]);
        let (h, _) = h_inf_chi(&v, &costs, &actions).unwrap();
        assert!(h.values.iter().all(|&x| x == 6.0));
    }

    #[test]
    fn inf_with_action_dependent_cost_sits_at_zero() {
        let v = grid_on(-5.0, 5.0, 11, |_| 5.0);
        let vars = state_vars(1);
        let costs = CostSpec {
            cost_i: parse_expr("2", &vars).unwrap(),
            cost_ii: parse_expr("1 + abs(x1)", &vars).unwrap(),
            h_min: 0.1,
        };
        let actions = actions_1d(&[-1.0, 0.0, 1.0]);
        let (h, arg) = h_inf_chi(&v, &costs, &actions).unwrap();
        assert!(h.values.iter().all(|&x| x == 6.0));
        assert!(arg.best.iter().all(|&i| i == Some(0)));
    }

    #[test]
    fn inf_brute_force_three_nodes() {
        let v = GridFunction::new(
            vec![Axis::new(-1.0, 1.0, 3).unwrap()],
            vec![0.0, 4.0, 1.0],
            0.0,
        )
        .unwrap();
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[0.0, 1.0]);
        let (h, _) = h_inf_chi(&v, &costs, &actions).unwrap();
        // Node -1: min(0+1, 4+1) = 1; node 0: min(4+1, 1+1) = 2; node 1: 2.
        assert_eq!(h.values, vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn fixed_point_when_costs_dominate() {
        let w = grid_on(-5.0, 5.0, 11, |_| 0.0);
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[-1.0, 0.0, 1.0]);
        let fp = qvi_fixed_point(&w, &costs, &actions, 1e-10, 100).unwrap();
        assert!(fp.value.values.iter().all(|&x| x == 0.0));
        assert!(fp.policy.regimes.iter().all(|r| *r == Regime::Continue));
        assert_eq!(fp.stats.iterations, 1);
    }

    #[test]
    fn fixed_point_of_an_already_consistent_field() {
        // Oscillation below both cost floors: no impulse can pay for
        // itself, so W is already the fixed point, in one pass.
        let w = grid_on(-5.0, 5.0, 11, |x| 0.4 * (x / 5.0).tanh());
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[-2.0, 0.0, 2.0]);
        let fp = qvi_fixed_point(&w, &costs, &actions, 1e-12, 100).unwrap();
        assert_eq!(fp.value.values, w.values);
        assert_eq!(fp.stats.iterations, 1);
    }

    #[test]
    fn fixed_point_flattens_a_tall_tent() {
        // Tent of height 10 with cheap player-II impulses: the peak is
        // cut down to min over z of W(x+z) + 1.
        let w = grid_on(-15.0, 15.0, 11, |x| (10.0 - x.abs()).max(0.0));
        let costs = const_costs("2", "1");
        let step = 12.0 / 24.0;
        let vals: Vec<f64> = (-24..=24).map(|k| k as f64 * step).collect();
        let actions = actions_1d(&vals);
        let fp = qvi_fixed_point(&w, &costs, &actions, 1e-10, 1000).unwrap();
        // Frozen from the standalone oracle in tests/oracles.rs: the fixed
        // point is min(g, 1) on this lattice.
        let center = fp.value.node_count() / 2;
        assert!((fp.value.values[center] - 1.0).abs() < 1e-12);
        for node in 0..fp.value.node_count() {
            let mut x = [0.0];
            fp.value.node_coords(node, &mut x);
            let expected = (10.0 - x[0].abs()).max(0.0).min(1.0);
            assert!(
                (fp.value.values[node] - expected).abs() < 1e-12,
                "node {node} at {}: {} vs {}",
                x[0],
                fp.value.values[node],
                expected
            );
        }
        // Termination bound: ceil(osc(W)/min cost floor) + 1 = 11.
        assert!(fp.stats.passes_to_tol <= 11, "took {}", fp.stats.passes_to_tol);
        // Peak is a player-II node, flanks are continue.
        assert_eq!(fp.policy.regimes[center].label(), 2);
        assert_eq!(fp.policy.regimes[0].label(), 0);
    }

    #[test]
    fn fixed_point_obstacle_ordering_and_residual() {
        let w = grid_on(-15.0, 15.0, 31, |x| (10.0 - x.abs()).max(0.0));
        let costs = const_costs("2", "1");
        let vals: Vec<f64> = (-12..=12).map(|k| k as f64).collect();
        let actions = actions_1d(&vals);
        let tol = 1e-10;
        let fp = qvi_fixed_point(&w, &costs, &actions, tol, 1000).unwrap();
        let (hs, _) = h_sup_c(&fp.value, &costs, &actions).unwrap();
        let (hi, _) = h_inf_chi(&fp.value, &costs, &actions).unwrap();
        for node in 0..w.node_count() {
            let v = fp.value.values[node];
            // Upper obstacle always binds from above.
            assert!(v <= hi.values[node] + tol);
            // Where the upper obstacle is slack, the lower binds from below.
            if v < hi.values[node] - tol {
                assert!(v >= hs.values[node] - tol);
            }
            // Residual identity within 2 tol.
            let residual = (v - w.values[node])
                .min(v - hs.values[node])
                .max(v - hi.values[node]);
            assert!(residual.abs() <= 2.0 * tol, "node {node}: residual {residual}");
        }
    }

    #[test]
    fn non_convergence_reported() {
        let w = grid_on(-15.0, 15.0, 11, |x| (10.0 - x.abs()).max(0.0));
        let costs = const_costs("2", "1");
        let actions = actions_1d(&[-12.0, 0.0, 12.0]);
        let err = qvi_fixed_point(&w, &costs, &actions, 1e-10, 2);
        assert!(matches!(err, Err(InterventionError::NonConvergence { .. })));
    }

    #[test]
    fn two_nestings_agree_without_conflicts() {
        let w = grid_on(-15.0, 15.0, 31, |x| (10.0 - x.abs()).max(0.0));
        let costs = const_costs("2", "1");
        let vals: Vec<f64> = (-12..=12).map(|k| k as f64).collect();
        let actions = actions_1d(&vals);
        let a = qvi_fixed_point_from(
            &w, &costs, &actions, 1e-10, 1000, Nesting::InfPriority, None,
        )
        .unwrap();
        let b = qvi_fixed_point_from(
            &w, &costs, &actions, 1e-10, 1000, Nesting::SupPriority, None,
        )
        .unwrap();
        assert!(a.value.max_abs_diff(&b.value) <= 1e-9);
    }

    proptest! {
        // Both operators commute with adding a constant.
        #[test]
        fn operators_commute_with_constant_shift(
            vals in proptest::collection::vec(-5.0f64..5.0, 9),
            kappa in -10.0f64..10.0,
        ) {
            let axis = Axis::new(-4.0, 4.0, 9).unwrap();
            let v = GridFunction::new(vec![axis], vals.clone(), 0.0).unwrap();
            let shifted_vals: Vec<f64> = vals.iter().map(|x| x + kappa).collect();
            let v_shifted = GridFunction::new(vec![axis], shifted_vals, 0.0).unwrap();
            let costs = const_costs("2", "1");
            let actions = actions_1d(&[-1.5, 0.0, 1.5]);
            let eps = 1e-12 * (1.0 + kappa.abs() + v.sup_norm());

            let (hs, _) = h_sup_c(&v, &costs, &actions).unwrap();
            let (hs_shifted, _) = h_sup_c(&v_shifted, &costs, &actions).unwrap();
            let (hi, _) = h_inf_chi(&v, &costs, &actions).unwrap();
            let (hi_shifted, _) = h_inf_chi(&v_shifted, &costs, &actions).unwrap();
            for node in 0..v.node_count() {
                prop_assert!((hs_shifted.values[node] - hs.values[node] - kappa).abs() <= eps);
                prop_assert!((hi_shifted.values[node] - hi.values[node] - kappa).abs() <= eps);
            }
        }

        // For constant fields the operators reduce to the cheapest action.
        #[test]
        fn constant_field_reduces_to_cheapest_action(level in -3.0f64..3.0) {
            let v = grid_on(-5.0, 5.0, 11, |_| level);
            let vars = state_vars(1);
            let costs = CostSpec {
                cost_i: parse_expr("2 + x1^2", &vars).unwrap(),
                cost_ii: parse_expr("1 + abs(x1)", &vars).unwrap(),
                h_min: 0.1,
            };
            let actions = actions_1d(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
            let min_c = 2.0; // attained at the zero action
            let min_chi = 1.0;
            let (hs, _) = h_sup_c(&v, &costs, &actions).unwrap();
            let (hi, _) = h_inf_chi(&v, &costs, &actions).unwrap();
            for node in 0..v.node_count() {
                prop_assert!((hs.values[node] - (level - min_c)).abs() < 1e-12);
                prop_assert!((hi.values[node] - (level + min_chi)).abs() < 1e-12);
            }
        }

        // Monotonicity of the projection in the continuation value.
        #[test]
        fn fixed_point_is_monotone_in_w(
            base in proptest::collection::vec(0.0f64..4.0, 9),
            bump in proptest::collection::vec(0.0f64..2.0, 9),
        ) {
            let axis = Axis::new(-4.0, 4.0, 9).unwrap();
            let w1 = GridFunction::new(vec![axis], base.clone(), 0.0).unwrap();
            let w2_vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let w2 = GridFunction::new(vec![axis], w2_vals, 0.0).unwrap();
            let costs = const_costs("2", "1");
            let actions = actions_1d(&[-2.0, 0.0, 2.0]);
            let fp1 = qvi_fixed_point(&w1, &costs, &actions, 1e-12, 1000).unwrap();
            let fp2 = qvi_fixed_point(&w2, &costs, &actions, 1e-12, 1000).unwrap();
            for node in 0..w1.node_count() {
                prop_assert!(fp1.value.values[node] <= fp2.value.values[node]);
            }
        }
    }
}
