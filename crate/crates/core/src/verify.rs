//! Numerical exercises of the game's structural results: the obstacle
//! identity, the no-profitable-deviation reduction, the dynamic programming
//! principle at intermediate times, coincidence of the two projection
//! nestings, regularity moduli, and an exhaustive backward-induction oracle
//! for tiny lattices.
//!
//! The oracle deliberately duplicates the arithmetic in standalone scalar
//! code; an oracle that called the solver would prove nothing.

use thiserror::Error;

use crate::expr::ExprError;
use crate::grid::GridFunction;
use crate::intervention::{h_inf_chi, h_sup_c, InterventionError, PolicySlice, Regime};
use crate::problem::{validate_costs, GameSpec};
use crate::report::{CheckResult, ReportError, VerificationReport};
use crate::sim::{
    default_impulse_cap, estimate_value, simulate_path_until, split_seeds, SimError,
};
use crate::solver::{residual, solve, SolveError, SolveOptions, SpaceTimeGrid, ValueField};
use crate::strategy::{from_policy, Player};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid check input: {0}")]
    Input(String),
    #[error("oracle size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("evaluation failed at {context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Check names produced by [`run_checks`].
pub mod check_names {
    pub const STRUCTURAL_IDENTITY: &str = "structural_identity";
    pub const OBSTACLE_ORDERING: &str = "obstacle_ordering";
    pub const ONE_STEP_REDUCTION: &str = "one_step_reduction";
    pub const SOLVER_RESIDUAL: &str = "solver_residual";
    pub const VALUE_GAP: &str = "value_gap";
    pub const DPP: &str = "dpp_intermediate_time";
    pub const MC_PDE: &str = "mc_pde_consistency";
    pub const REGULARITY: &str = "regularity_moduli";
    pub const SELF_CONVERGENCE: &str = "self_convergence";
}

/// Sampled Lipschitz constant of the raw terminal payoff on the lattice.
pub fn terminal_payoff_lipschitz(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
) -> Result<f64, VerifyError> {
    let raw = crate::solver::raw_terminal_payoff(spec, grid)?;
    Ok(space_lipschitz(&raw))
}

/// Scheme-error budget constant: 5 (1 + Lip g) unless overridden.
pub fn default_budget_constant(spec: &GameSpec, grid: &SpaceTimeGrid) -> Result<f64, VerifyError> {
    Ok(5.0 * (1.0 + terminal_payoff_lipschitz(spec, grid)?))
}

fn space_lipschitz(slice: &GridFunction) -> f64 {
    let axes = slice.axes();
    let dim = axes.len();
    let mut strides = vec![1usize; dim];
    for d in (0..dim.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * axes[d + 1].count;
    }
    let mut worst = 0.0f64;
    let mut index = vec![0usize; dim];
    for node in 0..slice.node_count() {
        slice.unflatten(node, &mut index);
        for d in 0..dim {
            if index[d] + 1 < axes[d].count {
                let diff =
                    (slice.values[node + strides[d]] - slice.values[node]).abs();
                worst = worst.max(diff / axes[d].spacing());
            }
        }
    }
    worst
}

/// `max{ min[0, V - HsupV], V - HinfV } = 0` nodewise on every slice below
/// the terminal one.
pub fn check_structural_identity(
    field: &ValueField,
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    tol: f64,
) -> Result<CheckResult, VerifyError> {
    let actions = spec.actions.build_grid().map_err(|e| VerifyError::Input(e.to_string()))?;
    let mut worst = 0.0f64;
    let mut worst_at = (0usize, 0usize);
    for k in 0..grid.steps {
        let v = &field.slices[k];
        let (hs, _) = h_sup_c(v, &spec.costs, &actions)?;
        let (hi, _) = h_inf_chi(v, &spec.costs, &actions)?;
        for node in 0..v.node_count() {
            let expr = (0.0f64)
                .min(v.values[node] - hs.values[node])
                .max(v.values[node] - hi.values[node]);
            if expr.abs() > worst {
                worst = expr.abs();
                worst_at = (k, node);
            }
        }
    }
    Ok(CheckResult::new(
        check_names::STRUCTURAL_IDENTITY,
        worst <= tol,
        worst,
        tol,
        format!("worst at slice {} node {}", worst_at.0, worst_at.1),
    ))
}

/// The inf-side obstacle bounds the value from above everywhere; where it
/// is slack, the sup-side obstacle bounds from below.
pub fn check_obstacle_ordering(
    field: &ValueField,
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    tol: f64,
) -> Result<CheckResult, VerifyError> {
    let actions = spec.actions.build_grid().map_err(|e| VerifyError::Input(e.to_string()))?;
    let mut worst = 0.0f64;
    let mut worst_at = (0usize, 0usize);
    for k in 0..grid.steps {
        let v = &field.slices[k];
        let (hs, _) = h_sup_c(v, &spec.costs, &actions)?;
        let (hi, _) = h_inf_chi(v, &spec.costs, &actions)?;
        for node in 0..v.node_count() {
            let above = v.values[node] - hi.values[node] - tol;
            let mut violation = above.max(0.0);
            if v.values[node] < hi.values[node] - tol {
                let below = hs.values[node] - tol - v.values[node];
                violation = violation.max(below.max(0.0));
            }
            if violation > worst {
                worst = violation;
                worst_at = (k, node);
            }
        }
    }
    Ok(CheckResult::new(
        check_names::OBSTACLE_ORDERING,
        worst == 0.0,
        worst,
        tol,
        format!("worst at slice {} node {}", worst_at.0, worst_at.1),
    ))
}

/// No profitable single-impulse deviation: player II cannot lower the value
/// beyond `tol` anywhere, and player I cannot raise it at nodes that are
/// not player-II nodes. Recomputed by direct scans over the action grids.
pub fn check_one_step_reduction(
    field: &ValueField,
    policies: &[PolicySlice],
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    tol: f64,
) -> Result<CheckResult, VerifyError> {
    let actions = spec.actions.build_grid().map_err(|e| VerifyError::Input(e.to_string()))?;
    let mut worst = 0.0f64;
    let mut detail = String::from("no profitable deviation");
    let dim = spec.dim;
    let mut coords = vec![0.0; dim];
    let mut target = vec![0.0; dim];
    for k in 0..grid.steps {
        let v = &field.slices[k];
        let t = v.time;
        let cost_ii: Result<Vec<f64>, ExprError> =
            actions.player_ii.iter().map(|a| spec.costs.cost_ii_at(t, a)).collect();
        let cost_ii = cost_ii.map_err(|e| VerifyError::Eval {
            context: format!("chi at t={t}"),
            source: e,
        })?;
        let cost_i: Result<Vec<f64>, ExprError> =
            actions.player_i.iter().map(|a| spec.costs.cost_i_at(t, a)).collect();
        let cost_i = cost_i.map_err(|e| VerifyError::Eval {
            context: format!("c at t={t}"),
            source: e,
        })?;
        for node in 0..v.node_count() {
            v.node_coords(node, &mut coords);
            let here = v.values[node];
            for (zi, z) in actions.player_ii.iter().enumerate() {
                for d in 0..dim {
                    target[d] = coords[d] + z[d];
                }
                if let Some(val) = v.interp(&target) {
                    let profit = here - (val + cost_ii[zi]);
                    if profit > tol && profit > worst {
                        worst = profit;
                        detail = format!(
                            "player-II deviation z={z:?} profits {profit:.3e} at slice {k} node {node}"
                        );
                    }
                }
            }
            let is_ii = matches!(policies[k].regimes[node], Regime::ImpulseII { .. });
            if !is_ii {
                for (yi, y) in actions.player_i.iter().enumerate() {
                    for d in 0..dim {
                        target[d] = coords[d] + y[d];
                    }
                    if let Some(val) = v.interp(&target) {
                        let profit = (val - cost_i[yi]) - here;
                        if profit > tol && profit > worst {
                            worst = profit;
                            detail = format!(
                                "player-I deviation y={y:?} profits {profit:.3e} at slice {k} node {node}"
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(CheckResult::new(check_names::ONE_STEP_REDUCTION, worst == 0.0, worst, tol, detail))
}

/// Monte Carlo check of the dynamic programming identity at a deterministic
/// intermediate time `s`: running terms up to `s` plus the solved value at
/// `(s, X_s)` must reproduce the value at the start within the statistical
/// and scheme budgets.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp(
    spec: &GameSpec,
    field: &ValueField,
    policies: &[PolicySlice],
    grid: &SpaceTimeGrid,
    s: f64,
    x0: &[f64],
    n_paths: usize,
    delta: f64,
    seed: u64,
    tol_sigmas: f64,
    budget_constant: f64,
    max_impulses: usize,
) -> Result<CheckResult, VerifyError> {
    let k_s = (s / grid.dt).round() as usize;
    if k_s > grid.steps || (k_s as f64 * grid.dt - s).abs() > 1e-9 * spec.horizon.max(1.0) {
        return Err(VerifyError::Input(format!("s={s} is not on the solver time lattice")));
    }
    let slice_s = &field.slices[k_s];
    let actions = spec.actions.build_grid().map_err(|e| VerifyError::Input(e.to_string()))?;
    let strat_i = from_policy(policies, grid, &actions, Player::I);
    let strat_ii = from_policy(policies, grid, &actions, Player::II);

    let v0 = field.slices[0]
        .interp(x0)
        .ok_or_else(|| VerifyError::Input(format!("probe {x0:?} outside the domain")))?;

    let seeds = split_seeds(seed, n_paths);
    let mut samples = Vec::with_capacity(n_paths);
    let mut clamped = 0usize;
    for path_seed in seeds {
        let path = simulate_path_until(
            spec, &strat_i, &strat_ii, 0.0, x0, s, delta, path_seed, max_impulses,
        )?;
        let mut acc = 0.0;
        for k in 0..path.steps() {
            let t = path.time_at(k);
            acc += delta
                * spec
                    .running_gain_at(t, &path.states[k])
                    .map_err(|e| VerifyError::Eval { context: format!("f at t={t}"), source: e })?;
        }
        for event in &path.events {
            match event.player {
                Player::II => {
                    acc += spec.costs.cost_ii_at(event.time, &event.action).map_err(|e| {
                        VerifyError::Eval { context: format!("chi at t={}", event.time), source: e }
                    })?;
                }
                Player::I if event.charged => {
                    acc -= spec.costs.cost_i_at(event.time, &event.action).map_err(|e| {
                        VerifyError::Eval { context: format!("c at t={}", event.time), source: e }
                    })?;
                }
                Player::I => {}
            }
        }
        let x_s = path.final_state();
        let value_s = match slice_s.interp(x_s) {
            Some(v) => v,
            None => {
                // Diffusion escaped the truncated box; evaluate at the
                // nearest in-domain point and count the event.
                clamped += 1;
                let clamped_x: Vec<f64> = x_s
                    .iter()
                    .zip(slice_s.axes())
                    .map(|(&p, a)| p.clamp(a.min, a.max))
                    .collect();
                slice_s.interp(&clamped_x).expect("clamped point is inside")
            }
        };
        samples.push(acc + value_s);
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    let dx_max = grid.space.iter().fold(0.0f64, |m, a| m.max(a.spacing()));
    let budget = budget_constant * (dx_max + delta.sqrt());
    let bound = tol_sigmas * stderr + budget;
    let diff = (mean - v0).abs();
    Ok(CheckResult::new(
        check_names::DPP,
        diff <= bound,
        diff,
        bound,
        format!(
            "s={s} x0={x0:?} mean={mean:.6} stderr={stderr:.2e} v0={v0:.6} \
             n_paths={n} delta={delta} seed={seed} clamped={clamped}"
        ),
    ))
}

/// Monte Carlo estimate under solver-extracted strategies against the
/// solved value at the start point.
#[allow(clippy::too_many_arguments)]
pub fn check_mc_consistency(
    spec: &GameSpec,
    field: &ValueField,
    policies: &[PolicySlice],
    grid: &SpaceTimeGrid,
    x0: &[f64],
    n_paths: usize,
    delta: f64,
    seed: u64,
    tol_sigmas: f64,
    budget_constant: f64,
    max_impulses: usize,
) -> Result<CheckResult, VerifyError> {
    let actions = spec.actions.build_grid().map_err(|e| VerifyError::Input(e.to_string()))?;
    let strat_i = from_policy(policies, grid, &actions, Player::I);
    let strat_ii = from_policy(policies, grid, &actions, Player::II);
    let v0 = field.slices[0]
        .interp(x0)
        .ok_or_else(|| VerifyError::Input(format!("probe {x0:?} outside the domain")))?;
    let estimate = estimate_value(
        spec, &strat_i, &strat_ii, 0.0, x0, delta, n_paths, seed, max_impulses,
    )?;
    let dx_max = grid.space.iter().fold(0.0f64, |m, a| m.max(a.spacing()));
    let budget = budget_constant * (dx_max + delta.sqrt());
    let bound = tol_sigmas * estimate.stderr + budget;
    let diff = (estimate.mean - v0).abs();
    Ok(CheckResult::new(
        check_names::MC_PDE,
        diff <= bound,
        diff,
        bound,
        format!(
            "x0={x0:?} mean={:.6} stderr={:.2e} v0={v0:.6} n_paths={n_paths} delta={delta} seed={seed}",
            estimate.mean, estimate.stderr
        ),
    ))
}

/// Solves with both projection nestings and measures their sup-norm gap
/// outside nodes where the two obstacles are simultaneously active. When
/// the cost structure is already known to be violated the result is
/// advisory: the coincidence argument needs the cost margins.
pub fn check_value_gap(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    solve_opts: &SolveOptions,
    gap_tol: f64,
    excluded_fraction_tol: f64,
    costs_valid: bool,
) -> Result<CheckResult, VerifyError> {
    let actions = spec.actions.build_grid().map_err(|e| VerifyError::Input(e.to_string()))?;
    let inf_first = solve(spec, grid, solve_opts)?;
    let sup_first = solve(
        spec,
        grid,
        &SolveOptions {
            nesting: crate::intervention::Nesting::SupPriority,
            ..solve_opts.clone()
        },
    )?;
    let mut gap = 0.0f64;
    let mut excluded = 0usize;
    let mut total = 0usize;
    for k in 0..=grid.steps {
        let va = &inf_first.field.slices[k];
        let vb = &sup_first.field.slices[k];
        let act_tol = 10.0
            * solve_opts
                .tol
                .unwrap_or_else(|| 1e-9 * (1.0 + va.sup_norm()));
        let (hs_a, _) = h_sup_c(va, &spec.costs, &actions)?;
        let (hi_a, _) = h_inf_chi(va, &spec.costs, &actions)?;
        let (hs_b, _) = h_sup_c(vb, &spec.costs, &actions)?;
        let (hi_b, _) = h_inf_chi(vb, &spec.costs, &actions)?;
        for node in 0..va.node_count() {
            total += 1;
            let both_active_a = (va.values[node] - hs_a.values[node]).abs() <= act_tol
                && (va.values[node] - hi_a.values[node]).abs() <= act_tol;
            let both_active_b = (vb.values[node] - hs_b.values[node]).abs() <= act_tol
                && (vb.values[node] - hi_b.values[node]).abs() <= act_tol;
            if both_active_a || both_active_b {
                excluded += 1;
            } else {
                gap = gap.max((va.values[node] - vb.values[node]).abs());
            }
        }
    }
    let fraction = excluded as f64 / total as f64;
    let pass = gap <= gap_tol && fraction < excluded_fraction_tol;
    let mut check = CheckResult::new(
        check_names::VALUE_GAP,
        pass,
        gap,
        gap_tol,
        format!(
            "excluded {excluded}/{total} nodes ({:.4}%), threshold {:.2}%",
            100.0 * fraction,
            100.0 * excluded_fraction_tol
        ),
    );
    if !costs_valid {
        check = check.advisory();
        check.context.push_str("; advisory: cost structure already violated");
    }
    Ok(check)
}

/// Measured regularity moduli of a solved field: the discrete space
/// Lipschitz quotient over adjacent nodes, and the time quotient
/// `|dV| / sqrt(dt)` over slice pairs at least 0.1 below the horizon.
pub fn regularity_moduli(field: &ValueField) -> (f64, f64) {
    let lip_x = field.slices.iter().fold(0.0f64, |m, s| m.max(space_lipschitz(s)));
    let horizon = field.slices.last().map_or(0.0, |s| s.time);
    let cutoff = horizon - 0.1;
    let mut holder_t = 0.0f64;
    for (i, a) in field.slices.iter().enumerate() {
        if a.time > cutoff {
            continue;
        }
        for b in field.slices.iter().skip(i + 1) {
            if b.time > cutoff {
                break;
            }
            let dt_sqrt = (b.time - a.time).sqrt();
            if dt_sqrt == 0.0 {
                continue;
            }
            let diff = a.max_abs_diff(b);
            holder_t = holder_t.max(diff / dt_sqrt);
        }
    }
    (lip_x, holder_t)
}

/// Refines the lattice once (2x in space and time) and compares moduli.
pub fn check_regularity(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    field: &ValueField,
    solve_opts: &SolveOptions,
    rel_tol: f64,
) -> Result<CheckResult, VerifyError> {
    let fine_nodes: Vec<usize> = grid.space.iter().map(|a| 2 * a.count - 1).collect();
    let fine_grid = SpaceTimeGrid::new(spec, &fine_nodes, 2 * grid.steps)?;
    let fine = solve(spec, &fine_grid, solve_opts)?;
    let (lip_coarse, holder_coarse) = regularity_moduli(field);
    let (lip_fine, holder_fine) = regularity_moduli(&fine.field);
    let rel = |a: f64, b: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            (b - a).abs() / a.abs().max(1e-300)
        }
    };
    let worst = rel(lip_coarse, lip_fine).max(rel(holder_coarse, holder_fine));
    Ok(CheckResult::new(
        check_names::REGULARITY,
        worst <= rel_tol,
        worst,
        rel_tol,
        format!(
            "lip_x {lip_coarse:.4} -> {lip_fine:.4}, holder_t {holder_coarse:.4} -> {holder_fine:.4}"
        ),
    ))
}

/// Three-grid self-convergence: successive sup-norm differences of the
/// initial slice at common nodes must shrink by at least `factor`.
pub fn check_self_convergence(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    solve_opts: &SolveOptions,
    factor: f64,
) -> Result<CheckResult, VerifyError> {
    for axis in &grid.space {
        if axis.count % 2 == 0 {
            return Err(VerifyError::Input(
                "self-convergence needs odd node counts so lattices nest".to_string(),
            ));
        }
    }
    if grid.steps % 4 != 0 {
        return Err(VerifyError::Input(
            "self-convergence needs the step count divisible by 4".to_string(),
        ));
    }
    let coarse_nodes: Vec<usize> = grid.space.iter().map(|a| (a.count + 1) / 2).collect();
    let fine_nodes: Vec<usize> = grid.space.iter().map(|a| 2 * a.count - 1).collect();
    let coarse_grid = SpaceTimeGrid::new(spec, &coarse_nodes, grid.steps / 4)?;
    let fine_grid = SpaceTimeGrid::new(spec, &fine_nodes, grid.steps * 4)?;
    let coarse = solve(spec, &coarse_grid, solve_opts)?;
    let mid = solve(spec, grid, solve_opts)?;
    let fine = solve(spec, &fine_grid, solve_opts)?;

    let diff_on_common = |coarse: &GridFunction, fine: &GridFunction| -> f64 {
        // The fine lattice contains the coarse one: node j maps to 2j.
        let dim = coarse.dim();
        let mut idx = vec![0usize; dim];
        let mut fine_idx = vec![0usize; dim];
        let mut worst = 0.0f64;
        for node in 0..coarse.node_count() {
            coarse.unflatten(node, &mut idx);
            for d in 0..dim {
                fine_idx[d] = idx[d] * 2;
            }
            let fine_node = fine.flatten(&fine_idx);
            worst = worst.max((coarse.values[node] - fine.values[fine_node]).abs());
        }
        worst
    };
    let d12 = diff_on_common(&coarse.field.slices[0], &mid.field.slices[0]);
    let d23 = diff_on_common(&mid.field.slices[0], &fine.field.slices[0]);
    let ratio = if d23 == 0.0 { f64::INFINITY } else { d12 / d23 };
    Ok(CheckResult::new(
        check_names::SELF_CONVERGENCE,
        ratio >= factor,
        ratio.min(1e12),
        factor,
        format!(
            "coarse->mid {d12:.3e}, mid->fine {d23:.3e}, grids {:?}/{}, x4 refinement",
            coarse_grid.space.iter().map(|a| a.count).collect::<Vec<_>>(),
            coarse_grid.steps
        ),
    ))
}

const ORACLE_MAX_NODES: usize = 15;
const ORACLE_MAX_STEPS: usize = 6;
const ORACLE_MAX_ACTIONS: usize = 5;

/// Exhaustive backward induction on a tiny 1-d lattice: at every node the
/// exact min-max over {player-II action or none} x {player-I action or
/// none} with player-II precedence, iterated to stationarity, with the
/// explicit Euler continuation between levels. Standalone scalar code:
/// shares no grid, interpolation or operator machinery with the solver.
pub fn brute_force_value(
    spec: &GameSpec,
    nodes: usize,
    steps: usize,
    actions_i: &[f64],
    actions_ii: &[f64],
    fp_tol: f64,
) -> Result<Vec<Vec<f64>>, VerifyError> {
    if spec.dim != 1 {
        return Err(VerifyError::SizeLimit("oracle handles 1-d problems only".to_string()));
    }
    if nodes > ORACLE_MAX_NODES || nodes < 3 {
        return Err(VerifyError::SizeLimit(format!("need 3..=15 nodes, got {nodes}")));
    }
    if steps > ORACLE_MAX_STEPS || steps == 0 {
        return Err(VerifyError::SizeLimit(format!("need 1..=6 steps, got {steps}")));
    }
    if actions_i.len() > ORACLE_MAX_ACTIONS || actions_ii.len() > ORACLE_MAX_ACTIONS {
        return Err(VerifyError::SizeLimit("at most 5 actions per player".to_string()));
    }

    let (lo, hi) = spec.domain[0];
    let dx = (hi - lo) / (nodes - 1) as f64;
    let xs: Vec<f64> = (0..nodes).map(|j| lo + j as f64 * dx).collect();
    let dt = spec.horizon / steps as f64;
    let slack = 1e-12 * (hi - lo).abs().max(1.0);

    let lin = |vals: &[f64], p: f64| -> Option<f64> {
        if p < lo - slack || p > hi + slack {
            return None;
        }
        let q = p.clamp(lo, hi);
        let u = (q - lo) / dx;
        let mut cell = u.floor() as usize;
        if cell >= nodes - 1 {
            cell = nodes - 2;
        }
        let w = (u - cell as f64).clamp(0.0, 1.0);
        Some((1.0 - w) * vals[cell] + w * vals[cell + 1])
    };

    let eval_err = |context: String| {
        move |e: ExprError| VerifyError::Eval { context, source: e }
    };

    // Resolve the mutual-best-response stationary point at one time level.
    let resolve = |w: &[f64], t: f64| -> Result<Vec<f64>, VerifyError> {
        let cost_i: Vec<f64> = actions_i
            .iter()
            .map(|&y| spec.costs.cost_i_at(t, &[y]))
            .collect::<Result<_, _>>()
            .map_err(eval_err(format!("c at t={t}")))?;
        let cost_ii: Vec<f64> = actions_ii
            .iter()
            .map(|&z| spec.costs.cost_ii_at(t, &[z]))
            .collect::<Result<_, _>>()
            .map_err(eval_err(format!("chi at t={t}")))?;
        let mut v = w.to_vec();
        let mut calm = 0usize;
        for _pass in 0..10_000 {
            let mut next = vec![0.0; nodes];
            let mut change = 0.0f64;
            for j in 0..nodes {
                // Player II stands aside: player I picks the best of
                // waiting (w) or any single impulse.
                let mut stand_aside = w[j];
                for (yi, &y) in actions_i.iter().enumerate() {
                    if let Some(val) = lin(&v, xs[j] + y) {
                        let dev = val - cost_i[yi];
                        if dev > stand_aside {
                            stand_aside = dev;
                        }
                    }
                }
                // Player II picks the cheaper of standing aside or any
                // single impulse (which preempts player I).
                let mut outcome = stand_aside;
                for (zi, &z) in actions_ii.iter().enumerate() {
                    if let Some(val) = lin(&v, xs[j] + z) {
                        let dev = val + cost_ii[zi];
                        if dev < outcome {
                            outcome = dev;
                        }
                    }
                }
                change = change.max((outcome - v[j]).abs());
                next[j] = outcome;
            }
            v = next;
            if change == 0.0 {
                return Ok(v);
            }
            if change < fp_tol {
                calm += 1;
                if calm >= 64 {
                    return Ok(v);
                }
            } else {
                calm = 0;
            }
        }
        Err(VerifyError::Input(format!("oracle level t={t} did not become stationary")))
    };

    let mut layers = vec![Vec::new(); steps + 1];
    let g: Vec<f64> = xs
        .iter()
        .map(|&x| spec.terminal_payoff_at(&[x]))
        .collect::<Result<_, _>>()
        .map_err(eval_err("g".to_string()))?;
    layers[steps] = resolve(&g, spec.horizon)?;

    for k in (0..steps).rev() {
        let t_next = (k + 1) as f64 * dt;
        let t = k as f64 * dt;
        let vn = layers[k + 1].clone();
        let mut w = vec![0.0; nodes];
        for j in 0..nodes {
            let x = xs[j];
            let b = spec
                .drift_at(t_next, &[x])
                .map_err(eval_err(format!("b at t={t_next}")))?[0];
            let var = {
                let row = &spec
                    .diffusion_at(t_next, &[x])
                    .map_err(eval_err(format!("sigma at t={t_next}")))?[0];
                row.iter().map(|s| s * s).sum::<f64>()
            };
            let f_val = spec
                .running_gain_at(t_next, &[x])
                .map_err(eval_err(format!("f at t={t_next}")))?;
            let d1 = if j == 0 {
                (vn[1] - vn[0]) / dx
            } else if j == nodes - 1 {
                (vn[j] - vn[j - 1]) / dx
            } else if b >= 0.0 {
                (vn[j + 1] - vn[j]) / dx
            } else {
                (vn[j] - vn[j - 1]) / dx
            };
            let d2 = if j == 0 || j == nodes - 1 {
                0.0
            } else {
                (vn[j + 1] - 2.0 * vn[j] + vn[j - 1]) / (dx * dx)
            };
            w[j] = vn[j] + dt * (b * d1 + 0.5 * var * d2 + f_val);
        }
        layers[k] = resolve(&w, t)?;
    }
    Ok(layers)
}

/// Which checks to run and with what budgets.
#[derive(Debug, Clone)]
pub struct CheckConfig {
    pub seed: u64,
    pub n_paths: usize,
    pub delta: f64,
    pub identity_tol: f64,
    pub ordering_tol: f64,
    pub one_step_tol: f64,
    pub gap_tol: f64,
    pub gap_excluded_fraction: f64,
    pub tol_sigmas: f64,
    /// Scheme-error budget constant; `None` uses 5 (1 + Lip g).
    pub budget_constant: Option<f64>,
    pub regularity_rel_tol: f64,
    pub convergence_factor: f64,
    pub cost_samples: usize,
    pub max_impulses: Option<usize>,
    /// Start point of the stochastic checks; `None` probes the domain center.
    pub probe: Option<Vec<f64>>,
    /// Intermediate time for the DPP check; `None` uses T/2.
    pub dpp_time: Option<f64>,
    /// Run only the named checks (cost checks always run).
    pub only: Option<Vec<String>>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            seed: 42,
            n_paths: 20_000,
            delta: 1.0 / 256.0,
            identity_tol: 1e-7,
            ordering_tol: 1e-7,
            one_step_tol: 1e-7,
            gap_tol: 1e-6,
            gap_excluded_fraction: 0.01,
            tol_sigmas: 3.0,
            budget_constant: None,
            regularity_rel_tol: 0.25,
            convergence_factor: 1.5,
            cost_samples: crate::problem::DEFAULT_COST_SAMPLES,
            max_impulses: None,
            probe: None,
            dpp_time: None,
            only: None,
        }
    }
}

/// Runs the full battery against a solved field and merges everything into
/// one report. Cost checks always run (the value-gap interpretation depends
/// on them); everything else honors `only`.
pub fn run_checks(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    field: &ValueField,
    policies: &[PolicySlice],
    solve_opts: &SolveOptions,
    cfg: &CheckConfig,
) -> Result<VerificationReport, VerifyError> {
    let selected = |name: &str| -> bool {
        cfg.only.as_ref().map_or(true, |names| names.iter().any(|n| n == name))
    };
    let mut report = validate_costs(spec, cfg.cost_samples, cfg.seed);
    let costs_valid = report.all_required_pass();

    let probe = cfg.probe.clone().unwrap_or_else(|| spec.domain_center());
    let budget = match cfg.budget_constant {
        Some(c) => c,
        None => default_budget_constant(spec, grid)?,
    };
    let cap = match cfg.max_impulses {
        Some(c) => c,
        None => default_impulse_cap(spec)?,
    };

    if selected(check_names::STRUCTURAL_IDENTITY) {
        report.push(check_structural_identity(field, spec, grid, cfg.identity_tol)?)?;
    }
    if selected(check_names::OBSTACLE_ORDERING) {
        report.push(check_obstacle_ordering(field, spec, grid, cfg.ordering_tol)?)?;
    }
    if selected(check_names::ONE_STEP_REDUCTION) {
        report.push(check_one_step_reduction(
            field,
            policies,
            spec,
            grid,
            cfg.one_step_tol,
        )?)?;
    }
    if selected(check_names::SOLVER_RESIDUAL) {
        let r = residual(field, spec, grid)?;
        let tol_scale = solve_opts
            .tol
            .unwrap_or_else(|| 1e-9 * (2.0 + field.sup_norm()));
        let bound = 2.0 * tol_scale * (1.0f64).max(1.0 / grid.dt);
        report.push(CheckResult::new(
            check_names::SOLVER_RESIDUAL,
            r <= bound,
            r,
            bound,
            format!("fixed-point tol scale {tol_scale:.2e}"),
        ))?;
    }
    if selected(check_names::VALUE_GAP) {
        report.push(check_value_gap(
            spec,
            grid,
            solve_opts,
            cfg.gap_tol,
            cfg.gap_excluded_fraction,
            costs_valid,
        )?)?;
    }
    if selected(check_names::DPP) {
        let s = cfg.dpp_time.unwrap_or(0.5 * spec.horizon);
        report.push(check_dpp(
            spec,
            field,
            policies,
            grid,
            s,
            &probe,
            cfg.n_paths,
            cfg.delta,
            cfg.seed,
            cfg.tol_sigmas,
            budget,
            cap,
        )?)?;
    }
    if selected(check_names::MC_PDE) {
        report.push(check_mc_consistency(
            spec,
            field,
            policies,
            grid,
            &probe,
            cfg.n_paths,
            cfg.delta,
            cfg.seed.wrapping_add(1),
            cfg.tol_sigmas,
            budget,
            cap,
        )?)?;
    }
    if selected(check_names::REGULARITY) {
        report.push(check_regularity(spec, grid, field, solve_opts, cfg.regularity_rel_tol)?)?;
    }
    if selected(check_names::SELF_CONVERGENCE) {
        report.push(check_self_convergence(spec, grid, solve_opts, cfg.convergence_factor)?)?;
    }
    Ok(report)
}
