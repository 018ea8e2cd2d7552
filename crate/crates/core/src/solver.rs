//! Backward-in-time solver for the discrete double-obstacle equation.
//!
//! Time stepping is explicit: the continuation value at level k is
//! `W = V_{k+1} + dt * (L V_{k+1} + f)` with an upwind/central monotone
//! stencil for the generator, and the implicit obstacles are then resolved
//! by `qvi_fixed_point` at every level. The terminal layer is itself a
//! fixed point of the obstacle projection applied to the raw payoff (the
//! "face-lift"); the raw payoff is kept separately for simulation.

use thiserror::Error;

use crate::expr::ExprError;
use crate::grid::{ActionGrid, Axis, GridError, GridFunction};
use crate::intervention::{
    default_tol, qvi_fixed_point_from, FixedPointStats, InterventionError, Nesting, PolicySlice,
};
use crate::problem::GameSpec;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(
        "CFL condition violated: dt * (sum sigma_i^2/dx_i^2 + sum |b_i|/dx_i) = {value:.4} > 1; \
         refine the time grid or coarsen space"
    )]
    Cfl { value: f64 },
    #[error(
        "sampled diffusion matrix is not diagonally dominant at node {node} (axis {axis}); \
         the monotone mixed-derivative stencil does not apply"
    )]
    DiagonalDominance { node: usize, axis: usize },
    #[error("coefficient evaluation failed at {context}: {source}")]
    Coefficient {
        context: String,
        #[source]
        source: ExprError,
    },
    #[error("action grid: {0}")]
    Actions(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
}

fn build_actions(spec: &GameSpec) -> Result<ActionGrid, SolveError> {
    spec.actions.build_grid().map_err(|e| SolveError::Actions(e.to_string()))
}

/// Space-time lattice with the explicit-scheme stability guard baked into
/// construction: a grid that violates the CFL bound cannot be built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub space: Vec<Axis>,
    pub steps: usize,
    pub dt: f64,
}

impl SpaceTimeGrid {
    pub fn new(
        spec: &GameSpec,
        nodes_per_axis: &[usize],
        steps: usize,
    ) -> Result<Self, SolveError> {
        assert_eq!(nodes_per_axis.len(), spec.dim, "one node count per axis");
        assert!(steps >= 1, "need at least one time step");
        let mut space = Vec::with_capacity(spec.dim);
        for (d, &count) in nodes_per_axis.iter().enumerate() {
            let (lo, hi) = spec.domain[d];
            space.push(Axis::new(lo, hi, count).map_err(|e| match e {
                GridError::Axis { message, .. } => GridError::Axis { axis: d, message },
                other => other,
            })?);
        }
        let dt = spec.horizon / steps as f64;
        let grid = SpaceTimeGrid { space, steps, dt };
        grid.check_stability(spec)?;
        Ok(grid)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt).collect()
    }

    pub fn node_count(&self) -> usize {
        self.space.iter().map(|a| a.count).product()
    }

    fn check_stability(&self, spec: &GameSpec) -> Result<(), SolveError> {
        let dim = spec.dim;
        let probe = GridFunction::constant(self.space.clone(), 0.0, 0.0);
        let mut coords = vec![0.0; dim];
        let mut sup_b = vec![0.0f64; dim];
        let mut sup_a_diag = vec![0.0f64; dim];
        let times = [0.0, 0.5 * spec.horizon, spec.horizon];
        for node in 0..probe.node_count() {
            probe.node_coords(node, &mut coords);
            for &t in &times {
                let b = spec.drift_at(t, &coords).map_err(|e| SolveError::Coefficient {
                    context: format!("b at t={t}, x={coords:?}"),
                    source: e,
                })?;
                let sigma =
                    spec.diffusion_at(t, &coords).map_err(|e| SolveError::Coefficient {
                        context: format!("sigma at t={t}, x={coords:?}"),
                        source: e,
                    })?;
                let a = diffusion_square(&sigma);
                for d in 0..dim {
                    sup_b[d] = sup_b[d].max(b[d].abs());
                    sup_a_diag[d] = sup_a_diag[d].max(a[d][d]);
                }
                // The monotone cross stencil needs sigma sigma' diagonally
                // dominant in mesh units at every sampled node.
                if dim > 1 {
                    for d in 0..dim {
                        let dx_d = self.space[d].spacing();
                        let mut off = 0.0;
                        for e in 0..dim {
                            if e != d {
                                off += a[d][e].abs() / (dx_d * self.space[e].spacing());
                            }
                        }
                        if a[d][d] / (dx_d * dx_d) + 1e-12 < off {
                            return Err(SolveError::DiagonalDominance { node, axis: d });
                        }
                    }
                }
            }
        }
        let mut cfl = 0.0;
        for d in 0..dim {
            let dx = self.space[d].spacing();
            cfl += sup_a_diag[d] / (dx * dx) + sup_b[d] / dx;
        }
        cfl *= self.dt;
        if cfl > 1.0 + 1e-12 {
            return Err(SolveError::Cfl { value: cfl });
        }
        Ok(())
    }
}

fn diffusion_square(sigma: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = sigma.len();
    let d = sigma.first().map_or(0, |r| r.len());
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..d {
                acc += sigma[i][k] * sigma[j][k];
            }
            a[i][j] = acc;
        }
    }
    a
}

/// Discrete `L V + f` at the grid function's time stamp.
///
/// First derivatives are first-order upwind (direction from the sign of
/// each drift component, falling back to the inward one-sided difference at
/// the boundary, which is what linear extrapolation of the field gives).
/// Diagonal second derivatives are central in the interior and zero at the
/// outermost nodes; mixed derivatives use the sign-split seven-point cross
/// stencil and vanish at boundaries.
pub fn generator_apply(v: &GridFunction, spec: &GameSpec) -> Result<GridFunction, SolveError> {
    let dim = v.dim();
    let axes = v.axes().to_vec();
    let t = v.time;
    let mut strides = vec![1usize; dim];
    for d in (0..dim.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * axes[d + 1].count;
    }
    let mut out = vec![0.0; v.node_count()];
    let mut coords = vec![0.0; dim];
    let mut index = vec![0usize; dim];
    for node in 0..v.node_count() {
        v.unflatten(node, &mut index);
        v.node_coords(node, &mut coords);
        let b = spec.drift_at(t, &coords).map_err(|e| SolveError::Coefficient {
            context: format!("b at t={t}, x={coords:?}"),
            source: e,
        })?;
        let sigma = spec.diffusion_at(t, &coords).map_err(|e| SolveError::Coefficient {
            context: format!("sigma at t={t}, x={coords:?}"),
            source: e,
        })?;
        let a = diffusion_square(&sigma);
        let f_val = spec.running_gain_at(t, &coords).map_err(|e| SolveError::Coefficient {
            context: format!("f at t={t}, x={coords:?}"),
            source: e,
        })?;

        let mut acc = f_val;
        for d in 0..dim {
            let dx = axes[d].spacing();
            let at_lo = index[d] == 0;
            let at_hi = index[d] == axes[d].count - 1;
            let here = v.values[node];
            let d1 = if at_lo {
                (v.values[node + strides[d]] - here) / dx
            } else if at_hi {
                (here - v.values[node - strides[d]]) / dx
            } else if b[d] >= 0.0 {
                (v.values[node + strides[d]] - here) / dx
            } else {
                (here - v.values[node - strides[d]]) / dx
            };
            acc += b[d] * d1;
            if !at_lo && !at_hi {
                let d2 = (v.values[node + strides[d]] - 2.0 * here
                    + v.values[node - strides[d]])
                    / (dx * dx);
                acc += 0.5 * a[d][d] * d2;
            }
        }
        // Mixed derivatives, interior in both axes only.
        for d in 0..dim {
            for e in (d + 1)..dim {
                if a[d][e] == 0.0 {
                    continue;
                }
                let interior = index[d] > 0
                    && index[d] < axes[d].count - 1
                    && index[e] > 0
                    && index[e] < axes[e].count - 1;
                if !interior {
                    continue;
                }
                let dxe = axes[d].spacing() * axes[e].spacing();
                let vv = &v.values;
                let (sd, se) = (strides[d], strides[e]);
                let cross = if a[d][e] >= 0.0 {
                    (2.0 * vv[node] + vv[node + sd + se] + vv[node - sd - se]
                        - vv[node + sd]
                        - vv[node - sd]
                        - vv[node + se]
                        - vv[node - se])
                        / (2.0 * dxe)
                } else {
                    (vv[node + sd] + vv[node - sd] + vv[node + se] + vv[node - se]
                        - 2.0 * vv[node]
                        - vv[node + sd - se]
                        - vv[node - sd + se])
                        / (2.0 * dxe)
                };
                acc += a[d][e] * cross;
            }
        }
        out[node] = acc;
    }
    Ok(GridFunction::new(axes, out, t)?)
}

/// Value slices at `t_k = k dt`, `k = 0..=K`; slice `K` is the face-lifted
/// terminal layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub slices: Vec<GridFunction>,
}

impl ValueField {
    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().fold(0.0, |m, s| m.max(s.sup_norm()))
    }

    pub fn max_abs_diff(&self, other: &ValueField) -> f64 {
        self.slices
            .iter()
            .zip(&other.slices)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub field: ValueField,
    pub policies: Vec<PolicySlice>,
    pub fixed_point_stats: Vec<FixedPointStats>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Fixed-point tolerance; `None` scales `1e-9 * (1 + sup|W|)` per level.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub nesting: Nesting,
    /// Constant added to the starting iterate of the terminal fixed point;
    /// used by the discrete-uniqueness diagnostic.
    pub terminal_init_offset: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: None,
            max_iter: crate::intervention::DEFAULT_MAX_ITER,
            nesting: Nesting::InfPriority,
            terminal_init_offset: 0.0,
        }
    }
}

fn eval_payoff_layer(spec: &GameSpec, grid: &SpaceTimeGrid) -> Result<GridFunction, SolveError> {
    let probe = GridFunction::constant(grid.space.clone(), 0.0, spec.horizon);
    let mut coords = vec![0.0; spec.dim];
    let mut values = Vec::with_capacity(probe.node_count());
    for node in 0..probe.node_count() {
        probe.node_coords(node, &mut coords);
        let g = spec.terminal_payoff_at(&coords).map_err(|e| SolveError::Coefficient {
            context: format!("g at x={coords:?}"),
            source: e,
        })?;
        values.push(g);
    }
    Ok(GridFunction::new(grid.space.clone(), values, spec.horizon)?)
}

/// The raw terminal payoff sampled on the lattice (no face-lift).
pub fn raw_terminal_payoff(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
) -> Result<GridFunction, SolveError> {
    eval_payoff_layer(spec, grid)
}

/// Face-lifted terminal layer: the obstacle fixed point of the raw payoff
/// at `t = T`, realizing the relaxed terminal condition.
pub fn terminal_layer(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    tol: Option<f64>,
    max_iter: usize,
) -> Result<(GridFunction, PolicySlice, FixedPointStats), SolveError> {
    let actions = build_actions(spec)?;
    terminal_layer_with(spec, grid, &actions, tol, max_iter, Nesting::InfPriority, 0.0)
}

fn terminal_layer_with(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    actions: &ActionGrid,
    tol: Option<f64>,
    max_iter: usize,
    nesting: Nesting,
    init_offset: f64,
) -> Result<(GridFunction, PolicySlice, FixedPointStats), SolveError> {
    let w = eval_payoff_layer(spec, grid)?;
    let tol = tol.unwrap_or_else(|| default_tol(&w));
    let init = if init_offset != 0.0 {
        let mut shifted = w.clone();
        for v in &mut shifted.values {
            *v += init_offset;
        }
        Some(shifted)
    } else {
        None
    };
    let fp = qvi_fixed_point_from(&w, &spec.costs, actions, tol, max_iter, nesting, init.as_ref())?;
    Ok((fp.value, fp.policy, fp.stats))
}

/// One explicit backward step: Euler continuation from `v_next`, then the
/// obstacle fixed point at `t_k = v_next.time - dt`.
pub fn step_backward(
    v_next: &GridFunction,
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    tol: Option<f64>,
    max_iter: usize,
) -> Result<(GridFunction, PolicySlice, FixedPointStats), SolveError> {
    let actions = build_actions(spec)?;
    step_backward_with(v_next, spec, grid, &actions, tol, max_iter, Nesting::InfPriority)
}

fn step_backward_with(
    v_next: &GridFunction,
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    actions: &ActionGrid,
    tol: Option<f64>,
    max_iter: usize,
    nesting: Nesting,
) -> Result<(GridFunction, PolicySlice, FixedPointStats), SolveError> {
    let gen = generator_apply(v_next, spec)?;
    let mut w_values = Vec::with_capacity(v_next.node_count());
    for node in 0..v_next.node_count() {
        w_values.push(v_next.values[node] + grid.dt * gen.values[node]);
    }
    let w = GridFunction::new(v_next.axes().to_vec(), w_values, v_next.time - grid.dt)?;
    let tol = tol.unwrap_or_else(|| default_tol(&w));
    let fp = qvi_fixed_point_from(&w, &spec.costs, actions, tol, max_iter, nesting, None)?;
    Ok((fp.value, fp.policy, fp.stats))
}

/// Full backward solve: face-lifted terminal layer, then `K` explicit
/// steps. Returns one value slice and one policy per time level.
pub fn solve(
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
    opts: &SolveOptions,
) -> Result<SolveResult, SolveError> {
    let actions = build_actions(spec)?;
    let k_steps = grid.steps;
    let mut slices: Vec<GridFunction> = Vec::with_capacity(k_steps + 1);
    let mut policies: Vec<PolicySlice> = Vec::with_capacity(k_steps + 1);
    let mut stats = Vec::with_capacity(k_steps + 1);

    let (terminal, terminal_policy, terminal_stats) = terminal_layer_with(
        spec,
        grid,
        &actions,
        opts.tol,
        opts.max_iter,
        opts.nesting,
        opts.terminal_init_offset,
    )?;
    stats.push(terminal_stats);
    slices.push(terminal);
    policies.push(terminal_policy);

    for _ in 0..k_steps {
        let v_next = slices.last().expect("previous level solved");
        let (v, policy, st) = step_backward_with(
            v_next,
            spec,
            grid,
            &actions,
            opts.tol,
            opts.max_iter,
            opts.nesting,
        )?;
        stats.push(st);
        slices.push(v);
        policies.push(policy);
    }
    slices.reverse();
    policies.reverse();
    stats.reverse();

    Ok(SolveResult {
        field: ValueField { slices },
        policies,
        fixed_point_stats: stats,
    })
}

/// Maximum absolute discrete residual of the solved field over interior
/// nodes and all time levels `k < K`:
/// `max{ min[(V_k - V_{k+1})/dt - L V_{k+1} - f, V_k - HsupV_k], V_k - HinfV_k }`.
pub fn residual(
    field: &ValueField,
    spec: &GameSpec,
    grid: &SpaceTimeGrid,
) -> Result<f64, SolveError> {
    let actions = build_actions(spec)?;
    let mut worst = 0.0f64;
    let mut index = vec![0usize; spec.dim];
    for k in 0..grid.steps {
        let v_k = &field.slices[k];
        let v_next = &field.slices[k + 1];
        let gen = generator_apply(v_next, spec)?;
        let (hs, _) = crate::intervention::h_sup_c(v_k, &spec.costs, &actions)?;
        let (hi, _) = crate::intervention::h_inf_chi(v_k, &spec.costs, &actions)?;
        for node in 0..v_k.node_count() {
            v_k.unflatten(node, &mut index);
            let interior = index
                .iter()
                .zip(v_k.axes())
                .all(|(&i, axis)| i > 0 && i < axis.count - 1);
            if !interior {
                continue;
            }
            let continuation =
                (v_k.values[node] - v_next.values[node]) / grid.dt - gen.values[node];
            let expr = continuation
                .min(v_k.values[node] - hs.values[node])
                .max(v_k.values[node] - hi.values[node]);
            worst = worst.max(expr.abs());
        }
    }
    Ok(worst)
}
