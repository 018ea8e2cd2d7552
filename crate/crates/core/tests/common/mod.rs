//! Shared helpers for the integration suites: config fixtures and
//! standalone scalar oracles that deliberately reimplement the solver's
//! arithmetic without touching its code paths.

#![allow(dead_code)]

use impulse_game::problem::{load_problem, GameSpec, LoadOptions};

pub const CANONICAL_1D: &str = include_str!("../../../../configs/canonical-1d.cfg");

pub fn canonical_spec() -> GameSpec {
    load_problem(CANONICAL_1D, &LoadOptions::default()).unwrap()
}

/// Tiny lattice variant of the canonical game: same tent payoff and costs,
/// but only three impulse actions per player.
pub fn tiny_canonical_config() -> String {
    CANONICAL_1D
        .replace("r_max = 12", "r_max = 2")
        .replace("m_imp = 49", "m_imp = 3")
}

pub fn tiny_canonical_spec() -> GameSpec {
    load_problem(&tiny_canonical_config(), &LoadOptions::default()).unwrap()
}

/// Costs-dominate fixture: nothing is ever worth an impulse.
pub fn costs_dominate_config(f: &str, g: &str, sigma: &str) -> String {
    format!(
        "[horizon]\nT = 1\n[dynamics]\nn = 1\nb = \"0\"\nsigma = \"{sigma}\"\n\
         [gains]\nf = \"{f}\"\ng = \"{g}\"\n[costs]\nc = \"2\"\nchi = \"1\"\nh_min = 0.5\n\
         [actions]\nU = \"line\"\nV = \"line\"\nr_max = 2\nm_imp = 3\n\
         [domain]\nx_min = -15\nx_max = 15\n"
    )
}

/// Standalone 1-d linear interpolation on a uniform lattice.
pub fn lin_interp(x_lo: f64, x_hi: f64, vals: &[f64], p: f64) -> Option<f64> {
    let n = vals.len();
    let dx = (x_hi - x_lo) / (n - 1) as f64;
    let slack = 1e-12 * (x_hi - x_lo).abs().max(1.0);
    if p < x_lo - slack || p > x_hi + slack {
        return None;
    }
    let q = p.clamp(x_lo, x_hi);
    let u = (q - x_lo) / dx;
    let mut cell = u.floor() as usize;
    if cell >= n - 1 {
        cell = n - 2;
    }
    let w = (u - cell as f64).clamp(0.0, 1.0);
    Some((1.0 - w) * vals[cell] + w * vals[cell + 1])
}

/// Brute-force obstacle fixed point on a 1-d lattice:
/// `v <- min( min_z v(x+z) + chi(z), max(w, max_y v(x+y) - c(y)) )`
/// iterated until the sup-norm change vanishes (or stays below `tol` for
/// a stretch).
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_oracle_1d(
    x_lo: f64,
    x_hi: f64,
    w: &[f64],
    actions_i: &[f64],
    cost_i: impl Fn(f64) -> f64,
    actions_ii: &[f64],
    cost_ii: impl Fn(f64) -> f64,
    tol: f64,
) -> Vec<f64> {
    let n = w.len();
    let dx = (x_hi - x_lo) / (n - 1) as f64;
    let mut v = w.to_vec();
    let mut calm = 0;
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        let mut change = 0.0f64;
        for j in 0..n {
            let x = x_lo + j as f64 * dx;
            let mut sup_side = f64::NEG_INFINITY;
            for &y in actions_i {
                if let Some(val) = lin_interp(x_lo, x_hi, &v, x + y) {
                    sup_side = sup_side.max(val - cost_i(y));
                }
            }
            let mut inf_side = f64::INFINITY;
            for &z in actions_ii {
                if let Some(val) = lin_interp(x_lo, x_hi, &v, x + z) {
                    inf_side = inf_side.min(val + cost_ii(z));
                }
            }
            next[j] = inf_side.min(w[j].max(sup_side));
            change = change.max((next[j] - v[j]).abs());
        }
        v = next;
        if change == 0.0 {
            return v;
        }
        if change < tol {
            calm += 1;
            if calm > 64 {
                return v;
            }
        } else {
            calm = 0;
        }
    }
    panic!("oracle fixed point did not stabilize");
}

/// One explicit backward step of the scalar scheme: Euler continuation
/// with upwind first and central second differences (one-sided at the
/// boundary, second derivative zeroed there), then the obstacle fixed
/// point.
#[allow(clippy::too_many_arguments)]
pub fn one_step_oracle_1d(
    x_lo: f64,
    x_hi: f64,
    v_next: &[f64],
    dt: f64,
    drift: impl Fn(f64) -> f64,
    sigma: impl Fn(f64) -> f64,
    running: impl Fn(f64) -> f64,
    actions_i: &[f64],
    cost_i: impl Fn(f64) -> f64,
    actions_ii: &[f64],
    cost_ii: impl Fn(f64) -> f64,
    tol: f64,
) -> Vec<f64> {
    let n = v_next.len();
    let dx = (x_hi - x_lo) / (n - 1) as f64;
    let mut w = vec![0.0; n];
    for j in 0..n {
        let x = x_lo + j as f64 * dx;
        let b = drift(x);
        let s = sigma(x);
        let d1 = if j == 0 {
            (v_next[1] - v_next[0]) / dx
        } else if j == n - 1 {
            (v_next[j] - v_next[j - 1]) / dx
        } else if b >= 0.0 {
            (v_next[j + 1] - v_next[j]) / dx
        } else {
            (v_next[j] - v_next[j - 1]) / dx
        };
        let d2 = if j == 0 || j == n - 1 {
            0.0
        } else {
            (v_next[j + 1] - 2.0 * v_next[j] + v_next[j - 1]) / (dx * dx)
        };
        w[j] = v_next[j] + dt * (b * d1 + 0.5 * s * s * d2 + running(x));
    }
    fixed_point_oracle_1d(x_lo, x_hi, &w, actions_i, cost_i, actions_ii, cost_ii, tol)
}

/// The canonical action lattice: 49 points spanning [-12, 12].
pub fn canonical_actions() -> Vec<f64> {
    (-24..=24).map(|k| k as f64 * 0.5).collect()
}

/// The canonical tent payoff sampled on `n` nodes over [-15, 15].
pub fn canonical_payoff(n: usize) -> Vec<f64> {
    let dx = 30.0 / (n - 1) as f64;
    (0..n).map(|j| (10.0 - (-15.0 + j as f64 * dx).abs()).max(0.0)).collect()
}
