//! Rectangular lattices, grid functions, and discrete action grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {axis}: {message}")]
    Axis { axis: usize, message: String },
    #[error("value array length {got} does not match lattice size {expected}")]
    ValueLength { got: usize, expected: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
}

/// Relative slack for deciding whether a displaced point still lies in the
/// domain box; absorbs roundoff at the outermost nodes.
const EDGE_REL_TOL: f64 = 1e-12;

/// One uniform axis of the space lattice: `count` nodes spanning
/// `[min, max]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self, GridError> {
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(GridError::Axis {
                axis: 0,
                message: format!("invalid range [{min}, {max}]"),
            });
        }
        if count < 2 {
            return Err(GridError::Axis {
                axis: 0,
                message: format!("need at least 2 nodes, got {count}"),
            });
        }
        Ok(Axis { min, max, count })
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    fn edge_tol(&self) -> f64 {
        EDGE_REL_TOL * (self.max - self.min).abs().max(1.0)
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.min - self.edge_tol() && p <= self.max + self.edge_tol()
    }
}

/// Real values on a rectangular space lattice at one time level.
/// Values are stored row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    axes: Vec<Axis>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl GridFunction {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>, time: f64) -> Result<Self, GridError> {
        let expected: usize = axes.iter().map(|a| a.count).product();
        if values.len() != expected {
            return Err(GridError::ValueLength { got: values.len(), expected });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { node });
        }
        Ok(GridFunction { axes, values, time })
    }

    pub fn constant(axes: Vec<Axis>, value: f64, time: f64) -> Self {
        let len: usize = axes.iter().map(|a| a.count).product();
        GridFunction { axes, values: vec![value; len], time }
    }

    /// Samples `func(coords)` at every node.
    pub fn tabulate<F: FnMut(&[f64]) -> f64>(
        axes: Vec<Axis>,
        time: f64,
        mut func: F,
    ) -> Self {
        let len: usize = axes.iter().map(|a| a.count).product();
        let mut values = Vec::with_capacity(len);
        let mut coords = vec![0.0; axes.len()];
        let mut index = vec![0usize; axes.len()];
        for _ in 0..len {
            for (d, axis) in axes.iter().enumerate() {
                coords[d] = axis.coord(index[d]);
            }
            values.push(func(&coords));
            // Odometer increment, last axis fastest.
            for d in (0..axes.len()).rev() {
                index[d] += 1;
                if index[d] < axes[d].count {
                    break;
                }
                index[d] = 0;
            }
        }
        GridFunction { axes, values, time }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    /// Multi-index of a flat node index (last axis fastest).
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for d in (0..self.axes.len()).rev() {
            out[d] = flat % self.axes[d].count;
            flat /= self.axes[d].count;
        }
    }

    pub fn flatten(&self, index: &[usize]) -> usize {
        let mut flat = 0;
        for (d, &i) in index.iter().enumerate() {
            flat = flat * self.axes[d].count + i;
        }
        flat
    }

    pub fn node_coords(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0usize; self.axes.len()];
        self.unflatten(flat, &mut idx);
        for (d, axis) in self.axes.iter().enumerate() {
            out[d] = axis.coord(idx[d]);
        }
    }

    /// Multilinear interpolation. Returns `None` when `point` lies outside
    /// the domain box (beyond a tiny roundoff tolerance).
    pub fn interp(&self, point: &[f64]) -> Option<f64> {
        debug_assert_eq!(point.len(), self.axes.len());
        let dim = self.axes.len();
        let mut base = [0usize; 8];
        let mut weight = [0.0f64; 8];
        for (d, axis) in self.axes.iter().enumerate() {
            let p = point[d];
            if !axis.contains(p) {
                return None;
            }
            let clamped = p.clamp(axis.min, axis.max);
            let u = (clamped - axis.min) / axis.spacing();
            let mut cell = u.floor() as usize;
            if cell >= axis.count - 1 {
                cell = axis.count - 2;
            }
            base[d] = cell;
            weight[d] = (u - cell as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0;
            for d in 0..dim {
                let hi = (corner >> d) & 1 == 1;
                w *= if hi { weight[d] } else { 1.0 - weight[d] };
                flat = flat * self.axes[d].count + base[d] + usize::from(hi);
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        Some(acc)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn oscillation(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }
}

/// Finite action grids for the two players. Index 0 of each list is the
/// zero action; the rest are sorted lexicographically. The player-II list
/// is a subset of the player-I list by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    pub player_i: Vec<Vec<f64>>,
    pub player_ii: Vec<Vec<f64>>,
}

impl ActionGrid {
    pub fn new(player_i: Vec<Vec<f64>>, player_ii: Vec<Vec<f64>>) -> Result<Self, GridError> {
        let grid = ActionGrid { player_i, player_ii };
        grid.check_invariants()?;
        Ok(grid)
    }

    pub fn check_invariants(&self) -> Result<(), GridError> {
        let has_zero = |list: &[Vec<f64>]| list.iter().any(|a| a.iter().all(|&c| c == 0.0));
        if !has_zero(&self.player_i) || !has_zero(&self.player_ii) {
            return Err(GridError::Axis {
                axis: 0,
                message: "action grids must contain the zero action".to_string(),
            });
        }
        for action in &self.player_ii {
            if !self.player_i.iter().any(|a| a == action) {
                return Err(GridError::Axis {
                    axis: 0,
                    message: format!("player-II action {action:?} missing from player-I grid"),
                });
            }
        }
        Ok(())
    }
}

/// Orders action vectors with the zero action first, the remainder sorted
/// lexicographically; this fixes the smallest-index tie-break.
pub fn order_actions(mut actions: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    actions.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    actions.dedup();
    if let Some(pos) = actions.iter().position(|a| a.iter().all(|&c| c == 0.0)) {
        let zero = actions.remove(pos);
        actions.insert(0, zero);
    }
    actions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(min: f64, max: f64, count: usize) -> Axis {
        Axis::new(min, max, count).unwrap()
    }

    #[test]
    fn interp_1d_matches_linear() {
        let g = GridFunction::tabulate(vec![axis(-1.0, 1.0, 3)], 0.0, |x| 2.0 * x[0] + 1.0);
        assert_eq!(g.values, vec![-1.0, 1.0, 3.0]);
        assert_eq!(g.interp(&[0.5]).unwrap(), 2.0);
        assert_eq!(g.interp(&[-1.0]).unwrap(), -1.0);
        assert_eq!(g.interp(&[1.0]).unwrap(), 3.0);
        assert!(g.interp(&[1.1]).is_none());
        assert!(g.interp(&[-1.0000001]).is_none());
    }

    #[test]
    fn interp_2d_bilinear() {
        let g = GridFunction::tabulate(
            vec![axis(0.0, 1.0, 2), axis(0.0, 1.0, 2)],
            0.0,
            |x| x[0] * x[1],
        );
        // Bilinear through corners (0,0,0), (1,1,1): value at center is 0.25.
        assert!((g.interp(&[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(g.interp(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn flatten_roundtrip() {
        let g = GridFunction::constant(vec![axis(0.0, 1.0, 3), axis(0.0, 1.0, 4)], 0.0, 0.0);
        let mut idx = [0usize; 2];
        for flat in 0..g.node_count() {
            g.unflatten(flat, &mut idx);
            assert_eq!(g.flatten(&idx), flat);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let err = GridFunction::new(vec![axis(0.0, 1.0, 2)], vec![1.0, f64::NAN], 0.0);
        assert!(matches!(err, Err(GridError::NonFinite { node: 1 })));
    }

    #[test]
    fn order_puts_zero_first() {
        let ordered = order_actions(vec![vec![2.0], vec![-2.0], vec![0.0]]);
        assert_eq!(ordered, vec![vec![0.0], vec![-2.0], vec![2.0]]);
    }

    #[test]
    fn subset_invariant_enforced() {
        let bad = ActionGrid::new(vec![vec![0.0], vec![1.0]], vec![vec![0.0], vec![0.5]]);
        assert!(bad.is_err());
        let good = ActionGrid::new(vec![vec![0.0], vec![1.0]], vec![vec![0.0], vec![1.0]]);
        assert!(good.is_ok());
    }
}
