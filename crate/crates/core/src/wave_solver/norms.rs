use serde::{Deserialize, Serialize};

use super::grid::SpacetimeGrid;
use super::linear::FieldSolution;
use crate::{Error, Result};

/// Discrete `sup_t Σ_{k≤m} ‖∂_t^k w(t)‖²_{H^{m−k}}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZNorm {
    pub m: usize,
    pub value: f64,
}

impl ZNorm {
    pub fn sqrt(&self) -> f64 {
        self.value.sqrt()
    }
}

pub fn z_norm(u: &FieldSolution, m: usize) -> Result<ZNorm> {
    z_norm_of(&u.grid, &u.u, m)
}

/// Z-norm of level-major grid values.
pub fn z_norm_of(grid: &SpacetimeGrid, u: &[f64], m: usize) -> Result<ZNorm> {
    let nodes = grid.num_nodes();
    if u.len() != nodes * grid.levels() {
        return Err(Error::Solver("field does not match its grid".into()));
    }
    if grid.steps < 2 * m + 1 || grid.cells < m + 1 {
        return Err(Error::Solver(format!("Sobolev order {m} too large for the grid")));
    }
    let dt = grid.dt();
    let vol: Vec<f64> = (0..nodes).map(|i| grid.dual_volume(i)).collect();
    let mut sup: f64 = 0.0;
    let mut buf = vec![0.0; nodes];
    for k in 0..grid.levels() {
        let mut total = 0.0;
        for j in 0..=m {
            // centred j-th difference where possible, shifted inward at the ends
            let lo = k.saturating_sub(j / 2).min(grid.steps - j);
            buf.iter_mut().for_each(|b| *b = 0.0);
            let mut binom = 1.0;
            for r in 0..=j {
                let sign = if (j - r) % 2 == 0 { 1.0 } else { -1.0 };
                let lvl = &u[(lo + r) * nodes..(lo + r + 1) * nodes];
                for (b, v) in buf.iter_mut().zip(lvl) {
                    *b += sign * binom * v;
                }
                binom = binom * (j - r) as f64 / (r + 1) as f64;
            }
            let scale = dt.powi(j as i32);
            buf.iter_mut().for_each(|b| *b /= scale);
            total += sobolev_sq(grid, &buf, &vol, m - j);
        }
        sup = sup.max(total);
    }
    Ok(ZNorm { m, value: sup })
}

/// `Σ_{|α|≤s} ‖D^α w‖²` with forward differences and dual-volume weights.
fn sobolev_sq(grid: &SpacetimeGrid, w: &[f64], vol: &[f64], s: usize) -> f64 {
    sobolev_sq_from(grid, w, vol, s, 0)
}

// derivatives are taken along non-decreasing axes so each multi-index is counted once
fn sobolev_sq_from(grid: &SpacetimeGrid, w: &[f64], vol: &[f64], s: usize, first: usize) -> f64 {
    let mut total: f64 = w.iter().zip(vol).map(|(v, c)| c * v * v).sum();
    if s == 0 {
        return total;
    }
    let dx = grid.dx();
    for a in first..grid.space_dim {
        let st = grid.stride(a);
        let d: Vec<f64> = (0..w.len())
            .map(|i| if grid.axis_index(i, a) < grid.cells { (w[i + st] - w[i]) / dx } else { 0.0 })
            .collect();
        total += sobolev_sq_from(grid, &d, vol, s - 1, a);
    }
    total
}
