use serde::{Deserialize, Serialize};

use crate::geometry::WarpedMetric;
use crate::{Error, Result};

/// Largest admissible courant factor.
pub const MAX_COURANT: f64 = 0.9;

/// Uniform node grid on `[0,T] × [0,1]^n`.
///
/// Nodes sit at `x_a = i_a·dx`, `i_a = 0..=cells`, with axis 0 fastest in the
/// flat index. Time levels are `t_k = k·dt`, `k = 0..=steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeGrid {
    pub space_dim: usize,
    pub cells: usize,
    pub steps: usize,
    pub t_final: f64,
    pub courant: f64,
}

impl SpacetimeGrid {
    pub fn new(space_dim: usize, cells: usize, steps: usize, t_final: f64, courant: f64) -> Result<Self> {
        if !(2..=3).contains(&space_dim) {
            return Err(Error::Config(format!("spatial dimension must be 2 or 3, got {space_dim}")));
        }
        if cells < 2 || steps < 2 {
            return Err(Error::Config("grid needs at least two cells and two steps".into()));
        }
        if !(t_final > 0.0) {
            return Err(Error::Config("horizon T must be positive".into()));
        }
        if !(courant > 0.0 && courant <= MAX_COURANT) {
            return Err(Error::Config(format!("courant factor {courant} outside (0, {MAX_COURANT}]")));
        }
        Ok(SpacetimeGrid { space_dim, cells, steps, t_final, courant })
    }

    /// Smallest step count that satisfies the CFL bound for `g`.
    pub fn fitted(g: &WarpedMetric, cells: usize, t_final: f64, courant: f64) -> Result<Self> {
        let n = g.spatial_dim();
        let dx = 1.0 / cells as f64;
        let dt_max = courant * dx / ((n as f64).sqrt() * g.max_light_speed(0.0, t_final));
        let steps = (t_final / dt_max).ceil().max(2.0) as usize;
        Self::new(n, cells, steps, t_final, courant)
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.space_dim as u32)
    }

    pub fn levels(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.nodes_per_axis().pow(axis as u32)
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().map(|(a, &i)| i * self.stride(a)).sum()
    }

    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.nodes_per_axis()
    }

    /// Spacetime point `(t, x)` of a node at a level.
    pub fn point(&self, level: usize, node: usize) -> [f64; 4] {
        let mut p = [0.0; 4];
        p[0] = self.time(level);
        for a in 0..self.space_dim {
            p[a + 1] = self.axis_index(node, a) as f64 * self.dx();
        }
        p
    }

    /// Dual-cell width along an axis: `dx` inside, `dx/2` on the faces.
    pub fn dual_width(&self, i: usize) -> f64 {
        if i == 0 || i == self.cells {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }

    /// Dual-cell volume of a node.
    pub fn dual_volume(&self, node: usize) -> f64 {
        (0..self.space_dim).map(|a| self.dual_width(self.axis_index(node, a))).product()
    }

    /// Leapfrog stability: `dt ≤ courant·dx / (√n · max √(β/ψ))`.
    pub fn check_cfl(&self, g: &WarpedMetric) -> Result<()> {
        if g.spatial_dim() != self.space_dim {
            return Err(Error::Config(format!(
                "metric has {} spatial dimensions, grid has {}",
                g.spatial_dim(),
                self.space_dim
            )));
        }
        let c = g.max_light_speed(0.0, self.t_final);
        let bound = self.courant * self.dx() / ((self.space_dim as f64).sqrt() * c);
        if self.dt() > bound * (1.0 + 1e-12) {
            return Err(Error::Solver(format!(
                "CFL violated: dt = {:.4e} exceeds {:.4e} (courant {}, light speed {:.4})",
                self.dt(),
                bound,
                self.courant,
                c
            )));
        }
        Ok(())
    }

    /// The same grid with every resolution doubled.
    pub fn refined(&self) -> Self {
        SpacetimeGrid { cells: 2 * self.cells, steps: 2 * self.steps, ..self.clone() }
    }
}
