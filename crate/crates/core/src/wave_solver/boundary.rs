use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::SpacetimeGrid;
use crate::geometry::WarpedMetric;
use crate::{Error, Result};

/// Boundary nodes of the box, face by face.
///
/// Face `2a + s` is `x_a = s`. Nodes on edges and corners appear once per face
/// they belong to. Inside a face the remaining axes are enumerated in
/// increasing order, the lowest one fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLayout {
    pub grid: SpacetimeGrid,
    /// grid node of every boundary slot
    pub node: Vec<usize>,
    /// face of every boundary slot
    pub face: Vec<usize>,
    /// transverse dual area of every slot
    pub area: Vec<f64>,
}

impl BoundaryLayout {
    pub fn new(grid: &SpacetimeGrid) -> Self {
        let n = grid.space_dim;
        let np = grid.nodes_per_axis();
        let per_face = np.pow(n as u32 - 1);
        let mut node = Vec::with_capacity(2 * n * per_face);
        let mut face = Vec::with_capacity(2 * n * per_face);
        let mut area = Vec::with_capacity(2 * n * per_face);
        for a in 0..n {
            for s in 0..2 {
                for local in 0..per_face {
                    let mut idx = [0usize; 3];
                    let mut r = local;
                    let mut w = 1.0;
                    for b in (0..n).filter(|&b| b != a) {
                        idx[b] = r % np;
                        r /= np;
                        w *= grid.dual_width(idx[b]);
                    }
                    idx[a] = s * grid.cells;
                    node.push(grid.node_index(&idx[..n]));
                    face.push(2 * a + s);
                    area.push(w);
                }
            }
        }
        BoundaryLayout { grid: grid.clone(), node, face, area }
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    /// Flux weight `σ = √β ψ^{(n-1)/2}` times the dual area, per slot, at a level.
    pub fn flux_weights(&self, g: &WarpedMetric, level: usize) -> Vec<f64> {
        let n = self.grid.space_dim as i32;
        self.node
            .iter()
            .zip(&self.area)
            .map(|(&i, &w)| {
                let f = g.factors(&self.grid.point(level, i));
                f.beta.sqrt() * f.psi.powf(0.5 * (n - 1) as f64) * w
            })
            .collect()
    }

    /// `+1` on the faces `x_a = 1`, `-1` on `x_a = 0`.
    pub fn outward_sign(&self, slot: usize) -> f64 {
        if self.face[slot] % 2 == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Real data on `[0,T] × ∂N`, one row of boundary slots per time level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub grid: SpacetimeGrid,
    pub values: Vec<f64>,
}

/// Dirichlet trace of a solution.
pub type BoundaryTrace = BoundaryData;

impl BoundaryData {
    pub fn zeros(grid: &SpacetimeGrid) -> Self {
        let len = BoundaryLayout::new(grid).len();
        BoundaryData { grid: grid.clone(), values: vec![0.0; len * grid.levels()] }
    }

    pub fn slots(&self) -> usize {
        self.values.len() / self.grid.levels()
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let s = self.slots();
        &self.values[k * s..(k + 1) * s]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.slots();
        &mut self.values[k * s..(k + 1) * s]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        BoundaryData { grid: self.grid.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `Σ c_i d_i` over traces on one grid.
    pub fn combine(terms: &[(f64, &BoundaryData)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::Solver("empty combination".into()))?.1;
        let mut out = BoundaryData { grid: first.grid.clone(), values: vec![0.0; first.values.len()] };
        for (c, d) in terms {
            check_same_grid(first, d)?;
            for (o, v) in out.values.iter_mut().zip(&d.values) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Relative L² distance `‖a − b‖ / ‖b‖` over all levels and slots.
    pub fn relative_l2(&self, reference: &BoundaryData) -> Result<f64> {
        check_same_grid(self, reference)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in self.values.iter().zip(&reference.values) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        if den == 0.0 {
            return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
        }
        Ok((num / den).sqrt())
    }
}

fn check_same_grid(a: &BoundaryData, b: &BoundaryData) -> Result<()> {
    if a.grid != b.grid || a.values.len() != b.values.len() {
        return Err(Error::Solver("boundary data live on different grids".into()));
    }
    Ok(())
}

/// `∫_{(0,T)×∂N} a b dS_g`: trapezoid in time, dual areas on the faces.
pub fn boundary_pairing(g: &WarpedMetric, a: &BoundaryData, b: &BoundaryData) -> Result<f64> {
    check_same_grid(a, b)?;
    let grid = &a.grid;
    let layout = BoundaryLayout::new(grid);
    let stat = g.is_static();
    let w0 = layout.flux_weights(g, 0);
    let mut total = 0.0;
    for k in 0..grid.levels() {
        let wt = if k == 0 || k == grid.steps { 0.5 } else { 1.0 } * grid.dt();
        let wk;
        let w = if stat {
            &w0
        } else {
            wk = layout.flux_weights(g, k);
            &wk
        };
        let s: f64 = a.level(k).iter().zip(b.level(k)).zip(w).map(|((x, y), w)| x * y * w).sum();
        total += wt * s;
    }
    Ok(total)
}

/// C^∞ ramp: 0 for `s ≤ 0`, 1 for `s ≥ 1`.
pub fn smooth_ramp(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

/// Neumann data `∂_ν u = f`, possibly complex. The solver consumes real
/// parts; [`NeumannSource::imag_part`] exposes the rest as its own source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannSource {
    pub data: BoundaryData,
    pub imag: Option<Vec<f64>>,
    /// number of vanishing time derivatives at `t = 0` (or `t = T` for backward sources)
    pub compat_order: usize,
}

impl NeumannSource {
    pub fn zero(grid: &SpacetimeGrid) -> Self {
        NeumannSource { data: BoundaryData::zeros(grid), imag: None, compat_order: 0 }
    }

    pub fn grid(&self) -> &SpacetimeGrid {
        &self.data.grid
    }

    /// Sample `f(t, x, face)`.
    pub fn from_fn(grid: &SpacetimeGrid, compat_order: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let layout = BoundaryLayout::new(grid);
        let mut data = BoundaryData::zeros(grid);
        for k in 0..grid.levels() {
            let row = data.level_mut(k);
            for (s, v) in row.iter_mut().enumerate() {
                *v = f(&grid.point(k, layout.node[s])[..=grid.space_dim], layout.face[s]);
            }
        }
        NeumannSource { data, imag: None, compat_order }
    }

    /// Sample a complex `f(t, x, face)`.
    pub fn from_complex_fn(grid: &SpacetimeGrid, compat_order: usize, f: impl Fn(&[f64], usize) -> Complex64) -> Self {
        let layout = BoundaryLayout::new(grid);
        let mut data = BoundaryData::zeros(grid);
        let mut imag = vec![0.0; data.values.len()];
        let slots = layout.len();
        for k in 0..grid.levels() {
            for s in 0..slots {
                let v = f(&grid.point(k, layout.node[s])[..=grid.space_dim], layout.face[s]);
                data.values[k * slots + s] = v.re;
                imag[k * slots + s] = v.im;
            }
        }
        NeumannSource { data, imag: Some(imag), compat_order }
    }

    pub fn real_part(&self) -> NeumannSource {
        NeumannSource { data: self.data.clone(), imag: None, compat_order: self.compat_order }
    }

    pub fn imag_part(&self) -> NeumannSource {
        let values = self.imag.clone().unwrap_or_else(|| vec![0.0; self.data.values.len()]);
        NeumannSource {
            data: BoundaryData { grid: self.data.grid.clone(), values },
            imag: None,
            compat_order: self.compat_order,
        }
    }

    /// `Σ c_i f_i`, real parts only.
    pub fn combine(terms: &[(f64, &NeumannSource)]) -> Result<Self> {
        let parts: Vec<(f64, &BoundaryData)> = terms.iter().map(|(c, s)| (*c, &s.data)).collect();
        let data = BoundaryData::combine(&parts)?;
        let compat_order = terms.iter().map(|t| t.1.compat_order).min().unwrap_or(0);
        Ok(NeumannSource { data, imag: None, compat_order })
    }

    pub fn scaled(&self, c: f64) -> Self {
        NeumannSource {
            data: self.data.scaled(c),
            imag: self.imag.as_ref().map(|v| v.iter().map(|x| c * x).collect()),
            compat_order: self.compat_order,
        }
    }

    /// Discrete `C¹` size: `max |f| + max |∂_t f|`.
    pub fn c1_norm(&self) -> f64 {
        let grid = self.grid();
        let dt = grid.dt();
        let mut d1: f64 = 0.0;
        for k in 0..grid.steps {
            for (a, b) in self.data.level(k).iter().zip(self.data.level(k + 1)) {
                d1 = d1.max((b - a).abs() / dt);
            }
        }
        self.data.max_abs() + d1
    }

    /// Largest one-sided difference estimate of `∂_t^ℓ f`, `ℓ < compat_order`,
    /// at the chosen end (`t = 0` when `at_start`).
    pub fn compatibility_defect(&self, at_start: bool) -> f64 {
        let grid = self.grid();
        let dt = grid.dt();
        let level = |j: usize| if at_start { self.data.level(j) } else { self.data.level(grid.steps - j) };
        let mut worst: f64 = 0.0;
        for l in 0..self.compat_order.min(grid.steps) {
            // forward difference of order ℓ
            let mut binom = 1.0;
            let mut acc = vec![0.0; self.data.slots()];
            for j in 0..=l {
                let sign = if (l - j) % 2 == 0 { 1.0 } else { -1.0 };
                for (a, v) in acc.iter_mut().zip(level(j)) {
                    *a += sign * binom * v;
                }
                binom = binom * (l - j) as f64 / (j + 1) as f64;
            }
            let scale = dt.powi(l as i32);
            worst = worst.max(acc.iter().fold(0.0, |m: f64, v| m.max(v.abs())) / scale);
        }
        worst
    }

    /// Check that the source vanishes to the declared order at `t = 0`.
    pub fn check_compatibility(&self, at_start: bool, tol: f64) -> Result<()> {
        let d = self.compatibility_defect(at_start);
        if d > tol {
            return Err(Error::Solver(format!(
                "Neumann source not compatible to order {}: one-sided derivative {d:.3e} > {tol:.1e}",
                self.compat_order
            )));
        }
        Ok(())
    }
}
