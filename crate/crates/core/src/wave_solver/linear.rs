use serde::{Deserialize, Serialize};

use super::boundary::{BoundaryLayout, BoundaryTrace, NeumannSource};
use super::grid::SpacetimeGrid;
use crate::geometry::WarpedMetric;
use crate::{Error, Result};

/// Direction of time marching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// zero data at `t = 0`
    Forward,
    /// zero data at `t = T`
    Backward,
}

/// Volume forcing `F` in `□_g u = F`, one time level at a time.
pub trait Forcing: Sync {
    /// Add `F(t_k, ·)` into `out` (pre-zeroed). Returns false when it is identically zero.
    fn fill(&self, level: usize, out: &mut [f64]) -> bool;
}

pub struct NoForcing;

impl Forcing for NoForcing {
    fn fill(&self, _: usize, _: &mut [f64]) -> bool {
        false
    }
}

/// Forcing stored on the full space-time grid.
pub struct DenseForcing<'a> {
    pub values: &'a [f64],
    pub nodes: usize,
}

impl Forcing for DenseForcing<'_> {
    fn fill(&self, level: usize, out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.values[level * self.nodes..(level + 1) * self.nodes]);
        true
    }
}

/// Forcing from a closure `F(t, x)`.
pub struct FnForcing<'a, F: Fn(&[f64]) -> f64 + Sync> {
    pub grid: &'a SpacetimeGrid,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Forcing for FnForcing<'_, F> {
    fn fill(&self, level: usize, out: &mut [f64]) -> bool {
        let n = self.grid.space_dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.f)(&self.grid.point(level, i)[..=n]);
        }
        true
    }
}

/// A solution on every node and level, with its boundary trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSolution {
    pub grid: SpacetimeGrid,
    /// level-major values, `u[k·nodes + i]`
    pub u: Vec<f64>,
    pub trace: BoundaryTrace,
}

impl FieldSolution {
    pub fn zeros(grid: &SpacetimeGrid) -> Self {
        FieldSolution {
            grid: grid.clone(),
            u: vec![0.0; grid.num_nodes() * grid.levels()],
            trace: BoundaryTrace::zeros(grid),
        }
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.num_nodes();
        &self.u[k * n..(k + 1) * n]
    }

    /// Central-difference `∂_t u` at a level (one-sided at the ends).
    pub fn velocity(&self, k: usize) -> Vec<f64> {
        let dt = self.grid.dt();
        let (a, b, h) = if k == 0 {
            (0, 1, dt)
        } else if k == self.grid.steps {
            (k - 1, k, dt)
        } else {
            (k - 1, k + 1, 2.0 * dt)
        };
        self.level(b).iter().zip(self.level(a)).map(|(p, m)| (p - m) / h).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn refresh_trace(&mut self) {
        let layout = BoundaryLayout::new(&self.grid);
        let n = self.grid.num_nodes();
        for k in 0..self.grid.levels() {
            let (u, tr) = (&self.u[k * n..(k + 1) * n], self.trace.level_mut(k));
            for (t, &i) in tr.iter_mut().zip(&layout.node) {
                *t = u[i];
            }
        }
    }
}

/// Per-level metric weights of the finite-volume scheme.
///
/// With `A = √|g|/β` and `b = √|g|/ψ` the equation `□_g u = F` reads
/// `∂_t(A ∂_t u) = ∂_a(b ∂_a u) − √|g| F`, and the Neumann flux through a face is
/// `b ∂_a u = ±√β ψ^{(n−1)/2} f`.
struct Weights<'a> {
    g: &'a WarpedMetric,
    grid: &'a SpacetimeGrid,
    layout: &'a BoundaryLayout,
    vol: Vec<f64>,
    static_mass: std::cell::OnceCell<Vec<f64>>,
    cached: Option<LevelWeights>,
}

#[derive(Clone)]
struct LevelWeights {
    /// `b` on faces times transverse area over `dx`, per axis, indexed by the lower node
    face: Vec<Vec<f64>>,
    /// `V √|g|`
    vsg: Vec<f64>,
    /// boundary flux weight per slot
    bflux: Vec<f64>,
}

impl<'a> Weights<'a> {
    fn new(g: &'a WarpedMetric, grid: &'a SpacetimeGrid, layout: &'a BoundaryLayout) -> Self {
        let vol = (0..grid.num_nodes()).map(|i| grid.dual_volume(i)).collect();
        Weights { g, grid, layout, vol, static_mass: Default::default(), cached: None }
    }

    fn sqrt_det(&self, beta: f64, psi: f64) -> f64 {
        beta.sqrt() * psi.powf(0.5 * self.grid.space_dim as f64)
    }

    /// `V·A` at time `t`.
    fn mass(&self, t: f64) -> Vec<f64> {
        if self.g.is_flat() {
            return self.vol.clone();
        }
        if self.g.is_static() {
            return self.static_mass.get_or_init(|| self.mass_at(0.0)).clone();
        }
        self.mass_at(t)
    }

    fn mass_at(&self, t: f64) -> Vec<f64> {
        let n = self.grid.space_dim;
        (0..self.grid.num_nodes())
            .map(|i| {
                let mut p = self.grid.point(0, i);
                p[0] = t;
                let f = self.g.factors(&p[..=n]);
                self.vol[i] * self.sqrt_det(f.beta, f.psi) / f.beta
            })
            .collect()
    }

    fn level(&mut self, k: usize) -> &LevelWeights {
        if self.cached.is_none() || !self.g.is_static() {
            let lw = self.compute(k);
            self.cached = Some(lw);
        }
        self.cached.as_ref().unwrap()
    }

    fn compute(&self, k: usize) -> LevelWeights {
        let grid = self.grid;
        let n = grid.space_dim;
        let nodes = grid.num_nodes();
        let dx = grid.dx();
        let b: Vec<f64> = (0..nodes)
            .map(|i| {
                if self.g.is_flat() {
                    return 1.0;
                }
                let f = self.g.factors(&grid.point(k, i)[..=n]);
                self.sqrt_det(f.beta, f.psi) / f.psi
            })
            .collect();
        let vsg = (0..nodes)
            .map(|i| {
                if self.g.is_flat() {
                    return self.vol[i];
                }
                let f = self.g.factors(&grid.point(k, i)[..=n]);
                self.vol[i] * self.sqrt_det(f.beta, f.psi)
            })
            .collect();
        let face = (0..n)
            .map(|a| {
                let s = grid.stride(a);
                (0..nodes)
                    .map(|i| {
                        if grid.axis_index(i, a) == grid.cells {
                            return 0.0;
                        }
                        let area: f64 =
                            (0..n).filter(|&c| c != a).map(|c| grid.dual_width(grid.axis_index(i, c))).product();
                        0.5 * (b[i] + b[i + s]) * area / dx
                    })
                    .collect()
            })
            .collect();
        LevelWeights { face, vsg, bflux: self.layout.flux_weights(self.g, k) }
    }
}

/// Solve `□_g u = F` with `∂_ν u = f` by leapfrog on the node grid.
///
/// Forward mode starts from `u = 0` before `t = 0`; backward mode from `u = 0`
/// after `t = T` and marches down. Only the real part of `f` is used.
pub fn solve_linear(
    g: &WarpedMetric,
    forcing: &dyn Forcing,
    f: &NeumannSource,
    mode: SolveMode,
) -> Result<FieldSolution> {
    solve_with_initial(g, forcing, f, mode, None)
}

/// As [`solve_linear`] with prescribed values on the first two levels in marching order.
pub fn solve_with_initial(
    g: &WarpedMetric,
    forcing: &dyn Forcing,
    f: &NeumannSource,
    mode: SolveMode,
    initial: Option<(&[f64], &[f64])>,
) -> Result<FieldSolution> {
    let grid = f.grid().clone();
    grid.check_cfl(g)?;
    let layout = BoundaryLayout::new(&grid);
    let nodes = grid.num_nodes();
    let dt = grid.dt();
    let mut sol = FieldSolution::zeros(&grid);
    let mut w = Weights::new(g, &grid, &layout);
    let order: Vec<usize> = match mode {
        SolveMode::Forward => (0..grid.levels()).collect(),
        SolveMode::Backward => (0..grid.levels()).rev().collect(),
    };
    let dir = if mode == SolveMode::Forward { 1.0 } else { -1.0 };
    let mut prev = vec![0.0; nodes];
    let mut cur = vec![0.0; nodes];
    if let Some((u0, u1)) = initial {
        if u0.len() != nodes || u1.len() != nodes {
            return Err(Error::Solver("initial data has the wrong size".into()));
        }
        prev.copy_from_slice(u0);
        cur.copy_from_slice(u1);
    }
    let mut rhs = vec![0.0; nodes];
    let mut force = vec![0.0; nodes];
    let t_of = |k: usize| grid.time(k);
    // mass at the half level behind the current one
    let (start, skip) = if initial.is_some() { (1, 1) } else { (0, 0) };
    let mut mass_behind = w.mass(t_of(order[start]) - dir * 0.5 * dt);
    if initial.is_some() {
        sol.u[order[0] * nodes..(order[0] + 1) * nodes].copy_from_slice(&prev);
    }
    for (j, &k) in order.iter().enumerate().skip(skip) {
        sol.u[k * nodes..(k + 1) * nodes].copy_from_slice(&cur);
        if j + 1 == order.len() {
            break;
        }
        let mass_ahead = w.mass(t_of(k) + dir * 0.5 * dt);
        let lw = w.level(k);
        // flux divergence
        rhs.iter_mut().for_each(|r| *r = 0.0);
        for (a, face) in lw.face.iter().enumerate() {
            let s = grid.stride(a);
            for i in 0..nodes - s {
                let c = face[i];
                if c != 0.0 {
                    let q = c * (cur[i + s] - cur[i]);
                    rhs[i] += q;
                    rhs[i + s] -= q;
                }
            }
        }
        let fk = f.data.level(k);
        for ((&i, &wb), &fv) in layout.node.iter().zip(&lw.bflux).zip(fk) {
            rhs[i] += wb * fv;
        }
        force.iter_mut().for_each(|x| *x = 0.0);
        if forcing.fill(k, &mut force) {
            for ((r, &fv), &v) in rhs.iter_mut().zip(&force).zip(&lw.vsg) {
                *r -= v * fv;
            }
        }
        let mut bad = false;
        for i in 0..nodes {
            let next = cur[i] + mass_behind[i] / mass_ahead[i] * (cur[i] - prev[i]) + dt * dt * rhs[i] / mass_ahead[i];
            bad |= !next.is_finite();
            prev[i] = cur[i];
            cur[i] = next;
        }
        if bad {
            return Err(Error::Solver(format!("non-finite values at t = {:.4} (unstable run)", t_of(k))));
        }
        mass_behind = mass_ahead;
    }
    sol.refresh_trace();
    Ok(sol)
}

/// Discrete energy `½ Σ V A (D_t u)² + ½ Σ b ∇u^{k} · ∇u^{k+1}` between levels `k`, `k+1`.
/// Conserved exactly by the scheme for static metrics without sources.
pub fn discrete_energy(g: &WarpedMetric, sol: &FieldSolution, k: usize) -> f64 {
    let grid = &sol.grid;
    let layout = BoundaryLayout::new(grid);
    let mut w = Weights::new(g, grid, &layout);
    let dt = grid.dt();
    let mass = w.mass(grid.time(k) + 0.5 * dt);
    let lw = w.level(k);
    let (a, b) = (sol.level(k), sol.level(k + 1));
    let mut e = 0.0;
    for i in 0..a.len() {
        e += 0.5 * mass[i] * ((b[i] - a[i]) / dt).powi(2);
    }
    for (ax, face) in lw.face.iter().enumerate() {
        let s = grid.stride(ax);
        for i in 0..a.len() - s {
            e += 0.5 * face[i] * (a[i + s] - a[i]) * (b[i + s] - b[i]);
        }
    }
    e
}
