use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::boundary::{BoundaryTrace, NeumannSource};
use super::linear::{solve_linear, FieldSolution, Forcing, NoForcing, SolveMode};
use super::nonlinearity::{NonlinearityProfile, SampledProfile};
use super::norms::z_norm_of;
use crate::geometry::WarpedMetric;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardOptions {
    /// stop once the iterate distance falls below `tol · ‖u‖_Z`
    pub tol: f64,
    pub max_iter: usize,
    /// Sobolev order of the distance
    pub z_order: usize,
    /// smallness threshold on the discrete `C¹` norm of the source
    pub eps0: Option<f64>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-10, max_iter: 50, z_order: 1, eps0: None }
    }
}

#[derive(Clone, Debug)]
pub struct SemilinearSolution {
    pub field: FieldSolution,
    /// `‖u_{k+1} − u_k‖_Z` per iteration
    pub distances: Vec<f64>,
    /// successive distance ratios
    pub ratios: Vec<f64>,
}

impl SemilinearSolution {
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    /// Largest ratio among iterations whose distances sit above roundoff.
    pub fn contraction_ratio(&self) -> f64 {
        let floor = self.distances.first().copied().unwrap_or(0.0) * 1e-9;
        let mut worst: f64 = 0.0;
        for (i, r) in self.ratios.iter().enumerate() {
            if self.distances[i] > floor && self.distances[i + 1] > 0.0 {
                worst = worst.max(*r);
            }
        }
        worst
    }
}

/// `F = −Σ h_k u^k` built from the previous iterate.
struct NonlinearForcing<'a> {
    profile: &'a SampledProfile,
    u: &'a [f64],
    nodes: usize,
}

impl Forcing for NonlinearForcing<'_> {
    fn fill(&self, level: usize, out: &mut [f64]) -> bool {
        let u = &self.u[level * self.nodes..(level + 1) * self.nodes];
        let mut any = false;
        for (k, field) in &self.profile.degrees {
            for &(i, h) in &field.entries[level] {
                out[i as usize] -= h * u[i as usize].powi(*k as i32);
                any = true;
            }
        }
        any
    }
}

/// Solve `□_g u + H(x, u) = 0`, `∂_ν u = f`, by Picard iteration on the linear solver.
pub fn solve_semilinear(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    f: &NeumannSource,
    opts: &PicardOptions,
) -> Result<SemilinearSolution> {
    h.validate(g.dim)?;
    if let Some(eps0) = opts.eps0 {
        let size = f.c1_norm();
        if size > eps0 {
            return Err(Error::Picard {
                reason: format!("source norm {size:.3e} exceeds the smallness threshold {eps0:.3e}"),
                ratios: vec![],
            });
        }
    }
    let grid = f.grid();
    let src = f.real_part();
    let mut u = solve_linear(g, &NoForcing, &src, SolveMode::Forward)?;
    let sampled = SampledProfile::new(h, grid);
    if sampled.is_empty() {
        return Ok(SemilinearSolution { field: u, distances: vec![], ratios: vec![] });
    }
    let nodes = grid.num_nodes();
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut growing = 0;
    for _ in 0..opts.max_iter {
        let forcing = NonlinearForcing { profile: &sampled, u: &u.u, nodes };
        let next = solve_linear(g, &forcing, &src, SolveMode::Forward)?;
        let diff: Vec<f64> = next.u.iter().zip(&u.u).map(|(a, b)| a - b).collect();
        let d = z_norm_of(grid, &diff, opts.z_order)?.sqrt();
        let size = z_norm_of(grid, &next.u, opts.z_order)?.sqrt();
        if let Some(&last) = distances.last() {
            let r: f64 = if last > 0.0 { d / last } else { 0.0 };
            ratios.push(r);
            growing = if r >= 1.0 { growing + 1 } else { 0 };
        }
        distances.push(d);
        u = next;
        if !d.is_finite() || growing >= 2 {
            return Err(Error::Picard { reason: "iteration diverges".into(), ratios });
        }
        if d <= opts.tol * size.max(f64::MIN_POSITIVE) {
            return Ok(SemilinearSolution { field: u, distances, ratios });
        }
    }
    Err(Error::Picard { reason: format!("no convergence in {} iterations", opts.max_iter), ratios })
}

/// `Λ f = u|_{∂M}` for the semilinear problem.
pub fn nd_map(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    f: &NeumannSource,
    opts: &PicardOptions,
) -> Result<BoundaryTrace> {
    Ok(solve_semilinear(g, h, f, opts)?.field.trace)
}

/// Result of the smallness search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallnessThreshold {
    /// largest admissible multiple of the source shape
    pub scale: f64,
    /// `C¹` norm of the scaled source
    pub eps0: f64,
    pub ratio: f64,
}

fn cache() -> &'static Mutex<HashMap<String, SmallnessThreshold>> {
    static CACHE: OnceLock<Mutex<HashMap<String, SmallnessThreshold>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Largest `s` (to a relative bisection width of 5%) for which `s·f` keeps the
/// measured contraction ratio at or below `target`. Results are cached per input.
pub fn smallness_threshold(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    shape: &NeumannSource,
    target: f64,
    opts: &PicardOptions,
) -> Result<SmallnessThreshold> {
    let key = {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&(g, h, target, opts.tol, opts.z_order)).unwrap_or_default());
        hasher.update(serde_json::to_vec(&shape.data.grid).unwrap_or_default());
        for v in &shape.data.values {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    };
    if let Some(t) = cache().lock().unwrap().get(&key) {
        return Ok(*t);
    }
    let opts = PicardOptions { eps0: None, ..opts.clone() };
    let ratio_at = |s: f64| -> f64 {
        match solve_semilinear(g, h, &shape.scaled(s), &opts) {
            Ok(sol) => sol.contraction_ratio(),
            Err(_) => f64::INFINITY,
        }
    };
    let unit = shape.c1_norm();
    if unit == 0.0 {
        return Err(Error::Solver("smallness search needs a nonzero source shape".into()));
    }
    // bracket: grow from a scale with unit source norm
    let (mut lo, mut hi) = (0.0, 1.0 / unit);
    let mut r_lo = 0.0;
    let mut steps = 0;
    loop {
        let r = ratio_at(hi);
        if r > target {
            break;
        }
        lo = hi;
        r_lo = r;
        hi *= 4.0;
        steps += 1;
        if steps > 30 {
            // the nonlinearity never bites on this source
            let t = SmallnessThreshold { scale: lo, eps0: lo * unit, ratio: r_lo };
            cache().lock().unwrap().insert(key, t);
            return Ok(t);
        }
    }
    while hi - lo > 0.05 * hi {
        let mid = if lo == 0.0 { 0.25 * hi } else { 0.5 * (lo + hi) };
        let r = ratio_at(mid);
        if r <= target {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
        }
        if hi < 1e-12 / unit {
            return Err(Error::Solver("no admissible amplitude found".into()));
        }
    }
    let t = SmallnessThreshold { scale: lo, eps0: lo * unit, ratio: r_lo };
    cache().lock().unwrap().insert(key, t);
    Ok(t)
}
