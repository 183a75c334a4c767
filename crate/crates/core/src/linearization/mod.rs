//! Higher-order linearization of the ND map.
//!
//! With sources `Σ ε_i f_i` the solution expands as
//! `u = Σ_β ε^β U_β / β!`, and each `U_β` solves a linear problem forced by
//! `−∂^β H(x, u(ε))|_{ε=0}`. [`mixed_derivative_ndmap`] approximates the
//! traces of `U_α` by finite differences of nonlinear runs;
//! [`cascade_solve`] computes them directly.

mod cascade;
mod stencil;

use rayon::prelude::*;

pub use cascade::{
    cascade_all, cascade_recipe, cascade_solve, check_supported, recipe_density, sub_indices, Cascade, CascadeRecipe,
    CascadeTerm, MultiIndex, RecipeTerm,
};
pub use stencil::{central_weights, EpsilonStencil, StencilNode};

use crate::geometry::WarpedMetric;
use crate::wave_solver::{
    nd_map, solve_linear, BoundaryTrace, FieldSolution, NeumannSource, NoForcing, NonlinearityProfile, PicardOptions,
    SolveMode,
};
use crate::{Error, Result};

/// Default ε step.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Disagreement between successive halvings tolerated by [`mixed_derivative_adaptive`].
pub const HALVING_TOL: f64 = 0.2;

/// `∂^α Λ(Σ ε_i f_i)|_{ε=0}` by the stencil, running the nonlinear solver at every node.
pub fn mixed_derivative_ndmap(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    sources: &[NeumannSource],
    stencil: &EpsilonStencil,
    opts: &PicardOptions,
) -> Result<BoundaryTrace> {
    if stencil.orders.len() != sources.len() {
        return Err(Error::Linearization(format!(
            "stencil has {} parameters for {} sources",
            stencil.orders.len(),
            sources.len()
        )));
    }
    let traces: Vec<BoundaryTrace> = stencil
        .nodes
        .par_iter()
        .map(|node| {
            let terms: Vec<(f64, &NeumannSource)> = node.eps.iter().copied().zip(sources.iter()).collect();
            let f = NeumannSource::combine(&terms)?;
            nd_map(g, h, &f, opts)
        })
        .collect::<Result<_>>()?;
    // fixed summation order
    let terms: Vec<(f64, &BoundaryTrace)> = stencil.nodes.iter().map(|n| n.weight).zip(traces.iter()).collect();
    BoundaryTrace::combine(&terms)
}

/// Result of the step-halving loop.
#[derive(Clone, Debug)]
pub struct AdaptiveDerivative {
    pub trace: BoundaryTrace,
    pub eps: f64,
    /// relative L² change at the accepted halving
    pub change: f64,
}

/// Halve `ε` from `eps` until two successive stencils agree within [`HALVING_TOL`].
pub fn mixed_derivative_adaptive(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    sources: &[NeumannSource],
    orders: &[usize],
    eps: f64,
    max_halvings: usize,
    opts: &PicardOptions,
) -> Result<AdaptiveDerivative> {
    let mut st = EpsilonStencil::uniform(orders, eps)?;
    let mut prev = mixed_derivative_ndmap(g, h, sources, &st, opts)?;
    let mut last_change = f64::INFINITY;
    for _ in 0..max_halvings {
        st = st.halved()?;
        let next = mixed_derivative_ndmap(g, h, sources, &st, opts)?;
        let change = prev.relative_l2(&next)?;
        if change <= HALVING_TOL {
            return Ok(AdaptiveDerivative { trace: next, eps: st.steps[0], change });
        }
        last_change = change;
        prev = next;
    }
    Err(Error::Linearization(format!(
        "stencil step too large: halving still changes the result by {:.0}%",
        100.0 * last_change
    )))
}

/// `∫_M F v₀ dV_g`: trapezoid in time, dual volumes in space.
pub fn volume_pairing(g: &WarpedMetric, density: &[f64], v0: &FieldSolution) -> Result<f64> {
    let grid = &v0.grid;
    let nodes = grid.num_nodes();
    if density.len() != v0.u.len() {
        return Err(Error::Linearization("density and field live on different grids".into()));
    }
    let n = grid.space_dim;
    let mut total = 0.0;
    for k in 0..grid.levels() {
        let wt = if k == 0 || k == grid.steps { 0.5 } else { 1.0 } * grid.dt();
        let mut s = 0.0;
        for i in 0..nodes {
            let j = k * nodes + i;
            if density[j] == 0.0 {
                continue;
            }
            let f = g.factors(&grid.point(k, i)[..=n]);
            let sqrt_g = f.beta.sqrt() * f.psi.powf(0.5 * n as f64);
            s += grid.dual_volume(i) * sqrt_g * density[j] * v0.u[j];
        }
        total += wt * s;
    }
    Ok(total)
}

/// Backward solution with Neumann data `f₀`.
pub fn backward_solution(g: &WarpedMetric, f0: &NeumannSource) -> Result<FieldSolution> {
    solve_linear(g, &NoForcing, &f0.real_part(), SolveMode::Backward)
}

/// `∫_M (∂^α H_known)(x, u) v₀ dV_g` with every cascade term built from `known`.
pub fn known_part_pairing(
    g: &WarpedMetric,
    known: &NonlinearityProfile,
    sources: &[NeumannSource],
    alpha: &[usize],
    v0: &FieldSolution,
) -> Result<f64> {
    if known.is_zero() {
        return Ok(0.0);
    }
    let cascade = cascade_all(g, known, sources, alpha)?;
    let recipe = cascade_recipe(alpha, &known.coefficients.keys().copied().collect::<Vec<_>>());
    let density = recipe_density(&recipe, known, &v0.grid, &cascade.terms)?;
    volume_pairing(g, &density, v0)
}

/// The `h₂` contribution to the third-order pairing identity:
/// `∫_M (∂_{ε₁ε₂ε₃} h₂u²) v₀ dV_g`, that is `2h₂ Σ U_{ij} v_k` paired with `v₀`.
pub fn correction_term(
    g: &WarpedMetric,
    h2: &crate::wave_solver::CoefficientField,
    sources: [&NeumannSource; 3],
    f0: &NeumannSource,
) -> Result<f64> {
    if h2.is_zero() {
        return Ok(0.0);
    }
    let known = NonlinearityProfile::zero().with(2, h2.clone());
    let v0 = backward_solution(g, f0)?;
    let srcs: Vec<NeumannSource> = sources.iter().map(|s| (*s).clone()).collect();
    known_part_pairing(g, &known, &srcs, &[1, 1, 1], &v0)
}

/// `R_N`: the part of the order-`N` pairing identity built from the known
/// `h₂, …, h_{N−1}`. `alpha` is the derivative multi-index over `sources`.
pub fn higher_correction_term(
    g: &WarpedMetric,
    known: &NonlinearityProfile,
    sources: &[NeumannSource],
    alpha: &[usize],
    f0: &NeumannSource,
) -> Result<f64> {
    let n: usize = alpha.iter().sum();
    if n < 4 {
        return Err(Error::Linearization(format!("higher correction needs order ≥ 4, got {n}")));
    }
    for k in 2..n {
        if !known.coefficients.contains_key(&k) {
            return Err(Error::Linearization(format!("lower coefficient h_{k} not supplied")));
        }
    }
    let known = known.restricted(|k| k < n);
    let v0 = backward_solution(g, f0)?;
    known_part_pairing(g, &known, sources, alpha, &v0)
}
