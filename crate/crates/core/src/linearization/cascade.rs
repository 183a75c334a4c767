use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::WarpedMetric;
use crate::wave_solver::{
    solve_linear, DenseForcing, FieldSolution, NeumannSource, NoForcing, NonlinearityProfile, SampledField, SolveMode,
    SpacetimeGrid,
};
use crate::{Error, Result};

/// Multi-index over the source parameters.
pub type MultiIndex = Vec<usize>;

/// `c · h_k · Π U_β` in `∂^α H(x, u(ε))|_{ε=0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeTerm {
    pub degree: usize,
    pub coefficient: f64,
    pub factors: Vec<MultiIndex>,
}

/// The forcing of one cascade equation `□U_α = −∂^α H(x, u(ε))|_{ε=0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRecipe {
    pub index: MultiIndex,
    pub terms: Vec<RecipeTerm>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn multi_factorial(a: &[usize]) -> f64 {
    a.iter().map(|&n| factorial(n)).product()
}

/// All nonzero `β ≤ α`, componentwise.
pub fn sub_indices(alpha: &[usize]) -> Vec<MultiIndex> {
    let mut out = vec![vec![]];
    for &a in alpha {
        out = out.into_iter().flat_map(|b: Vec<usize>| (0..=a).map(move |j| [b.clone(), vec![j]].concat())).collect();
    }
    out.retain(|b| b.iter().any(|&x| x > 0));
    out.sort_by_key(|b| (b.iter().sum::<usize>(), b.clone()));
    out
}

/// Symbolic `∂^α` of `Σ_k h_k u^k` with `u = Σ_β ε^β U_β / β!` and `u(0) = 0`:
/// a sum over ordered `k`-tuples `(β_1, …, β_k)` of nonzero indices adding up to
/// `α`, each weighted by `α! / Π β_j!`. Tuples with equal factor multisets are merged.
pub fn cascade_recipe(alpha: &[usize], degrees: &[usize]) -> CascadeRecipe {
    let subs = sub_indices(alpha);
    let afact = multi_factorial(alpha);
    let mut merged: BTreeMap<(usize, Vec<MultiIndex>), f64> = BTreeMap::new();
    for &k in degrees {
        let mut stack: Vec<MultiIndex> = vec![];
        enumerate(&subs, alpha, k, &mut stack, &mut |tuple| {
            let w = afact / tuple.iter().map(|b| multi_factorial(b)).product::<f64>();
            let mut key = tuple.to_vec();
            key.sort();
            *merged.entry((k, key)).or_insert(0.0) += w;
        });
    }
    let terms = merged
        .into_iter()
        .map(|((degree, factors), coefficient)| RecipeTerm { degree, coefficient, factors })
        .collect();
    CascadeRecipe { index: alpha.to_vec(), terms }
}

fn enumerate(
    subs: &[MultiIndex],
    rest: &[usize],
    k: usize,
    stack: &mut Vec<MultiIndex>,
    visit: &mut dyn FnMut(&[MultiIndex]),
) {
    if k == 0 {
        if rest.iter().all(|&r| r == 0) {
            visit(stack);
        }
        return;
    }
    for b in subs {
        if b.iter().zip(rest).all(|(x, r)| x <= r) {
            let next: Vec<usize> = rest.iter().zip(b).map(|(r, x)| r - x).collect();
            stack.push(b.clone());
            enumerate(subs, &next, k - 1, stack, visit);
            stack.pop();
        }
    }
}

/// One solved cascade equation.
#[derive(Clone, Debug)]
pub struct CascadeTerm {
    pub index: MultiIndex,
    pub field: FieldSolution,
    pub recipe: CascadeRecipe,
}

/// All cascade terms below and including a target index.
#[derive(Clone, Debug)]
pub struct Cascade {
    pub terms: BTreeMap<MultiIndex, CascadeTerm>,
}

impl Cascade {
    pub fn get(&self, beta: &[usize]) -> Option<&CascadeTerm> {
        self.terms.get(beta)
    }

    pub fn recipes_json(&self) -> String {
        let r: Vec<&CascadeRecipe> = self.terms.values().map(|t| &t.recipe).collect();
        serde_json::to_string_pretty(&r).unwrap_or_default()
    }
}

/// Supported: total order ≤ 4, or the family `(N−2, 1, 1)`.
pub fn check_supported(alpha: &[usize], sources: usize) -> Result<()> {
    if alpha.len() != sources {
        return Err(Error::Linearization(format!("multi-index {alpha:?} does not match {sources} sources")));
    }
    let total: usize = alpha.iter().sum();
    let family = alpha.len() == 3 && alpha[1] == 1 && alpha[2] == 1 && alpha[0] >= 1;
    if total == 0 || (total > 4 && !family) {
        return Err(Error::Linearization(format!("unsupported multi-index {alpha:?}")));
    }
    Ok(())
}

/// `Σ c · h_k(x) · Π U_β(x)` on the grid, the density of `∂^α H`.
pub fn recipe_density(
    recipe: &CascadeRecipe,
    h: &NonlinearityProfile,
    grid: &SpacetimeGrid,
    lower: &BTreeMap<MultiIndex, CascadeTerm>,
) -> Result<Vec<f64>> {
    let nodes = grid.num_nodes();
    let mut out = vec![0.0; nodes * grid.levels()];
    let mut sampled: BTreeMap<usize, SampledField> = BTreeMap::new();
    for t in &recipe.terms {
        let field = h.coefficient(t.degree);
        if field.is_zero() {
            continue;
        }
        let s = sampled.entry(t.degree).or_insert_with(|| SampledField::new(&field, grid));
        let factors: Vec<&FieldSolution> = t
            .factors
            .iter()
            .map(|b| {
                lower
                    .get(b)
                    .map(|c| &c.field)
                    .ok_or_else(|| Error::Linearization(format!("cascade term {b:?} missing")))
            })
            .collect::<Result<_>>()?;
        for (k, row) in s.entries.iter().enumerate() {
            for &(i, hv) in row {
                let j = k * nodes + i as usize;
                let prod: f64 = factors.iter().map(|f| f.u[j]).product();
                out[j] += t.coefficient * hv * prod;
            }
        }
    }
    Ok(out)
}

/// Solve every cascade equation up to `α`.
pub fn cascade_all(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    sources: &[NeumannSource],
    alpha: &[usize],
) -> Result<Cascade> {
    check_supported(alpha, sources.len())?;
    let grid = sources[0].grid().clone();
    if sources.iter().any(|s| *s.grid() != grid) {
        return Err(Error::Linearization("sources live on different grids".into()));
    }
    let degrees: Vec<usize> = h.coefficients.keys().copied().collect();
    let mut terms: BTreeMap<MultiIndex, CascadeTerm> = BTreeMap::new();
    for beta in sub_indices(alpha) {
        let recipe = cascade_recipe(&beta, &degrees);
        let order: usize = beta.iter().sum();
        let field = if order == 1 {
            let i = beta.iter().position(|&b| b == 1).unwrap();
            solve_linear(g, &NoForcing, &sources[i].real_part(), SolveMode::Forward)?
        } else {
            let mut density = recipe_density(&recipe, h, &grid, &terms)?;
            density.iter_mut().for_each(|v| *v = -*v);
            let forcing = DenseForcing { values: &density, nodes: grid.num_nodes() };
            solve_linear(g, &forcing, &NeumannSource::zero(&grid), SolveMode::Forward)?
        };
        terms.insert(beta.clone(), CascadeTerm { index: beta, field, recipe });
    }
    Ok(Cascade { terms })
}

/// The cascade term `U_α = ∂^α u|_{ε=0}` for sources `f_i` with parameters `ε_i`.
pub fn cascade_solve(
    g: &WarpedMetric,
    h: &NonlinearityProfile,
    sources: &[NeumannSource],
    alpha: &[usize],
) -> Result<CascadeTerm> {
    let mut c = cascade_all(g, h, sources, alpha)?;
    Ok(c.terms.remove(alpha).expect("target index is among its sub-indices"))
}
