use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::SpacetimeGrid;
use crate::{Error, Result};

/// Closed-form scalar field on spacetime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientField {
    Zero,
    /// Constant everywhere; not compactly supported, meant for solver tests.
    Constant {
        value: f64,
    },
    /// `a·exp(1 − 1/(1 − r²))` with `r = |x − c| / radius` in spacetime, zero for `r ≥ 1`.
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    Sum {
        terms: Vec<CoefficientField>,
    },
}

impl CoefficientField {
    pub fn bump(amplitude: f64, center: Vec<f64>, radius: f64) -> Self {
        CoefficientField::Bump { amplitude, center, radius }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CoefficientField::Zero => 0.0,
            CoefficientField::Constant { value } => *value,
            CoefficientField::Bump { amplitude, center, radius } => {
                let r2: f64 = center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>() / (radius * radius);
                if r2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - r2)).exp()
                }
            }
            CoefficientField::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            CoefficientField::Zero => true,
            CoefficientField::Constant { value } => *value == 0.0,
            CoefficientField::Bump { amplitude, .. } => *amplitude == 0.0,
            CoefficientField::Sum { terms } => terms.iter().all(|t| t.is_zero()),
        }
    }

    /// Axis-aligned spacetime box outside which the field vanishes; `None` when unbounded.
    pub fn support_box(&self, dim: usize) -> Option<Vec<(f64, f64)>> {
        match self {
            CoefficientField::Zero => Some(vec![(0.0, -1.0); dim]),
            CoefficientField::Constant { value } if *value == 0.0 => Some(vec![(0.0, -1.0); dim]),
            CoefficientField::Constant { .. } => None,
            CoefficientField::Bump { center, radius, .. } => {
                Some(center.iter().take(dim).map(|c| (c - radius, c + radius)).collect())
            }
            CoefficientField::Sum { terms } => {
                let mut out: Vec<(f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
                for t in terms {
                    let b = t.support_box(dim)?;
                    for (o, (lo, hi)) in out.iter_mut().zip(b) {
                        if lo <= hi {
                            o.0 = o.0.min(lo);
                            o.1 = o.1.max(hi);
                        }
                    }
                }
                Some(out)
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            CoefficientField::Bump { center, radius, .. } => {
                if center.len() != dim {
                    return Err(Error::Config(format!(
                        "coefficient bump center has {} components, expected {dim}",
                        center.len()
                    )));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Config("coefficient bump radius must be positive".into()));
                }
                Ok(())
            }
            CoefficientField::Sum { terms } => terms.iter().try_for_each(|t| t.validate(dim)),
            _ => Ok(()),
        }
    }
}

/// `H(x, z) = Σ_k h_k(x) z^k`, `k ≥ 2`.
///
/// Serialized as a table keyed `h2`, `h3`, ….
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, CoefficientField>", try_from = "BTreeMap<String, CoefficientField>")]
pub struct NonlinearityProfile {
    pub coefficients: BTreeMap<usize, CoefficientField>,
}

impl From<NonlinearityProfile> for BTreeMap<String, CoefficientField> {
    fn from(p: NonlinearityProfile) -> Self {
        p.coefficients.into_iter().map(|(k, h)| (format!("h{k}"), h)).collect()
    }
}

impl TryFrom<BTreeMap<String, CoefficientField>> for NonlinearityProfile {
    type Error = String;

    fn try_from(m: BTreeMap<String, CoefficientField>) -> std::result::Result<Self, String> {
        let mut coefficients = BTreeMap::new();
        for (key, h) in m {
            let k = key
                .strip_prefix('h')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&k| k >= 2)
                .ok_or_else(|| format!("nonlinearity keys are h2, h3, …; got `{key}`"))?;
            coefficients.insert(k, h);
        }
        Ok(NonlinearityProfile { coefficients })
    }
}

impl NonlinearityProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with(mut self, k: usize, h: CoefficientField) -> Self {
        self.coefficients.insert(k, h);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for (&k, h) in &self.coefficients {
            if k < 2 {
                return Err(Error::Config(format!("nonlinearity degree {k} < 2")));
            }
            h.validate(dim)?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.values().all(|h| h.is_zero())
    }

    pub fn max_degree(&self) -> usize {
        self.coefficients.iter().filter(|(_, h)| !h.is_zero()).map(|(&k, _)| k).max().unwrap_or(0)
    }

    pub fn coefficient(&self, k: usize) -> CoefficientField {
        self.coefficients.get(&k).cloned().unwrap_or(CoefficientField::Zero)
    }

    pub fn eval(&self, x: &[f64], z: f64) -> f64 {
        self.coefficients.iter().map(|(&k, h)| h.eval(x) * z.powi(k as i32)).sum()
    }

    /// Keep only the listed degrees.
    pub fn restricted(&self, keep: impl Fn(usize) -> bool) -> Self {
        NonlinearityProfile {
            coefficients: self.coefficients.iter().filter(|(k, _)| keep(**k)).map(|(k, h)| (*k, h.clone())).collect(),
        }
    }
}

/// A coefficient field sampled on the grid, stored only where it is nonzero.
#[derive(Clone, Debug)]
pub struct SampledField {
    /// per level, `(node, value)` pairs
    pub entries: Vec<Vec<(u32, f64)>>,
}

impl SampledField {
    pub fn new(h: &CoefficientField, grid: &SpacetimeGrid) -> Self {
        let n = grid.space_dim;
        let dim = n + 1;
        let bbox = h.support_box(dim);
        let dx = grid.dx();
        let mut entries = vec![Vec::new(); grid.levels()];
        if h.is_zero() {
            return SampledField { entries };
        }
        // index window of [lo, hi]; callers reject boxes that miss the grid
        let range = |lo: f64, hi: f64, step: f64, max: usize| -> (usize, usize) {
            let a = (lo / step).floor().max(0.0) as usize;
            let b = (hi / step).ceil().clamp(0.0, max as f64) as usize;
            (a, b)
        };
        let (k0, k1) = match &bbox {
            Some(b) => {
                if b[0].0 > b[0].1 || b[0].1 < 0.0 || b[0].0 > grid.t_final {
                    return SampledField { entries };
                }
                range(b[0].0, b[0].1, grid.dt(), grid.steps)
            }
            None => (0, grid.steps),
        };
        let mut axis_ranges = vec![(0usize, grid.cells); n];
        if let Some(b) = &bbox {
            for a in 0..n {
                axis_ranges[a] = range(b[a + 1].0, b[a + 1].1, dx, grid.cells);
                if b[a + 1].0 > 1.0 || b[a + 1].1 < 0.0 {
                    return SampledField { entries };
                }
            }
        }
        for (k, row) in entries.iter_mut().enumerate().take(k1.min(grid.steps) + 1).skip(k0) {
            let mut idx = [0usize; 3];
            for (a, r) in axis_ranges.iter().enumerate() {
                idx[a] = r.0;
            }
            'outer: loop {
                let node = grid.node_index(&idx[..n]);
                let v = h.eval(&grid.point(k, node)[..dim]);
                if v != 0.0 {
                    row.push((node as u32, v));
                }
                for a in 0..n {
                    idx[a] += 1;
                    if idx[a] <= axis_ranges[a].1 {
                        continue 'outer;
                    }
                    idx[a] = axis_ranges[a].0;
                }
                break;
            }
        }
        SampledField { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|r| r.is_empty())
    }
}

/// All coefficients of a profile sampled on one grid.
#[derive(Clone, Debug)]
pub struct SampledProfile {
    pub degrees: Vec<(usize, SampledField)>,
}

impl SampledProfile {
    pub fn new(h: &NonlinearityProfile, grid: &SpacetimeGrid) -> Self {
        let degrees = h
            .coefficients
            .iter()
            .filter(|(_, f)| !f.is_zero())
            .map(|(&k, f)| (k, SampledField::new(f, grid)))
            .filter(|(_, s)| !s.is_empty())
            .collect();
        SampledProfile { degrees }
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }
}
