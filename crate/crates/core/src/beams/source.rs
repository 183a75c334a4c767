use rayon::prelude::*;

use super::eval::{BeamModes, GaussianBeam};
use crate::geometry::WarpedMetric;
use crate::wave_solver::{smooth_ramp, BoundaryData, BoundaryLayout, NeumannSource, SolveMode, SpacetimeGrid};
use crate::{Error, Result};

/// One boundary sample inside a beam tube.
#[derive(Clone, Debug)]
pub struct FootprintEntry {
    pub level: usize,
    pub slot: usize,
    pub tau: f64,
    pub z: [f64; 3],
    /// `ρ`-free decomposition of the beam there
    pub modes: BeamModes,
}

/// Boundary samples inside a beam tube.
///
/// Chart inversion and the jet evaluation dominate the cost of a source and
/// neither depends on `ρ`, so one footprint serves a whole `ρ`-sweep.
#[derive(Clone, Debug)]
pub struct BeamFootprint {
    pub grid: SpacetimeGrid,
    pub delta: f64,
    pub entries: Vec<FootprintEntry>,
}

impl BeamFootprint {
    pub fn new(beam: &GaussianBeam, grid: &SpacetimeGrid) -> Result<Self> {
        let layout = BoundaryLayout::new(grid);
        let dim = grid.space_dim + 1;
        let entries = (0..grid.levels())
            .into_par_iter()
            .map(|k| {
                let mut out = vec![];
                for (s, &node) in layout.node.iter().enumerate() {
                    let p = grid.point(k, node);
                    if let Some((tau, z)) = beam.locate(&p[..dim]) {
                        let modes = beam.modes(tau, &z[..beam.chart().m])?;
                        out.push(FootprintEntry { level: k, slot: s, tau, z, modes });
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        Ok(BeamFootprint { grid: grid.clone(), delta: beam.delta, entries })
    }

    /// Time span covered by the footprint.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        let lo = self.entries.iter().map(|e| e.level).min()?;
        let hi = self.entries.iter().map(|e| e.level).max()?;
        Some((self.grid.time(lo), self.grid.time(hi)))
    }
}

/// `f = ∂_ν u_ρ` on the boundary grid, complex.
///
/// Forward sources are multiplied by a ramp rising over `[0, t_first]`, and
/// backward ones by its mirror image ending at `T`, where `t_first` is the
/// first footprint time; the footprint itself is left untouched.
pub fn beam_neumann_source(
    beam: &GaussianBeam,
    g: &WarpedMetric,
    footprint: &BeamFootprint,
    mode: SolveMode,
) -> Result<NeumannSource> {
    if (footprint.delta - beam.delta).abs() > 1e-12 {
        return Err(Error::Beam("footprint was computed for a different tube width".into()));
    }
    let grid = &footprint.grid;
    let layout = BoundaryLayout::new(grid);
    let n = grid.space_dim;
    let mut data = BoundaryData::zeros(grid);
    let mut imag = vec![0.0; data.values.len()];
    let slots = layout.len();
    let margin = (4.0 * grid.dt()).max(0.02 * grid.t_final);
    let Some((t_lo, t_hi)) = footprint.time_span() else {
        return Ok(NeumannSource { data, imag: Some(imag), compat_order: usize::MAX });
    };
    let t_end = grid.t_final;
    let ramp = |t: f64| match mode {
        SolveMode::Forward => smooth_ramp(t / t_lo),
        SolveMode::Backward => smooth_ramp((t_end - t) / (t_end - t_hi)),
    };
    match mode {
        SolveMode::Forward if t_lo < margin => {
            return Err(Error::Beam(format!("beam footprint reaches t = {t_lo:.3}, inside the initial margin")));
        }
        SolveMode::Backward if t_hi > t_end - margin => {
            return Err(Error::Beam(format!("beam footprint reaches t = {t_hi:.3}, inside the final margin")));
        }
        _ => {}
    }
    let r = beam.rho_eff();
    for e in &footprint.entries {
        let (_, grad) = e.modes.eval(r);
        let axis = layout.face[e.slot] / 2;
        let x = grid.point(e.level, layout.node[e.slot]);
        let psi = g.factors(&x[..=n]).psi;
        let v = grad[axis + 1] * (layout.outward_sign(e.slot) / psi.sqrt()) * ramp(x[0]);
        data.values[e.level * slots + e.slot] = v.re;
        imag[e.level * slots + e.slot] = v.im;
    }
    Ok(NeumannSource { data, imag: Some(imag), compat_order: usize::MAX })
}

/// Largest `|u_ρ|` over the nodes of the slice `t = t_k` (stride `every` per axis).
pub fn beam_slice_max(beam: &GaussianBeam, grid: &SpacetimeGrid, level: usize, every: usize) -> Result<f64> {
    let dim = grid.space_dim + 1;
    let mut worst: f64 = 0.0;
    for node in 0..grid.num_nodes() {
        if (0..grid.space_dim).any(|a| grid.axis_index(node, a) % every.max(1) != 0) {
            continue;
        }
        let p = grid.point(level, node);
        worst = worst.max(beam.value(&p[..dim])?.norm());
    }
    Ok(worst)
}
