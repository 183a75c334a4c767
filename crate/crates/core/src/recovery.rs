//! Pointwise recovery of `h_k(q₀)` from beam-driven boundary pairings.
//!
//! Four null covectors at `q₀` satisfying `Σ κ_j ξ^(j) = 0` aim four Gaussian
//! beams. Beam 0 is solved backward from its late footprint to give `v₀`; the
//! others are the forward sources. The order-`k` pairing minus the part built
//! from the known lower coefficients, scaled by `ρ^{(n+1)/2}`, tends to a
//! multiple of `h_k(q₀)`. The multiple is fixed by calibration on a reference
//! coefficient with the same beams and grid.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beams::{assemble_beam, beam_neumann_source, BeamFootprint, BeamProfile, CMat, GaussianBeam};
use crate::covector_algebra::{four_wave_kappas, NullFrame};
use crate::geometry::{build_fermi_chart_with, trace_through, GeodesicOptions, WarpedMetric};
use crate::io::CsvTable;
use crate::linearization::{
    backward_solution, cascade_solve, known_part_pairing, mixed_derivative_ndmap, EpsilonStencil,
};
use crate::wave_solver::{
    boundary_pairing, CoefficientField, NeumannSource, NonlinearityProfile, PicardOptions, SolveMode, SpacetimeGrid,
};
use crate::{Complex64, Error, Result};

/// Extracted limits below this are indistinguishable from solver roundoff.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Correction terms larger than this multiple of the raw pairing are flagged.
pub const CORRECTION_ALARM: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSettings {
    /// tube width; the beam vanishes for `|z| ≥ δ/2`
    pub delta: f64,
    pub order: usize,
    /// `Im H(0) = width · I` at `q₀`
    pub width: f64,
    pub rho: Vec<f64>,
    /// geodesic integration step
    pub step: f64,
}

impl Default for BeamSettings {
    fn default() -> Self {
        BeamSettings { delta: 1.6, order: 4, width: 0.67, rho: vec![16.0, 24.0, 32.0, 48.0, 64.0], step: 2e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    /// cells per axis; derived from the largest frequency when absent
    pub cells: Option<usize>,
    pub points_per_wavelength: f64,
    pub t_final: f64,
    pub courant: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { cells: None, points_per_wavelength: 10.0, t_final: 3.0, courant: 0.7 }
    }
}

/// How `∂^α Λ` is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PairingMethod {
    /// exact ε-derivative through the cascade of linear solves
    Cascade,
    /// central stencil on the nonlinear ND map
    FiniteDifference { eps: f64, picard: PicardOptions },
}

impl Default for PairingMethod {
    fn default() -> Self {
        PairingMethod::Cascade
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryTask {
    pub q0: Vec<f64>,
    pub k: usize,
    pub r0: f64,
    pub varsigma: f64,
    pub beams: BeamSettings,
    pub grid: GridSettings,
    /// `h₂ … h_{k−1}` as believed by the recovery; absent entries are zero
    pub known: NonlinearityProfile,
    pub method: PairingMethod,
    /// replaces the matched multipliers, for null tests
    pub kappa_override: Option<Vec<f64>>,
    /// largest fit residual, in coefficient units relative to `max(|ĥ|, 1)`
    pub max_fit_residual: f64,
}

impl Default for RecoveryTask {
    fn default() -> Self {
        RecoveryTask {
            q0: vec![1.5, 0.5, 0.5],
            k: 3,
            r0: 0.25,
            varsigma: 0.99,
            beams: BeamSettings::default(),
            grid: GridSettings::default(),
            known: NonlinearityProfile::zero(),
            method: PairingMethod::Cascade,
            kappa_override: None,
            max_fit_residual: 0.1,
        }
    }
}

impl RecoveryTask {
    pub fn validate(&self, g: &WarpedMetric) -> Result<()> {
        let d = g.dim;
        if self.q0.len() != d {
            return Err(Error::Config(format!("q₀ has {} components, expected {d}", self.q0.len())));
        }
        if self.k < 3 {
            return Err(Error::Config("h₂ cannot be recovered with beams; k must be at least 3".into()));
        }
        if !(0.0 < self.varsigma && self.varsigma < 1.0) || !(-1.0..=1.0).contains(&self.r0) {
            return Err(Error::Config("need 0 < ς < 1 and |r₀| ≤ 1".into()));
        }
        let mut rho = self.beams.rho.clone();
        rho.sort_by(f64::total_cmp);
        rho.dedup();
        if rho.len() < 3 || rho[0] <= 0.0 {
            return Err(Error::Config("the ρ list needs at least three distinct positive values".into()));
        }
        if !(self.beams.delta > 0.0 && self.beams.width > 0.0) || self.beams.order < 2 {
            return Err(Error::Config("beam δ and width must be positive, order at least 2".into()));
        }
        if let Some(k) = &self.kappa_override {
            if k.len() != 4 {
                return Err(Error::Config("kappa_override needs four entries".into()));
            }
        }
        if self.known.coefficients.keys().any(|&j| j >= self.k) {
            return Err(Error::Config(format!("known profile may only hold h_j with j < {}", self.k)));
        }
        self.known.validate(d)
    }

    pub fn space_dim(&self) -> usize {
        self.q0.len() - 1
    }

    /// `(k−2, 1, 1)`, collapsing to `(1, 1, 1)` at `k = 3`.
    pub fn alpha(&self) -> Vec<usize> {
        if self.k == 3 {
            vec![1, 1, 1]
        } else {
            vec![self.k - 2, 1, 1]
        }
    }

    pub fn max_rho(&self) -> f64 {
        self.beams.rho.iter().copied().fold(0.0, f64::max)
    }

    /// Solver grid, resolving the largest beam frequency at the configured density.
    pub fn solver_grid(&self, g: &WarpedMetric, max_kappa: f64) -> Result<SpacetimeGrid> {
        let cells = match self.grid.cells {
            Some(c) => c,
            None => {
                // coordinate wavenumber of e^{iρκφ}, where |ξ_spatial| = √ψ
                let k = self.max_rho() * max_kappa * psi_bounds(g, self.grid.t_final).1.sqrt();
                let lambda = 2.0 * std::f64::consts::PI / k;
                (self.grid.points_per_wavelength / lambda).ceil() as usize
            }
        };
        SpacetimeGrid::fitted(g, cells.max(8), self.grid.t_final, self.grid.courant)
    }

    /// Content hash of everything a calibration depends on.
    pub fn fingerprint(&self, g: &WarpedMetric) -> String {
        let key = serde_json::json!({
            "metric": g,
            "q0": self.q0,
            "k": self.k,
            "frame": [self.r0, self.varsigma],
            "beams": self.beams,
            "grid": self.grid,
            "method": self.method,
            "kappa": self.kappa_override,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }
}

fn psi_bounds(g: &WarpedMetric, t_final: f64) -> (f64, f64) {
    let d = g.dim;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let n = 8;
    let mut idx = vec![0usize; d];
    loop {
        let x: Vec<f64> =
            idx.iter().enumerate().map(|(a, &i)| i as f64 / n as f64 * if a == 0 { t_final } else { 1.0 }).collect();
        let psi = g.factors(&x).psi;
        lo = lo.min(psi);
        hi = hi.max(psi);
        let mut a = 0;
        while a < d {
            idx[a] += 1;
            if idx[a] <= n {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == d {
            return (lo, hi);
        }
    }
}

/// One beam of the set, independent of `ρ`.
#[derive(Clone, Debug)]
pub struct AimedBeam {
    /// which frame covector it follows
    pub role: usize,
    /// frequency multiplier
    pub kappa: f64,
    pub profile: Arc<BeamProfile>,
    pub mode: SolveMode,
    /// leading amplitude at `q₀`
    pub a0: Complex64,
}

#[derive(Clone, Debug)]
pub struct BeamSet {
    pub frame: NullFrame,
    /// matched multipliers normalised to `max |κ| = 1` (or the override)
    pub kappas: [f64; 4],
    /// `[v₀, sources…]`, sources in the order of [`RecoveryTask::alpha`]
    pub beams: Vec<AimedBeam>,
    pub delta: f64,
}

impl BeamSet {
    pub fn sources(&self) -> &[AimedBeam] {
        &self.beams[1..]
    }

    /// `Π a₀^{(j)}(q₀)` over the factors of the order-`k` product, repeats included.
    pub fn amplitude_product(&self, alpha: &[usize]) -> Complex64 {
        let mut p = self.beams[0].a0;
        for (b, &m) in self.sources().iter().zip(alpha) {
            p *= b.a0.powu(m as u32);
        }
        p
    }

    pub fn at_rho(&self, rho: f64) -> Result<Vec<GaussianBeam>> {
        self.beams.iter().map(|b| assemble_beam(b.profile.clone(), rho, b.kappa, self.delta)).collect()
    }

    /// `|Σ_j κ_j ∂φ^{(j)}(q₀)|` from the beam phase gradients, with
    /// repeated beams counted by multiplicity.
    pub fn phase_gradient_defect(&self, q0: &[f64], alpha: &[usize]) -> Result<f64> {
        let d = q0.len();
        let big = 1e6;
        let mut sum = vec![0.0; d];
        let mults: Vec<usize> = std::iter::once(1).chain(alpha.iter().copied()).collect();
        for (b, &m) in self.beams.iter().zip(&mults) {
            let beam = assemble_beam(b.profile.clone(), big, 1.0, self.delta)?;
            let gr = beam.gradient(q0)?;
            for mu in 0..d {
                sum[mu] += m as f64 * b.kappa * gr[mu].im / big;
            }
        }
        Ok(sum.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Smallest `Im S(x) / |x − q₀|²` over `points`, where `S = Σ κ_j φ^{(j)}`
    /// counts each beam by multiplicity and `Im φ` is read off the decay of
    /// `|u_ρ|` between two large `ρ`.
    pub fn imag_phase_bound(&self, points: &[Vec<f64>], q0: &[f64], alpha: &[usize]) -> Result<f64> {
        let (r1, r2) = (400.0, 800.0);
        let mults: Vec<usize> = std::iter::once(1).chain(alpha.iter().copied()).collect();
        let mut worst = f64::INFINITY;
        for x in points {
            let d2: f64 = x.iter().zip(q0).map(|(a, b)| (a - b).powi(2)).sum();
            if d2 < 1e-12 {
                continue;
            }
            let mut im_s = 0.0;
            for (b, &m) in self.beams.iter().zip(&mults) {
                let u1 = assemble_beam(b.profile.clone(), r1, 1.0, self.delta)?.value(x)?.norm();
                let u2 = assemble_beam(b.profile.clone(), r2, 1.0, self.delta)?.value(x)?.norm();
                if u1 == 0.0 || u2 == 0.0 {
                    return Err(Error::Recovery("sample point outside a beam tube".into()));
                }
                let im_phi = (u1.ln() - u2.ln()) / (r2 - r1);
                im_s += m as f64 * b.kappa.abs() * im_phi;
            }
            worst = worst.min(im_s / d2);
        }
        Ok(worst)
    }
}

/// Null covector at `x` with spatial direction `dir`, normalised to `ξ₀ = −√β`.
pub fn null_covector(g: &WarpedMetric, x: &[f64], dir: &[f64]) -> Vec<f64> {
    let f = g.factors(x);
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut xi = vec![-f.beta.sqrt()];
    xi.extend(dir.iter().map(|v| f.psi.sqrt() * v / n));
    xi
}

/// Builds the frame at `q₀`, traces the four geodesics and constructs the beams.
pub fn aim_beams(g: &WarpedMetric, task: &RecoveryTask) -> Result<BeamSet> {
    task.validate(g)?;
    let d = g.dim;
    let q0 = &task.q0;
    let mut dir0 = vec![0.0; d - 1];
    dir0[0] = -(1.0 - task.r0 * task.r0).sqrt();
    dir0[1] = task.r0;
    let mut dir1 = vec![0.0; d - 1];
    dir1[0] = 1.0;
    let frame = NullFrame::build(g, q0, &null_covector(g, q0, &dir0), &null_covector(g, q0, &dir1), task.varsigma)?;
    let xis = frame.working_covectors();
    let kappas = match &task.kappa_override {
        Some(k) => [k[0], k[1], k[2], k[3]],
        None => {
            let k = four_wave_kappas(&xis)?;
            let m = k.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            [k[0] / m, k[1] / m, k[2] / m, k[3] / m]
        }
    };
    let opts = GeodesicOptions { step: task.beams.step, ..Default::default() };
    let t_final = task.grid.t_final;
    let m = d - 1;
    let h0 = CMat::identity(m, m) * Complex64::new(0.0, task.beams.width);
    let y0 = CMat::identity(m, m);
    let build = |role: usize| -> Result<Arc<BeamProfile>> {
        let geo = trace_through(g, q0, &xis[role], &opts)?;
        for hit in [geo.hit_minus(), geo.hit_plus()] {
            let hit = hit.ok_or_else(|| Error::Recovery(format!("geodesic {role} does not leave the box")))?;
            if !(hit.point[0] > 0.0 && hit.point[0] < t_final) {
                return Err(Error::Recovery(format!(
                    "geodesic {role} crosses the boundary at t = {:.3}, outside (0, T)",
                    hit.point[0]
                )));
            }
        }
        let chart = build_fermi_chart_with(g, &geo, task.beams.delta, 100)?;
        Ok(Arc::new(BeamProfile::build(Arc::new(chart), Some((h0.clone(), y0.clone())), task.beams.order, None)?))
    };
    let profiles: Vec<Arc<BeamProfile>> = (0..4).into_par_iter().map(build).collect::<Result<_>>()?;
    check_axes_separate(&profiles, q0, task.beams.delta)?;
    let a0 = |p: &BeamProfile| -> Complex64 {
        let r = &p.riccati;
        r.y[r.base].determinant().sqrt().inv()
    };
    let beam = |role: usize, kappa: f64, mode| AimedBeam {
        role,
        kappa,
        profile: profiles[role].clone(),
        mode,
        a0: a0(&profiles[role]),
    };
    let mut beams = vec![beam(0, kappas[0], SolveMode::Backward)];
    if task.k == 3 {
        beams.extend((1..4).map(|j| beam(j, kappas[j], SolveMode::Forward)));
    } else {
        beams.push(beam(3, kappas[3] / (task.k - 2) as f64, SolveMode::Forward));
        beams.push(beam(1, kappas[1], SolveMode::Forward));
        beams.push(beam(2, kappas[2], SolveMode::Forward));
    }
    Ok(BeamSet { frame, kappas, beams, delta: task.beams.delta })
}

/// Axes may only come close to each other near `q₀`.
fn check_axes_separate(profiles: &[Arc<BeamProfile>], q0: &[f64], delta: f64) -> Result<()> {
    let d = q0.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).take(d).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for i in 0..profiles.len() {
        for j in i + 1..profiles.len() {
            let (ci, cj) = (&profiles[i].chart, &profiles[j].chart);
            let pi: Vec<_> = ci.x.iter().filter(|p| dist(&p[..], q0) > delta).collect();
            let pj = &cj.x;
            for p in pi.iter().step_by(4) {
                let near = pj.iter().map(|q| dist(&p[..], &q[..])).fold(f64::INFINITY, f64::min);
                if near < 1e-2 * delta {
                    return Err(Error::Recovery(format!(
                        "beam axes {i} and {j} meet again at {:?}, away from q₀",
                        &p[..d]
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Boundary footprints of a beam set on one grid; shared by every `ρ`.
#[derive(Clone, Debug)]
pub struct PreparedBeams {
    pub grid: SpacetimeGrid,
    pub footprints: Vec<BeamFootprint>,
}

pub fn prepare_footprints(set: &BeamSet, grid: &SpacetimeGrid) -> Result<PreparedBeams> {
    let footprints: Vec<BeamFootprint> = set
        .beams
        .iter()
        .map(|b| {
            let beam = assemble_beam(b.profile.clone(), 1.0, 1.0, set.delta)?;
            BeamFootprint::new(&beam, grid)
        })
        .collect::<Result<_>>()?;
    if footprints.iter().any(|f| f.entries.is_empty()) {
        return Err(Error::Recovery("a beam tube misses the boundary grid".into()));
    }
    Ok(PreparedBeams { grid: grid.clone(), footprints })
}

/// One `ρ` sample of the normalised pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingSample {
    pub rho: f64,
    /// `⟨∂^α Λ, f₀⟩`
    pub raw: f64,
    /// part of `raw` explained by the known lower coefficients
    pub correction: f64,
    /// `ρ^{(n+1)/2} (raw − correction)`
    pub value: f64,
    pub correction_dominates: bool,
}

/// Real parts of the beam sources at `ρ`: `(f₀, [f₁ …])`.
pub fn beam_sources(
    g: &WarpedMetric,
    set: &BeamSet,
    prep: &PreparedBeams,
    rho: f64,
) -> Result<(NeumannSource, Vec<NeumannSource>)> {
    let beams = set.at_rho(rho)?;
    let mut out: Vec<NeumannSource> = beams
        .iter()
        .zip(&set.beams)
        .zip(&prep.footprints)
        .map(|((b, a), fp)| Ok(beam_neumann_source(b, g, fp, a.mode)?.real_part()))
        .collect::<Result<_>>()?;
    let f0 = out.remove(0);
    Ok((f0, out))
}

/// `I(ρ)` for the medium `truth`, subtracting the part due to `task.known`.
pub fn linearized_pairing(
    g: &WarpedMetric,
    task: &RecoveryTask,
    set: &BeamSet,
    prep: &PreparedBeams,
    truth: &NonlinearityProfile,
    rho: f64,
) -> Result<PairingSample> {
    let alpha = task.alpha();
    let (f0, sources) = beam_sources(g, set, prep, rho)?;
    let trace = match &task.method {
        PairingMethod::Cascade => cascade_solve(g, truth, &sources, &alpha)?.field.trace,
        PairingMethod::FiniteDifference { eps, picard } => {
            let stencil = EpsilonStencil::uniform(&alpha, *eps)?;
            mixed_derivative_ndmap(g, truth, &sources, &stencil, picard)?
        }
    };
    let raw = boundary_pairing(g, &trace, &f0.data)?;
    let correction = if task.known.is_zero() {
        0.0
    } else {
        let v0 = backward_solution(g, &f0)?;
        known_part_pairing(g, &task.known, &sources, &alpha, &v0)?
    };
    let n = task.space_dim() as f64;
    let value = rho.powf(0.5 * (n + 1.0)) * (raw - correction);
    Ok(PairingSample {
        rho,
        raw,
        correction,
        value,
        correction_dominates: correction.abs() > CORRECTION_ALARM * raw.abs() && correction.abs() > NOISE_FLOOR,
    })
}

/// Least-squares `I(ρ) = A + B/ρ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    pub a: f64,
    pub b: f64,
    /// root-mean-square misfit
    pub residual: f64,
}

pub fn rho_sweep_fit(samples: &[(f64, f64)]) -> Result<SweepFit> {
    let mut rhos: Vec<f64> = samples.iter().map(|s| s.0).collect();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    if rhos.len() < 3 {
        return Err(Error::Recovery("the ρ fit needs at least three distinct ρ".into()));
    }
    if samples.iter().any(|s| !(s.0 > 0.0) || !s.1.is_finite()) {
        return Err(Error::Recovery("ρ samples must be positive and finite".into()));
    }
    let m = samples.len();
    let x = DMatrix::from_fn(m, 2, |i, j| if j == 0 { 1.0 } else { 1.0 / samples[i].0 });
    let y = DVector::from_iterator(m, samples.iter().map(|s| s.1));
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() < 1e-10 * sv.max() {
        return Err(Error::Recovery("ill-conditioned ρ fit".into()));
    }
    let c = svd.solve(&y, 1e-14).map_err(|e| Error::Recovery(e.to_string()))?;
    let r = &y - &x * &c;
    Ok(SweepFit { a: c[0], b: c[1], residual: (r.norm_squared() / m as f64).sqrt() })
}

/// A full sweep over the task's `ρ` list, samples evaluated concurrently.
pub fn rho_sweep(
    g: &WarpedMetric,
    task: &RecoveryTask,
    set: &BeamSet,
    prep: &PreparedBeams,
    truth: &NonlinearityProfile,
) -> Result<(Vec<PairingSample>, SweepFit)> {
    let samples: Vec<PairingSample> = task
        .beams
        .rho
        .par_iter()
        .map(|&rho| linearized_pairing(g, task, set, prep, truth, rho))
        .collect::<Result<_>>()?;
    let fit = rho_sweep_fit(&samples.iter().map(|s| (s.rho, s.value)).collect::<Vec<_>>())?;
    Ok((samples, fit))
}

/// Everything needed to run recoveries for one task configuration.
#[derive(Clone, Debug)]
pub struct RecoverySetup {
    pub task: RecoveryTask,
    pub metric: WarpedMetric,
    pub beams: BeamSet,
    pub prepared: PreparedBeams,
}

impl RecoverySetup {
    pub fn new(g: &WarpedMetric, task: &RecoveryTask) -> Result<Self> {
        let beams = aim_beams(g, task)?;
        let kmax = beams.beams.iter().fold(0.0f64, |a, b| a.max(b.kappa.abs()));
        let grid = task.solver_grid(g, kmax)?;
        grid.check_cfl(g)?;
        let prepared = prepare_footprints(&beams, &grid)?;
        Ok(RecoverySetup { task: task.clone(), metric: g.clone(), beams, prepared })
    }

    pub fn sweep(&self, truth: &NonlinearityProfile) -> Result<(Vec<PairingSample>, SweepFit)> {
        rho_sweep(&self.metric, &self.task, &self.beams, &self.prepared, truth)
    }

    /// Medium made of the known lower coefficients plus `h_k = hk`.
    pub fn medium(&self, hk: &CoefficientField) -> NonlinearityProfile {
        self.task.known.clone().with(self.task.k, hk.clone())
    }

    pub fn fingerprint(&self) -> String {
        self.task.fingerprint(&self.metric)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    /// `A_ref / (h_ref(q₀) |Π a₀|)`
    pub constant: f64,
    pub reference: CoefficientField,
    pub reference_value: f64,
    pub amplitude_product: f64,
    pub samples: Vec<PairingSample>,
    pub fit: SweepFit,
    pub fingerprint: String,
}

impl CalibrationProfile {
    /// Coefficient value for an extracted limit `a`.
    pub fn apply(&self, a: f64) -> f64 {
        a / (self.constant * self.amplitude_product)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn calibrate(setup: &RecoverySetup, reference: &CoefficientField) -> Result<CalibrationProfile> {
    let task = &setup.task;
    let h_ref = reference.eval(&task.q0);
    if h_ref.abs() < 1e-12 {
        return Err(Error::Recovery("reference coefficient vanishes at q₀".into()));
    }
    let (samples, fit) = setup.sweep(&setup.medium(reference))?;
    if fit.a.abs() < NOISE_FLOOR {
        return Err(Error::Recovery(format!("reference limit A = {:.3e} is below the noise floor", fit.a)));
    }
    let amp = setup.beams.amplitude_product(&task.alpha()).norm();
    Ok(CalibrationProfile {
        constant: fit.a / (h_ref * amp),
        reference: reference.clone(),
        reference_value: h_ref,
        amplitude_product: amp,
        samples,
        fit,
        fingerprint: setup.fingerprint(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub k: usize,
    pub q0: Vec<f64>,
    pub value: f64,
    pub samples: Vec<PairingSample>,
    pub fit: SweepFit,
    /// fit residual in coefficient units
    pub residual: f64,
    pub max_correction: f64,
    pub truth: Option<f64>,
    pub relative_error: Option<f64>,
}

impl RecoveryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn sweep_table(&self) -> CsvTable {
        sweep_table(&self.samples)
    }
}

pub fn sweep_table(samples: &[PairingSample]) -> CsvTable {
    let mut t = CsvTable::new("rho-sweep", &["rho", "raw", "correction", "value"]);
    for s in samples {
        t.push(&[s.rho, s.raw, s.correction, s.value]);
    }
    t
}

/// `ĥ_k(q₀)` for the medium `truth`.
pub fn recover_coefficient(
    setup: &RecoverySetup,
    calibration: &CalibrationProfile,
    truth: &NonlinearityProfile,
) -> Result<RecoveryReport> {
    if calibration.fingerprint != setup.fingerprint() {
        return Err(Error::Recovery("calibration was computed for a different configuration".into()));
    }
    let task = &setup.task;
    let (samples, fit) = setup.sweep(truth)?;
    let value = calibration.apply(fit.a);
    let residual = (fit.residual / (calibration.constant * calibration.amplitude_product)).abs();
    if residual > task.max_fit_residual * value.abs().max(1.0) {
        return Err(Error::Recovery(format!(
            "fit residual {residual:.3e} exceeds {} of the recovered value {value:.4}",
            task.max_fit_residual
        )));
    }
    let truth_value = truth.coefficients.get(&task.k).map(|h| h.eval(&task.q0));
    Ok(RecoveryReport {
        k: task.k,
        q0: task.q0.clone(),
        value,
        max_correction: samples.iter().map(|s| s.correction.abs()).fold(0.0, f64::max),
        samples,
        fit,
        residual,
        truth: truth_value,
        relative_error: truth_value.filter(|t| t.abs() > 1e-12).map(|t| (value - t).abs() / t.abs()),
    })
}

/// Radial-basis interpolant through `(point, value)` pairs with compact bumps of radius `width`.
pub fn rbf_field(points: &[(Vec<f64>, f64)], width: f64) -> Result<CoefficientField> {
    let n = points.len();
    if n == 0 {
        return Ok(CoefficientField::Zero);
    }
    let basis = |c: &[f64]| CoefficientField::Bump { amplitude: 1.0, center: c.to_vec(), radius: width };
    let a = DMatrix::from_fn(n, n, |i, j| basis(&points[j].0).eval(&points[i].0));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let w = a.lu().solve(&y).ok_or_else(|| Error::Recovery("interpolation points are degenerate".into()))?;
    Ok(CoefficientField::Sum {
        terms: points
            .iter()
            .zip(w.iter())
            .map(|((c, _), &wi)| CoefficientField::Bump { amplitude: wi, center: c.clone(), radius: width })
            .collect(),
    })
}

/// Calibrations by level, and the ladder's per-level reports.
#[derive(Clone, Debug, Default)]
pub struct LadderOutcome {
    pub reports: BTreeMap<usize, Vec<RecoveryReport>>,
    pub fields: BTreeMap<usize, CoefficientField>,
}

/// Recovers `h_3, …, h_{k_max}` at `points` in turn. Each level is
/// interpolated to a field and joins the known profile of the next level.
/// `template` fixes every setting except `q₀`, `k` and `known`; `reference`
/// is the calibration coefficient used at every level.
pub fn recovery_ladder(
    g: &WarpedMetric,
    template: &RecoveryTask,
    points: &[Vec<f64>],
    k_max: usize,
    h2: &CoefficientField,
    reference: &CoefficientField,
    truth: &NonlinearityProfile,
) -> Result<LadderOutcome> {
    if points.is_empty() {
        return Err(Error::Recovery("the ladder needs at least one point".into()));
    }
    let mut known = NonlinearityProfile::zero().with(2, h2.clone());
    let mut out = LadderOutcome::default();
    for k in 3..=k_max {
        let mut reports = vec![];
        for q in points {
            let task = RecoveryTask { q0: q.clone(), k, known: known.clone(), ..template.clone() };
            let setup = RecoverySetup::new(g, &task)?;
            let cal = calibrate(&setup, reference)?;
            reports.push(recover_coefficient(&setup, &cal, truth)?);
        }
        let field =
            rbf_field(&reports.iter().map(|r| (r.q0.clone(), r.value)).collect::<Vec<_>>(), template.beams.delta)?;
        known = known.with(k, field.clone());
        out.fields.insert(k, field);
        out.reports.insert(k, reports);
    }
    Ok(out)
}
