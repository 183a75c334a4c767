//! Assembled beams: evaluation, `□_g u_ρ` and residual norms.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::hierarchy::{BeamAmplitude, BeamHierarchy, BeamPhase, CJet, GeoJets, PolyTrack};
use super::riccati::{default_initial_data, solve_riccati_window, CMat, RiccatiTrajectory};
use crate::geometry::chart::{chart_map_jet, chart_point, MAX_M};
use crate::geometry::{FermiChart, LocalFrame, Mat4, MAX_DIM};
use crate::jet::{jet_log_abs_det, jet_matrix_inverse, Jet, JetSpace};
use crate::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Smooth cutoff: 1 on `|t| ≤ 1/4`, 0 on `|t| ≥ 1/2`.
pub fn chi(t: f64) -> f64 {
    let t = t.abs();
    if t <= 0.25 {
        return 1.0;
    }
    if t >= 0.5 {
        return 0.0;
    }
    let x = (0.5 - t) * 4.0;
    let f = |y: f64| if y <= 0.0 { 0.0 } else { (-1.0 / y).exp() };
    f(x) / (f(x) + f(1.0 - x))
}

/// Everything about a beam that does not depend on `ρ`.
#[derive(Clone, Debug)]
pub struct BeamProfile {
    pub chart: Arc<FermiChart>,
    pub riccati: RiccatiTrajectory,
    pub phase: BeamPhase,
    pub amplitude: BeamAmplitude,
    pub order: usize,
}

impl BeamProfile {
    /// Riccati solve plus both hierarchies over `window` (defaults to the chart range).
    pub fn build(
        chart: Arc<FermiChart>,
        h0: Option<(CMat, CMat)>,
        order: usize,
        window: Option<(f64, f64)>,
    ) -> Result<Self> {
        let (h0, y0) = h0.unwrap_or_else(|| default_initial_data(chart.m));
        let riccati = solve_riccati_window(&chart, &h0, &y0, window)?;
        let hier = BeamHierarchy::new(&chart, &riccati, order)?;
        let phase = hier.phase()?;
        let amplitude = hier.amplitude(&phase)?;
        drop(hier);
        Ok(BeamProfile { chart, riccati, phase, amplitude, order })
    }

    pub fn tau_range(&self) -> (f64, f64) {
        self.riccati.tau_range()
    }

    pub fn in_window(&self, tau: f64) -> bool {
        let (a, b) = self.tau_range();
        tau >= a && tau <= b
    }

    /// Value, first and second `τ`-derivatives of a track at `τ`.
    fn interp(&self, track: &PolyTrack, tau: f64) -> [Vec<Complex64>; 3] {
        let h = self.riccati.step;
        let n = self.riccati.tau.len();
        let f = (tau - self.riccati.tau[0]) / h;
        let i = (f.floor().max(0.0) as usize).min(n - 2);
        let t = (tau - self.riccati.tau[i]) / h;
        let (b, db, ddb) = quintic_basis(t);
        let len = track.val[0].len();
        let mut out = [
            vec![Complex64::new(0.0, 0.0); len],
            vec![Complex64::new(0.0, 0.0); len],
            vec![Complex64::new(0.0, 0.0); len],
        ];
        for c in 0..len {
            let k = [
                track.val[i][c],
                track.d1[i][c] * h,
                track.d2[i][c] * (h * h),
                track.val[i + 1][c],
                track.d1[i + 1][c] * h,
                track.d2[i + 1][c] * (h * h),
            ];
            let (mut v, mut d, mut dd) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for q in 0..6 {
                v += k[q] * b[q];
                d += k[q] * db[q];
                dd += k[q] * ddb[q];
            }
            out[0][c] = v;
            out[1][c] = d / h;
            out[2][c] = dd / (h * h);
        }
        out
    }

    /// `Im H` at the nearest Riccati sample.
    pub fn im_h(&self, tau: f64) -> DMatrix<f64> {
        let h = &self.riccati.h[self.riccati.nearest(tau)];
        let im = h.map(|v| v.im);
        (&im + im.transpose()) * 0.5
    }
}

fn quintic_basis(t: f64) -> ([f64; 6], [f64; 6], [f64; 6]) {
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    (
        [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * t3 - t4 + 0.5 * t5,
        ],
        [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            1.5 * t2 - 4.0 * t3 + 2.5 * t4,
        ],
        [
            -60.0 * t + 180.0 * t2 - 120.0 * t3,
            -36.0 * t + 96.0 * t2 - 60.0 * t3,
            1.0 - 9.0 * t + 18.0 * t2 - 10.0 * t3,
            60.0 * t - 180.0 * t2 + 120.0 * t3,
            -24.0 * t + 84.0 * t2 - 60.0 * t3,
            3.0 * t - 12.0 * t2 + 10.0 * t3,
        ],
    )
}

/// `u_ρ = χ(|z|/δ) Σ ρ_eff^{−k} a_k e^{iρ_eff φ}` with `ρ_eff = |κ| ρ`.
#[derive(Clone, Debug)]
pub struct GaussianBeam {
    pub profile: Arc<BeamProfile>,
    pub rho: f64,
    pub kappa_scale: f64,
    pub delta: f64,
}

/// Local data of a beam at one point.
#[derive(Clone, Debug)]
pub struct BeamPoint {
    pub tau: f64,
    pub z: [f64; MAX_M],
    pub u: Complex64,
    /// Chart-coordinate gradient of `u`.
    pub grad_chart: [Complex64; MAX_DIM],
    /// `∂X/∂(τ, z)`.
    pub jac: Mat4,
    pub box_u: Option<Complex64>,
    /// `⟨dφ, dφ⟩` at the point.
    pub eikonal: Option<Complex64>,
    /// `√|g̃|` at the point.
    pub volume: Option<f64>,
}

pub fn assemble_beam(profile: Arc<BeamProfile>, rho: f64, kappa_scale: f64, delta: f64) -> Result<GaussianBeam> {
    if !(delta > 0.0) || delta > profile.chart.delta * (1.0 + 1e-12) {
        return Err(Error::Beam(format!("δ = {delta} must lie in (0, {}] (chart tube)", profile.chart.delta)));
    }
    if !(rho > 0.0) || kappa_scale == 0.0 || !kappa_scale.is_finite() {
        return Err(Error::Beam("ρ and κ must be positive and finite".into()));
    }
    Ok(GaussianBeam { profile, rho, kappa_scale, delta })
}

impl GaussianBeam {
    pub fn rho_eff(&self) -> f64 {
        self.rho * self.kappa_scale.abs()
    }

    pub fn chart(&self) -> &FermiChart {
        &self.profile.chart
    }

    /// Chart coordinates of `x` if it lies in the support tube.
    pub fn locate(&self, x: &[f64]) -> Option<(f64, [f64; MAX_M])> {
        let (tau, z) = self.profile.chart.coords(x, self.delta)?;
        if !self.profile.in_window(tau) {
            return None;
        }
        let m = self.profile.chart.m;
        let r = z[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= 0.5 * self.delta {
            return None;
        }
        let mut zz = [0.0; MAX_M];
        zz.copy_from_slice(&z[..MAX_M]);
        Some((tau, zz))
    }

    /// `u_ρ(x)`; zero outside the tube.
    pub fn value(&self, x: &[f64]) -> Result<Complex64> {
        match self.locate(x) {
            None => Ok(Complex64::new(0.0, 0.0)),
            Some((tau, z)) => Ok(self.at_chart(tau, &z, false)?.u),
        }
    }

    /// Spacetime gradient `∂_μ u_ρ(x)`; zero outside the tube.
    pub fn gradient(&self, x: &[f64]) -> Result<[Complex64; MAX_DIM]> {
        match self.locate(x) {
            None => Ok([Complex64::new(0.0, 0.0); MAX_DIM]),
            Some((tau, z)) => Ok(self.at_chart(tau, &z, false)?.spacetime_gradient(self.profile.chart.dim)),
        }
    }

    /// Data shared by all evaluations at one `τ`.
    pub fn slice(&self, tau: f64, with_box: bool) -> Result<TauSlice> {
        let prof = &*self.profile;
        if !prof.in_window(tau) {
            return Err(Error::Domain(format!("τ = {tau} outside the beam window")));
        }
        let lf = prof.chart.local_frame(tau, with_box)?;
        let phase = prof.interp(&prof.phase.track, tau);
        let amps = prof.amplitude.tracks.iter().map(|t| prof.interp(t, tau)).collect();
        Ok(TauSlice { tau, lf, phase, amps, with_box })
    }

    /// Evaluate at chart coordinates. With `with_box` the wave operator is
    /// applied as `e^{iρφ}[−ρ²𝒮𝔞 + iρ𝒯𝔞 + □𝔞]`.
    pub fn at_chart(&self, tau: f64, z: &[f64], with_box: bool) -> Result<BeamPoint> {
        let sl = self.slice(tau, with_box)?;
        self.at_slice(&sl, z)
    }

    pub fn at_slice(&self, sl: &TauSlice, z: &[f64]) -> Result<BeamPoint> {
        let prof = &*self.profile;
        let chart = &*prof.chart;
        let (d, m) = (chart.dim, chart.m);
        let with_box = sl.with_box;
        let space = JetSpace::new(m + 1, if with_box { 2 } else { 1 });
        let rho = self.rho_eff();
        let jets = FieldJets::new(prof, &space, sl, z, self.delta, rho);
        let (_, jac) = chart_point(&sl.lf, z, d, m);
        let phi = &jets.phi;
        let amp = &jets.amp;
        let e = (I * rho * phi.value()).exp();
        let mut grad = [Complex64::new(0.0, 0.0); MAX_DIM];
        for a in 0..d {
            let mut ea = [0u8; MAX_DIM];
            ea[a] = 1;
            grad[a] = e * (amp.coeff(&ea[..m + 1]) + I * rho * amp.value() * phi.coeff(&ea[..m + 1]));
        }
        let mut zz = [0.0; MAX_M];
        zz[..m].copy_from_slice(&z[..m]);
        let mut out = BeamPoint {
            tau: sl.tau,
            z: zz,
            u: amp.value() * e,
            grad_chart: grad,
            jac,
            box_u: None,
            eikonal: None,
            volume: None,
        };
        if with_box {
            let geo = local_geometry(chart, &sl.lf, &space, z)?;
            let dphi = GeoJets::grad(phi);
            let damp = GeoJets::grad(amp);
            let s = geo.0.pair(&dphi, &dphi).value();
            let t = geo.0.pair(&dphi, &damp).value() * 2.0 + geo.0.box_op(phi).value() * amp.value();
            let b = geo.0.box_op(amp).value();
            out.box_u = Some(e * (-rho * rho * s * amp.value() + I * rho * t + b));
            out.eikonal = Some(s);
            out.volume = Some(geo.1);
        }
        Ok(out)
    }
}

/// The `ρ`-independent pieces of a beam at one point: with `r = ρ_eff`,
/// `u = e^{irφ} Σ_k r^{−k} A_k` where `A_k = χ a_k`. Gradients are spacetime ones.
#[derive(Clone, Debug)]
pub struct BeamModes {
    pub phi: Complex64,
    pub dphi: [Complex64; MAX_DIM],
    pub amps: Vec<(Complex64, [Complex64; MAX_DIM])>,
}

impl BeamModes {
    /// `(u, ∂u)` at effective frequency `r`.
    pub fn eval(&self, r: f64) -> (Complex64, [Complex64; MAX_DIM]) {
        let e = (I * r * self.phi).exp();
        let mut a = Complex64::new(0.0, 0.0);
        let mut da = [Complex64::new(0.0, 0.0); MAX_DIM];
        let mut w = 1.0;
        for (v, g) in &self.amps {
            a += v * w;
            for (o, x) in da.iter_mut().zip(g) {
                *o += x * w;
            }
            w /= r;
        }
        let mut grad = [Complex64::new(0.0, 0.0); MAX_DIM];
        for mu in 0..MAX_DIM {
            grad[mu] = e * (da[mu] + I * r * a * self.dphi[mu]);
        }
        (a * e, grad)
    }
}

impl GaussianBeam {
    /// Decomposition of the beam at chart coordinates `(τ, z)`; see [`BeamModes`].
    pub fn modes(&self, tau: f64, z: &[f64]) -> Result<BeamModes> {
        let sl = self.slice(tau, false)?;
        let prof = &*self.profile;
        let chart = &*prof.chart;
        let (d, m) = (chart.dim, chart.m);
        let space = JetSpace::new(m + 1, 1);
        let jets = FieldJets::new(prof, &space, &sl, z, self.delta, 1.0);
        let (_, jac) = chart_point(&sl.lf, z, d, m);
        let to_spacetime = |j: &CJet| -> [Complex64; MAX_DIM] {
            let mut p = BeamPoint {
                tau,
                z: [0.0; MAX_M],
                u: j.value(),
                grad_chart: [Complex64::new(0.0, 0.0); MAX_DIM],
                jac,
                box_u: None,
                eikonal: None,
                volume: None,
            };
            for a in 0..d {
                let mut ea = [0u8; MAX_DIM];
                ea[a] = 1;
                p.grad_chart[a] = j.coeff(&ea[..m + 1]);
            }
            p.spacetime_gradient(d)
        };
        let amps = jets
            .terms
            .iter()
            .map(|t| {
                let t = match &jets.cut {
                    Some(c) => t * c,
                    None => t.clone(),
                };
                (t.value(), to_spacetime(&t))
            })
            .collect();
        Ok(BeamModes { phi: jets.phi.value(), dphi: to_spacetime(&jets.phi), amps })
    }
}

/// Per-`τ` data: the chart frame and interpolated coefficient tracks.
#[derive(Clone, Debug)]
pub struct TauSlice {
    pub tau: f64,
    pub lf: LocalFrame,
    phase: [Vec<Complex64>; 3],
    amps: Vec<[Vec<Complex64>; 3]>,
    with_box: bool,
}

impl BeamPoint {
    /// `∂_μ u` in spacetime coordinates.
    pub fn spacetime_gradient(&self, d: usize) -> [Complex64; MAX_DIM] {
        // ∂_chart u = Jᵀ ∂_x u
        let mut jt = [[0.0; MAX_DIM]; MAX_DIM];
        for a in 0..d {
            for c in 0..d {
                jt[a][c] = self.jac[c][a];
            }
        }
        let inv = invert_small(&jt, d);
        let mut out = [Complex64::new(0.0, 0.0); MAX_DIM];
        for c in 0..d {
            for a in 0..d {
                out[c] += self.grad_chart[a] * inv[c][a];
            }
        }
        out
    }
}

fn invert_small(a: &Mat4, d: usize) -> Mat4 {
    let m = DMatrix::from_fn(d, d, |i, j| a[i][j]);
    let inv = m.try_inverse().unwrap_or_else(|| DMatrix::zeros(d, d));
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = inv[(i, j)];
        }
    }
    out
}

/// Chart metric data at an off-axis point as jets in `(s, w)`, plus `√|g̃|`.
fn local_geometry(chart: &FermiChart, lf: &LocalFrame, space: &Arc<JetSpace>, z: &[f64]) -> Result<(GeoJets, f64)> {
    let (d, m) = (chart.dim, chart.m);
    let x = chart_map_jet(lf, space, d, m, z);
    let (beta, psi) = chart.metric.warp(&x);
    let dx: Vec<Vec<Jet<f64>>> = (0..d).map(|a| x.iter().map(|xc| xc.deriv(a)).collect()).collect();
    let mut gl = vec![vec![Jet::zero(space); d]; d];
    for a in 0..d {
        for b in a..d {
            let t = -(&(&dx[a][0] * &dx[b][0]) * &beta);
            let mut sp = Jet::zero(space);
            for i in 1..d {
                sp = &sp + &(&dx[a][i] * &dx[b][i]);
            }
            gl[a][b] = &t + &(&sp * &psi);
            gl[b][a] = gl[a][b].clone();
        }
    }
    let ginv = jet_matrix_inverse(&gl).ok_or_else(|| Error::Beam("chart metric degenerate".into()))?;
    let sq = jet_log_abs_det(&gl).ok_or_else(|| Error::Beam("chart metric degenerate".into()))?.scale_f64(0.5).exp();
    let vol = sq.value();
    Ok((GeoJets::new(&ginv, &sq), vol))
}

/// Phase and cut-off amplitude as jets in `(s, w)` at a chart point.
struct FieldJets {
    phi: CJet,
    amp: CJet,
    /// `a_k` jets before the cutoff
    terms: Vec<CJet>,
    cut: Option<CJet>,
}

impl FieldJets {
    fn new(prof: &BeamProfile, space: &Arc<JetSpace>, sl: &TauSlice, z: &[f64], delta: f64, rho: f64) -> Self {
        let zs = &prof.phase.zspace;
        let m = zs.nvars();
        let nmax = zs.degree();
        // powers (z_k + w_k)^p
        let mut pows: Vec<Vec<Jet<f64>>> = Vec::with_capacity(m);
        for k in 0..m {
            let v = Jet::<f64>::variable(space, k + 1, z[k]);
            let mut row = vec![Jet::constant(space, 1.0)];
            for p in 1..=nmax {
                let nxt = &row[p - 1] * &v;
                row.push(nxt);
            }
            pows.push(row);
        }
        let s = Jet::<f64>::variable(space, 0, 0.0);
        let mut mono: Vec<[Jet<f64>; 3]> = Vec::with_capacity(zs.len());
        for i in 0..zs.len() {
            let e = zs.exponents(i);
            let mut j = Jet::constant(space, 1.0);
            for k in 0..m {
                if e[k] > 0 {
                    j = &j * &pows[k][e[k] as usize];
                }
            }
            let sj = &s * &j;
            let ssj = (&s * &sj).scale_f64(0.5);
            mono.push([j, sj, ssj]);
        }
        let build = |tr: &[Vec<Complex64>; 3]| -> CJet {
            let [v, d1, d2] = tr;
            let mut out = CJet::zero(space);
            for i in 0..v.len() {
                for (c, mj) in [v[i], d1[i], d2[i]].iter().zip(mono[i].iter()) {
                    if *c != Complex64::new(0.0, 0.0) {
                        for (o, &x) in out.coeffs_mut().iter_mut().zip(mj.coeffs()) {
                            *o += c * x;
                        }
                    }
                }
            }
            out
        };
        let phi = build(&sl.phase);
        let terms: Vec<CJet> = sl.amps.iter().map(build).collect();
        let mut amp = CJet::zero(space);
        let mut w = 1.0;
        for t in &terms {
            amp.axpy(Complex64::new(w, 0.0), t);
            w /= rho;
        }
        // cutoff as a function of r²/δ²
        let mut r2 = Jet::zero(space);
        for k in 0..m {
            r2 = &r2 + &pows[k][2.min(nmax)];
        }
        let r2 = r2.scale_f64(1.0 / (delta * delta));
        let u0 = r2.value();
        let c = |u: f64| chi(u.max(0.0).sqrt());
        let (c0, c1, c2) = if u0.sqrt() <= 0.25 - 1e-6 {
            (1.0, 0.0, 0.0)
        } else {
            let e = 1e-4;
            (c(u0), (c(u0 + e) - c(u0 - e)) / (2.0 * e), (c(u0 + e) - 2.0 * c(u0) + c(u0 - e)) / (e * e))
        };
        let mut cut = None;
        if c0 != 1.0 || c1 != 0.0 {
            let cj = r2.compose(&[c0, c1, c2]).to_complex();
            amp = &amp * &cj;
            cut = Some(cj);
        }
        FieldJets { phi, amp, terms, cut }
    }
}

/// Quadrature settings for [`beam_residual`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualOptions {
    pub n_tau: usize,
    pub n_y: usize,
    /// Half-width of the whitened transverse box.
    pub y_max: f64,
    /// `τ` interval; defaults to the portion of the axis between its boundary hits.
    pub tau_range: Option<(f64, f64)>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions { n_tau: 33, n_y: 12, y_max: 5.0, tau_range: None }
    }
}

/// Discrete `H^k` norm (`k ∈ {0, 1}`) of `□_g u_ρ` over the tube, with
/// derivatives taken in chart coordinates.
pub fn beam_residual(beam: &GaussianBeam, k: usize, opts: &ResidualOptions) -> Result<f64> {
    if k > 1 {
        return Err(Error::Beam("residual norms are available for k ≤ 1".into()));
    }
    let prof = &*beam.profile;
    let chart = &*prof.chart;
    let m = chart.m;
    let spacing = 2.0 * opts.y_max / (opts.n_y.max(2) - 1) as f64;
    if spacing > 1.0 {
        return Err(Error::Beam(format!(
            "transverse quadrature spacing {spacing:.3} exceeds the Gaussian width; use more points"
        )));
    }
    let (ta, tb) = match opts.tau_range {
        Some(r) => r,
        None => {
            let lo = chart.hits.iter().filter(|h| h.s < 0.0).map(|h| h.s).fold(f64::NEG_INFINITY, f64::max);
            let hi = chart.hits.iter().filter(|h| h.s > 0.0).map(|h| h.s).fold(f64::INFINITY, f64::min);
            let (wa, wb) = prof.tau_range();
            (lo.max(wa), hi.min(wb))
        }
    };
    if !(ta.is_finite() && tb.is_finite() && tb > ta) {
        return Err(Error::Beam("empty residual interval".into()));
    }
    let nt = opts.n_tau.max(3) | 1;
    let ht = (tb - ta) / (nt - 1) as f64;
    let rho = beam.rho_eff();
    let ny = opts.n_y;
    let ys: Vec<f64> = (0..ny).map(|i| -opts.y_max + i as f64 * spacing).collect();
    let total: usize = ny.pow(m as u32);
    let mut sum = 0.0;
    for it in 0..nt {
        let tau = ta + it as f64 * ht;
        let wt = if it == 0 || it == nt - 1 {
            1.0
        } else if it % 2 == 1 {
            4.0
        } else {
            2.0
        } * ht
            / 3.0;
        let im = prof.im_h(tau) * (2.0 * rho);
        let eig = SymmetricEigen::new(im);
        let w = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        let detw = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).product::<f64>();
        let sl = beam.slice(tau, true)?;
        let mut slab = 0.0;
        for lin in 0..total {
            let mut y = [0.0; MAX_M];
            let mut r = lin;
            let mut wy = 1.0;
            for q in 0..m {
                let iy = r % ny;
                r /= ny;
                y[q] = ys[iy];
                if iy == 0 || iy == ny - 1 {
                    wy *= 0.5;
                }
            }
            let mut z = [0.0; MAX_M];
            for a in 0..m {
                for b in 0..m {
                    z[a] += w[(a, b)] * y[b];
                }
            }
            let rz = z[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
            if rz >= 0.5 * beam.delta {
                continue;
            }
            let p = beam.at_slice(&sl, &z[..m])?;
            let bu = p.box_u.unwrap();
            let mut val = bu.norm_sqr();
            if k == 1 {
                let eta_t = 1e-3;
                let eta_z = 0.05 * detw.powf(1.0 / m as f64);
                let mut g2 = 0.0;
                for a in 0..=m {
                    let (mut tp, mut tm) = (tau, tau);
                    let (mut zp, mut zm) = (z, z);
                    let h = if a == 0 {
                        tp += eta_t;
                        tm -= eta_t;
                        eta_t
                    } else {
                        zp[a - 1] += eta_z;
                        zm[a - 1] -= eta_z;
                        eta_z
                    };
                    let (bp, bm) = if a == 0 {
                        (
                            beam.at_chart(tp, &zp[..m], true)?.box_u.unwrap(),
                            beam.at_chart(tm, &zm[..m], true)?.box_u.unwrap(),
                        )
                    } else {
                        (beam.at_slice(&sl, &zp[..m])?.box_u.unwrap(), beam.at_slice(&sl, &zm[..m])?.box_u.unwrap())
                    };
                    g2 += ((bp - bm) / (2.0 * h)).norm_sqr();
                }
                val += g2;
            }
            slab += wy * val * p.volume.unwrap();
        }
        sum += wt * slab * detw * spacing.powi(m as i32);
    }
    Ok(sum.sqrt())
}
