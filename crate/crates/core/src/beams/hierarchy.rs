//! Eikonal and transport hierarchies in Fermi coordinates.
//!
//! Polynomials in `z` are coefficient vectors over a [`JetSpace`] in the `m`
//! transverse variables. Local computations use jets in `(s, z)` where `s` is
//! the offset in `τ`.

use std::sync::Arc;

use num_complex::Complex64;

use super::riccati::{CMat, RiccatiTrajectory};
use crate::geometry::FermiChart;
use crate::jet::{Jet, JetSpace};
use crate::{Error, Result};

pub type CJet = Jet<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Samples of a polynomial-valued function of `τ` with two derivatives.
#[derive(Clone, Debug)]
pub struct PolyTrack {
    pub val: Vec<Vec<Complex64>>,
    pub d1: Vec<Vec<Complex64>>,
    pub d2: Vec<Vec<Complex64>>,
}

#[derive(Clone, Debug)]
pub struct BeamPhase {
    pub order: usize,
    pub zspace: Arc<JetSpace>,
    pub tau: Vec<f64>,
    pub step: f64,
    pub track: PolyTrack,
}

#[derive(Clone, Debug)]
pub struct BeamAmplitude {
    /// Degree of `a_k` for each level `k`.
    pub degrees: Vec<usize>,
    pub tracks: Vec<PolyTrack>,
}

/// Levels and truncation degrees of the amplitude for phase order `n`.
pub fn amplitude_degrees(n: usize) -> Vec<usize> {
    (0..=(n - 2) / 2).map(|k| n - 2 - 2 * k).collect()
}

/// Products of the chart inverse metric used by the hierarchies.
pub(crate) struct GeoJets {
    pub ginv: Vec<Vec<CJet>>,
    /// `√g g^{ab}`.
    pub p: Vec<Vec<CJet>>,
    pub inv_sqrt: CJet,
    /// `g^{τ1}` on the axis.
    pub gt1: f64,
}

impl GeoJets {
    pub(crate) fn new(ginv: &[Vec<Jet<f64>>], sqrt_det: &Jet<f64>) -> Self {
        let n = ginv.len();
        let s = sqrt_det.to_complex();
        let ginv_c: Vec<Vec<CJet>> = ginv.iter().map(|r| r.iter().map(|j| j.to_complex()).collect()).collect();
        let p = (0..n).map(|a| (0..n).map(|b| &ginv_c[a][b] * &s).collect()).collect();
        let inv_sqrt = sqrt_det.recip().to_complex();
        let gt1 = ginv[0][1].value();
        GeoJets { ginv: ginv_c, p, inv_sqrt, gt1 }
    }

    pub(crate) fn grad(f: &CJet) -> Vec<CJet> {
        (0..f.space().nvars()).map(|a| f.deriv(a)).collect()
    }

    pub(crate) fn pair(&self, df: &[CJet], dh: &[CJet]) -> CJet {
        let n = df.len();
        let mut out = CJet::zero(df[0].space());
        for a in 0..n {
            let mut row = CJet::zero(df[0].space());
            for b in 0..n {
                row = &row + &(&self.ginv[a][b] * &dh[b]);
            }
            out = &out + &(&df[a] * &row);
        }
        out
    }

    /// `|g|^{−1/2} ∂_a(|g|^{1/2} g^{ab} ∂_b f)`.
    pub(crate) fn box_op(&self, f: &CJet) -> CJet {
        let n = self.p.len();
        let df = Self::grad(f);
        let mut div = CJet::zero(f.space());
        for a in 0..n {
            let mut flux = CJet::zero(f.space());
            for b in 0..n {
                flux = &flux + &(&self.p[a][b] * &df[b]);
            }
            div = &div + &flux.deriv(a);
        }
        &self.inv_sqrt * &div
    }
}

pub(crate) struct Spaces {
    pub m: usize,
    pub order: usize,
    pub z: Arc<JetSpace>,
    pub w: Arc<JetSpace>,
    /// `z`-monomial index → `(0, e)` index in `w`.
    pub lift0: Vec<usize>,
    /// `z`-monomial index → `(1, e)` index in `w`, if within degree.
    pub lift1: Vec<Option<usize>>,
    pub lift2: Vec<Option<usize>>,
}

impl Spaces {
    pub(crate) fn new(m: usize, order: usize) -> Self {
        let z = JetSpace::new(m, order);
        let w = JetSpace::new(m + 1, order);
        let mut lift0 = Vec::new();
        let mut lift1 = Vec::new();
        let mut lift2 = Vec::new();
        for i in 0..z.len() {
            let e = z.exponents(i);
            let mut f = vec![0u8; m + 1];
            f[1..].copy_from_slice(e);
            lift0.push(w.index_of(&f).unwrap());
            f[0] = 1;
            lift1.push(w.index_of(&f));
            f[0] = 2;
            lift2.push(w.index_of(&f));
        }
        Spaces { m, order, z, w, lift0, lift1, lift2 }
    }

    /// `P + s Ṗ + ½ s² P̈` as a jet in `w`.
    pub(crate) fn lift(&self, p: &[Complex64], pd: Option<&[Complex64]>, pdd: Option<&[Complex64]>) -> CJet {
        let mut c = vec![Complex64::new(0.0, 0.0); self.w.len()];
        for i in 0..p.len() {
            c[self.lift0[i]] = p[i];
            if let (Some(pd), Some(j)) = (pd, self.lift1[i]) {
                c[j] = pd[i];
            }
            if let (Some(pdd), Some(j)) = (pdd, self.lift2[i]) {
                c[j] = 0.5 * pdd[i];
            }
        }
        CJet::from_coeffs(&self.w, c)
    }

    /// Write the `s⁰` part of `src` for monomials of degree `deg` into `out`.
    fn extract(&self, src: &CJet, deg: usize, scale: Complex64, out: &mut [Complex64]) {
        for i in 0..out.len() {
            if self.z.total_degree(i) == deg {
                out[i] = scale * src.coeffs()[self.lift0[i]];
            }
        }
    }

    /// Coefficients of `z¹ + Σ H_ij z^i z^j`.
    pub(crate) fn quadratic(&self, h: &CMat, out: &mut [Complex64]) {
        let m = self.m;
        let mut e = vec![0u8; m];
        e[0] = 1;
        out[self.z.index_of(&e).unwrap()] = Complex64::new(1.0, 0.0);
        self.quadratic_only(h, out);
    }

    pub(crate) fn quadratic_only(&self, h: &CMat, out: &mut [Complex64]) {
        let m = self.m;
        for i in 0..m {
            for j in i..m {
                let mut e = vec![0u8; m];
                e[i] += 1;
                e[j] += 1;
                let v = if i == j { h[(i, i)] } else { h[(i, j)] + h[(j, i)] };
                out[self.z.index_of(&e).unwrap()] = v;
            }
        }
    }
}

/// Shared state for building a beam's hierarchies along a Riccati window.
pub struct BeamHierarchy<'a> {
    pub chart: &'a FermiChart,
    pub riccati: &'a RiccatiTrajectory,
    pub(crate) sp: Spaces,
    pub(crate) geo: Vec<Arc<GeoJets>>,
}

impl<'a> BeamHierarchy<'a> {
    pub fn new(chart: &'a FermiChart, riccati: &'a RiccatiTrajectory, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::Beam("phase order must be at least 2".into()));
        }
        if riccati.m != chart.m {
            return Err(Error::Beam("Riccati data does not match the chart".into()));
        }
        let sp = Spaces::new(chart.m, order);
        let mut geo: Vec<Arc<GeoJets>> = Vec::with_capacity(riccati.tau.len());
        let flat = chart.metric.is_flat();
        for (i, &tau) in riccati.tau.iter().enumerate() {
            if flat && i > 0 {
                let g0 = geo[0].clone();
                geo.push(g0);
                continue;
            }
            let mj = chart.metric_jet(tau, order)?;
            geo.push(Arc::new(GeoJets::new(&mj.ginv, &mj.sqrt_det)));
        }
        Ok(BeamHierarchy { chart, riccati, sp, geo })
    }

    fn zero_poly(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.sp.z.len()]
    }

    /// `φ̇` given `φ` at sample `i` (degrees ≤ 2 of `φ` must already hold `z¹ + Hzz`).
    pub(crate) fn phase_rhs(&self, i: usize, phi: &[Complex64]) -> Vec<Complex64> {
        let geo = &self.geo[i];
        let mut dphi = self.zero_poly();
        self.sp.quadratic_only(&self.riccati.hdot(i), &mut dphi);
        let scale = Complex64::new(-0.5 / geo.gt1, 0.0);
        for k in 3..=self.sp.order {
            let f = self.sp.lift(phi, Some(&dphi), None);
            let df = GeoJets::grad(&f);
            let s = geo.pair(&df, &df);
            self.sp.extract(&s, k, scale, &mut dphi);
        }
        dphi
    }

    fn fix_phase(&self, i: usize, phi: &mut [Complex64]) {
        for (j, v) in phi.iter_mut().enumerate() {
            if self.sp.z.total_degree(j) <= 2 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.sp.quadratic(&self.riccati.h[i], phi);
    }

    /// Integrate the eikonal hierarchy.
    pub fn phase(&self) -> Result<BeamPhase> {
        let init = {
            let mut p = self.zero_poly();
            self.fix_phase(self.riccati.base, &mut p);
            p
        };
        let track = self.integrate(init, |i, v| self.fix_phase(i, v), |i, v| self.phase_rhs(i, v))?;
        Ok(BeamPhase {
            order: self.sp.order,
            zspace: self.sp.z.clone(),
            tau: self.riccati.tau.clone(),
            step: self.riccati.step,
            track,
        })
    }

    /// `ȧ_k` at sample `i`.
    pub(crate) fn amplitude_rhs(
        &self,
        i: usize,
        phase: &BeamPhase,
        prev: Option<&PolyTrack>,
        deg: usize,
        a: &[Complex64],
    ) -> Vec<Complex64> {
        let geo = &self.geo[i];
        let t = &phase.track;
        let phi = self.sp.lift(&t.val[i], Some(&t.d1[i]), Some(&t.d2[i]));
        let dphi = GeoJets::grad(&phi);
        let box_phi = geo.box_op(&phi);
        let forcing = prev.map(|p| {
            let f = self.sp.lift(&p.val[i], Some(&p.d1[i]), Some(&p.d2[i]));
            geo.box_op(&f).scale(-I)
        });
        let scale = Complex64::new(-0.5 / geo.gt1, 0.0);
        let mut da = self.zero_poly();
        for j in 0..=deg {
            let f = self.sp.lift(a, Some(&da), None);
            let df = GeoJets::grad(&f);
            let mut r = geo.pair(&dphi, &df).scale_f64(2.0) + &box_phi * &f;
            if let Some(fc) = &forcing {
                r = &r + fc;
            }
            self.sp.extract(&r, j, scale, &mut da);
        }
        da
    }

    /// Integrate the transport hierarchy for the given phase.
    pub fn amplitude(&self, phase: &BeamPhase) -> Result<BeamAmplitude> {
        let degrees = amplitude_degrees(self.sp.order);
        let lead = self.riccati.amplitude_leading()?;
        let mut tracks: Vec<PolyTrack> = Vec::new();
        for (k, &deg) in degrees.iter().enumerate() {
            let mut init = self.zero_poly();
            let fix = |i: usize, v: &mut [Complex64]| {
                for (j, c) in v.iter_mut().enumerate() {
                    if self.sp.z.total_degree(j) > deg {
                        *c = Complex64::new(0.0, 0.0);
                    }
                }
                if k == 0 {
                    v[0] = lead[i];
                }
            };
            fix(self.riccati.base, &mut init);
            let prev = tracks.last().cloned();
            let track = self.integrate(init, fix, |i, v| self.amplitude_rhs(i, phase, prev.as_ref(), deg, v))?;
            tracks.push(track);
        }
        Ok(BeamAmplitude { degrees, tracks })
    }

    /// RK4 on every other sample using the odd samples as midpoints, then fill
    /// the odd samples by Hermite interpolation and difference `Ṗ` for `P̈`.
    fn integrate(
        &self,
        init: Vec<Complex64>,
        fix: impl Fn(usize, &mut [Complex64]),
        rhs: impl Fn(usize, &[Complex64]) -> Vec<Complex64>,
    ) -> Result<PolyTrack> {
        let n = self.riccati.tau.len();
        let base = self.riccati.base;
        let h = self.riccati.step;
        let len = init.len();
        let zero = vec![Complex64::new(0.0, 0.0); len];
        let mut val = vec![zero.clone(); n];
        let mut d1 = vec![zero.clone(); n];
        let stage = |i: usize, mut v: Vec<Complex64>| -> (Vec<Complex64>, Vec<Complex64>) {
            fix(i, &mut v);
            let r = rhs(i, &v);
            (v, r)
        };
        let (v0, r0) = stage(base, init);
        val[base] = v0;
        d1[base] = r0;
        let axpy = |a: &[Complex64], s: f64, b: &[Complex64]| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y * s).collect()
        };
        for dir in [1isize, -1] {
            let hh = 2.0 * h * dir as f64;
            let mut i = base as isize;
            loop {
                let j = i + 2 * dir;
                if j < 0 || j >= n as isize {
                    break;
                }
                let (iu, mu, ju) = (i as usize, (i + dir) as usize, j as usize);
                let y = val[iu].clone();
                let k1 = d1[iu].clone();
                let (_, k2) = stage(mu, axpy(&y, 0.5 * hh, &k1));
                let (_, k3) = stage(mu, axpy(&y, 0.5 * hh, &k2));
                let (_, k4) = stage(ju, axpy(&y, hh, &k3));
                let next: Vec<Complex64> =
                    (0..len).map(|c| y[c] + (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) * (hh / 6.0)).collect();
                let (vn, rn) = stage(ju, next);
                if vn.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Beam("hierarchy integration produced non-finite values".into()));
                }
                val[ju] = vn;
                d1[ju] = rn;
                i = j;
            }
        }
        // odd samples
        let mut i = (base % 2) ^ 1;
        while i < n {
            if i >= 1 && i + 1 < n {
                let (a, b) = (i - 1, i + 1);
                let hh = 2.0 * h;
                let mid: Vec<Complex64> =
                    (0..len).map(|c| 0.5 * (val[a][c] + val[b][c]) + 0.125 * hh * (d1[a][c] - d1[b][c])).collect();
                let (v, r) = stage(i, mid);
                val[i] = v;
                d1[i] = r;
            }
            i += 2;
        }
        let d2 = second_derivative(&d1, h);
        Ok(PolyTrack { val, d1, d2 })
    }
}

/// Central differences of sampled first derivatives, one-sided at the ends.
fn second_derivative(d1: &[Vec<Complex64>], h: f64) -> Vec<Vec<Complex64>> {
    let n = d1.len();
    let len = d1[0].len();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); len]; n];
    if n < 3 {
        return out;
    }
    for i in 0..n {
        for c in 0..len {
            out[i][c] = if i == 0 {
                (-3.0 * d1[0][c] + 4.0 * d1[1][c] - d1[2][c]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * d1[n - 1][c] - 4.0 * d1[n - 2][c] + d1[n - 3][c]) / (2.0 * h)
            } else {
                (d1[i + 1][c] - d1[i - 1][c]) / (2.0 * h)
            };
        }
    }
    out
}

pub fn build_phase(chart: &FermiChart, riccati: &RiccatiTrajectory, order: usize) -> Result<BeamPhase> {
    BeamHierarchy::new(chart, riccati, order)?.phase()
}

pub fn build_amplitude(chart: &FermiChart, riccati: &RiccatiTrajectory, phase: &BeamPhase) -> Result<BeamAmplitude> {
    BeamHierarchy::new(chart, riccati, phase.order)?.amplitude(phase)
}
