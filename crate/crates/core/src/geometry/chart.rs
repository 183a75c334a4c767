//! Null Fermi charts along null geodesics.
//!
//! The frame along `γ` is `E₀ = γ̇`, `E₁ = N` (null, `g(γ̇,N) = 1`) and
//! orthonormal `E₂..E_m`, all parallel transported. The chart is
//!
//! ```text
//! X(τ, z) = γ(τ) + E_k(τ) z^k − ½ Γ(γ(τ))(E_j, E_k) z^j z^k
//! ```
//!
//! whose Christoffel symbols vanish on the axis, so the chart metric equals
//! `2 dτ dz¹ + Σ_{i≥2} (dz^i)²` there with vanishing first derivatives.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::geodesic::NullGeodesic;
use super::metric::{Mat4, Vec4, WarpedMetric, MAX_DIM};
use crate::jet::{jet_log_abs_det, jet_matrix_inverse, Jet, JetSpace};
use crate::{Error, Result};

/// Largest transverse dimension.
pub const MAX_M: usize = MAX_DIM - 1;

type Frame = [Vec4; MAX_M];

/// Geometric data of the chart at one value of `τ`.
#[derive(Clone, Debug)]
pub struct LocalFrame {
    pub tau: f64,
    pub x: Vec4,
    pub v: Vec4,
    pub acc: Vec4,
    pub e: Frame,
    pub edot: Frame,
    pub eddot: Frame,
    pub q: [[Vec4; MAX_M]; MAX_M],
    pub qdot: [[Vec4; MAX_M]; MAX_M],
    pub qddot: [[Vec4; MAX_M]; MAX_M],
}

#[derive(Clone, Debug)]
pub struct FermiChart {
    pub metric: WarpedMetric,
    pub dim: usize,
    pub m: usize,
    pub step: f64,
    pub tau: Vec<f64>,
    pub x: Vec<Vec4>,
    pub v: Vec<Vec4>,
    pub acc: Vec<Vec4>,
    pub e: Vec<Frame>,
    pub edot: Vec<Frame>,
    /// Tube half-width.
    pub delta: f64,
    pub hits: Vec<super::geodesic::BoundaryHit>,
}

/// Taylor data of the chart inverse metric at a point of the axis, in the
/// variables `(s, z¹..z^m)` where `s` is the offset in `τ`.
#[derive(Clone, Debug)]
pub struct ChartMetricJet {
    pub tau: f64,
    pub space: Arc<JetSpace>,
    pub ginv: Vec<Vec<Jet<f64>>>,
    pub sqrt_det: Jet<f64>,
}

fn dot(g: &WarpedMetric, x: &Vec4, a: &Vec4, b: &Vec4) -> f64 {
    g.vec_inner(x, a, b)
}

fn lin(a: &Vec4, s: f64, b: &Vec4) -> Vec4 {
    let mut o = *a;
    for i in 0..MAX_DIM {
        o[i] += s * b[i];
    }
    o
}

fn scale(a: &Vec4, s: f64) -> Vec4 {
    let mut o = *a;
    for c in o.iter_mut() {
        *c *= s;
    }
    o
}

/// Null partner and orthonormal transverse vectors for a null vector `v` at `x`.
fn initial_frame(g: &WarpedMetric, x: &Vec4, v: &Vec4) -> Result<Frame> {
    let d = g.dim;
    let f = g.factors(x);
    let (sb, sp) = (f.beta.sqrt(), f.psi.sqrt());
    let c = sb * v[0];
    if c <= 0.0 {
        return Err(Error::Geometry("axis velocity must be future-directed".into()));
    }
    let mut n = [0.0; MAX_DIM];
    for i in 1..d {
        n[i] = sp * v[i] / c;
    }
    let nn: f64 = n.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (nn - 1.0).abs() > 1e-6 {
        return Err(Error::Geometry("axis velocity is not null".into()));
    }
    // spatial orthonormal complement of n (frame components, index 1..d)
    let mut trans: Vec<Vec4> = Vec::new();
    if d == 3 {
        let mut t = [0.0; MAX_DIM];
        t[1] = -n[2];
        t[2] = n[1];
        trans.push(t);
    } else {
        let mut axis = 1;
        for i in 1..d {
            if n[i].abs() < n[axis].abs() {
                axis = i;
            }
        }
        let mut a = [0.0; MAX_DIM];
        a[axis] = 1.0;
        let an = a[axis] * n[axis];
        for i in 1..d {
            a[i] -= an * n[i];
        }
        let na = a.iter().map(|c| c * c).sum::<f64>().sqrt();
        let a = scale(&a, 1.0 / na);
        let b = [0.0, n[2] * a[3] - n[3] * a[2], n[3] * a[1] - n[1] * a[3], n[1] * a[2] - n[2] * a[1]];
        trans.push(a);
        trans.push(b);
    }
    let mut frame = [[0.0; MAX_DIM]; MAX_M];
    // N = -(e₀ - n·e)/(2c)
    frame[0][0] = -1.0 / (2.0 * c * sb);
    for i in 1..d {
        frame[0][i] = n[i] / (2.0 * c * sp);
    }
    for (k, t) in trans.iter().enumerate() {
        for i in 1..d {
            frame[k + 1][i] = t[i] / sp;
        }
    }
    Ok(frame)
}

/// Re-impose the null-frame relations.
fn reorthonormalize(g: &WarpedMetric, x: &Vec4, v: &Vec4, fr: &mut Frame, m: usize) {
    for k in 1..m {
        let a = dot(g, x, &fr[k], &fr[0]);
        let b = dot(g, x, &fr[k], v);
        fr[k] = lin(&lin(&fr[k], -a, v), -b, &fr[0]);
        for j in 1..k {
            let c = dot(g, x, &fr[k], &fr[j]);
            fr[k] = lin(&fr[k], -c, &fr[j]);
        }
        let nrm = dot(g, x, &fr[k], &fr[k]).sqrt();
        fr[k] = scale(&fr[k], 1.0 / nrm);
    }
    for k in 1..m {
        let c = dot(g, x, &fr[0], &fr[k]);
        fr[0] = lin(&fr[0], -c, &fr[k]);
    }
    let gv = dot(g, x, &fr[0], v);
    fr[0] = scale(&fr[0], 1.0 / gv);
    let nn = dot(g, x, &fr[0], &fr[0]);
    fr[0] = lin(&fr[0], -0.5 * nn, v);
}

#[derive(Clone, Copy)]
struct Full {
    x: Vec4,
    v: Vec4,
    e: Frame,
}

fn full_rhs(g: &WarpedMetric, s: &Full, m: usize) -> Full {
    let gam = g.christoffel(&s.x);
    let acc = g.gamma_contract(&gam, &s.v, &s.v);
    let mut out = Full { x: s.v, v: scale(&acc, -1.0), e: [[0.0; MAX_DIM]; MAX_M] };
    for k in 0..m {
        out.e[k] = scale(&g.gamma_contract(&gam, &s.v, &s.e[k]), -1.0);
    }
    out
}

fn full_axpy(s: &Full, h: f64, k: &Full, m: usize) -> Full {
    let mut o = *s;
    o.x = lin(&s.x, h, &k.x);
    o.v = lin(&s.v, h, &k.v);
    for j in 0..m {
        o.e[j] = lin(&s.e[j], h, &k.e[j]);
    }
    o
}

fn full_step(g: &WarpedMetric, s: &Full, h: f64, m: usize) -> Full {
    let k1 = full_rhs(g, s, m);
    let k2 = full_rhs(g, &full_axpy(s, 0.5 * h, &k1, m), m);
    let k3 = full_rhs(g, &full_axpy(s, 0.5 * h, &k2, m), m);
    let k4 = full_rhs(g, &full_axpy(s, h, &k3, m), m);
    let mut o = *s;
    let comb = |a: &Vec4, b: &Vec4, c: &Vec4, d: &Vec4, base: &Vec4| {
        let mut r = *base;
        for i in 0..MAX_DIM {
            r[i] += h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
        }
        r
    };
    o.x = comb(&k1.x, &k2.x, &k3.x, &k4.x, &s.x);
    o.v = comb(&k1.v, &k2.v, &k3.v, &k4.v, &s.v);
    for j in 0..m {
        o.e[j] = comb(&k1.e[j], &k2.e[j], &k3.e[j], &k4.e[j], &s.e[j]);
    }
    o
}

/// Build the chart along `γ`, re-integrating position, velocity and frame
/// from the base point with the geodesic's own step.
pub fn build_fermi_chart(g: &WarpedMetric, geo: &NullGeodesic) -> Result<FermiChart> {
    build_fermi_chart_with(g, geo, 0.05, 100)
}

pub fn build_fermi_chart_with(
    g: &WarpedMetric,
    geo: &NullGeodesic,
    delta: f64,
    reorth_every: usize,
) -> Result<FermiChart> {
    let d = g.dim;
    let m = d - 1;
    let h = geo.step;
    let base = geo.base_index();
    if geo.s[base].abs() > 1e-12 {
        return Err(Error::Geometry("geodesic has no sample at parameter 0".into()));
    }
    let n_fwd = geo.s.len() - 1 - base;
    let n_bwd = base;
    let p = geo.x[base];
    let v0 = geo.v[base];
    let e0 = initial_frame(g, &p, &v0)?;
    let start = Full { x: p, v: v0, e: e0 };
    let run = |n: usize, hh: f64| -> Vec<Full> {
        let mut out = Vec::with_capacity(n + 1);
        let mut st = start;
        out.push(st);
        for i in 1..=n {
            st = full_step(g, &st, hh, m);
            if i % reorth_every == 0 {
                let (x, v) = (st.x, st.v);
                reorthonormalize(g, &x, &v, &mut st.e, m);
            }
            out.push(st);
        }
        out
    };
    let fwd = run(n_fwd, h);
    let bwd = run(n_bwd, -h);
    let mut states: Vec<Full> = bwd.into_iter().rev().collect();
    states.pop();
    states.extend(fwd);

    let mut chart = FermiChart {
        metric: g.clone(),
        dim: d,
        m,
        step: h,
        tau: Vec::with_capacity(states.len()),
        x: Vec::new(),
        v: Vec::new(),
        acc: Vec::new(),
        e: Vec::new(),
        edot: Vec::new(),
        delta,
        hits: geo.hits.clone(),
    };
    for (i, st) in states.iter().enumerate() {
        let tau = (i as f64 - n_bwd as f64) * h;
        let r = full_rhs(g, st, m);
        chart.tau.push(tau);
        chart.x.push(st.x);
        chart.v.push(st.v);
        chart.acc.push(r.v);
        chart.e.push(st.e);
        chart.edot.push(r.e);
    }
    chart.check_frame()?;
    chart.check_self_overlap()?;
    Ok(chart)
}

fn hermite3(t: f64, h: f64, p0: f64, m0: f64, p1: f64, m1: f64) -> (f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d00 = 6.0 * t2 - 6.0 * t;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = -6.0 * t2 + 6.0 * t;
    let d11 = 3.0 * t2 - 2.0 * t;
    (h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1, (d00 * p0 + d10 * h * m0 + d01 * p1 + d11 * h * m1) / h)
}

#[allow(clippy::too_many_arguments)]
fn hermite5(t: f64, h: f64, p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64) -> (f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let b = [
        1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
        t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
        0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
        10.0 * t3 - 15.0 * t4 + 6.0 * t5,
        -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
        0.5 * t3 - t4 + 0.5 * t5,
    ];
    let db = [
        -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
        1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
        t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
        30.0 * t2 - 60.0 * t3 + 30.0 * t4,
        -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
        1.5 * t2 - 4.0 * t3 + 2.5 * t4,
    ];
    let c = [p0, h * v0, h * h * a0, p1, h * v1, h * h * a1];
    let val: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
    let der: f64 = db.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>() / h;
    (val, der)
}

impl FermiChart {
    pub fn tau_range(&self) -> (f64, f64) {
        (self.tau[0], *self.tau.last().unwrap())
    }

    pub fn in_range(&self, tau: f64) -> bool {
        let (a, b) = self.tau_range();
        tau >= a - 1e-12 && tau <= b + 1e-12
    }

    fn check_frame(&self) -> Result<()> {
        let g = &self.metric;
        for i in (0..self.tau.len()).step_by(50) {
            let (x, v, e) = (&self.x[i], &self.v[i], &self.e[i]);
            let mut bad = (dot(g, x, &e[0], v) - 1.0).abs() + dot(g, x, &e[0], &e[0]).abs();
            for k in 1..self.m {
                bad += (dot(g, x, &e[k], &e[k]) - 1.0).abs();
                bad += dot(g, x, &e[k], v).abs() + dot(g, x, &e[k], &e[0]).abs();
            }
            if !(bad < 1e-6) {
                return Err(Error::Geometry(format!(
                    "null frame degenerated at τ = {:.4} (defect {bad:e})",
                    self.tau[i]
                )));
            }
        }
        Ok(())
    }

    /// Separate portions of the axis must stay farther apart than the tube.
    fn check_self_overlap(&self) -> Result<()> {
        let stride = 10usize.max((self.delta / self.step) as usize / 2).max(1);
        let idx: Vec<usize> = (0..self.tau.len()).step_by(stride).collect();
        let sep = 4.0 * self.delta;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                if (self.tau[j] - self.tau[i]).abs() < 4.0 * sep {
                    continue;
                }
                let d2: f64 = (0..self.dim).map(|k| (self.x[i][k] - self.x[j][k]).powi(2)).sum();
                if d2.sqrt() < sep {
                    return Err(Error::Geometry(format!(
                        "geodesic returns within the tube: τ = {:.3} and τ = {:.3}",
                        self.tau[i], self.tau[j]
                    )));
                }
            }
        }
        Ok(())
    }

    fn locate(&self, tau: f64) -> Result<(usize, f64)> {
        if !self.in_range(tau) {
            return Err(Error::Domain(format!("τ = {tau} outside chart range {:?}", self.tau_range())));
        }
        let n = self.tau.len();
        let f = (tau - self.tau[0]) / self.step;
        let i = (f.floor() as isize).clamp(0, n as isize - 2) as usize;
        Ok((i, (tau - self.tau[i]) / self.step))
    }

    /// Interpolated axis point, velocity and frame.
    fn interp(&self, tau: f64) -> Result<(Vec4, Vec4, Frame)> {
        let (i, t) = self.locate(tau)?;
        let h = self.step;
        let mut x = [0.0; MAX_DIM];
        let mut v = [0.0; MAX_DIM];
        for c in 0..self.dim {
            let (a, b) = hermite5(
                t,
                h,
                self.x[i][c],
                self.v[i][c],
                self.acc[i][c],
                self.x[i + 1][c],
                self.v[i + 1][c],
                self.acc[i + 1][c],
            );
            x[c] = a;
            v[c] = b;
        }
        let mut e = [[0.0; MAX_DIM]; MAX_M];
        for k in 0..self.m {
            for c in 0..self.dim {
                e[k][c] =
                    hermite3(t, h, self.e[i][k][c], self.edot[i][k][c], self.e[i + 1][k][c], self.edot[i + 1][k][c]).0;
            }
        }
        Ok((x, v, e))
    }

    fn frame_from(&self, tau: f64, x: Vec4, v: Vec4, e: Frame) -> LocalFrame {
        let g = &self.metric;
        let (d, m) = (self.dim, self.m);
        let gam = g.christoffel(&x);
        let dgam = g.dchristoffel(&x);
        let acc = scale(&g.gamma_contract(&gam, &v, &v), -1.0);
        // ∂_v Γ  (contracted derivative direction)
        let mut vg = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for r in 0..d {
            if v[r] == 0.0 {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    for c in 0..d {
                        vg[a][b][c] += v[r] * dgam[r][a][b][c];
                    }
                }
            }
        }
        let mut edot = [[0.0; MAX_DIM]; MAX_M];
        let mut eddot = [[0.0; MAX_DIM]; MAX_M];
        for k in 0..m {
            edot[k] = scale(&g.gamma_contract(&gam, &v, &e[k]), -1.0);
        }
        for k in 0..m {
            let t1 = g.gamma_contract(&vg, &v, &e[k]);
            let t2 = g.gamma_contract(&gam, &acc, &e[k]);
            let t3 = g.gamma_contract(&gam, &v, &edot[k]);
            for c in 0..d {
                eddot[k][c] = -(t1[c] + t2[c] + t3[c]);
            }
        }
        let mut q = [[[0.0; MAX_DIM]; MAX_M]; MAX_M];
        let mut qdot = [[[0.0; MAX_DIM]; MAX_M]; MAX_M];
        for j in 0..m {
            for k in 0..m {
                q[j][k] = g.gamma_contract(&gam, &e[j], &e[k]);
                let a = g.gamma_contract(&vg, &e[j], &e[k]);
                let b = g.gamma_contract(&gam, &edot[j], &e[k]);
                let c = g.gamma_contract(&gam, &e[j], &edot[k]);
                for i in 0..d {
                    qdot[j][k][i] = a[i] + b[i] + c[i];
                }
            }
        }
        LocalFrame { tau, x, v, acc, e, edot, eddot, q, qdot, qddot: [[[0.0; MAX_DIM]; MAX_M]; MAX_M] }
    }

    /// Chart data at `τ`. With `second` set, `Q̈` is filled in by central
    /// differences of `Q̇` (one-sided at the ends of the range).
    pub fn local_frame(&self, tau: f64, second: bool) -> Result<LocalFrame> {
        let (x, v, e) = self.interp(tau)?;
        let mut lf = self.frame_from(tau, x, v, e);
        if second && !self.metric.is_flat() {
            let eta = 1e-4;
            let (a, b) = self.tau_range();
            let (lo, hi) = ((tau - eta).max(a), (tau + eta).min(b));
            let (xl, vl, el) = self.interp(lo)?;
            let (xh, vh, eh) = self.interp(hi)?;
            let fl = self.frame_from(lo, xl, vl, el);
            let fh = self.frame_from(hi, xh, vh, eh);
            for j in 0..self.m {
                for k in 0..self.m {
                    for c in 0..self.dim {
                        lf.qddot[j][k][c] = (fh.qdot[j][k][c] - fl.qdot[j][k][c]) / (hi - lo);
                    }
                }
            }
        }
        Ok(lf)
    }

    /// `Φ⁻¹(τ, z)`: the spacetime point with chart coordinates `(τ, z)`.
    pub fn point(&self, tau: f64, z: &[f64]) -> Result<Vec4> {
        let lf = self.local_frame(tau, false)?;
        Ok(chart_point(&lf, z, self.dim, self.m).0)
    }

    /// Chart coordinates `(τ, z)` of a spacetime point by Newton iteration,
    /// or `None` when the point is not covered near the axis.
    pub fn coords(&self, x: &[f64], max_radius: f64) -> Option<(f64, Vec4)> {
        let d = self.dim;
        // nearest axis sample, coarse then fine
        let dist = |i: usize| -> f64 { (0..d).map(|c| (self.x[i][c] - x[c]).powi(2)).sum() };
        let n = self.tau.len();
        let stride = 16;
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for i in (0..n).step_by(stride) {
            let di = dist(i);
            if di < bd {
                bd = di;
                best = i;
            }
        }
        let lo = best.saturating_sub(stride);
        let hi = (best + stride).min(n - 1);
        for i in lo..=hi {
            let di = dist(i);
            if di < bd {
                bd = di;
                best = i;
            }
        }
        if bd.sqrt() > 3.0 * max_radius + 4.0 * self.step {
            return None;
        }
        self.coords_from(x, self.tau[best], max_radius)
    }

    /// Newton iteration for the chart coordinates starting from `τ = tau0`, `z = 0`.
    pub fn coords_from(&self, x: &[f64], tau0: f64, max_radius: f64) -> Option<(f64, Vec4)> {
        let (d, m) = (self.dim, self.m);
        let mut y = [0.0; MAX_DIM];
        y[0] = tau0;
        for _ in 0..30 {
            let lf = self.local_frame(y[0], false).ok()?;
            let (p, jac) = chart_point(&lf, &y[1..], d, m);
            let mut r = [0.0; MAX_DIM];
            for c in 0..d {
                r[c] = x[c] - p[c];
            }
            let mut a = jac;
            let dy = solve_small(&mut a, &mut r, d)?;
            let mut step = 0.0;
            for c in 0..d {
                y[c] += dy[c];
                step += dy[c].abs();
            }
            let zn: f64 = y[1..=m].iter().map(|z| z * z).sum::<f64>().sqrt();
            if zn > 4.0 * max_radius.max(1e-3) || !self.in_range(y[0]) {
                return None;
            }
            if step < 1e-13 {
                let mut z = [0.0; MAX_DIM];
                z[..m].copy_from_slice(&y[1..=m]);
                return Some((y[0], z));
            }
        }
        None
    }

    /// Taylor data of the chart inverse metric at `τ` in the variables `(s, z)`,
    /// accurate through total degree `degree` (the chart map itself is expanded
    /// to `degree + 1`).
    pub fn metric_jet(&self, tau: f64, degree: usize) -> Result<ChartMetricJet> {
        let lf = self.local_frame(tau, degree >= 1)?;
        metric_jet_at(&self.metric, &lf, self.m, degree)
    }

    /// `(C, D)` of the Riccati system at `τ`.
    pub fn riccati_data(&self, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = self.m;
        let mut c = DMatrix::zeros(m, m);
        for i in 1..m {
            c[(i, i)] = 2.0;
        }
        if self.metric.is_flat() {
            return Ok((c, DMatrix::zeros(m, m)));
        }
        let lf = self.local_frame(tau, false)?;
        let mj = metric_jet_at(&self.metric, &lf, m, 2)?;
        Ok((c, transverse_hessian_quarter(&mj, m)))
    }
}

/// `D_ij = ¼ ∂²_ij g^{11}` on the axis, read off a chart metric jet.
pub(crate) fn transverse_hessian_quarter(mj: &ChartMetricJet, m: usize) -> DMatrix<f64> {
    let g11 = &mj.ginv[1][1];
    let nv = m + 1;
    let mut dmat = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut e = vec![0u8; nv];
            e[i + 1] += 1;
            e[j + 1] += 1;
            let c = g11.coeff(&e);
            dmat[(i, j)] = if i == j { 0.5 * c } else { 0.25 * c };
        }
    }
    dmat
}

/// The chart point and its Jacobian `∂X/∂(τ,z)`.
pub fn chart_point(lf: &LocalFrame, z: &[f64], d: usize, m: usize) -> (Vec4, Mat4) {
    let mut p = lf.x;
    let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
    for c in 0..d {
        jac[c][0] = lf.v[c];
    }
    for k in 0..m {
        for c in 0..d {
            p[c] += lf.e[k][c] * z[k];
            jac[c][0] += lf.edot[k][c] * z[k];
            jac[c][k + 1] += lf.e[k][c];
        }
    }
    for j in 0..m {
        for k in 0..m {
            let zz = z[j] * z[k];
            for c in 0..d {
                p[c] -= 0.5 * lf.q[j][k][c] * zz;
                jac[c][0] -= 0.5 * lf.qdot[j][k][c] * zz;
                // ∂/∂z_j of -½ Q_{jk} z^j z^k  summed symmetrically
                jac[c][j + 1] -= 0.5 * lf.q[j][k][c] * z[k];
                jac[c][k + 1] -= 0.5 * lf.q[j][k][c] * z[j];
            }
        }
    }
    (p, jac)
}

/// Gaussian elimination with partial pivoting for `n ≤ 4`.
pub(crate) fn solve_small(a: &mut Mat4, b: &mut Vec4, n: usize) -> Option<Vec4> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; MAX_DIM];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Chart-map jet `X(τ+s, z₀+w)` through second order in `s`.
pub fn chart_map_jet(lf: &LocalFrame, space: &Arc<JetSpace>, d: usize, m: usize, z0: &[f64]) -> Vec<Jet<f64>> {
    let s = Jet::<f64>::variable(space, 0, 0.0);
    let s2 = &s * &s;
    let zs: Vec<Jet<f64>> = (0..m).map(|k| Jet::variable(space, k + 1, z0[k])).collect();
    let mut out = Vec::with_capacity(d);
    for c in 0..d {
        let mut x = Jet::constant(space, lf.x[c]);
        x.axpy(lf.v[c], &s);
        x.axpy(0.5 * lf.acc[c], &s2);
        for k in 0..m {
            let zk = &zs[k];
            x.axpy(lf.e[k][c], zk);
            x.axpy(lf.edot[k][c], &(&s * zk));
            x.axpy(0.5 * lf.eddot[k][c], &(&s2 * zk));
        }
        for j in 0..m {
            for k in 0..m {
                let zz = &zs[j] * &zs[k];
                x.axpy(-0.5 * lf.q[j][k][c], &zz);
                x.axpy(-0.5 * lf.qdot[j][k][c], &(&s * &zz));
                x.axpy(-0.25 * lf.qddot[j][k][c], &(&s2 * &zz));
            }
        }
        out.push(x);
    }
    out
}

pub(crate) fn metric_jet_at(g: &WarpedMetric, lf: &LocalFrame, m: usize, degree: usize) -> Result<ChartMetricJet> {
    let d = m + 1;
    let space = JetSpace::new(d, degree + 1);
    let x = chart_map_jet(lf, &space, d, m, &[0.0; MAX_M]);
    let (beta, psi) = g.warp(&x);
    let dx: Vec<Vec<Jet<f64>>> = (0..d).map(|a| x.iter().map(|xc| xc.deriv(a)).collect()).collect();
    let mut gl = vec![vec![Jet::zero(&space); d]; d];
    for a in 0..d {
        for b in a..d {
            let mut acc = &(&dx[a][0] * &dx[b][0]) * &beta;
            acc = -acc;
            let mut sp = Jet::zero(&space);
            for i in 1..d {
                sp = &sp + &(&dx[a][i] * &dx[b][i]);
            }
            acc = &acc + &(&sp * &psi);
            gl[a][b] = acc.truncate(degree);
            gl[b][a] = gl[a][b].clone();
        }
    }
    // work in the smaller space from here on
    let small = JetSpace::new(d, degree);
    let shrink = |j: &Jet<f64>| -> Jet<f64> {
        let mut c = vec![0.0; small.len()];
        for (i, v) in c.iter_mut().enumerate() {
            *v = j.coeff(small.exponents(i));
        }
        Jet::from_coeffs(&small, c)
    };
    let gs: Vec<Vec<Jet<f64>>> = gl.iter().map(|r| r.iter().map(shrink).collect()).collect();
    let ginv = jet_matrix_inverse(&gs).ok_or_else(|| Error::Geometry("chart metric degenerate on the axis".into()))?;
    let ld = jet_log_abs_det(&gs).ok_or_else(|| Error::Geometry("chart metric degenerate on the axis".into()))?;
    let sqrt_det = ld.scale_f64(0.5).exp();
    Ok(ChartMetricJet { tau: lf.tau, space: small, ginv, sqrt_det })
}

/// Free-function form of [`FermiChart::riccati_data`].
pub fn riccati_data(chart: &FermiChart, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    chart.riccati_data(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{trace_through, GeodesicOptions};

    fn chart_for(g: &WarpedMetric, p: &[f64], xi: &[f64]) -> FermiChart {
        let f = g.factors(p);
        let sp: f64 = xi[1..].iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut xi = xi.to_vec();
        xi[0] = -(f.beta / f.psi).sqrt() * sp;
        let xi = &xi[..];
        let geo = trace_through(g, p, xi, &GeodesicOptions::default()).unwrap();
        build_fermi_chart(g, &geo).unwrap()
    }

    fn bumped() -> WarpedMetric {
        WarpedMetric::lapse_bump(3, 0.1, vec![0.5, 0.45, 0.55], 0.3)
    }

    #[test]
    fn flat_chart_is_affine_with_flat_data() {
        let g = WarpedMetric::minkowski(3);
        let ch = chart_for(&g, &[0.5, 0.5, 0.5], &[-1.0, 1.0, 0.0]);
        let (c, dm) = ch.riccati_data(0.1).unwrap();
        assert_eq!(c[(0, 0)], 0.0);
        assert_eq!(c[(1, 1)], 2.0);
        assert!(dm.iter().all(|&v| v == 0.0));
        let mj = ch.metric_jet(0.0, 3).unwrap();
        // axis normal form: g^{τ1} = 1, g^{11} = 0
        assert!((mj.ginv[0][1].value() - 1.0).abs() < 1e-12);
        assert!(mj.ginv[1][1].value().abs() < 1e-12);
        assert!(mj.ginv[1][1].max_abs() < 1e-12);
    }

    #[test]
    fn axis_fidelity_and_inverse() {
        let g = bumped();
        let ch = chart_for(&g, &[0.5, 0.5, 0.5], &[-(1.1f64).sqrt(), 1.0, 0.0]);
        for &tau in &[-0.3, 0.0, 0.2, 0.37] {
            let i = ((tau - ch.tau[0]) / ch.step).round() as usize;
            let p = ch.point(ch.tau[i], &[0.0, 0.0]).unwrap();
            for c in 0..3 {
                assert!((p[c] - ch.x[i][c]).abs() < 1e-12);
            }
            let (t, z) = ch.coords(&p, 0.1).unwrap();
            assert!((t - ch.tau[i]).abs() < 1e-8 && z[0].abs() < 1e-8 && z[1].abs() < 1e-8);
            let q = ch.point(tau, &[0.03, -0.02]).unwrap();
            let (t2, z2) = ch.coords(&q, 0.1).unwrap();
            assert!((t2 - tau).abs() < 1e-10);
            assert!((z2[0] - 0.03).abs() < 1e-10 && (z2[1] + 0.02).abs() < 1e-10);
        }
    }

    #[test]
    fn axis_first_derivatives_vanish() {
        let g = bumped();
        let ch = chart_for(&g, &[0.5, 0.5, 0.5], &[-(1.1f64).sqrt(), 0.6, 0.8]);
        let mj = ch.metric_jet(0.05, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let j = &mj.ginv[a][b];
                for v in 0..3 {
                    let mut e = [0u8; 3];
                    e[v] = 1;
                    assert!(j.coeff(&e).abs() < 1e-9, "∂{v} g^{a}{b} = {}", j.coeff(&e));
                }
            }
        }
        assert!((mj.ginv[0][1].value() - 1.0).abs() < 1e-9);
        assert!(mj.ginv[0][0].value().abs() < 1e-9);
        assert!(mj.ginv[1][1].value().abs() < 1e-9);
    }

    #[test]
    fn d_matches_curvature_and_finite_differences() {
        let g = bumped();
        let ch = chart_for(&g, &[0.5, 0.5, 0.5], &[-(1.1f64).sqrt(), 0.6, 0.8]);
        let tau = 0.02;
        let (_, dm) = ch.riccati_data(tau).unwrap();
        assert!((dm[(0, 1)] - dm[(1, 0)]).abs() < 1e-10);
        assert!(dm.norm() > 1e-4 && dm.norm() < 10.0);
        // curvature route: D_ij = ½ R_{abce} γ̇^a E_i^b γ̇^c E_j^e
        let lf = ch.local_frame(tau, false).unwrap();
        let r = g.riemann(&lf.x);
        let gl = g.lower(&lf.x);
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            for e in 0..3 {
                                // R_{abce} v^a E_i^b v^c E_j^e
                                s += gl[a][a] * r[a][b][c][e] * lf.v[a] * lf.e[i][b] * lf.v[c] * lf.e[j][e];
                            }
                        }
                    }
                }
                assert!((dm[(i, j)] - 0.5 * s).abs() < 1e-7, "D{i}{j} {} vs {}", dm[(i, j)], 0.5 * s);
            }
        }
        // finite differences of g^{11} along the chart
        let h = 1e-3;
        let g11 = |z: [f64; 2]| -> f64 {
            let lf = ch.local_frame(tau, false).unwrap();
            let (p, jac) = chart_point(&lf, &z, 3, 2);
            let gl = g.lower(&p);
            let mut gt = nalgebra::Matrix3::zeros();
            for a in 0..3 {
                for b in 0..3 {
                    let mut s = 0.0;
                    for c in 0..3 {
                        s += gl[c][c] * jac[c][a] * jac[c][b];
                    }
                    gt[(a, b)] = s;
                }
            }
            gt.try_inverse().unwrap()[(1, 1)]
        };
        let fd = (g11([0.0, h]) - 2.0 * g11([0.0, 0.0]) + g11([0.0, -h])) / (h * h);
        assert!((0.25 * fd - dm[(1, 1)]).abs() < 1e-4, "{} vs {}", 0.25 * fd, dm[(1, 1)]);
    }

    #[test]
    fn four_dimensional_frame() {
        let g = WarpedMetric::conformal_bump(4, 0.1, vec![0.5, 0.5, 0.5, 0.5], 0.4);
        let p = [0.5, 0.5, 0.5, 0.5];
        let f = g.factors(&p);
        let k = f.psi.sqrt();
        let xi = [-1.0, 0.6 * k, 0.0, 0.8 * k];
        let ch = chart_for(&g, &p, &xi);
        let (_, dm) = ch.riccati_data(0.0).unwrap();
        assert_eq!(dm.nrows(), 3);
        for i in 0..3 {
            for j in 0..3 {
                assert!((dm[(i, j)] - dm[(j, i)]).abs() < 1e-10);
            }
        }
    }
}
