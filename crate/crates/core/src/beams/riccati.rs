use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::geometry::FermiChart;
use crate::{Error, Result};

pub type CMat = DMatrix<Complex64>;

/// Sampled solution of `Y' = CZ`, `Z' = −DY` with `H = ZY⁻¹`.
#[derive(Clone, Debug)]
pub struct RiccatiTrajectory {
    pub m: usize,
    pub step: f64,
    /// Chart sample index of `tau[0]`.
    pub offset: usize,
    /// Index of `τ = 0` in `tau`.
    pub base: usize,
    pub tau: Vec<f64>,
    pub y: Vec<CMat>,
    pub z: Vec<CMat>,
    pub h: Vec<CMat>,
    pub d: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    /// `det(Im H)·|det Y|²`.
    pub c0: Vec<f64>,
    pub min_im_eig: Vec<f64>,
    /// Largest `‖H − Hᵀ‖ / max(1, ‖H‖)` over the samples.
    pub max_asymmetry: f64,
    pub h0: CMat,
    pub y0: CMat,
}

fn cplx(a: &DMatrix<f64>) -> CMat {
    a.map(|v| Complex64::new(v, 0.0))
}

fn im_part(h: &CMat) -> DMatrix<f64> {
    h.map(|v| v.im)
}

pub fn default_initial_data(m: usize) -> (CMat, CMat) {
    let h0 = CMat::from_diagonal_element(m, m, Complex64::new(0.0, 1.0));
    let y0 = CMat::identity(m, m);
    (h0, y0)
}

/// Integrate over the whole chart.
pub fn solve_riccati(chart: &FermiChart, h0: &CMat, y0: &CMat) -> Result<RiccatiTrajectory> {
    solve_riccati_window(chart, h0, y0, None)
}

/// Integrate over the chart samples in `window` (trimmed so that both ends sit
/// an even number of samples away from `τ = 0`).
pub fn solve_riccati_window(
    chart: &FermiChart,
    h0: &CMat,
    y0: &CMat,
    window: Option<(f64, f64)>,
) -> Result<RiccatiTrajectory> {
    let m = chart.m;
    if h0.nrows() != m || h0.ncols() != m || y0.nrows() != m || y0.ncols() != m {
        return Err(Error::Beam(format!("initial data must be {m}×{m}")));
    }
    let sym = (h0 - h0.transpose()).norm();
    if sym > 1e-12 * h0.norm().max(1.0) {
        return Err(Error::Beam("H₀ must be symmetric".into()));
    }
    let eig = SymmetricEigen::new(im_part(h0)).eigenvalues.min();
    if !(eig > 0.0) {
        return Err(Error::Beam("Im H₀ must be positive definite".into()));
    }
    if y0.determinant().norm() < 1e-12 {
        return Err(Error::Beam("Y₀ must be invertible".into()));
    }
    let step = chart.step;
    let n = chart.tau.len();
    let base_chart = (-chart.tau[0] / step).round() as usize;
    let (mut i0, mut i1) = (0usize, n - 1);
    if let Some((a, b)) = window {
        if a > 0.0 || b < 0.0 {
            return Err(Error::Beam("window must contain τ = 0".into()));
        }
        i0 = (((a - chart.tau[0]) / step).floor().max(0.0)) as usize;
        i1 = ((((b - chart.tau[0]) / step).ceil()) as usize).min(n - 1);
    }
    if (base_chart - i0) % 2 == 1 {
        i0 += 1;
    }
    if (i1 - base_chart) % 2 == 1 {
        i1 -= 1;
    }
    let len = i1 - i0 + 1;
    let base = base_chart - i0;

    let (c, _) = chart.riccati_data(0.0)?;
    let cc = cplx(&c);
    let mut d = Vec::with_capacity(len);
    for i in i0..=i1 {
        d.push(chart.riccati_data(chart.tau[i])?.1);
    }
    let z0 = h0 * y0;
    let mut ys = vec![CMat::zeros(m, m); len];
    let mut zs = vec![CMat::zeros(m, m); len];
    ys[base] = y0.clone();
    zs[base] = z0;
    let f = |dm: &CMat, y: &CMat, z: &CMat| (&cc * z, -(dm * y));
    for dir in [1isize, -1] {
        let h = dir as f64 * step;
        let mut i = base as isize;
        loop {
            let j = i + dir;
            if j < 0 || j >= len as isize {
                break;
            }
            let (iu, ju) = (i as usize, j as usize);
            let dmid = cplx(&chart.riccati_data(chart.tau[i0 + iu] + 0.5 * h)?.1);
            let d_i = cplx(&d[iu]);
            let d_j = cplx(&d[ju]);
            let (y, z) = (&ys[iu], &zs[iu]);
            let r = |x: f64| Complex64::new(x, 0.0);
            let (hh, h6) = (r(0.5 * h), r(h / 6.0));
            let (two, hf) = (r(2.0), r(h));
            let (k1y, k1z) = f(&d_i, y, z);
            let (k2y, k2z) = f(&dmid, &(y + &k1y * hh), &(z + &k1z * hh));
            let (k3y, k3z) = f(&dmid, &(y + &k2y * hh), &(z + &k2z * hh));
            let (k4y, k4z) = f(&d_j, &(y + &k3y * hf), &(z + &k3z * hf));
            ys[ju] = y + (k1y + k2y * two + k3y * two + k4y) * h6;
            zs[ju] = z + (k1z + k2z * two + k3z * two + k4z) * h6;
            i = j;
        }
    }
    let mut hs = Vec::with_capacity(len);
    let mut c0 = Vec::with_capacity(len);
    let mut mins = Vec::with_capacity(len);
    let mut max_asym: f64 = 0.0;
    for i in 0..len {
        let tau = chart.tau[i0 + i];
        let det = ys[i].determinant();
        if det.norm() < 1e-12 {
            return Err(Error::Beam(format!("Y degenerate at τ = {tau:.4}")));
        }
        let yi = ys[i].clone().try_inverse().ok_or_else(|| Error::Beam("Y not invertible".into()))?;
        let h = &zs[i] * yi;
        let asym = (&h - h.transpose()).norm();
        let asym = asym / h.norm().max(1.0);
        max_asym = max_asym.max(asym);
        if asym > 1e-6 {
            return Err(Error::Beam(format!("H lost symmetry at τ = {tau:.4} ({asym:e})")));
        }
        let imh = im_part(&h);
        let imh = (&imh + imh.transpose()) * 0.5f64;
        let ev = SymmetricEigen::new(imh.clone()).eigenvalues.min();
        if !(ev > 0.0) {
            return Err(Error::Beam(format!("Im H lost definiteness at τ = {tau:.4}")));
        }
        c0.push(imh.determinant() * det.norm_sqr());
        mins.push(ev);
        hs.push(h);
    }
    Ok(RiccatiTrajectory {
        m,
        step,
        offset: i0,
        base,
        tau: chart.tau[i0..=i1].to_vec(),
        y: ys,
        z: zs,
        h: hs,
        d,
        c,
        c0,
        min_im_eig: mins,
        max_asymmetry: max_asym,
        h0: h0.clone(),
        y0: y0.clone(),
    })
}

impl RiccatiTrajectory {
    /// Largest relative deviation of `c₀(τ)` from its value at `τ = 0`.
    pub fn conservation_drift(&self) -> f64 {
        let r = self.c0[self.base];
        self.c0.iter().map(|c| ((c - r) / r).abs()).fold(0.0, f64::max)
    }

    pub fn min_imag_eigenvalue(&self) -> f64 {
        self.min_im_eig.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.tau[0], *self.tau.last().unwrap())
    }

    /// `Ḣ = −(HCH + D)` at sample `i`.
    pub fn hdot(&self, i: usize) -> CMat {
        let c = cplx(&self.c);
        -(&self.h[i] * &c * &self.h[i] + cplx(&self.d[i]))
    }

    /// Nearest sample index to `τ`.
    pub fn nearest(&self, tau: f64) -> usize {
        let f = ((tau - self.tau[0]) / self.step).round();
        (f.max(0.0) as usize).min(self.tau.len() - 1)
    }

    /// `det(Y)^{−1/2}` along the samples with the branch chosen continuously
    /// from `det(Y₀)^{−1/2}` (principal root) at `τ = 0`.
    pub fn amplitude_leading(&self) -> Result<Vec<Complex64>> {
        let n = self.tau.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        out[self.base] = self.y[self.base].determinant().sqrt().inv();
        for dir in [1isize, -1] {
            let mut i = self.base as isize;
            loop {
                let j = i + dir;
                if j < 0 || j >= n as isize {
                    break;
                }
                let prev = out[i as usize];
                let cand = self.y[j as usize].determinant().sqrt().inv();
                let (dp, dm) = ((cand - prev).norm(), (cand + prev).norm());
                let pick = if dp <= dm { cand } else { -cand };
                if dp.min(dm) > 0.5 * prev.norm() {
                    return Err(Error::Beam(format!(
                        "ambiguous square-root branch at τ = {:.4}; refine the step",
                        self.tau[j as usize]
                    )));
                }
                out[j as usize] = pick;
                i = j;
            }
        }
        Ok(out)
    }
}
