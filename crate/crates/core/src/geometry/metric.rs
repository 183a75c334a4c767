//! Warped Lorentzian metrics `g = -β dt² + κ` with closed-form presets.

use serde::{Deserialize, Serialize};

use crate::jet::Scalar;
use crate::{Error, Result};

/// Largest supported spacetime dimension.
pub const MAX_DIM: usize = 4;

pub type Vec4 = [f64; MAX_DIM];
pub type Mat4 = [[f64; MAX_DIM]; MAX_DIM];

/// Lower and upper bound of each spatial coordinate of the extended domain.
pub const EXT_LO: f64 = -0.25;
pub const EXT_HI: f64 = 1.25;

/// Closed-form metric presets.
///
/// All presets are conformally flat in space, `κ = ψ·I`, so the metric is
/// fixed by the lapse `β` and the conformal factor `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum MetricPreset {
    Minkowski,
    /// `β = 1 + a·G`, `κ = I`.
    LapseBump(Bump),
    /// `β = 1`, `κ = (1 + a·G)·I`.
    ConformalBump(Bump),
}

/// Gaussian `G(x) = exp(-Σ (x_μ - c_μ)² / w²)`. When `static_in_time` is set
/// the time coordinate is left out of the sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
    #[serde(default)]
    pub static_in_time: bool,
}

impl Bump {
    fn first_axis(&self) -> usize {
        usize::from(self.static_in_time)
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut r2 = x[0].lift(0.0);
        for mu in self.first_axis()..x.len() {
            let dx = x[mu].clone() - self.center[mu];
            r2 = r2 + dx.clone() * dx;
        }
        (r2 * (-1.0 / (self.width * self.width))).exp()
    }

    /// Value, gradient and Hessian of `G`.
    fn derivs(&self, x: &[f64], d: usize) -> (f64, Vec4, Mat4) {
        let w2 = self.width * self.width;
        let g = self.eval(&x[..d]);
        let mut dx = [0.0; MAX_DIM];
        for mu in self.first_axis()..d {
            dx[mu] = x[mu] - self.center[mu];
        }
        let mut grad = [0.0; MAX_DIM];
        let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
        for mu in self.first_axis()..d {
            grad[mu] = -2.0 * dx[mu] / w2 * g;
            for nu in self.first_axis()..d {
                let delta = if mu == nu { 2.0 / w2 } else { 0.0 };
                hess[mu][nu] = (4.0 * dx[mu] * dx[nu] / (w2 * w2) - delta) * g;
            }
        }
        (g, grad, hess)
    }
}

/// The metric `g = -β dt² + ψ·δ` on `ℝ × Ñ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpedMetric {
    pub dim: usize,
    pub preset: MetricPreset,
}

/// Pointwise metric data used by the solver: `β`, `ψ` and `√|det g|`.
#[derive(Clone, Copy, Debug)]
pub struct WarpFactors {
    pub beta: f64,
    pub psi: f64,
}

impl WarpedMetric {
    pub fn new(dim: usize, preset: MetricPreset) -> Result<Self> {
        if dim != 3 && dim != 4 {
            return Err(Error::Config(format!("spacetime dimension must be 3 or 4, got {dim}")));
        }
        match &preset {
            MetricPreset::Minkowski => {}
            MetricPreset::LapseBump(b) | MetricPreset::ConformalBump(b) => {
                if b.center.len() != dim {
                    return Err(Error::Config(format!(
                        "bump center has {} components, expected {dim}",
                        b.center.len()
                    )));
                }
                if !(b.width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                // keeps β, ψ ≥ 1 - |a| > 0 everywhere
                if b.amplitude <= -1.0 {
                    return Err(Error::Config("bump amplitude must exceed -1".into()));
                }
            }
        }
        Ok(WarpedMetric { dim, preset })
    }

    pub fn minkowski(dim: usize) -> Self {
        WarpedMetric { dim, preset: MetricPreset::Minkowski }
    }

    pub fn lapse_bump(dim: usize, amplitude: f64, center: Vec<f64>, width: f64) -> Self {
        let b = Bump { amplitude, center, width, static_in_time: false };
        WarpedMetric { dim, preset: MetricPreset::LapseBump(b) }
    }

    pub fn conformal_bump(dim: usize, amplitude: f64, center: Vec<f64>, width: f64) -> Self {
        let b = Bump { amplitude, center, width, static_in_time: false };
        WarpedMetric { dim, preset: MetricPreset::ConformalBump(b) }
    }

    pub fn spatial_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.preset, MetricPreset::Minkowski)
    }

    /// True when `β` and `ψ` do not depend on `t`.
    pub fn is_static(&self) -> bool {
        match &self.preset {
            MetricPreset::Minkowski => true,
            MetricPreset::LapseBump(b) | MetricPreset::ConformalBump(b) => b.static_in_time,
        }
    }

    /// `(β, ψ)` evaluated on any scalar type.
    pub fn warp<S: Scalar>(&self, x: &[S]) -> (S, S) {
        let one = x[0].lift(1.0);
        match &self.preset {
            MetricPreset::Minkowski => (one.clone(), one),
            MetricPreset::LapseBump(b) => (b.eval(x) * b.amplitude + 1.0, one),
            MetricPreset::ConformalBump(b) => (one, b.eval(x) * b.amplitude + 1.0),
        }
    }

    pub fn factors(&self, x: &[f64]) -> WarpFactors {
        let (beta, psi) = self.warp(&x[..self.dim]);
        WarpFactors { beta, psi }
    }

    /// Value, gradient, Hessian of `β` and of `ψ`.
    #[allow(clippy::type_complexity)]
    pub fn warp_derivs(&self, x: &[f64]) -> ((f64, Vec4, Mat4), (f64, Vec4, Mat4)) {
        let flat = (1.0, [0.0; MAX_DIM], [[0.0; MAX_DIM]; MAX_DIM]);
        match &self.preset {
            MetricPreset::Minkowski => (flat, flat),
            MetricPreset::LapseBump(b) => (scaled(b, x, self.dim), flat),
            MetricPreset::ConformalBump(b) => (flat, scaled(b, x, self.dim)),
        }
    }

    pub fn in_extended_domain(&self, x: &[f64]) -> bool {
        x[1..self.dim].iter().all(|&c| (EXT_LO..=EXT_HI).contains(&c))
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() < self.dim || !self.in_extended_domain(x) {
            return Err(Error::Domain(format!("point {:?} outside the extended domain", x)));
        }
        Ok(())
    }

    /// Covariant components `g_{μν}`.
    pub fn lower(&self, x: &[f64]) -> Mat4 {
        let f = self.factors(x);
        let mut g = [[0.0; MAX_DIM]; MAX_DIM];
        g[0][0] = -f.beta;
        for i in 1..self.dim {
            g[i][i] = f.psi;
        }
        g
    }

    /// Contravariant components `g^{μν}`.
    pub fn upper(&self, x: &[f64]) -> Mat4 {
        let f = self.factors(x);
        let mut g = [[0.0; MAX_DIM]; MAX_DIM];
        g[0][0] = -1.0 / f.beta;
        for i in 1..self.dim {
            g[i][i] = 1.0 / f.psi;
        }
        g
    }

    /// Dual pairing `g⁻¹(ξ, η)`.
    pub fn metric_inner(&self, x: &[f64], xi: &[f64], eta: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.inner_unchecked(x, xi, eta))
    }

    pub(crate) fn inner_unchecked(&self, x: &[f64], xi: &[f64], eta: &[f64]) -> f64 {
        let f = self.factors(x);
        let mut s = -xi[0] * eta[0] / f.beta;
        for i in 1..self.dim {
            s += xi[i] * eta[i] / f.psi;
        }
        s
    }

    /// Vector pairing `g(v, w)`.
    pub fn vec_inner(&self, x: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let f = self.factors(x);
        let mut s = -f.beta * v[0] * w[0];
        for i in 1..self.dim {
            s += f.psi * v[i] * w[i];
        }
        s
    }

    /// Raise a covector: `ξ♯ = g⁻¹ξ`.
    pub fn sharp(&self, x: &[f64], xi: &[f64]) -> Vec4 {
        let f = self.factors(x);
        let mut v = [0.0; MAX_DIM];
        v[0] = -xi[0] / f.beta;
        for i in 1..self.dim {
            v[i] = xi[i] / f.psi;
        }
        v
    }

    /// Lower a vector: `v♭ = g v`.
    pub fn flat(&self, x: &[f64], v: &[f64]) -> Vec4 {
        let f = self.factors(x);
        let mut xi = [0.0; MAX_DIM];
        xi[0] = -f.beta * v[0];
        for i in 1..self.dim {
            xi[i] = f.psi * v[i];
        }
        xi
    }

    /// First derivatives `∂_c g_{ab}` indexed `[c][a][b]`.
    pub fn dlower(&self, x: &[f64]) -> [Mat4; MAX_DIM] {
        let ((_, db, _), (_, dp, _)) = self.warp_derivs(x);
        let mut out = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for c in 0..self.dim {
            out[c][0][0] = -db[c];
            for i in 1..self.dim {
                out[c][i][i] = dp[c];
            }
        }
        out
    }

    /// Second derivatives `∂_c ∂_e g_{ab}` indexed `[c][e][a][b]`.
    pub fn ddlower(&self, x: &[f64]) -> [[Mat4; MAX_DIM]; MAX_DIM] {
        let ((_, _, hb), (_, _, hp)) = self.warp_derivs(x);
        let mut out = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for c in 0..self.dim {
            for e in 0..self.dim {
                out[c][e][0][0] = -hb[c][e];
                for i in 1..self.dim {
                    out[c][e][i][i] = hp[c][e];
                }
            }
        }
        out
    }

    /// Christoffel symbols `Γ^a_{bc}` indexed `[a][b][c]`.
    pub fn christoffel(&self, x: &[f64]) -> [Mat4; MAX_DIM] {
        let d = self.dim;
        let gi = self.upper(x);
        let dg = self.dlower(x);
        let mut out = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for a in 0..d {
            // upper metric is diagonal
            let ga = gi[a][a];
            for b in 0..d {
                for c in b..d {
                    let v = 0.5 * ga * (dg[b][a][c] + dg[c][a][b] - dg[a][b][c]);
                    out[a][b][c] = v;
                    out[a][c][b] = v;
                }
            }
        }
        out
    }

    /// Derivatives `∂_e Γ^a_{bc}` indexed `[e][a][b][c]`.
    pub fn dchristoffel(&self, x: &[f64]) -> [[Mat4; MAX_DIM]; MAX_DIM] {
        let d = self.dim;
        let gi = self.upper(x);
        let dg = self.dlower(x);
        let ddg = self.ddlower(x);
        let mut out = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for e in 0..d {
            for a in 0..d {
                let ga = gi[a][a];
                // ∂_e g^{aa} = -(g^{aa})² ∂_e g_{aa}
                let dga = -ga * ga * dg[e][a][a];
                for b in 0..d {
                    for c in b..d {
                        let s = dg[b][a][c] + dg[c][a][b] - dg[a][b][c];
                        let ds = ddg[e][b][a][c] + ddg[e][c][a][b] - ddg[e][a][b][c];
                        let v = 0.5 * (dga * s + ga * ds);
                        out[e][a][b][c] = v;
                        out[e][a][c][b] = v;
                    }
                }
            }
        }
        out
    }

    /// Riemann tensor `R^a_{bcd}` with `R(X,Y)Z = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_{[X,Y]}Z`.
    pub fn riemann(&self, x: &[f64]) -> [[Mat4; MAX_DIM]; MAX_DIM] {
        let d = self.dim;
        let g = self.christoffel(x);
        let dg = self.dchristoffel(x);
        let mut r = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let mut v = dg[c][a][e][b] - dg[e][a][c][b];
                        for l in 0..d {
                            v += g[a][c][l] * g[l][e][b] - g[a][e][l] * g[l][c][b];
                        }
                        r[a][b][c][e] = v;
                    }
                }
            }
        }
        r
    }

    /// `Γ^a_{bc} v^b w^c`.
    pub fn gamma_contract(&self, gam: &[Mat4; MAX_DIM], v: &[f64], w: &[f64]) -> Vec4 {
        let d = self.dim;
        let mut out = [0.0; MAX_DIM];
        for (a, o) in out.iter_mut().enumerate().take(d) {
            let mut s = 0.0;
            for b in 0..d {
                if v[b] == 0.0 {
                    continue;
                }
                for c in 0..d {
                    s += gam[a][b][c] * v[b] * w[c];
                }
            }
            *o = s;
        }
        out
    }

    /// Bound on the coordinate light speed `sqrt(β/ψ)` over the box `[0,1]^n × [t0,t1]`,
    /// estimated on a sample lattice.
    pub fn max_light_speed(&self, t0: f64, t1: f64) -> f64 {
        if self.is_flat() {
            return 1.0;
        }
        let n = self.spatial_dim();
        let k = 9usize;
        let mut best: f64 = 0.0;
        let total = k.pow(n as u32 + 1);
        let mut x = [0.0; MAX_DIM];
        for idx in 0..total {
            let mut r = idx;
            for mu in 0..=n {
                let s = (r % k) as f64 / (k - 1) as f64;
                r /= k;
                x[mu] = if mu == 0 { t0 + (t1 - t0) * s } else { s };
            }
            let f = self.factors(&x);
            best = best.max((f.beta / f.psi).sqrt());
        }
        // sampled maximum plus margin for the unresolved gaps
        best * 1.02
    }
}

fn scaled(b: &Bump, x: &[f64], d: usize) -> (f64, Vec4, Mat4) {
    let (g, mut gr, mut h) = b.derivs(x, d);
    for mu in 0..MAX_DIM {
        gr[mu] *= b.amplitude;
        for nu in 0..MAX_DIM {
            h[mu][nu] *= b.amplitude;
        }
    }
    (1.0 + b.amplitude * g, gr, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{Jet, JetSpace};
    use approx::assert_relative_eq;

    fn bumped() -> WarpedMetric {
        WarpedMetric::lapse_bump(3, 0.1, vec![0.5, 0.4, 0.6], 0.4)
    }

    #[test]
    fn inner_examples() {
        let g = WarpedMetric::minkowski(3);
        let p = [0.5, 0.5, 0.5];
        assert_eq!(g.metric_inner(&p, &[-1.0, 1.0, 0.0], &[-1.0, 1.0, 0.0]).unwrap(), 0.0);
        let r0: f64 = 0.6;
        let xi = [-1.0, -(1.0 - r0 * r0).sqrt(), r0];
        assert!(g.metric_inner(&p, &xi, &xi).unwrap().abs() < 1e-15);
        assert!(g.metric_inner(&[0.0, 2.0, 0.5], &xi, &xi).is_err());
    }

    #[test]
    fn analytic_first_derivatives_match_fd() {
        let g = WarpedMetric::conformal_bump(4, 0.2, vec![0.3, 0.5, 0.4, 0.6], 0.35);
        let x = [0.4, 0.45, 0.5, 0.55];
        let dg = g.dlower(&x);
        let h = 1e-6;
        for c in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let (gp, gm) = (g.lower(&xp), g.lower(&xm));
            for a in 0..4 {
                let fd = (gp[a][a] - gm[a][a]) / (2.0 * h);
                assert!((fd - dg[c][a][a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn analytic_second_derivatives_match_fd() {
        let g = bumped();
        let x = [0.45, 0.5, 0.55];
        let ddg = g.ddlower(&x);
        let h = 1e-5;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let (dp, dm) = (g.dlower(&xp), g.dlower(&xm));
            for e in 0..3 {
                let fd = (dp[e][0][0] - dm[e][0][0]) / (2.0 * h);
                assert!((fd - ddg[c][e][0][0]).abs() < 1e-7, "{c}{e}");
            }
        }
    }

    #[test]
    fn jet_evaluation_agrees_with_hand_coded_derivatives() {
        let g = bumped();
        let x = [0.45, 0.5, 0.55];
        let s = JetSpace::new(3, 2);
        let xs: Vec<Jet> = (0..3).map(|i| Jet::variable(&s, i, x[i])).collect();
        let (beta, _) = g.warp(&xs);
        let ((b0, db, hb), _) = g.warp_derivs(&x);
        assert_relative_eq!(beta.value(), b0, epsilon = 1e-14);
        for mu in 0..3 {
            let mut e = [0u8; 3];
            e[mu] = 1;
            assert_relative_eq!(beta.coeff(&e), db[mu], epsilon = 1e-13);
            e[mu] = 2;
            assert_relative_eq!(beta.coeff(&e), 0.5 * hb[mu][mu], epsilon = 1e-12);
        }
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let g = WarpedMetric::minkowski(4);
        let r = g.riemann(&[0.1, 0.2, 0.3, 0.4]);
        assert!(r.iter().flatten().flatten().flatten().all(|&v| v == 0.0));
    }
}
