//! Null covector constructions at the interaction point.
//!
//! All algebra happens in a canonical frame where the metric at `q₀` is
//! Minkowski, `ξ^(1) = (−1, 1, 0, …)` and `ξ^(0) = (−1, −√(1−r₀²), r₀, 0, …)`.
//! [`FrameMap`] carries covectors between that frame and working coordinates.

use nalgebra::{DMatrix, DVector};

use crate::geometry::WarpedMetric;
use crate::{Error, Result};

/// Linear coordinate change `x = q₀ + A y` with `Aᵀ g(q₀) A = diag(−1, 1, …)`.
/// Covectors transform as `η = Aᵀ ξ`.
#[derive(Clone, Debug)]
pub struct FrameMap {
    pub q0: Vec<f64>,
    pub a: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
}

impl FrameMap {
    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn to_canonical(&self, xi: &[f64]) -> Vec<f64> {
        (self.a.transpose() * DVector::from_column_slice(xi)).as_slice().to_vec()
    }

    pub fn to_working(&self, eta: &[f64]) -> Vec<f64> {
        (self.a_inv.transpose() * DVector::from_column_slice(eta)).as_slice().to_vec()
    }
}

/// Canonical data at `q₀`.
#[derive(Clone, Debug)]
pub struct NullFrame {
    pub map: FrameMap,
    pub r0: f64,
    pub varsigma: f64,
    /// `ξ^(0..3)` in the canonical frame.
    pub xi: [Vec<f64>; 4],
    pub alpha: [f64; 3],
    pub b: f64,
}

pub fn b_of(r0: f64) -> f64 {
    1.0 + (1.0 - r0 * r0).max(0.0).sqrt()
}

/// Inverse Minkowski pairing `η^{-1}(a, b)`.
pub fn minkowski_dual(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
}

/// Build the canonical frame for a pair of future null covectors at `q₀`.
///
/// Spatial rotations send the direction of `ξ₁` to the first axis. When the
/// two spatial directions make an acute angle a boost along that axis is
/// applied, the smallest one bringing the angle to π/2 (so `r₀ = ±1`).
pub fn canonical_frame(g: &WarpedMetric, q0: &[f64], xi0: &[f64], xi1: &[f64]) -> Result<(FrameMap, f64)> {
    let d = g.dim;
    if q0.len() != d || xi0.len() != d || xi1.len() != d {
        return Err(Error::Covector("dimension mismatch".into()));
    }
    if d < 3 {
        return Err(Error::Covector("need at least two spatial dimensions".into()));
    }
    let f = g.factors(q0);
    if !(f.beta > 0.0 && f.psi > 0.0) {
        return Err(Error::Covector("metric degenerate at q₀".into()));
    }
    let (sb, sp) = (f.beta.sqrt(), f.psi.sqrt());
    // P₀: η = P₀ ξ with η orthonormal components
    let mut p0 = DMatrix::zeros(d, d);
    p0[(0, 0)] = 1.0 / sb;
    for i in 1..d {
        p0[(i, i)] = 1.0 / sp;
    }
    let unit_dir = |xi: &[f64]| -> Result<Vec<f64>> {
        let e = &p0 * DVector::from_column_slice(xi);
        if e[0] >= 0.0 {
            return Err(Error::Covector("covector is not future pointing".into()));
        }
        let n: Vec<f64> = (1..d).map(|i| -e[i] / e[0]).collect();
        let nn = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (nn - 1.0).abs() > 1e-8 {
            return Err(Error::Covector(format!("covector not null (|n| = {nn})")));
        }
        Ok(n)
    };
    let n1 = unit_dir(xi1)?;
    let n0 = unit_dir(xi0)?;
    let c: f64 = n0.iter().zip(&n1).map(|(a, b)| a * b).sum();
    let perp: Vec<f64> = n0.iter().zip(&n1).map(|(a, b)| a - c * b).collect();
    let s = perp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s < 1e-9 && c > 0.0 {
        return Err(Error::Covector("covectors are parallel".into()));
    }
    // spatial rotation rows: n1, u2, u3...
    let ns = d - 1;
    let mut rows: Vec<Vec<f64>> = vec![n1.clone()];
    if ns == 2 {
        // proper rotation; r₀ keeps its sign
        rows.push(vec![-n1[1], n1[0]]);
    } else {
        if s >= 1e-9 {
            rows.push(perp.iter().map(|v| v / s).collect());
        }
        // complete by Gram–Schmidt on the coordinate axes
        for k in 0..ns {
            if rows.len() == ns {
                break;
            }
            let mut w = vec![0.0; ns];
            w[k] = 1.0;
            for r in &rows {
                let dp: f64 = w.iter().zip(r).map(|(a, b)| a * b).sum();
                for (wi, ri) in w.iter_mut().zip(r) {
                    *wi -= dp * ri;
                }
            }
            let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nw > 1e-6 {
                rows.push(w.iter().map(|v| v / nw).collect());
            }
        }
    }
    let mut rot = DMatrix::identity(d, d);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            rot[(i + 1, j + 1)] = *v;
        }
    }
    let mut p = &rot * &p0;
    if c > 0.0 {
        let phi = c.atanh();
        let mut bst = DMatrix::identity(d, d);
        bst[(0, 0)] = phi.cosh();
        bst[(1, 1)] = phi.cosh();
        bst[(0, 1)] = phi.sinh();
        bst[(1, 0)] = phi.sinh();
        p = &bst * &p;
    }
    let a = p.transpose();
    let a_inv = a.clone().try_inverse().ok_or_else(|| Error::Covector("frame map singular".into()))?;
    let map = FrameMap { q0: q0.to_vec(), a, a_inv };
    let e0 = map.to_canonical(xi0);
    let r0 = (e0[2] / -e0[0]).clamp(-1.0, 1.0);
    Ok((map, r0))
}

/// `ξ^(2), ξ^(3)` in the canonical frame of dimension `dim`.
pub fn perturbed_covectors(varsigma: f64, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(varsigma > 0.0 && varsigma < 1.0) {
        return Err(Error::Covector(format!("ς = {varsigma} outside (0, 1)")));
    }
    let c = (1.0 - varsigma * varsigma).sqrt();
    let mut x2 = vec![0.0; dim];
    let mut x3 = vec![0.0; dim];
    x2[0] = -1.0;
    x3[0] = -1.0;
    x2[1] = c;
    x3[1] = c;
    x2[2] = varsigma;
    x3[2] = -varsigma;
    Ok((x2, x3))
}

pub fn alpha_coefficients(r0: f64, varsigma: f64) -> Result<[f64; 3]> {
    if !(varsigma > 0.0 && varsigma < 1.0) {
        return Err(Error::Covector(format!("ς = {varsigma} outside (0, 1)")));
    }
    let cs = (1.0 - varsigma * varsigma).sqrt();
    let cr = (1.0 - r0 * r0).max(0.0).sqrt();
    // 1 − √(1−ς²) without cancellation
    let den = varsigma * varsigma / (1.0 + cs);
    let a1 = (-cs - cr) / den;
    let sym = (1.0 + cr) / (2.0 * den);
    let asym = r0 / (2.0 * varsigma);
    Ok([a1, sym + asym, sym - asym])
}

impl NullFrame {
    pub fn canonical_xi0(r0: f64, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = -1.0;
        v[1] = -(1.0 - r0 * r0).max(0.0).sqrt();
        v[2] = r0;
        v
    }

    pub fn canonical_xi1(dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = -1.0;
        v[1] = 1.0;
        v
    }

    /// Assemble the frame from a map, `r₀` and `ς`.
    pub fn new(map: FrameMap, r0: f64, varsigma: f64) -> Result<Self> {
        let d = map.dim();
        let (x2, x3) = perturbed_covectors(varsigma, d)?;
        let alpha = alpha_coefficients(r0, varsigma)?;
        let xi = [Self::canonical_xi0(r0, d), Self::canonical_xi1(d), x2, x3];
        Ok(NullFrame { map, r0, varsigma, xi, alpha, b: b_of(r0) })
    }

    /// Frame built directly in Minkowski coordinates at `q₀` (identity map).
    pub fn flat(q0: &[f64], r0: f64, varsigma: f64) -> Result<Self> {
        let d = q0.len();
        let map = FrameMap { q0: q0.to_vec(), a: DMatrix::identity(d, d), a_inv: DMatrix::identity(d, d) };
        Self::new(map, r0, varsigma)
    }

    pub fn build(g: &WarpedMetric, q0: &[f64], xi0: &[f64], xi1: &[f64], varsigma: f64) -> Result<Self> {
        let (map, r0) = canonical_frame(g, q0, xi0, xi1)?;
        Self::new(map, r0, varsigma)
    }

    /// `‖ξ^(0) − Σ α_j ξ^(j)‖_∞ / max_i Σ_j |α_j ξ^(j)_i|`.
    ///
    /// The α grow like `ς⁻²` and the sum cancels down to `O(1)`, so the
    /// absolute defect carries `ε·|α|` of roundoff; scaling by the size of the
    /// summed terms leaves a number that sits at machine precision.
    pub fn decomposition_residual(&self) -> f64 {
        let n = self.xi[0].len();
        let mut res: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            let s: f64 = (0..3).map(|j| self.alpha[j] * self.xi[j + 1][i]).sum();
            let m: f64 = (0..3).map(|j| (self.alpha[j] * self.xi[j + 1][i]).abs()).sum();
            res = res.max((self.xi[0][i] - s).abs());
            scale = scale.max(m);
        }
        res / scale.max(1.0)
    }

    /// The four covectors in working coordinates.
    pub fn working_covectors(&self) -> [Vec<f64>; 4] {
        [
            self.map.to_working(&self.xi[0]),
            self.map.to_working(&self.xi[1]),
            self.map.to_working(&self.xi[2]),
            self.map.to_working(&self.xi[3]),
        ]
    }

    /// `|α_i ξ^(i) + α_j ξ^(j)|²_g` for `i, j ∈ {1, 2, 3}`.
    pub fn pair_norm_sq(&self, i: usize, j: usize) -> f64 {
        let v: Vec<f64> = (0..self.xi[0].len())
            .map(|k| self.alpha[i - 1] * self.xi[i][k] + self.alpha[j - 1] * self.xi[j][k])
            .collect();
        minkowski_dual(&v, &v)
    }
}

/// Sum of `|α_i ξ^(i) + α_j ξ^(j)|_g^{-2}` over the three unordered pairs.
/// Summing over all of `Σ(3)` visits each pair twice and doubles this.
pub fn interaction_sum(frame: &NullFrame) -> Result<f64> {
    let mut s = 0.0;
    for (i, j) in [(1, 2), (1, 3), (2, 3)] {
        let n = frame.pair_norm_sq(i, j);
        if n.abs() < 1e-300 || !n.is_finite() {
            return Err(Error::Covector(format!("pair ({i},{j}) sums to a null covector")));
        }
        s += 1.0 / n;
    }
    Ok(s)
}

/// The linear relation `Σ κ_j ξ^(j) = 0` normalized to `κ₀ = 1`.
pub fn four_wave_kappas(xis: &[Vec<f64>; 4]) -> Result<[f64; 4]> {
    let d = xis[0].len();
    if xis.iter().any(|x| x.len() != d) {
        return Err(Error::Covector("dimension mismatch".into()));
    }
    let m = DMatrix::from_fn(d, 4, |i, j| xis[j][i]);
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-9 * smax).count();
    if rank != 3 {
        return Err(Error::Covector(format!("relation space has dimension {} (need exactly 1)", 4 - rank)));
    }
    let rest = m.columns(1, 3).into_owned();
    let rhs = -DVector::from_column_slice(&xis[0]);
    let svd = rest.svd(true, true);
    let sol = svd.solve(&rhs, 1e-14 * smax).map_err(|e| Error::Covector(format!("relation solve failed: {e}")))?;
    let k = [1.0, sol[0], sol[1], sol[2]];
    let res = (0..d).map(|i| (0..4).map(|j| k[j] * xis[j][i]).sum::<f64>().abs()).fold(0.0, f64::max);
    let scale =
        xis.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max) * k.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if res > 1e-8 * scale.max(1.0) {
        return Err(Error::Covector(format!("ξ^(0) is not in the span of the other three (residual {res:e})")));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_values_at_small_varsigma() {
        let a = alpha_coefficients(0.0, 0.1).unwrap();
        assert!((a[0] + 398.0).abs() < 0.05, "{}", a[0]);
        assert!((a[1] - 199.5).abs() < 0.05 && a[1] == a[2]);
        let f = NullFrame::flat(&[0.5, 0.5, 0.5, 0.5], 0.0, 0.1).unwrap();
        assert!(f.decomposition_residual() < 1e-12);
    }

    #[test]
    fn perturbed_are_null() {
        let (x2, x3) = perturbed_covectors(0.1, 4).unwrap();
        assert!((x2[1] - 0.99498743710662).abs() < 1e-12);
        assert!(minkowski_dual(&x2, &x2).abs() < 1e-15);
        assert!(minkowski_dual(&x3, &x3).abs() < 1e-15);
        let s: Vec<f64> = x2.iter().zip(&x3).map(|(a, b)| a + b).collect();
        assert!(minkowski_dual(&s, &s) < 0.0);
        assert!(perturbed_covectors(0.0, 4).is_err());
    }

    #[test]
    fn identity_frame_in_flat_space() {
        let g = WarpedMetric::minkowski(3);
        let (map, r0) = canonical_frame(&g, &[0.5, 0.5, 0.5], &[-1.0, -1.0, 0.0], &[-1.0, 1.0, 0.0]).unwrap();
        assert!(r0.abs() < 1e-15);
        assert!((&map.a - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn interaction_asymptotics() {
        for &r0 in &[0.0, 0.6] {
            let f = NullFrame::flat(&[0.0; 4], r0, 1e-3).unwrap();
            let b = b_of(r0);
            let s = interaction_sum(&f).unwrap() / 1e-6;
            let want = 3.0 / (4.0 * b * b);
            assert!((s / want - 1.0).abs() < 0.01, "r0 {r0}: {s} vs {want}");
        }
    }

    #[test]
    fn kappas_reproduce_alphas() {
        let f = NullFrame::flat(&[0.0; 4], 0.3, 0.2).unwrap();
        let k = four_wave_kappas(&f.xi).unwrap();
        for j in 0..3 {
            assert!((k[j + 1] + f.alpha[j]).abs() < 1e-10 * f.alpha[j].abs().max(1.0));
        }
    }
}
