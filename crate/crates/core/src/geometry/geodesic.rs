//! Null geodesics traced with classical RK4 and boundary crossings of `∂M`.

use serde::{Deserialize, Serialize};

use super::metric::{Vec4, WarpedMetric, MAX_DIM};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CausalClass {
    FutureNull,
    PastNull,
    FutureTimelike,
    PastTimelike,
    Spacelike,
    Zero,
}

/// A covector attached to a base point, tagged by causal character.
#[derive(Clone, Debug, PartialEq)]
pub struct PointedCovector {
    pub x: Vec4,
    pub xi: Vec4,
    pub class: CausalClass,
}

impl PointedCovector {
    pub fn new(g: &WarpedMetric, x: &[f64], xi: &[f64]) -> Result<Self> {
        let mut xx = [0.0; MAX_DIM];
        let mut cc = [0.0; MAX_DIM];
        xx[..g.dim].copy_from_slice(&x[..g.dim]);
        cc[..g.dim].copy_from_slice(&xi[..g.dim]);
        let q = g.metric_inner(&xx, &cc, &cc)?;
        let scale: f64 = cc[..g.dim].iter().map(|c| c * c).sum::<f64>();
        let class = classify(q, cc[0], scale, 1e-10);
        Ok(PointedCovector { x: xx, xi: cc, class })
    }
}

/// Causal class of a covector from `g⁻¹(ξ,ξ)` and `ξ₀`. Future-pointing
/// covectors have `ξ₀ < 0`, since their raised vectors have positive time part.
pub fn classify(q: f64, xi0: f64, scale: f64, tol: f64) -> CausalClass {
    if scale == 0.0 {
        return CausalClass::Zero;
    }
    if q.abs() <= tol * scale {
        if xi0 < 0.0 {
            CausalClass::FutureNull
        } else {
            CausalClass::PastNull
        }
    } else if q < 0.0 {
        if xi0 < 0.0 {
            CausalClass::FutureTimelike
        } else {
            CausalClass::PastTimelike
        }
    } else {
        CausalClass::Spacelike
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicOptions {
    pub step: f64,
    pub max_steps: usize,
    /// Relative tolerance on `g⁻¹(ξ,ξ)` for the input covector.
    pub tol_null: f64,
    pub bisect_tol: f64,
    /// Smallest admissible sine of the angle between the ray and a crossed face.
    pub min_transversal: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { step: 1e-3, max_steps: 400_000, tol_null: 1e-8, bisect_tol: 1e-8, min_transversal: 0.05 }
    }
}

/// A crossing of `ℝ × ∂N`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryHit {
    pub s: f64,
    pub point: Vec4,
    pub velocity: Vec4,
    pub axis: usize,
    pub upper_face: bool,
    pub sin_angle: f64,
}

#[derive(Clone, Debug)]
pub struct NullGeodesic {
    pub dim: usize,
    pub p: Vec4,
    pub xi: Vec4,
    pub step: f64,
    /// Parameters in increasing order.
    pub s: Vec<f64>,
    pub x: Vec<Vec4>,
    pub v: Vec<Vec4>,
    pub hits: Vec<BoundaryHit>,
    pub s_plus: Option<f64>,
    pub s_minus: Option<f64>,
}

impl NullGeodesic {
    /// Largest `|g(γ̇,γ̇)|` relative to `β (γ̇⁰)²`.
    pub fn max_null_drift(&self, g: &WarpedMetric) -> f64 {
        self.x
            .iter()
            .zip(&self.v)
            .map(|(x, v)| {
                let f = g.factors(x);
                g.vec_inner(x, v, v).abs() / (f.beta * v[0] * v[0])
            })
            .fold(0.0, f64::max)
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s[0], *self.s.last().unwrap())
    }

    pub fn hit_plus(&self) -> Option<&BoundaryHit> {
        let sp = self.s_plus?;
        self.hits.iter().find(|h| h.s == sp)
    }

    pub fn hit_minus(&self) -> Option<&BoundaryHit> {
        let sm = self.s_minus?;
        self.hits.iter().find(|h| h.s == sm)
    }

    /// Index of the sample at parameter 0.
    pub fn base_index(&self) -> usize {
        self.s.iter().enumerate().min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()).map(|(i, _)| i).unwrap()
    }
}

/// Signed distance to the spatial box boundary, positive inside `N`.
pub(crate) fn box_distance(x: &[f64], dim: usize) -> (f64, usize, bool) {
    let mut best = f64::INFINITY;
    let mut axis = 1;
    let mut upper = false;
    for (i, &c) in x.iter().enumerate().take(dim).skip(1) {
        if c < best {
            best = c;
            axis = i;
            upper = false;
        }
        if 1.0 - c < best {
            best = 1.0 - c;
            axis = i;
            upper = true;
        }
    }
    (best, axis, upper)
}

type State = (Vec4, Vec4);

fn rhs(g: &WarpedMetric, s: &State) -> State {
    let gam = g.christoffel(&s.0);
    let acc = g.gamma_contract(&gam, &s.1, &s.1);
    let mut a = [0.0; MAX_DIM];
    for i in 0..g.dim {
        a[i] = -acc[i];
    }
    (s.1, a)
}

fn axpy(s: &State, h: f64, k: &State) -> State {
    let mut x = s.0;
    let mut v = s.1;
    for i in 0..MAX_DIM {
        x[i] += h * k.0[i];
        v[i] += h * k.1[i];
    }
    (x, v)
}

pub(crate) fn rk4_step(g: &WarpedMetric, s: &State, h: f64) -> State {
    let k1 = rhs(g, s);
    let k2 = rhs(g, &axpy(s, 0.5 * h, &k1));
    let k3 = rhs(g, &axpy(s, 0.5 * h, &k2));
    let k4 = rhs(g, &axpy(s, h, &k3));
    let mut out = *s;
    for i in 0..MAX_DIM {
        out.0[i] += h / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
        out.1[i] += h / 6.0 * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]);
    }
    out
}

fn check_null(g: &WarpedMetric, p: &[f64], xi: &[f64], tol: f64) -> Result<()> {
    let q = g.metric_inner(p, xi, xi)?;
    let scale: f64 = xi[..g.dim].iter().map(|c| c * c).sum();
    if scale == 0.0 || q.abs() > tol * scale {
        return Err(Error::Geometry(format!(
            "covector {:?} is not null at {:?}: g⁻¹(ξ,ξ) = {q:e}",
            &xi[..g.dim],
            &p[..g.dim]
        )));
    }
    Ok(())
}

struct Half {
    s: Vec<f64>,
    x: Vec<Vec4>,
    v: Vec<Vec4>,
    hits: Vec<BoundaryHit>,
}

fn integrate(g: &WarpedMetric, p: &Vec4, v0: &Vec4, h: f64, opts: &GeodesicOptions) -> Result<Half> {
    let dim = g.dim;
    let mut st: State = (*p, *v0);
    let mut s = 0.0;
    let mut out = Half { s: vec![0.0], x: vec![*p], v: vec![*v0], hits: Vec::new() };
    for _ in 0..opts.max_steps {
        let next = rk4_step(g, &st, h);
        let (f0, _, _) = box_distance(&st.0, dim);
        let (f1, _, _) = box_distance(&next.0, dim);
        let crosses = (f0 > 0.0 && f1 <= 0.0) || (f0 < 0.0 && f1 >= 0.0);
        if crosses {
            // bisect on the sub-step length
            let (mut lo, mut hi) = (0.0, 1.0);
            while (hi - lo) * h.abs() > opts.bisect_tol {
                let mid = 0.5 * (lo + hi);
                let m = rk4_step(g, &st, mid * h);
                let (fm, _, _) = box_distance(&m.0, dim);
                if (fm > 0.0) == (f0 > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let th = 0.5 * (lo + hi);
            let at = rk4_step(g, &st, th * h);
            let (_, axis, upper) = box_distance(&at.0, dim);
            let vs: f64 = (1..dim).map(|i| at.1[i] * at.1[i]).sum::<f64>().sqrt();
            out.hits.push(BoundaryHit {
                s: s + th * h,
                point: at.0,
                velocity: at.1,
                axis,
                upper_face: upper,
                sin_angle: at.1[axis].abs() / vs.max(f64::MIN_POSITIVE),
            });
        }
        st = next;
        s += h;
        if !g.in_extended_domain(&st.0) {
            return Ok(out);
        }
        out.s.push(s);
        out.x.push(st.0);
        out.v.push(st.1);
    }
    let hit_any = !out.hits.is_empty();
    if !hit_any {
        return Err(Error::Geometry(format!(
            "geodesic from {:?} exceeded {} steps before reaching the boundary",
            &p[..dim],
            opts.max_steps
        )));
    }
    Ok(out)
}

/// Trace the null geodesic with `γ(0) = p`, `γ̇(0) = ξ♯` in one direction.
pub fn trace_null_geodesic(
    g: &WarpedMetric,
    p: &[f64],
    xi: &[f64],
    direction: Direction,
    opts: &GeodesicOptions,
) -> Result<NullGeodesic> {
    check_null(g, p, xi, opts.tol_null)?;
    let mut pp = [0.0; MAX_DIM];
    let mut xx = [0.0; MAX_DIM];
    pp[..g.dim].copy_from_slice(&p[..g.dim]);
    xx[..g.dim].copy_from_slice(&xi[..g.dim]);
    let v0 = g.sharp(&pp, &xx);
    let h = match direction {
        Direction::Forward => opts.step,
        Direction::Backward => -opts.step,
    };
    let half = integrate(g, &pp, &v0, h, opts)?;
    let mut geo = NullGeodesic {
        dim: g.dim,
        p: pp,
        xi: xx,
        step: opts.step,
        s: half.s,
        x: half.x,
        v: half.v,
        hits: half.hits,
        s_plus: None,
        s_minus: None,
    };
    if direction == Direction::Backward {
        geo.s.reverse();
        geo.x.reverse();
        geo.v.reverse();
    }
    finish(&mut geo, opts)?;
    Ok(geo)
}

/// Trace in both directions and merge, giving samples on both sides of `p`.
pub fn trace_through(g: &WarpedMetric, p: &[f64], xi: &[f64], opts: &GeodesicOptions) -> Result<NullGeodesic> {
    let fwd = trace_null_geodesic(g, p, xi, Direction::Forward, opts)?;
    let bwd = trace_null_geodesic(g, p, xi, Direction::Backward, opts)?;
    let mut geo = bwd;
    geo.s.pop();
    geo.x.pop();
    geo.v.pop();
    geo.s.extend_from_slice(&fwd.s);
    geo.x.extend_from_slice(&fwd.x);
    geo.v.extend_from_slice(&fwd.v);
    geo.hits.extend(fwd.hits);
    finish(&mut geo, opts)?;
    Ok(geo)
}

fn finish(geo: &mut NullGeodesic, opts: &GeodesicOptions) -> Result<()> {
    geo.hits.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
    let eps = 1e-12;
    geo.s_plus = geo.hits.iter().filter(|h| h.s > eps).map(|h| h.s).next();
    geo.s_minus = geo.hits.iter().filter(|h| h.s < -eps).map(|h| h.s).next_back();
    for h in geo.hits.iter() {
        let relevant = Some(h.s) == geo.s_plus || Some(h.s) == geo.s_minus;
        if relevant && h.sin_angle < opts.min_transversal {
            return Err(Error::Geometry(format!(
                "boundary crossing at s = {:.6} is nearly tangential (sin angle {:.3e})",
                h.s, h.sin_angle
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_ray_hits_face() {
        let g = WarpedMetric::minkowski(3);
        // ξ♯ = (1,1,0) ⇔ ξ = (-1,1,0)
        let geo = trace_null_geodesic(
            &g,
            &[0.5, 0.5, 0.5],
            &[-1.0, 1.0, 0.0],
            Direction::Forward,
            &GeodesicOptions::default(),
        )
        .unwrap();
        let hit = geo.hit_plus().unwrap();
        assert!((hit.s - 0.5).abs() < 1e-8);
        assert!((hit.point[0] - 1.0).abs() < 1e-8);
        assert!((hit.point[1] - 1.0).abs() < 1e-8);
        assert!((hit.point[2] - 0.5).abs() < 1e-12);
        assert_eq!(hit.axis, 1);
        assert!(hit.upper_face);
    }

    #[test]
    fn rejects_non_null() {
        let g = WarpedMetric::minkowski(3);
        let r = trace_null_geodesic(
            &g,
            &[0.5, 0.5, 0.5],
            &[-1.0, 0.5, 0.0],
            Direction::Forward,
            &GeodesicOptions::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn null_drift_small_and_fourth_order() {
        let g = WarpedMetric::lapse_bump(3, 0.1, vec![0.5, 0.5, 0.5], 0.3);
        let p = [0.5, 0.3, 0.45];
        let f = g.factors(&p);
        let xi = [-f.beta.sqrt(), 1.0, 0.0];
        let drift = |h: f64| {
            let opts = GeodesicOptions { step: h, ..Default::default() };
            trace_through(&g, &p, &xi, &opts).unwrap().max_null_drift(&g)
        };
        let d1 = drift(2e-2);
        let d2 = drift(1e-2);
        assert!(drift(1e-3) < 1e-8);
        let order = (d1 / d2).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn backward_trace_exits_through_past_window() {
        let g = WarpedMetric::minkowski(3);
        let q0 = [1.0, 0.5, 0.5];
        let xi0 = [-1.0, -1.0, 0.0];
        let geo = trace_null_geodesic(&g, &q0, &xi0, Direction::Backward, &GeodesicOptions::default()).unwrap();
        let hit = geo.hit_minus().unwrap();
        assert!(hit.point[0] > 0.0 && hit.point[0] < 2.0);
        assert!((hit.s + 0.5).abs() < 1e-8);
    }

    #[test]
    fn causal_classes() {
        let g = WarpedMetric::minkowski(3);
        let p = [0.0, 0.5, 0.5];
        let c = |xi: [f64; 3]| PointedCovector::new(&g, &p, &xi).unwrap().class;
        assert_eq!(c([-1.0, 1.0, 0.0]), CausalClass::FutureNull);
        assert_eq!(c([1.0, 1.0, 0.0]), CausalClass::PastNull);
        assert_eq!(c([-2.0, 1.0, 0.0]), CausalClass::FutureTimelike);
        assert_eq!(c([-0.5, 1.0, 0.0]), CausalClass::Spacelike);
    }
}
