//! Truncated multivariate power series.
//!
//! A [`Jet`] holds the Taylor coefficients of a function in `nvars` variables up
//! to total degree `degree`, expanded around the origin of those variables.
//! Arithmetic truncates at the space degree. The monomial table and the
//! product table are shared through an [`Arc<JetSpace>`].

use std::collections::HashMap;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

/// Coefficient field for jets (real or complex).
pub trait Coef:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn from_f64(v: f64) -> Self;
    fn norm(self) -> f64;
}

impl Coef for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn norm(self) -> f64 {
        self.abs()
    }
}

impl Coef for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn norm(self) -> f64 {
        Complex64::norm(self)
    }
}

/// Monomial bookkeeping shared by all jets of one shape.
#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    degree: usize,
    exps: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    // (i, j, k): monomial i times monomial j is monomial k
    mul: Vec<(u32, u32, u32)>,
    // per variable: (source, target, factor) for d/dx_v
    deriv: Vec<Vec<(u32, u32, f64)>>,
    deg: Vec<usize>,
}

impl JetSpace {
    /// Spaces are interned: repeated calls with the same shape share one table.
    pub fn new(nvars: usize, degree: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(s) = cache.lock().unwrap().get(&(nvars, degree)) {
            return s.clone();
        }
        let s = Self::build(nvars, degree);
        cache.lock().unwrap().entry((nvars, degree)).or_insert(s).clone()
    }

    fn build(nvars: usize, degree: usize) -> Arc<Self> {
        let mut exps: Vec<Vec<u8>> = Vec::new();
        for d in 0..=degree {
            let mut cur = vec![0u8; nvars];
            gen_graded(nvars, d, 0, &mut cur, &mut exps);
        }
        let index: HashMap<Vec<u8>, usize> = exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let deg: Vec<usize> = exps.iter().map(|e| e.iter().map(|&x| x as usize).sum()).collect();
        let mut mul = Vec::new();
        for i in 0..exps.len() {
            for j in 0..exps.len() {
                if deg[i] + deg[j] > degree {
                    continue;
                }
                let e: Vec<u8> = exps[i].iter().zip(&exps[j]).map(|(a, b)| a + b).collect();
                mul.push((i as u32, j as u32, index[&e] as u32));
            }
        }
        let mut deriv = vec![Vec::new(); nvars];
        for (v, dv) in deriv.iter_mut().enumerate() {
            for (i, e) in exps.iter().enumerate() {
                if e[v] > 0 {
                    let mut t = e.clone();
                    t[v] -= 1;
                    dv.push((i as u32, index[&t] as u32, e[v] as f64));
                }
            }
        }
        Arc::new(JetSpace { nvars, degree, exps, index, mul, deriv, deg })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn len(&self) -> usize {
        self.exps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }
    pub fn exponents(&self, i: usize) -> &[u8] {
        &self.exps[i]
    }
    pub fn total_degree(&self, i: usize) -> usize {
        self.deg[i]
    }
    pub fn index_of(&self, e: &[u8]) -> Option<usize> {
        self.index.get(e).copied()
    }
}

fn gen_graded(n: usize, rem: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos + 1 == n {
        cur[pos] = rem as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if n == 0 {
        if rem == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=rem).rev() {
        cur[pos] = k as u8;
        gen_graded(n, rem - k, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Truncated power series with coefficients in `T`.
#[derive(Clone, Debug)]
pub struct Jet<T: Coef = f64> {
    space: Arc<JetSpace>,
    c: Vec<T>,
}

impl<T: Coef> Jet<T> {
    pub fn zero(space: &Arc<JetSpace>) -> Self {
        Jet { space: space.clone(), c: vec![T::zero(); space.len()] }
    }

    pub fn constant(space: &Arc<JetSpace>, v: T) -> Self {
        let mut j = Self::zero(space);
        j.c[0] = v;
        j
    }

    /// The jet of `value + x_var`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, value: T) -> Self {
        let mut j = Self::constant(space, value);
        if space.degree >= 1 {
            let mut e = vec![0u8; space.nvars];
            e[var] = 1;
            j.c[space.index[&e]] = T::from_f64(1.0);
        }
        j
    }

    pub fn from_coeffs(space: &Arc<JetSpace>, c: Vec<T>) -> Self {
        assert_eq!(c.len(), space.len());
        Jet { space: space.clone(), c }
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }
    pub fn coeffs(&self) -> &[T] {
        &self.c
    }
    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.c
    }
    pub fn value(&self) -> T {
        self.c[0]
    }

    pub fn coeff(&self, e: &[u8]) -> T {
        match self.space.index.get(e) {
            Some(&i) => self.c[i],
            None => T::zero(),
        }
    }

    pub fn set_coeff(&mut self, e: &[u8], v: T) {
        let i = self.space.index[e];
        self.c[i] = v;
    }

    pub fn scale(&self, s: T) -> Self {
        Jet { space: self.space.clone(), c: self.c.iter().map(|&a| a * s).collect() }
    }

    pub fn scale_f64(&self, s: f64) -> Self {
        Jet { space: self.space.clone(), c: self.c.iter().map(|&a| a * s).collect() }
    }

    pub fn add_const(&self, v: T) -> Self {
        let mut r = self.clone();
        r.c[0] += v;
        r
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: T, other: &Self) {
        for (x, &y) in self.c.iter_mut().zip(&other.c) {
            *x += a * y;
        }
    }

    pub fn mul_ref(&self, other: &Self) -> Self {
        let mut out = vec![T::zero(); self.c.len()];
        for &(i, j, k) in &self.space.mul {
            let a = self.c[i as usize];
            let b = other.c[j as usize];
            out[k as usize] += a * b;
        }
        Jet { space: self.space.clone(), c: out }
    }

    /// Partial derivative in variable `v`. Coefficients of top degree are lost.
    pub fn deriv(&self, v: usize) -> Self {
        let mut out = vec![T::zero(); self.c.len()];
        for &(src, dst, f) in &self.space.deriv[v] {
            out[dst as usize] += self.c[src as usize] * f;
        }
        Jet { space: self.space.clone(), c: out }
    }

    /// Drop every monomial of total degree above `d`.
    pub fn truncate(&self, d: usize) -> Self {
        let mut r = self.clone();
        for (i, x) in r.c.iter_mut().enumerate() {
            if self.space.deg[i] > d {
                *x = T::zero();
            }
        }
        r
    }

    /// Homogeneous part of total degree `d`.
    pub fn homogeneous(&self, d: usize) -> Self {
        let mut r = self.clone();
        for (i, x) in r.c.iter_mut().enumerate() {
            if self.space.deg[i] != d {
                *x = T::zero();
            }
        }
        r
    }

    /// `f(self)` given the derivatives `f^(k)` at the constant term, `k = 0..=degree`.
    pub fn compose(&self, derivs: &[T]) -> Self {
        let d = self.space.degree;
        let mut h = self.clone();
        h.c[0] = T::zero();
        let mut out = Self::constant(&self.space, derivs[0]);
        let mut pow = Self::constant(&self.space, T::from_f64(1.0));
        let mut fact = 1.0;
        for (k, &dk) in derivs.iter().enumerate().take(d + 1).skip(1) {
            pow = pow.mul_ref(&h);
            fact *= k as f64;
            out.axpy(dk * (1.0 / fact), &pow);
        }
        out
    }

    /// Evaluate the polynomial at a point.
    pub fn eval(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for (i, e) in self.space.exps.iter().enumerate() {
            let ci = self.c[i];
            if ci == T::zero() {
                continue;
            }
            let mut m = T::from_f64(1.0);
            for (v, &p) in e.iter().enumerate() {
                for _ in 0..p {
                    m = m * x[v];
                }
            }
            acc += ci * m;
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl Jet<f64> {
    pub fn to_complex(&self) -> Jet<Complex64> {
        Jet { space: self.space.clone(), c: self.c.iter().map(|&x| Complex64::new(x, 0.0)).collect() }
    }

    pub fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.space.degree + 1])
    }

    /// `self^p` for real `p`; requires a positive constant term unless `p` is a
    /// nonnegative integer.
    pub fn powf(&self, p: f64) -> Self {
        let c0 = self.c[0];
        let mut d = Vec::with_capacity(self.space.degree + 1);
        let mut coef = 1.0;
        for k in 0..=self.space.degree {
            d.push(coef * c0.powf(p - k as f64));
            coef *= p - k as f64;
        }
        self.compose(&d)
    }

    pub fn recip(&self) -> Self {
        self.powf(-1.0)
    }

    pub fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
}

impl Jet<Complex64> {
    pub fn re(&self) -> Jet<f64> {
        Jet { space: self.space.clone(), c: self.c.iter().map(|z| z.re).collect() }
    }
    pub fn im(&self) -> Jet<f64> {
        Jet { space: self.space.clone(), c: self.c.iter().map(|z| z.im).collect() }
    }
    pub fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.space.degree + 1])
    }
}

macro_rules! jet_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<T: Coef> $tr for Jet<T> {
            type Output = Jet<T>;
            fn $m(mut self, rhs: Jet<T>) -> Jet<T> {
                for (a, &b) in self.c.iter_mut().zip(&rhs.c) {
                    *a = *a $op b;
                }
                self
            }
        }
        impl<'a, T: Coef> $tr<&'a Jet<T>> for &'a Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: &Jet<T>) -> Jet<T> {
                Jet {
                    space: self.space.clone(),
                    c: self.c.iter().zip(&rhs.c).map(|(&a, &b)| a $op b).collect(),
                }
            }
        }
    };
}
jet_binop!(Add, add, +);
jet_binop!(Sub, sub, -);

impl<T: Coef> Mul for Jet<T> {
    type Output = Jet<T>;
    fn mul(self, rhs: Jet<T>) -> Jet<T> {
        self.mul_ref(&rhs)
    }
}

impl<'a, T: Coef> Mul<&'a Jet<T>> for &'a Jet<T> {
    type Output = Jet<T>;
    fn mul(self, rhs: &Jet<T>) -> Jet<T> {
        self.mul_ref(rhs)
    }
}

impl<T: Coef> Neg for Jet<T> {
    type Output = Jet<T>;
    fn neg(mut self) -> Jet<T> {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<T: Coef> Add<f64> for Jet<T> {
    type Output = Jet<T>;
    fn add(mut self, rhs: f64) -> Jet<T> {
        self.c[0] += T::from_f64(rhs);
        self
    }
}

impl<T: Coef> Sub<f64> for Jet<T> {
    type Output = Jet<T>;
    fn sub(mut self, rhs: f64) -> Jet<T> {
        self.c[0] += T::from_f64(-rhs);
        self
    }
}

impl<T: Coef> Mul<f64> for Jet<T> {
    type Output = Jet<T>;
    fn mul(mut self, rhs: f64) -> Jet<T> {
        for a in self.c.iter_mut() {
            *a = *a * rhs;
        }
        self
    }
}

/// Real scalars that metric presets can be evaluated on: plain `f64` for
/// values and `Jet<f64>` for exact Taylor data.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn exp(&self) -> Self;
    fn recip(&self) -> Self;
    fn sqrt(&self) -> Self;
    /// Constant term.
    fn value(&self) -> f64;
    /// A constant with the same shape as `self`.
    fn lift(&self, v: f64) -> Self;
}

impl Scalar for f64 {
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, v: f64) -> Self {
        v
    }
}

impl Scalar for Jet<f64> {
    fn exp(&self) -> Self {
        Jet::<f64>::exp(self)
    }
    fn recip(&self) -> Self {
        Jet::recip(self)
    }
    fn sqrt(&self) -> Self {
        Jet::sqrt(self)
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn lift(&self, v: f64) -> Self {
        Jet::constant(&self.space, v)
    }
}

/// Inverse of a symmetric matrix of real jets whose constant part is invertible.
///
/// Uses the Neumann series around the constant part, which terminates because
/// the remainder has no constant term.
pub fn jet_matrix_inverse(m: &[Vec<Jet<f64>>]) -> Option<Vec<Vec<Jet<f64>>>> {
    let n = m.len();
    let space = m[0][0].space().clone();
    let m0 = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j].value());
    let inv0 = m0.try_inverse()?;
    // P = -inv0 * (M - M0)
    let mut p: Vec<Vec<Jet<f64>>> = vec![vec![Jet::zero(&space); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Jet::zero(&space);
            for k in 0..n {
                let mut dm = m[k][j].clone();
                dm.coeffs_mut()[0] = 0.0;
                acc.axpy(-inv0[(i, k)], &dm);
            }
            p[i][j] = acc;
        }
    }
    // result = (I + P + P^2 + ...) inv0
    let mut term: Vec<Vec<Jet<f64>>> =
        (0..n).map(|i| (0..n).map(|j| Jet::constant(&space, inv0[(i, j)])).collect()).collect();
    let mut sum = term.clone();
    for _ in 0..space.degree() {
        term = mat_mul(&p, &term);
        for i in 0..n {
            for j in 0..n {
                sum[i][j] = &sum[i][j] + &term[i][j];
            }
        }
    }
    Some(sum)
}

/// `log |det M|` for a matrix of real jets, via `log det M0 + tr log(I + M0^{-1}(M - M0))`.
pub fn jet_log_abs_det(m: &[Vec<Jet<f64>>]) -> Option<Jet<f64>> {
    let n = m.len();
    let space = m[0][0].space().clone();
    let m0 = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j].value());
    let det0 = m0.determinant();
    let inv0 = m0.try_inverse()?;
    let mut q: Vec<Vec<Jet<f64>>> = vec![vec![Jet::zero(&space); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Jet::zero(&space);
            for k in 0..n {
                let mut dm = m[k][j].clone();
                dm.coeffs_mut()[0] = 0.0;
                acc.axpy(inv0[(i, k)], &dm);
            }
            q[i][j] = acc;
        }
    }
    let mut out = Jet::constant(&space, det0.abs().ln());
    let mut pw = q.clone();
    for k in 1..=space.degree() {
        let mut tr = Jet::zero(&space);
        for (i, row) in pw.iter().enumerate() {
            tr = &tr + &row[i];
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        out.axpy(sign / k as f64, &tr);
        pw = mat_mul(&pw, &q);
    }
    Some(out)
}

pub fn mat_mul<T: Coef>(a: &[Vec<Jet<T>>], b: &[Vec<Jet<T>>]) -> Vec<Vec<Jet<T>>> {
    let n = a.len();
    let m = b[0].len();
    let kk = b.len();
    let space = a[0][0].space().clone();
    let mut out = vec![vec![Jet::zero(&space); m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = Jet::zero(&space);
            for k in 0..kk {
                acc = &acc + &a[i][k].mul_ref(&b[k][j]);
            }
            out[i][j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn monomial_count() {
        let s = JetSpace::new(3, 4);
        assert_eq!(s.len(), 35);
        assert_eq!(s.exponents(0), &[0, 0, 0]);
    }

    #[test]
    fn exp_of_variable_matches_series() {
        let s = JetSpace::new(1, 6);
        let x = Jet::<f64>::variable(&s, 0, 0.0);
        let e = x.exp();
        let mut f = 1.0;
        for k in 0..=6u8 {
            if k > 0 {
                f *= k as f64;
            }
            assert_relative_eq!(e.coeff(&[k]), 1.0 / f, epsilon = 1e-15);
        }
    }

    #[test]
    fn recip_times_self_is_one() {
        let s = JetSpace::new(2, 5);
        let x = Jet::<f64>::variable(&s, 0, 2.0);
        let y = Jet::<f64>::variable(&s, 1, 0.0);
        let f = &(&x * &x) + &y.scale_f64(3.0);
        let g = f.recip();
        let one = &f * &g;
        assert_relative_eq!(one.value(), 1.0, epsilon = 1e-14);
        for &c in &one.coeffs()[1..] {
            assert!(c.abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_of_monomial() {
        let s = JetSpace::new(2, 4);
        let x = Jet::<f64>::variable(&s, 0, 0.0);
        let y = Jet::<f64>::variable(&s, 1, 0.0);
        let p = &(&x * &x) * &y;
        let dx = p.deriv(0);
        assert_eq!(dx.coeff(&[1, 1]), 2.0);
    }

    #[test]
    fn matrix_inverse_identity() {
        let s = JetSpace::new(2, 3);
        let x = Jet::<f64>::variable(&s, 0, 0.0);
        let y = Jet::<f64>::variable(&s, 1, 0.0);
        let m = vec![vec![x.clone() + 2.0, y.clone()], vec![y.clone(), &x * &y + 1.0]];
        let inv = jet_matrix_inverse(&m).unwrap();
        let prod = mat_mul(&m, &inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j].value() - want).abs() < 1e-14);
                assert!(prod[i][j].coeffs()[1..].iter().all(|c| c.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn log_det_matches_scalar() {
        let s = JetSpace::new(1, 4);
        let x = Jet::<f64>::variable(&s, 0, 0.0);
        let m = vec![vec![x.clone() + 3.0]];
        let ld = jet_log_abs_det(&m).unwrap();
        // log(3 + x) = log 3 + x/3 - x^2/18 + ...
        assert_relative_eq!(ld.coeff(&[1]), 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(ld.coeff(&[2]), -1.0 / 18.0, epsilon = 1e-14);
    }
}
