use std::sync::Arc;

use nlwave::beams::*;
use nlwave::geometry::*;
use nlwave::Complex64;

fn null_covector(g: &WarpedMetric, p: &[f64], dir: &[f64]) -> Vec<f64> {
    let f = g.factors(p);
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut xi = vec![-(f.beta / f.psi).sqrt()];
    xi.extend(dir.iter().map(|v| v / n));
    xi
}

fn chart(g: &WarpedMetric, p: &[f64], dir: &[f64], step: f64, delta: f64) -> FermiChart {
    let xi = null_covector(g, p, dir);
    let opts = GeodesicOptions { step, ..Default::default() };
    let geo = trace_through(g, p, &xi, &opts).unwrap();
    build_fermi_chart_with(g, &geo, delta, 100).unwrap()
}

fn bumped3() -> WarpedMetric {
    WarpedMetric::lapse_bump(3, 0.1, vec![0.5, 0.45, 0.55], 0.3)
}

#[test]
fn flat_riccati_closed_form() {
    let g = WarpedMetric::minkowski(3);
    let ch = chart(&g, &[0.5, 0.5, 0.5], &[1.0, 0.0], 1e-3, 0.05);
    let (h0, y0) = default_initial_data(2);
    let r = solve_riccati(&ch, &h0, &y0).unwrap();
    let mut err: f64 = 0.0;
    for (i, &t) in r.tau.iter().enumerate() {
        let want = Complex64::new(0.0, 1.0) / Complex64::new(1.0, 2.0 * t);
        err = err.max((r.h[i][(0, 0)] - Complex64::new(0.0, 1.0)).norm());
        err = err.max((r.h[i][(1, 1)] - want).norm());
        err = err.max(r.h[i][(0, 1)].norm());
        assert!((r.c0[i] - 1.0).abs() < 1e-10);
    }
    assert!(err < 1e-8, "{err}");
    let a = r.amplitude_leading().unwrap();
    for (i, &t) in r.tau.iter().enumerate() {
        let want = Complex64::new(1.0, 2.0 * t).sqrt().inv();
        assert!((a[i] - want).norm() < 1e-10);
        assert!((a[i].norm().powi(4) * r.y[i].determinant().norm_sqr() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn perturbed_riccati_conservation() {
    let g = bumped3();
    let mut drifts = vec![];
    for &step in &[2e-3, 1e-3] {
        let ch = chart(&g, &[0.5, 0.5, 0.5], &[0.6, 0.8], step, 0.05);
        let (h0, y0) = default_initial_data(2);
        let r = solve_riccati(&ch, &h0, &y0).unwrap();
        assert!(r.min_imag_eigenvalue() > 0.0);
        drifts.push(r.conservation_drift());
    }
    println!("drifts {:?} ratio {}", drifts, drifts[0] / drifts[1]);
    assert!(drifts[1] < 1e-6);
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|(a, b)| (a.ln(), b.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

// The eikonal defect of an order-N phase vanishes to order N+1 off the axis.
#[test]
fn eikonal_vanishes_to_order() {
    for g in [WarpedMetric::minkowski(3), bumped3()] {
        let ch = Arc::new(chart(&g, &[0.5, 0.5, 0.5], &[0.6, 0.8], 1e-3, 0.5));
        for &n in &[2usize, 3, 4] {
            let prof = Arc::new(BeamProfile::build(ch.clone(), None, n, Some((-0.3, 0.3))).unwrap());
            let beam = assemble_beam(prof, 10.0, 1.0, 0.5).unwrap();
            let mut pts = vec![];
            for &r in &[0.02, 0.04, 0.08] {
                let mut s = 0.0;
                for k in 0..8 {
                    let a = k as f64 * std::f64::consts::PI / 4.0 + 0.3;
                    let p = beam.at_chart(0.1, &[r * a.cos(), r * a.sin()], true).unwrap();
                    s += p.eikonal.unwrap().norm();
                }
                pts.push((r, s / 8.0));
            }
            let sl = slope(&pts);
            assert!(sl > n as f64 + 0.7, "N={n} slope {sl} {pts:?}");
        }
    }
}

// Halving the step shrinks the invariant drift by at least the RK4 factor.
#[test]
fn drift_shrinks_under_step_halving() {
    let g = WarpedMetric::lapse_bump(3, 0.3, vec![0.5, 0.45, 0.55], 0.2);
    let d: Vec<f64> = [0.02, 0.01]
        .iter()
        .map(|&step| {
            let ch = chart(&g, &[0.5, 0.5, 0.5], &[0.6, 0.8], step, 0.05);
            let (h0, y0) = default_initial_data(2);
            solve_riccati(&ch, &h0, &y0).unwrap().conservation_drift()
        })
        .collect();
    assert!(d[0] / d[1] > 12.0, "{d:?}");
}

#[test]
fn wide_beam_residual_slope() {
    let g = WarpedMetric::minkowski(4);
    let ch = Arc::new(chart(&g, &[0.5; 4], &[0.6, 0.8, 0.0], 1e-3, 8.0));
    let h0 = nlwave::nalgebra::DMatrix::<Complex64>::identity(3, 3) * Complex64::new(0.0, 0.25);
    let y0 = nlwave::nalgebra::DMatrix::<Complex64>::identity(3, 3);
    let prof = Arc::new(BeamProfile::build(ch, Some((h0, y0)), 2, Some((-0.3, 0.3))).unwrap());
    let opts = ResidualOptions { n_tau: 9, n_y: 9, y_max: 4.0, tau_range: None };
    let pts: Vec<(f64, f64)> = [32.0, 64.0, 128.0]
        .iter()
        .map(|&rho| {
            let beam = assemble_beam(prof.clone(), rho, 1.0, 8.0).unwrap();
            (rho, beam_residual(&beam, 0, &opts).unwrap())
        })
        .collect();
    // K = 1/2 and three transverse directions.
    let sl = slope(&pts);
    assert!((sl + 0.25).abs() < 0.05, "{sl} {pts:?}");
}
