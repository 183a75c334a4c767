//! Acceptance run. Each test prints one `PASS`/`FAIL` line for its criterion
//! straight to stdout, so the lines show up without `--nocapture`.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nlwave::beams::*;
use nlwave::geometry::*;
use nlwave::harness::*;
use nlwave::recovery::*;
use nlwave::wave_solver::*;
use nlwave::Complex64;

fn line(n: usize, title: &str, pass: bool, detail: String, took: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[criterion {n:>2}] {verdict} {title}: {detail} ({:.1} s)", took.as_secs_f64());
}

fn bumped(dim: usize) -> WarpedMetric {
    let mut c = vec![0.5, 0.45, 0.55];
    c.resize(dim, 0.5);
    WarpedMetric::lapse_bump(dim, 0.1, c, 0.3)
}

fn chart(g: &WarpedMetric, p: &[f64], dir: &[f64], step: f64, delta: f64) -> FermiChart {
    let xi = null_covector(g, p, dir);
    let geo = trace_through(g, p, &xi, &GeodesicOptions { step, ..Default::default() }).unwrap();
    build_fermi_chart_with(g, &geo, delta, 100).unwrap()
}

fn bump(a: f64, c: &[f64], r: f64) -> CoefficientField {
    CoefficientField::bump(a, c.to_vec(), r)
}

fn drift(g: &WarpedMetric, step: f64) -> RiccatiTrajectory {
    let ch = chart(g, &[0.5, 0.5, 0.5], &[0.6, 0.8], step, 0.05);
    let (h0, y0) = default_initial_data(2);
    solve_riccati(&ch, &h0, &y0).unwrap()
}

#[test]
fn criterion_01_riccati_conservation() {
    let t = Instant::now();
    let fine: Vec<f64> =
        [WarpedMetric::minkowski(3), bumped(3)].iter().map(|g| drift(g, 1e-3).conservation_drift()).collect();
    let took = t.elapsed();
    // at step 1e-3 the drift already sits at roundoff, so the halving ratio
    // is read off a coarse pair on a stronger bump
    let strong = WarpedMetric::lapse_bump(3, 0.3, vec![0.5, 0.45, 0.55], 0.2);
    let (d1, d2) = (drift(&strong, 0.02).conservation_drift(), drift(&strong, 0.01).conservation_drift());
    let ratio = d1 / d2;
    let pass = fine.iter().all(|&d| d < 1e-6) && ratio >= 12.0 && took < Duration::from_secs(1);
    line(
        1,
        "Riccati conservation",
        pass,
        format!("drift at step 1e-3 {:.2e} (flat) {:.2e} (bump); halving ratio {ratio:.1}", fine[0], fine[1]),
        took,
    );
    assert!(pass);
}

#[test]
fn criterion_02_flat_riccati_closed_form() {
    let t = Instant::now();
    let ch = chart(&WarpedMetric::minkowski(3), &[0.5, 0.5, 0.5], &[1.0, 0.0], 1e-3, 0.05);
    let (h0, y0) = default_initial_data(2);
    let flat = solve_riccati(&ch, &h0, &y0).unwrap();
    let i = Complex64::new(0.0, 1.0);
    let mut err: f64 = 0.0;
    for (k, &tau) in flat.tau.iter().enumerate() {
        let h = &flat.h[k];
        let want = i / Complex64::new(1.0, 2.0 * tau);
        err = err.max((h[(0, 0)] - i).norm()).max((h[(1, 1)] - want).norm());
        err = err.max(h[(0, 1)].norm()).max(h[(1, 0)].norm());
    }
    let took = t.elapsed();
    let pass = err < 1e-8 && took < Duration::from_secs(1);
    line(2, "flat Riccati closed form", pass, format!("max deviation {err:.2e} over {} samples", flat.tau.len()), took);
    assert!(pass);
}

#[test]
fn criterion_03_positivity() {
    let t = Instant::now();
    let mut mins = vec![];
    for g in [WarpedMetric::minkowski(3), bumped(3)] {
        mins.push(drift(&g, 1e-3).min_imag_eigenvalue());
    }
    let b = BeamVerifyParams { point: vec![0.5; 4], direction: vec![0.6, 0.8, 0.0], ..Default::default() };
    for g in [WarpedMetric::minkowski(4), bumped(4)] {
        let ch = Arc::new(chart(&g, &b.point, &b.direction, 1e-3, b.chart_delta));
        let h0 = CMat::identity(3, 3) * Complex64::new(0.0, b.width);
        let prof = BeamProfile::build(ch, Some((h0, CMat::identity(3, 3))), 2, Some((-b.window, b.window))).unwrap();
        mins.push(prof.riccati.min_imag_eigenvalue());
    }
    let g = WarpedMetric::minkowski(3);
    for k in [3, 4] {
        let set = aim_beams(&g, &RecoveryTask { k, ..Default::default() }).unwrap();
        mins.extend(set.beams.iter().map(|b| b.profile.riccati.min_imag_eigenvalue()));
    }
    let worst = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = worst > 0.0;
    line(3, "Im H positive", pass, format!("min eigenvalue {worst:.3e} over {} trajectories", mins.len()), t.elapsed());
    assert!(pass);
}

#[test]
fn criterion_04_covector_algebra() {
    let t = Instant::now();
    let p = CovectorParams { r0: vec![0.0, 0.3, 0.6, 0.9], varsigma: vec![1e-3], tolerance: 0.01 };
    let tab = covector_table(&p, 3).unwrap();
    let (norm, target, res) = (
        tab.column_f64("normalised").unwrap(),
        tab.column_f64("target").unwrap(),
        tab.column_f64("decomposition_residual").unwrap(),
    );
    let dev = norm.iter().zip(&target).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
    let rmax = res.iter().copied().fold(0.0, f64::max);
    let took = t.elapsed();
    let pass = dev < 0.01 && rmax < 1e-12 && took < Duration::from_secs(1);
    line(
        4,
        "interaction sum law",
        pass,
        format!("max relative deviation {dev:.2e}, decomposition residual {rmax:.2e}"),
        took,
    );
    assert!(pass);
}

#[test]
fn criterion_05_beam_residual_decay() {
    let t = Instant::now();
    let b = BeamVerifyParams { point: vec![0.5; 4], direction: vec![0.6, 0.8, 0.0], ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut slopes = vec![];
    for g in [WarpedMetric::minkowski(4), bumped(4)] {
        for &n in &b.orders {
            let s = loglog_slope(&residual_series(&b, &g, n, &b.rho).unwrap());
            worst = worst.max((s - residual_slope_prediction(n)).abs());
            slopes.push(format!("N={n} {s:.3}"));
        }
    }
    let took = t.elapsed();
    let pass = worst < 0.5 && took < Duration::from_secs(60);
    line(
        5,
        "beam residual slope",
        pass,
        format!("slopes [{}] vs -0.5/-1.5, worst gap {worst:.3}", slopes.join(", ")),
        took,
    );
    assert!(pass);
}

fn reciprocity(g: &WarpedMetric, cells: usize) -> (f64, f64) {
    let gr = SpacetimeGrid::new(2, cells, 2 * cells, 1.0, 0.9).unwrap();
    let f1 = NeumannSource::from_fn(&gr, 3, |p, face| {
        let y = (p[2] - 0.5) / 0.2;
        if face == 1 {
            smooth_ramp((p[0] - 0.05) / 0.2) * (-y * y).exp() * (3.0 * p[0]).sin()
        } else {
            0.0
        }
    });
    let f0 = NeumannSource::from_fn(&gr, 3, |p, face| {
        let x = (p[1] - 0.6) / 0.2;
        if face == 2 {
            smooth_ramp((0.95 - p[0]) / 0.2) * (-x * x).exp() * (2.0 * p[0]).cos()
        } else {
            0.0
        }
    });
    let v1 = solve_linear(g, &NoForcing, &f1, SolveMode::Forward).unwrap();
    let v0 = solve_linear(g, &NoForcing, &f0, SolveMode::Backward).unwrap();
    let a = boundary_pairing(g, &f1.data, &v0.trace).unwrap();
    let b = boundary_pairing(g, &v1.trace, &f0.data).unwrap();
    ((a - b).abs(), a.abs().max(b.abs()))
}

#[test]
fn criterion_06_solver_verification() {
    let t = Instant::now();
    let (e1, e2) = (manufactured_error(3, 16, 1.0, 0.7).unwrap(), manufactured_error(3, 32, 1.0, 0.7).unwrap());
    let order = (e1 / e2).log2();
    let g = WarpedMetric::lapse_bump(3, 0.2, vec![0.5, 0.5, 0.4], 0.3);
    let (d1, scale) = reciprocity(&g, 24);
    let (d2, _) = reciprocity(&g, 48);
    // the leapfrog scheme is exactly self-adjoint, so the defect sits at roundoff on both grids
    let recip_ok = d2 < 1e-12 * scale || (d1 / d2).log2() >= 1.8;
    let took = t.elapsed();
    let pass = order >= 1.9 && recip_ok && took < Duration::from_secs(120);
    line(
        6,
        "solver verification",
        pass,
        format!("manufactured order {order:.2}; reciprocity defect {:.1e}, {:.1e} of {scale:.2e}", d1, d2),
        took,
    );
    assert!(pass);
}

#[test]
fn criterion_07_picard_contraction() {
    let t = Instant::now();
    let cfg =
        load_config(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/forward.toml"), &[]).unwrap();
    let g = cfg.metric().unwrap();
    let grid = cfg.grid.build(&g).unwrap();
    let parts: Vec<NeumannSource> = cfg.forward.sources.iter().map(|s| s.source(&grid).unwrap()).collect();
    let f = NeumannSource::combine(&parts.iter().map(|p| (cfg.forward.scale, p)).collect::<Vec<_>>()).unwrap();
    let sol = solve_semilinear(&g, &cfg.nonlinearity, &f, &cfg.forward.picard).unwrap();
    let geometric = sol.distances.windows(2).all(|w| w[1] < w[0]);
    let rmax = sol.ratios.iter().copied().fold(0.0, f64::max);
    let pass = sol.distances.len() >= 5 && geometric && rmax < 1.0;
    line(
        7,
        "Picard contraction",
        pass,
        format!("{} iterations, largest ratio {rmax:.3e}", sol.distances.len()),
        t.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_08_linearization_oracle() {
    let t = Instant::now();
    let cfg =
        load_config(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/linearize_verify.toml"), &[])
            .unwrap();
    assert_eq!((cfg.grid.cells, cfg.grid.steps), (96, Some(192)));
    let g = cfg.metric().unwrap();
    let gap = linearization_gap(&cfg, &g, 1e-3).unwrap();
    let took = t.elapsed();
    let pass = gap < 0.05 && took < Duration::from_secs(600);
    line(8, "stencil derivative vs cascade", pass, format!("relative trace difference {gap:.2e} on 96²×192"), took);
    assert!(pass);
}

// Criteria 9 and 11 share the calibrated setup.
#[test]
fn criterion_09_and_11_h3_recovery() {
    let t = Instant::now();
    let g = WarpedMetric::minkowski(3);
    let task = RecoveryTask::default();
    let q0 = task.q0.clone();
    let setup = RecoverySetup::new(&g, &task).unwrap();
    let cal = calibrate(&setup, &bump(1.0, &q0, 1.0)).unwrap();
    let (c, r) = (vec![1.6, 0.42, 0.55], 0.8);
    let truth = bump(1.0 / bump(1.0, &c, r).eval(&q0), &c, r);
    assert!((truth.eval(&q0) - 1.0).abs() < 1e-12);
    let one = recover_coefficient(&setup, &cal, &setup.medium(&truth)).unwrap();
    let two = recover_coefficient(&setup, &cal, &setup.medium(&bump(2.0 / bump(1.0, &c, r).eval(&q0), &c, r))).unwrap();
    let far = recover_coefficient(&setup, &cal, &setup.medium(&bump(1.0, &[0.6, 0.15, 0.2], 0.4))).unwrap();
    let lin_gap = (two.value - 2.0 * one.value).abs();
    let lin_tol = two.residual + 2.0 * one.residual;
    let took = t.elapsed();
    let pass = (0.85..=1.15).contains(&one.value)
        && lin_gap <= lin_tol
        && far.value.abs() < 0.1
        && took < Duration::from_secs(1800);
    line(
        9,
        "h3 recovery",
        pass,
        format!(
            "ĥ3 = {:.4} (residual {:.1e}); doubled {:.4} (gap {lin_gap:.1e} ≤ {lin_tol:.1e}); far bump {:.1e}",
            one.value, one.residual, two.value, far.value
        ),
        took,
    );

    let t = Instant::now();
    let mut kappa = setup.beams.kappas.to_vec();
    kappa[2] = -0.6;
    let mis = RecoverySetup::new(&g, &RecoveryTask { kappa_override: Some(kappa), ..task.clone() }).unwrap();
    let (_, fit) = mis.sweep(&mis.medium(&bump(1.0, &q0, 1.0))).unwrap();
    let ratio = (fit.a / cal.fit.a).abs();
    let pass11 = ratio < 0.1;
    line(11, "frequency matching null test", pass11, format!("|A_mismatched / A_matched| = {ratio:.2e}"), t.elapsed());
    assert!(pass && pass11);
}

#[test]
fn criterion_10_ladder_h4() {
    let t = Instant::now();
    let g = WarpedMetric::minkowski(3);
    let h2 = bump(0.5, &[1.4, 0.6, 0.45], 0.9);
    let h3 = bump(0.8, &[1.55, 0.45, 0.5], 0.9);
    let known = NonlinearityProfile::zero().with(2, h2).with(3, h3);
    let task = RecoveryTask { k: 4, known, ..Default::default() };
    let setup = RecoverySetup::new(&g, &task).unwrap();
    let cal = calibrate(&setup, &bump(1.0, &task.q0, 1.0)).unwrap();
    let h4 = bump(1.0, &[1.45, 0.55, 0.47], 0.8);
    let rep = recover_coefficient(&setup, &cal, &setup.medium(&h4)).unwrap();
    let err = rep.relative_error.unwrap();
    let took = t.elapsed();
    let pass = err < 0.2 && took < Duration::from_secs(2700);
    line(
        10,
        "h4 ladder step",
        pass,
        format!("ĥ4 = {:.4} vs {:.4}, relative error {err:.3}", rep.value, rep.truth.unwrap()),
        took,
    );
    assert!(pass);
}
