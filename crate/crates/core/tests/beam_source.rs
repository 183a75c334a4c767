use std::sync::Arc;

use nlwave::beams::*;
use nlwave::geometry::*;
use nlwave::nalgebra::DMatrix;
use nlwave::wave_solver::*;
use nlwave::Complex64;

fn profile(g: &WarpedMetric, p: &[f64], dir: &[f64], delta: f64, order: usize, im_h: f64) -> Arc<BeamProfile> {
    let f = g.factors(p);
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut xi = vec![-(f.beta / f.psi).sqrt()];
    xi.extend(dir.iter().map(|v| v / n));
    let geo = trace_through(g, p, &xi, &GeodesicOptions { step: 2e-3, ..Default::default() }).unwrap();
    let ch = Arc::new(build_fermi_chart_with(g, &geo, delta, 100).unwrap());
    let m = ch.m;
    let h0 = DMatrix::<Complex64>::identity(m, m) * Complex64::new(0.0, im_h);
    let y0 = DMatrix::<Complex64>::identity(m, m);
    Arc::new(BeamProfile::build(ch, Some((h0, y0)), order, None).unwrap())
}

// Driving the solver with the beam's own Neumann data reproduces the beam inside.
#[test]
fn solver_reproduces_beam() {
    let g = WarpedMetric::minkowski(3);
    let prof = profile(&g, &[1.5, 0.5, 0.5], &[1.0, 0.0], 1.6, 4, 0.67);
    let grid = SpacetimeGrid::new(2, 96, 576, 3.0, 0.9).unwrap();
    let beam = assemble_beam(prof, 16.0, 1.0, 1.6).unwrap();
    let fp = BeamFootprint::new(&beam, &grid).unwrap();
    let (t0, t1) = fp.time_span().unwrap();
    assert!(t0 > 0.0 && t1 < 3.0);
    let src = beam_neumann_source(&beam, &g, &fp, SolveMode::Forward).unwrap();
    let sol = solve_linear(&g, &NoForcing, &src, SolveMode::Forward).unwrap();
    let k = grid.levels() / 2;
    let (mut err, mut peak): (f64, f64) = (0.0, 0.0);
    for node in 0..grid.num_nodes() {
        let p = grid.point(k, node);
        let want = beam.value(&p[..3]).unwrap().re;
        err = err.max((sol.level(k)[node] - want).abs());
        peak = peak.max(want.abs());
    }
    println!("err {err:.3e} peak {peak:.3e}");
    assert!(err < 0.1 * peak, "{err} vs {peak}");
}

#[test]
fn plane_wave_neumann_second_order() {
    let g = WarpedMetric::minkowski(3);
    let prof = |s: f64| (-((s - 0.6) / 0.1f64).powi(2)).exp();
    let dprof = |s: f64| -2.0 * (s - 0.6) / 0.01 * prof(s);
    let errs: Vec<f64> = [32usize, 64]
        .iter()
        .map(|&cells| {
            let grid = SpacetimeGrid::new(2, cells, 4 * cells, 2.0, 0.9).unwrap();
            let src = NeumannSource::from_fn(&grid, 3, |p, face| match face {
                0 => dprof(p[0] - p[1]),
                1 => -dprof(p[0] - p[1]),
                _ => 0.0,
            });
            let sol = solve_linear(&g, &NoForcing, &src, SolveMode::Forward).unwrap();
            let mut err: f64 = 0.0;
            for k in 0..grid.levels() {
                for node in 0..grid.num_nodes() {
                    let p = grid.point(k, node);
                    err = err.max((sol.level(k)[node] - prof(p[0] - p[1])).abs());
                }
            }
            err
        })
        .collect();
    let order = (errs[0] / errs[1]).log2();
    assert!(order > 1.8, "{errs:?}");
}

#[test]
fn gradient_matches_finite_differences() {
    let g = WarpedMetric::conformal_bump(3, 0.2, vec![1.0, 0.5, 0.5], 0.5);
    let prof = profile(&g, &[1.0, 0.5, 0.5], &[0.6, 0.8], 0.8, 4, 2.0);
    let beam = assemble_beam(prof, 16.0, 1.0, 0.8).unwrap();
    for p in [[1.0, 0.5, 0.5], [1.05, 0.52, 0.55], [0.9, 0.45, 0.38]] {
        let gr = beam.gradient(&p).unwrap();
        let h = 1e-6;
        for a in 0..3 {
            let mut q = p;
            q[a] += h;
            let mut r = p;
            r[a] -= h;
            let fd = (beam.value(&q).unwrap() - beam.value(&r).unwrap()) / (2.0 * h);
            assert!((fd - gr[a]).norm() < 1e-5 * (1.0 + gr[a].norm()), "{p:?} {a} {fd} {}", gr[a]);
        }
    }
}

#[test]
fn cached_modes_match_direct_evaluation() {
    let g = WarpedMetric::conformal_bump(3, 0.2, vec![1.0, 0.5, 0.5], 0.5);
    let prof = profile(&g, &[1.0, 0.5, 0.5], &[0.6, 0.8], 0.8, 4, 0.67);
    let beam = assemble_beam(prof, 20.0, -0.7, 0.8).unwrap();
    for p in [[1.0, 0.5, 0.5], [1.1, 0.5, 0.45], [0.8, 0.35, 0.2], [1.15, 0.55, 0.65]] {
        let (tau, z) = beam.locate(&p).unwrap();
        let m = beam.modes(tau, &z[..2]).unwrap();
        let (u, gr) = m.eval(beam.rho_eff());
        let gr0 = beam.gradient(&p).unwrap();
        let u0 = beam.value(&p).unwrap();
        let scale = 1.0 + (0..3).map(|i| gr0[i].norm()).fold(u0.norm(), f64::max);
        let e = (0..3).map(|i| (gr[i] - gr0[i]).norm()).fold((u - u0).norm(), f64::max);
        assert!(e < 1e-10 * scale, "{e} at {p:?}");
    }
}
