use nlwave::geometry::WarpedMetric;
use nlwave::recovery::*;
use nlwave::wave_solver::{CoefficientField, NonlinearityProfile};
use proptest::prelude::*;

fn bump(a: f64, c: &[f64], r: f64) -> CoefficientField {
    CoefficientField::bump(a, c.to_vec(), r)
}

proptest! {
    #[test]
    fn fit_is_exact_on_its_model(a in -10.0..10.0f64, b in -50.0..50.0f64) {
        let s: Vec<(f64, f64)> = [16.0, 24.0, 32.0, 48.0, 64.0].iter().map(|&r| (r, a + b / r)).collect();
        let f = rho_sweep_fit(&s).unwrap();
        prop_assert!((f.a - a).abs() < 1e-10 * (1.0 + a.abs() + b.abs()));
        prop_assert!((f.b - b).abs() < 1e-8 * (1.0 + a.abs() + b.abs()));
        prop_assert!(f.residual < 1e-10 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn rbf_passes_through_its_nodes(v in proptest::collection::vec(-2.0..2.0f64, 3)) {
        let pts = vec![
            (vec![1.5, 0.5, 0.5], v[0]),
            (vec![1.3, 0.6, 0.4], v[1]),
            (vec![1.6, 0.3, 0.55], v[2]),
        ];
        let f = rbf_field(&pts, 1.6).unwrap();
        for (p, want) in &pts {
            prop_assert!((f.eval(p) - want).abs() < 1e-10);
        }
    }
}

#[test]
fn constant_samples_fit_with_zero_slope() {
    let s: Vec<(f64, f64)> = [16.0, 32.0, 64.0].iter().map(|&r| (r, 0.7)).collect();
    let f = rho_sweep_fit(&s).unwrap();
    assert!((f.a - 0.7).abs() < 1e-13 && f.b.abs() < 1e-10);
}

#[test]
fn fit_needs_three_distinct_rho() {
    assert!(rho_sweep_fit(&[(16.0, 1.0), (16.0, 1.1), (32.0, 1.0)]).is_err());
    assert!(rho_sweep_fit(&[(16.0, 1.0), (32.0, f64::NAN), (64.0, 1.0)]).is_err());
}

#[test]
fn invalid_tasks_are_rejected() {
    let g = WarpedMetric::minkowski(3);
    let ok = RecoveryTask::default();
    ok.validate(&g).unwrap();
    let bad = [
        RecoveryTask { k: 2, ..ok.clone() },
        RecoveryTask { q0: vec![1.5, 0.5], ..ok.clone() },
        RecoveryTask { varsigma: 1.0, ..ok.clone() },
        RecoveryTask { known: NonlinearityProfile::zero().with(3, CoefficientField::Zero), ..ok.clone() },
        RecoveryTask { kappa_override: Some(vec![1.0, 1.0]), ..ok.clone() },
        RecoveryTask { beams: BeamSettings { rho: vec![16.0, 32.0], ..ok.beams.clone() }, ..ok.clone() },
    ];
    for t in bad {
        assert!(t.validate(&g).is_err(), "{t:?}");
    }
}

#[test]
fn task_round_trips_through_toml() {
    let t = RecoveryTask {
        k: 4,
        known: NonlinearityProfile::zero().with(2, bump(0.5, &[1.4, 0.6, 0.45], 0.9)),
        ..Default::default()
    };
    let s = toml::to_string(&t).unwrap();
    assert_eq!(toml::from_str::<RecoveryTask>(&s).unwrap(), t);
}

// Matched multipliers cancel the phase gradients at q0, and the combined phase
// grows quadratically away from it.
#[test]
fn aimed_beams_are_phase_matched() {
    let g = WarpedMetric::minkowski(3);
    for k in [3, 4] {
        let task = RecoveryTask { k, ..Default::default() };
        let set = aim_beams(&g, &task).unwrap();
        assert_eq!(set.beams.len(), 4);
        assert!(set.kappas.iter().all(|c| c.abs() <= 1.0 + 1e-12));
        let d = set.phase_gradient_defect(&task.q0, &task.alpha()).unwrap();
        assert!(d < 1e-6, "k={k} defect {d}");
        let pts: Vec<Vec<f64>> = [[0.03, 0.0, 0.0], [0.0, 0.03, 0.0], [0.0, 0.0, -0.03], [0.02, -0.02, 0.02]]
            .iter()
            .map(|o| task.q0.iter().zip(o).map(|(a, b)| a + b).collect())
            .collect();
        let c = set.imag_phase_bound(&pts, &task.q0, &task.alpha()).unwrap();
        assert!(c > 0.0, "k={k} bound {c}");
    }
}

#[test]
fn recovery_round_trip_and_zero_medium() {
    let g = WarpedMetric::minkowski(3);
    let task = RecoveryTask {
        beams: BeamSettings { rho: vec![12.0, 16.0, 24.0], ..Default::default() },
        ..Default::default()
    };
    let setup = RecoverySetup::new(&g, &task).unwrap();
    let cal = calibrate(&setup, &bump(1.0, &task.q0, 1.0)).unwrap();
    let back = CalibrationProfile::from_json(&cal.to_json()).unwrap();
    assert_eq!(back.fingerprint, cal.fingerprint);
    assert!((back.constant - cal.constant).abs() <= 1e-12 * cal.constant.abs());

    let zero = recover_coefficient(&setup, &back, &NonlinearityProfile::zero()).unwrap();
    assert!(zero.value.abs() < 1e-8, "{}", zero.value);
    assert!(zero.truth.is_none());

    let self_check = recover_coefficient(&setup, &back, &setup.medium(&bump(1.0, &task.q0, 1.0))).unwrap();
    assert!((self_check.value - 1.0).abs() < 1e-9);

    let mut stale = back.clone();
    stale.fingerprint = "0".repeat(64);
    assert!(recover_coefficient(&setup, &stale, &NonlinearityProfile::zero()).is_err());
    assert_eq!(sweep_table(&zero.samples).rows.len(), 3);
}
