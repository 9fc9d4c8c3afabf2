use fdlab_core::flow::IntegratorConfig;
use fdlab_core::harness::{
    run_suites, theorem1_bound, theorem1_rhs, verify_head_anticoncentration, Baselines,
    VerificationConfig,
};
use fdlab_core::problem::{build_instance, Head, InstanceConfig};
use fdlab_core::report::{ResultId, TheoremReport};
use fdlab_core::rng::rng_from_seed;

fn reduced() -> VerificationConfig {
    VerificationConfig {
        n_instances: 3,
        n_mc_trials: 100,
        eps_sweep: vec![0.2, 0.05, 0.01],
        sweep_seeds: 2,
        theorem1_instances: 4,
        head_mc_trials: 2000,
        angle_trials: 60,
        gaussian_seeds: 3,
        ..VerificationConfig::default()
    }
}

#[test]
fn every_suite_reports_and_reevaluates() {
    let reports = run_suites(&ResultId::ALL, &reduced(), &IntegratorConfig::default()).unwrap();
    assert_eq!(reports.len(), 12);
    for (id, r) in ResultId::ALL.iter().zip(&reports) {
        assert_eq!(r.result_id, *id);
        assert!(r.is_assertable(), "{id}");
        assert!(r.quantities.values().all(|v| v.is_finite()));
        let back = TheoremReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back.evaluate(), r.pass, "{id}");
        assert!(r.pass, "{id}: {:?}", r.failed_checks());
    }
}

#[test]
fn suites_are_deterministic() {
    let v = reduced();
    let c = IntegratorConfig::default();
    let ids = [
        ResultId::Thm2Ratio,
        ResultId::LemHeadAnticonc,
        ResultId::PropId,
    ];
    let a = run_suites(&ids, &v, &c).unwrap();
    let b = run_suites(&ids, &v, &c).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.to_json(), y.to_json());
    }
}

#[test]
fn missing_baselines_are_recorded_not_asserted() {
    let v = VerificationConfig {
        baselines: Baselines {
            thm1_min_ratio: f64::NAN,
            lpft_random_head_min_ood: f64::NAN,
        },
        ..reduced()
    };
    let r = run_suites(&[ResultId::Thm1], &v, &IntegratorConfig::default())
        .unwrap()
        .remove(0);
    assert!(r.quantity("min_ratio_vs_baseline").is_none());
    assert!(!r.notes.is_empty());
}

#[test]
fn bound_is_monotone_on_grids() {
    let eps: Vec<f64> = (0..40).map(|i| i as f64 * 0.01).collect();
    let cos: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
    for phi_sq in [0.0, 0.3, 1.0, 4.0] {
        for w in [0.5, 1.0, 3.0] {
            for c in &cos {
                let vals: Vec<f64> = eps
                    .iter()
                    .map(|e| theorem1_rhs(2.0, *c, 5, phi_sq, w, *e))
                    .collect();
                assert!(vals.windows(2).all(|p| p[1] <= p[0]));
            }
            for e in &eps {
                let vals: Vec<f64> = cos
                    .iter()
                    .map(|c| theorem1_rhs(2.0, *c, 5, phi_sq, w, *e))
                    .collect();
                assert!(vals.windows(2).all(|p| p[1] >= p[0]));
            }
        }
    }
}

#[test]
fn default_instance_bound_is_the_plug_in_value() {
    let inst = build_instance(&InstanceConfig {
        eps: 0.0,
        ..InstanceConfig::default()
    })
    .unwrap();
    let c = fdlab_core::subspace::principal_angle_cos(&inst.r_init(), &inst.span_perp).unwrap();
    let bound = theorem1_bound(&inst, 1.0).unwrap();
    assert!((bound - c / (4.0 * 5f64.sqrt())).abs() < 1e-12);
}

#[test]
fn small_variance_heads_never_fail_anticoncentration() {
    let v_star = Head::from_slice(&[0.6, 0.8, 0.0]).unwrap();
    let r =
        verify_head_anticoncentration(&[1e-4], &v_star, 0.1, 5000, &mut rng_from_seed(1)).unwrap();
    // phi^2 / |v*|^4 concentrates at 1, so the calibrated constant is near 1 / delta
    assert!(r.quantity("c_test").unwrap() > 9.0);
    assert!(r.pass, "{:?}", r.quantities);
}
