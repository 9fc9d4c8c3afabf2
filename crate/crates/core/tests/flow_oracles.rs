use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use fdlab_core::flow::{
    gradients, id_loss, id_loss_monte_carlo, initial_head, integrate_fine_tuning,
    integrate_fixed_step, lp_flow, lp_solve_closed_form, ood_loss, run_lpft, train_loss,
    IntegratorConfig, Method, Scheme,
};
use fdlab_core::linalg::gaussian_vector;
use fdlab_core::problem::{build_instance, Head, HeadMode, InstanceConfig, SigmaMode};
use fdlab_core::rng::rng_from_seed;
use fdlab_core::subspace::{FeatureExtractor, Rotation};

fn small() -> InstanceConfig {
    InstanceConfig {
        d: 12,
        k: 2,
        m: 5,
        n: 8,
        eps: 0.1,
        ..InstanceConfig::default()
    }
}

#[test]
fn rk4_agrees_with_fine_euler() {
    let inst = build_instance(&InstanceConfig {
        head: HeadMode::Gaussian { sigma_sq: 1.0 },
        ..small()
    })
    .unwrap();
    let v0 = initial_head(&inst).unwrap();
    let smax = fdlab_core::linalg::spectral_norm(&inst.train.x);
    let h = 0.05 / (smax * smax);
    let t_end = 200.0 * h;
    let (v_rk, b_rk) = integrate_fixed_step(&inst, &v0, false, Scheme::Rk4, h, t_end).unwrap();
    let (v_eu, b_eu) =
        integrate_fixed_step(&inst, &v0, false, Scheme::Euler, h / 100.0, t_end).unwrap();
    let scale = 1.0 + v_rk.vector().norm() + b_rk.norm();
    // Euler is first order: its error at h/100 bounds the gap
    let gap = (v_rk.vector() - v_eu.vector()).norm() + (b_rk - b_eu).norm();
    assert!(gap < 1e-3 * scale, "gap {gap}");
}

#[test]
fn adaptive_flow_matches_fixed_step_reference() {
    let inst = build_instance(&small()).unwrap();
    let cfg = IntegratorConfig {
        t_max: 0.5,
        n_samples: 20,
        ..IntegratorConfig::default()
    };
    let traj = integrate_fine_tuning(&inst, &cfg).unwrap();
    let end = traj.terminal().state.clone();
    let smax = fdlab_core::linalg::spectral_norm(&inst.train.x);
    let h = end.t / (end.t * smax * smax / 0.01).ceil();
    let (v, b) = integrate_fixed_step(
        &inst,
        &initial_head(&inst).unwrap(),
        false,
        Scheme::Rk4,
        h,
        end.t,
    )
    .unwrap();
    assert!((v.vector() - end.v.vector()).norm() < 1e-7);
    assert!((b - end.b.matrix()).norm() < 1e-7);
}

#[test]
fn train_loss_never_increases_between_samples() {
    for seed in 0..5 {
        let inst = build_instance(&InstanceConfig {
            seed,
            head: HeadMode::Gaussian { sigma_sq: 1.0 },
            ..InstanceConfig::default()
        })
        .unwrap();
        for method in [Method::FineTuning, Method::LinearProbing, Method::LpFt] {
            let traj =
                fdlab_core::flow::run_method(&inst, method, &IntegratorConfig::default()).unwrap();
            let losses: Vec<f64> = traj.samples.iter().map(|s| s.metrics.train_loss).collect();
            let slack = 1e-12 * losses[0].max(1.0);
            assert!(
                losses.windows(2).all(|w| w[1] <= w[0] + slack),
                "{method} seed {seed}"
            );
            assert!(traj.converged, "{method} seed {seed}");
        }
    }
}

#[test]
fn lp_flow_converges_to_closed_form() {
    for seed in 0..5 {
        let inst = build_instance(&InstanceConfig {
            seed,
            ..InstanceConfig::default()
        })
        .unwrap();
        let traj = lp_flow(&inst, &IntegratorConfig::default()).unwrap();
        let v_lp = lp_solve_closed_form(&inst.b_init, &inst.train).unwrap();
        assert!((traj.terminal().state.v.vector() - v_lp.vector()).norm() <= 1e-6);
        assert_eq!(traj.terminal().state.b.matrix(), inst.b_init.matrix());
    }
}

#[test]
fn lpft_starts_from_the_linear_probe() {
    let inst = build_instance(&InstanceConfig::default()).unwrap();
    let traj = run_lpft(&inst, &IntegratorConfig::default()).unwrap();
    let v_lp = lp_solve_closed_form(&inst.b_init, &inst.train).unwrap();
    assert_eq!(traj.initial().state.v, v_lp);
    assert_eq!(traj.lp_head.as_ref(), Some(&v_lp));
}

#[test]
fn sample_grid_is_dense_enough_for_minimum_ood() {
    for seed in 0..3 {
        let inst = build_instance(&InstanceConfig {
            seed,
            eps: 0.0,
            ..InstanceConfig::default()
        })
        .unwrap();
        let coarse = integrate_fine_tuning(&inst, &IntegratorConfig::default()).unwrap();
        let fine = integrate_fine_tuning(
            &inst,
            &IntegratorConfig {
                n_samples: 2000,
                ..IntegratorConfig::default()
            },
        )
        .unwrap();
        let (a, b) = (coarse.min_l_ood(), fine.min_l_ood());
        assert!((a - b).abs() < 0.01 * b, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn monte_carlo_id_loss_matches_closed_form() {
    let inst = build_instance(&small()).unwrap();
    let v = Head::from_slice(&[0.3, -1.2]).unwrap();
    let exact = id_loss(&v, &inst.b_init, &inst).unwrap();
    let m = inst.m;
    let (mean, stderr) = id_loss_monte_carlo(
        &v,
        &inst.b_init,
        &inst,
        40_000,
        &mut rng_from_seed(1),
        |r| gaussian_vector(m, r),
    )
    .unwrap();
    assert!(
        (mean - exact).abs() < 4.0 * stderr,
        "{mean} vs {exact} (se {stderr})"
    );
}

#[test]
fn ood_loss_is_worst_case_over_the_sigma_ellipsoid() {
    let entries: Vec<f64> = (0..12).map(|i| 0.5 + 0.25 * i as f64).collect();
    let inst = build_instance(&InstanceConfig {
        sigma: SigmaMode::Diagonal {
            entries: entries.clone(),
        },
        ..small()
    })
    .unwrap();
    let v = Head::from_slice(&[0.7, 0.1]).unwrap();
    let loss = ood_loss(&v, &inst.b_init, &inst).unwrap();
    let e = &inst.w_star - inst.b_init.matrix().transpose() * v.vector();
    let sigma = inst.sigma_ood.matrix();
    let sigma_inv_diag = DVector::from_iterator(12, entries.iter().map(|s| 1.0 / s));
    let mut rng = rng_from_seed(2);
    for _ in 0..10_000 {
        let x = gaussian_vector(12, &mut rng);
        let norm = x.component_mul(&sigma_inv_diag).dot(&x).sqrt();
        let x = x * (rng.random::<f64>() / norm);
        assert!(e.dot(&x).powi(2) <= loss * (1.0 + 1e-12));
    }
    let best = sigma * &e / loss.sqrt();
    assert!((e.dot(&best).powi(2) - loss).abs() <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>()) {
        let inst = build_instance(&InstanceConfig { seed, ..small() }).unwrap();
        let mut rng = rng_from_seed(seed);
        let v = Head::new(gaussian_vector(2, &mut rng)).unwrap();
        let b = FeatureExtractor::new(fdlab_core::linalg::gaussian_matrix(2, 12, &mut rng)).unwrap();
        let (gv, gb) = gradients(&v, &b, &inst.train).unwrap();
        let h = 1e-6;
        let loss = |vv: &DVector<f64>, bb: &nalgebra::DMatrix<f64>| {
            train_loss(&Head::new(vv.clone()).unwrap(), &FeatureExtractor::new(bb.clone()).unwrap(), &inst.train).unwrap()
        };
        let mut num_b = gb.clone() * 0.0;
        for i in 0..2 {
            for j in 0..12 {
                let (mut p, mut m) = (b.matrix().clone(), b.matrix().clone());
                p[(i, j)] += h;
                m[(i, j)] -= h;
                num_b[(i, j)] = (loss(v.vector(), &p) - loss(v.vector(), &m)) / (2.0 * h);
            }
        }
        let mut num_v = gv.clone() * 0.0;
        for i in 0..2 {
            let (mut p, mut m) = (v.vector().clone(), v.vector().clone());
            p[i] += h;
            m[i] -= h;
            num_v[i] = (loss(&p, b.matrix()) - loss(&m, b.matrix())) / (2.0 * h);
        }
        prop_assert!((&gb - &num_b).norm() <= 1e-6 * gb.norm().max(1.0));
        prop_assert!((&gv - &num_v).norm() <= 1e-6 * gv.norm().max(1.0));
    }

    #[test]
    fn losses_are_invariant_under_joint_rotation(seed in any::<u64>()) {
        let inst = build_instance(&InstanceConfig { seed, ..small() }).unwrap();
        let mut rng = rng_from_seed(seed);
        let v = Head::new(gaussian_vector(2, &mut rng)).unwrap();
        let u = Rotation::random(2, &mut rng);
        let vr = Head::new(u.matrix() * v.vector()).unwrap();
        let br = FeatureExtractor::new(u.matrix() * inst.b_init.matrix()).unwrap();
        let pairs = [
            (ood_loss(&v, &inst.b_init, &inst).unwrap(), ood_loss(&vr, &br, &inst).unwrap()),
            (id_loss(&v, &inst.b_init, &inst).unwrap(), id_loss(&vr, &br, &inst).unwrap()),
            (train_loss(&v, &inst.b_init, &inst.train).unwrap(), train_loss(&vr, &br, &inst.train).unwrap()),
        ];
        for (a, b) in pairs {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
        }
    }
}
