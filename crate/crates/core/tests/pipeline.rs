use detec_core::linalg::{lambda_max, lambda_min, symmetrize};
use detec_core::synthesis::{ground_truth_checks, solve_q, SynthesisResult};
use detec_core::{
    bound_delta, build_matrices, certificates, run_experiment, synthesize, DataMatrices, DesignOptions,
    ExperimentConfig, LinearSystem, X1Mode,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn aircraft_design(d_bar: f64, seed: u64) -> (LinearSystem, DataMatrices, SynthesisResult) {
    let sys = LinearSystem::aircraft();
    let raw = run_experiment(&sys, &ExperimentConfig::reference(d_bar, seed)).unwrap();
    let dm = build_matrices(&raw, X1Mode::Exact)
        .unwrap()
        .with_delta(bound_delta(d_bar, 10, 3).unwrap())
        .unwrap();
    let s = synthesize(&dm, &DesignOptions::with_omega_scale(3, 7.0)).unwrap();
    (sys, dm, s)
}

#[test]
fn aircraft_design_identities() {
    for (d_bar, seed) in [(0.1, 0), (0.2, 1), (0.3, 2)] {
        let (sys, dm, s) = aircraft_design(d_bar, seed);
        assert!(dm.disturbance_bound_holds());
        let k_norm = s.k.norm();

        let x0y = &dm.x0 * &s.y;
        assert!(lambda_min(&symmetrize(&x0y)) > 0.0);
        assert!((&s.p * &x0y - DMatrix::identity(3, 3)).norm() < 1e-8);

        let mut lhs = DMatrix::zeros(4, 10);
        lhs.view_mut((0, 0), (1, 10)).copy_from(&dm.u0);
        lhs.view_mut((1, 0), (3, 10)).copy_from(&dm.x0);
        let mut rhs = DMatrix::zeros(4, 3);
        rhs.view_mut((0, 0), (1, 3)).copy_from(&s.k);
        assert!((&lhs * &s.q - &rhs).norm() <= 1e-8 * (1.0 + k_norm));
        assert!((&dm.u0 * &s.g - &s.k).norm() <= 1e-8 * k_norm.max(1.0));
        assert!((&dm.x0 * &s.g - DMatrix::identity(3, 3)).norm() <= 1e-8);

        let t = s.trigger_matrix();
        assert!(lambda_max(&t) <= 1e-9 * t.norm(), "d̄={d_bar}: trigger LMI λ_max {:e}", lambda_max(&t));

        let gt = ground_truth_checks(sys.a(), sys.b(), dm.d0.as_ref().unwrap(), &s).unwrap();
        assert!(gt.closed_loop_residual <= 1e-8 * gt.closed_loop_norm.max(1.0));
        assert!(gt.perturbed_decay_lambda_max < 0.0);
        assert!(gt.trigger_lambda_max <= 1e-9 * gt.trigger_scale);
        assert!(gt.spectral_abscissa < 0.0);

        let c = &s.certificates;
        for v in [c.lambda_bar, c.lambda_u, c.lambda_l] {
            assert!(v > 0.0 && v <= 1.0);
        }
        assert!(c.lambda_l <= c.lambda_u && c.lambda_u <= c.lambda_bar);
        assert!(c.theta_max > 0.0);
    }
}

#[test]
fn minimum_norm_q_is_the_smallest_solution() {
    let (_, dm, s) = aircraft_design(0.1, 4);
    let q = solve_q(&dm, &s.k).unwrap();
    // adding any null-space direction of [U0; X0] can only grow ‖Q‖_F
    let mut stacked = DMatrix::zeros(4, 10);
    stacked.view_mut((0, 0), (1, 10)).copy_from(&dm.u0);
    stacked.view_mut((1, 0), (3, 10)).copy_from(&dm.x0);
    let svd = stacked.clone().svd(true, true);
    let vt = svd.v_t.unwrap();
    let null_dir = {
        // complete the row space basis with a vector orthogonal to it
        let mut z = DMatrix::from_fn(10, 1, |i, _| (i as f64 + 1.0).sin());
        for r in 0..vt.nrows() {
            let row = vt.row(r).transpose();
            let c = row.dot(&z.column(0));
            z.column_mut(0).axpy(-c, &row, 1.0);
        }
        z
    };
    assert!((&stacked * &null_dir).norm() < 1e-10);
    let other = &q + &null_dir * DMatrix::from_row_slice(1, 3, &[0.3, -0.2, 0.5]);
    assert!((&stacked * &other - &stacked * &q).norm() < 1e-9);
    assert!(other.norm() > q.norm());
}

fn orthogonal(seed: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(3, 3, seed);
    m.qr().q()
}

fn spd(seed: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(3, 3, seed);
    &m * m.transpose() + DMatrix::identity(3, 3) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn certificates_survive_orthogonal_recoordinatization(
        u in prop::collection::vec(-1.0..1.0f64, 9),
        p in prop::collection::vec(-1.0..1.0f64, 9),
        w in prop::collection::vec(-1.0..1.0f64, 9),
        q in prop::collection::vec(-1.0..1.0f64, 15),
        x1 in prop::collection::vec(-3.0..3.0f64, 15),
        d in 0.0..1.0f64,
        alpha in 1e-3..1.0f64,
        delta in 1e-2..10.0f64,
    ) {
        let u = orthogonal(&u);
        prop_assume!(u.determinant().abs() > 0.5);
        let (p, w) = (spd(&p), spd(&w));
        let q = DMatrix::from_column_slice(5, 3, &q);
        let x1 = DMatrix::from_column_slice(3, 5, &x1);
        let dm = DMatrix::identity(3, 3) * d;
        let base = certificates(&p, &q, &x1, &dm, &w, alpha, delta, 3).unwrap();
        let ut = u.transpose();
        let moved = certificates(
            &(&u * &p * &ut),
            &(&q * &ut),
            &(&u * &x1),
            &(&u * &dm),
            &(&u * &w * &ut),
            alpha,
            delta,
            3,
        )
        .unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
        prop_assert!(close(base.lambda_bar, moved.lambda_bar));
        prop_assert!(close(base.iota, moved.iota));
        prop_assert!(close(base.eps_u_coeff, moved.eps_u_coeff));
        prop_assert!(close(base.lambda_u, moved.lambda_u));
        prop_assert!(close(base.lambda_l, moved.lambda_l));
        prop_assert!(close(base.theta_max, moved.theta_max));
    }
}
