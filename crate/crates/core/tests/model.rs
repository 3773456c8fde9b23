mod common;

use approx::assert_abs_diff_eq;
use common::*;
use proptest::prelude::*;
use wncs_core::model::*;

/// One covariance recursion written out independently: predict, gain,
/// update.
fn resubstitute(a: &Mat, c: &Mat, qw: &Mat, qv: &Mat, p: &Mat) -> Mat {
    let n = a.nrows();
    let pp = a * p * a.transpose() + qw;
    let s = c * &pp * c.transpose() + qv;
    let k = &pp * c.transpose() * s.try_inverse().unwrap();
    (Mat::identity(n, n) - k * c) * pp
}

#[test]
fn benchmark_plants_are_two_step_controllable() {
    for a in [a1(), a2(), a3()] {
        assert_eq!(controllability_index(&a, &b_col(), 10).unwrap(), 2);
    }
    let i2 = Mat::identity(2, 2);
    assert_eq!(controllability_index(&i2, &i2, 5).unwrap(), 1);
}

#[test]
fn unreachable_state_is_not_controllable() {
    let a = mat(&[&[2.0, 0.0], &[0.0, 3.0]]);
    let b = mat(&[&[1.0], &[0.0]]);
    for v_max in [1, 2, 5, 20] {
        assert!(matches!(
            controllability_index(&a, &b, v_max),
            Err(ModelError::NotControllable(_))
        ));
    }
}

#[test]
fn singular_a_is_rejected() {
    let a = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
    assert!(matches!(
        controllability_index(&a, &b_col(), 3),
        Err(ModelError::NonSingularityViolated(_))
    ));
}

#[test]
fn published_gains_are_deadbeat_to_rounding() {
    let published = [
        (a1(), [-2.90, 1.00]),
        (a2(), [-3.533, 1.433]),
        (a3(), [-4.233, 1.933]),
    ];
    for (a, k) in published {
        let k = mat(&[&k]);
        let phi = &a + b_col() * k;
        assert!(phi.pow(2).norm() <= 5e-3);
    }
}

#[test]
fn synthesized_gains_match_published_values() {
    let published = [
        (a1(), [-2.90, 1.00]),
        (a2(), [-3.533, 1.433]),
        (a3(), [-4.233, 1.933]),
    ];
    for (a, k) in published {
        let g = deadbeat_gain(&a, &b_col(), 2).unwrap();
        assert!((&a + b_col() * &g).pow(2).norm() <= 1e-8);
        assert_abs_diff_eq!(g[(0, 0)], k[0], epsilon = 2e-3);
        assert_abs_diff_eq!(g[(0, 1)], k[1], epsilon = 2e-3);
    }
}

#[test]
fn zero_dynamics_need_no_gain() {
    let a = Mat::zeros(3, 3);
    let g = deadbeat_gain(&a, &Mat::identity(3, 3), 1).unwrap();
    assert_eq!(g, Mat::zeros(3, 3));
}

#[test]
fn multi_input_synthesis_is_rejected() {
    let i2 = Mat::identity(2, 2);
    assert!(matches!(
        deadbeat_gain(&a1(), &i2, 1),
        Err(ModelError::MultiInputUnsupported(2))
    ));
}

#[test]
fn kalman_fixed_point_by_resubstitution() {
    let i2 = Mat::identity(2, 2);
    for a in [a1(), a2(), a3()] {
        let (qw, qv) = (&i2 * 0.1, &i2 * 0.1);
        let k = steady_state_kalman(&a, &i2, &qw, &qv).unwrap();
        let again = resubstitute(&a, &i2, &qw, &qv, &k.ps_hat);
        assert!((again - &k.ps_hat).norm() <= 1e-10);
        assert_eq!(k.z, (Mat::identity(2, 2) - &k.khat) * &a);
    }
}

#[test]
fn noiseless_stable_plant_has_vanishing_filter() {
    let a = Mat::identity(2, 2) * 0.5;
    let i2 = Mat::identity(2, 2);
    let k = steady_state_kalman(&a, &i2, &(&i2 * 1e-14), &i2).unwrap();
    assert!(k.ps_hat.norm() < 1e-12);
    assert!(k.khat.norm() < 1e-12);
}

#[test]
fn spectral_radii() {
    assert_abs_diff_eq!(spectral_radius(&a1()), 1.2, epsilon = 1e-9);
    assert_abs_diff_eq!(spectral_radius(&a2()), 1.3, epsilon = 1e-9);
    assert_abs_diff_eq!(spectral_radius(&a3()), 1.4, epsilon = 1e-9);
    assert_abs_diff_eq!(spectral_radius(&Mat::identity(2, 2)), 1.0, epsilon = 1e-12);
    let rot = mat(&[&[0.0, -2.0], &[2.0, 0.0]]);
    assert_abs_diff_eq!(spectral_radius(&rot), 2.0, epsilon = 1e-9);
    for p in paper_plants().into_iter().chain([scalar_plant(), skewed_plant()]) {
        assert!(spectral_radius(&p.phi) < 1e-6);
    }
    // Eigenvalues of a rounded 3×3 nilpotent block scatter at ε^(1/3).
    let p = third_order_plant();
    assert!(spectral_radius(&p.phi) < 1e-4);
}

#[test]
fn plant_invariants_hold() {
    for p in paper_plants().into_iter().chain([scalar_plant(), third_order_plant(), skewed_plant()]) {
        assert!(p.phi.pow(p.v as u32).norm() <= 1e-8);
        let again = resubstitute(&p.a, &p.c, &p.qw, &p.qv, &p.ps_hat);
        assert!((again - &p.ps_hat).norm() <= 1e-10);
        assert!((&p.ps_hat - p.ps_hat.transpose()).norm() < 1e-12);
        assert!(p.ps_hat.clone().symmetric_eigenvalues().min() >= -1e-12);
        assert_eq!(p.z, p.i_minus_kc() * &p.a);
        assert_eq!(controllability_index(&p.a, &p.b, 10).unwrap(), p.v);
    }
}

#[test]
fn cost_weights_must_be_positive_definite() {
    let i2 = Mat::identity(2, 2);
    assert!(CostWeights::new(i2.clone(), Mat::identity(1, 1)).is_ok());
    assert!(CostWeights::new(Mat::zeros(2, 2), Mat::identity(1, 1)).is_err());
    assert!(CostWeights::new(i2, Mat::from_element(1, 1, -1.0)).is_err());
}

proptest! {
    #[test]
    fn random_single_input_plants_are_deadbeat(
        a in prop::array::uniform4(-2.0f64..2.0),
        b in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let a = mat(&[&[a[0], a[1]], &[a[2], a[3]]]);
        let b = mat(&[&[b[0]], &[b[1]]]);
        prop_assume!(a.determinant().abs() > 1e-3);
        let ctrb = Mat::from_columns(&[b.column(0).into_owned(), (&a * &b).column(0).into_owned()]);
        let svals = ctrb.singular_values();
        prop_assume!(svals.min() > 1e-3 * svals.max().max(1.0));
        let v = controllability_index(&a, &b, 5).unwrap();
        let g = deadbeat_gain(&a, &b, v).unwrap();
        let phi = &a + &b * g;
        prop_assert!(phi.pow(v as u32).norm() <= 1e-8 * (1.0 + a.norm().powi(2)));
        prop_assert_eq!(controllability_index(&a, &b, 5).unwrap(), v);
    }
}
