//! Riccati ground truth and the exact SoS certificate of the LQR Hamiltonian.

mod common;

use nalgebra::{DMatrix, DVector};

use common::*;
use ksos_core::eval::{lqr_sos_residual, lqr_sos_residual_stationary};
use ksos_core::ocp::{algebraic_riccati_solve, riccati_backward_solve, LqrProblem};

/// Closed-form stabilizing ARE solution of the double integrator with
/// `Q = diag(q1, q2)` and scalar `R = r`.
fn double_integrator_are(q1: f64, q2: f64, r: f64) -> DMatrix<f64> {
    let s12 = (q1 * r).sqrt();
    let s22 = (r * (2.0 * s12 + q2)).sqrt();
    let s11 = s12 * s22 / r;
    DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22])
}

/// `Q + AᵀS + SA − S B R⁻¹ Bᵀ S`, written out for this test.
fn are_residual(lqr: &LqrProblem, s: &DMatrix<f64>) -> DMatrix<f64> {
    let r_inv = lqr.r().clone().try_inverse().unwrap();
    lqr.q() + lqr.a().transpose() * s + s * lqr.a() - s * lqr.b() * r_inv * lqr.b().transpose() * s
}

#[test]
fn are_matches_the_closed_form() {
    let lqr = LqrProblem::double_integrator();
    let s0 = algebraic_riccati_solve(&lqr).unwrap();
    assert!(are_residual(&lqr, &s0).norm() <= 1e-8);
    let exact = double_integrator_are(1.0, 1.0, 0.1);
    assert!((&s0 - &exact).amax() <= 1e-9, "{s0} vs {exact}");
    for (got, hand) in [(s0[(0, 0)], 1.27767), (s0[(0, 1)], 0.316228), (s0[(1, 1)], 0.404036)] {
        assert!((got - hand).abs() <= 1e-4);
    }
}

#[test]
fn backward_solve_is_stable_under_step_halving() {
    let lqr = LqrProblem::double_integrator();
    let coarse = riccati_backward_solve(&lqr, 1000).unwrap();
    let fine = riccati_backward_solve(&lqr, 2000).unwrap();
    assert!((coarse.s_at(0.0) - fine.s_at(0.0)).amax() <= 1e-6);
    assert_eq!(fine.s_at(1.0), *lqr.terminal_matrix());
    // On a long horizon S(0) approaches the stationary solution.
    let long = riccati_backward_solve(&lqr.with_horizon(30.0).unwrap(), 6000).unwrap();
    assert!((long.s_at(0.0) - double_integrator_are(1.0, 1.0, 0.1)).amax() <= 1e-6);
}

/// `∂_t V + L + ∇V·f` for `V = xᵀS(t)x`, with `Ṡ = −Q − AᵀS − SA + S B R⁻¹ Bᵀ S`
/// and the gain `K = R⁻¹BᵀS`, is `(u + Kx)ᵀR(u + Kx)`.
#[test]
fn hamiltonian_is_a_square_at_random_points() {
    let lqr = LqrProblem::double_integrator();
    let ric = riccati_backward_solve(&lqr, 2000).unwrap();
    let r_inv = lqr.r().clone().try_inverse().unwrap();
    let mut rng = rng(21);
    for _ in 0..1000 {
        let t = uniform(&mut rng, 0.0, 1.0);
        let x = DVector::from_vec(vec![uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)]);
        let u = DVector::from_element(1, uniform(&mut rng, -10.0, 10.0));
        let s = ric.s_at(t);
        let s_dot = -are_residual(&lqr, &s);
        let f = lqr.a() * &x + lqr.b() * &u;
        let h = x.dot(&(lqr.q() * &x)) + u.dot(&(lqr.r() * &u)) + x.dot(&(&s_dot * &x)) + 2.0 * (&s * &x).dot(&f);
        let v = &u + &r_inv * lqr.b().transpose() * &s * &x;
        let square = v.dot(&(lqr.r() * &v));
        assert!((h - square).abs() <= 1e-8, "t = {t}: {h} vs {square}");
        assert!(lqr_sos_residual(&ric, t, x.as_slice(), u.as_slice()).abs() <= 1e-8);
    }
}

#[test]
fn stationary_hamiltonian_is_a_square() {
    let lqr = LqrProblem::double_integrator();
    let s0 = algebraic_riccati_solve(&lqr).unwrap();
    let mut rng = rng(22);
    for _ in 0..1000 {
        let x = [uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)];
        let u = [uniform(&mut rng, -10.0, 10.0)];
        assert!(lqr_sos_residual_stationary(&lqr, &s0, &x, &u).unwrap().abs() <= 1e-10);
    }
    assert!(lqr_sos_residual_stationary(&lqr, &s0, &[0.0], &[0.0]).is_err());
}
