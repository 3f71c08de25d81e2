use proptest::prelude::*;
use tclsim_core::gellmann::{characteristic_fn, eigenvalues_mu, expand_unitary, CoeffVector, GellMannBasis};
use tclsim_core::linalg::{self, CMat, C64, I};

fn trace_k(basis: &GellMannBasis, r: &[f64]) -> C64 {
    // independent of the eigenvalue path: Tr exp(−iΛ·r) by Taylor series
    linalg::trace(&linalg::expm(&(basis.compose(r) * (-I))))
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n * n - 1)
}

#[test]
fn generators_are_orthonormal_traceless_hermitian() {
    for n in 2..=4 {
        let b = GellMannBasis::new(n).unwrap();
        assert_eq!(b.len(), n * n - 1);
        assert_eq!(b.off_diagonal_len(), n * (n - 1));
        for j in 0..b.len() {
            let lj = b.matrix(j);
            assert!(linalg::hermiticity_defect(lj) == 0.0);
            assert!(linalg::trace(lj).norm() < 1e-15);
            for k in 0..b.len() {
                let t = linalg::trace(&(lj * b.matrix(k)));
                let want = if j == k { 2.0 } else { 0.0 };
                assert!((t - C64::new(want, 0.0)).norm() < 1e-14, "n={n} j={j} k={k}");
            }
        }
    }
}

#[test]
fn qutrit_diagonal_generators() {
    let b = GellMannBasis::new(3).unwrap();
    let s3 = 3f64.sqrt();
    let l7 = [1.0, -1.0, 0.0];
    let l8 = [1.0 / s3, 1.0 / s3, -2.0 / s3];
    for a in 0..3 {
        assert!((b.diagonal_value(0, a) - l7[a]).abs() < 1e-15);
        assert!((b.diagonal_value(1, a) - l8[a]).abs() < 1e-15);
        assert!((b.matrix(6)[(a, a)].re - l7[a]).abs() < 1e-15);
        assert!((b.matrix(7)[(a, a)].re - l8[a]).abs() < 1e-15);
    }
}

#[test]
fn decompose_rejects_non_hermitian_and_traced() {
    let b = GellMannBasis::new(2).unwrap();
    let mut h = linalg::zeros(2);
    h[(0, 1)] = C64::new(1.0, 0.0);
    assert!(b.decompose(&h).is_err());
    assert!(b.decompose(&linalg::identity(2)).is_err());
}

proptest! {
    #[test]
    fn decompose_inverts_compose(n in 2usize..=4, seed in prop::collection::vec(-2.0f64..2.0, 15)) {
        let b = GellMannBasis::new(n).unwrap();
        let r = &seed[..b.len()];
        let back = b.decompose(&b.compose(r)).unwrap();
        for (x, y) in back.0.iter().zip(r) {
            prop_assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn expansion_matches_matrix_exponential_qubit(r in coeffs(2)) {
        check_expansion(2, &r)?;
    }

    #[test]
    fn expansion_matches_matrix_exponential_qutrit(r in coeffs(3)) {
        check_expansion(3, &r)?;
    }

    #[test]
    fn expansion_matches_matrix_exponential_ququart(r in coeffs(4)) {
        check_expansion(4, &r)?;
    }

    #[test]
    fn eigenvalues_sum_to_zero_and_match_dense(r in coeffs(3)) {
        let b = GellMannBasis::new(3).unwrap();
        let mu = eigenvalues_mu(&CoeffVector(r.clone()), &b);
        let (dense, _) = linalg::hermitian_eigen(&b.compose(&r));
        let mut dense = dense;
        dense.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(mu.iter().sum::<f64>().abs() < 1e-12);
        for (a, d) in mu.iter().zip(&dense) {
            prop_assert!((a - d).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences(n in 2usize..=3, seed in prop::collection::vec(-1.2f64..1.2, 8)) {
        let b = GellMannBasis::new(n).unwrap();
        let r = seed[..b.len()].to_vec();
        let cf = characteristic_fn(&CoeffVector(r.clone()), &b);
        let h = 1e-5;
        for k in 0..b.len() {
            let (mut p, mut m) = (r.clone(), r.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (trace_k(&b, &p) - trace_k(&b, &m)) / (2.0 * h);
            let scale = fd.norm().max(cf.gradient[k].norm()).max(1e-3);
            prop_assert!((fd - cf.gradient[k]).norm() / scale < 1e-6, "k={} fd={} an={}", k, fd, cf.gradient[k]);
        }
    }

    #[test]
    fn gradient_is_minus_i_trace_lambda_u(r in coeffs(3)) {
        let b = GellMannBasis::new(3).unwrap();
        let cf = characteristic_fn(&CoeffVector(r.clone()), &b);
        let u = linalg::expm(&(b.compose(&r) * (-I)));
        for k in 0..b.len() {
            let want = -I * linalg::trace(&(b.matrix(k) * &u));
            prop_assert!((want - cf.gradient[k]).norm() < 1e-10);
        }
    }
}

fn check_expansion(n: usize, r: &[f64]) -> Result<(), TestCaseError> {
    let b = GellMannBasis::new(n).unwrap();
    let u: CMat = expand_unitary(&CoeffVector(r.to_vec()), &b);
    let want = linalg::expm(&(b.compose(r) * (-I)));
    prop_assert!(linalg::max_abs(&(&u - &want)) < 1e-11);
    prop_assert!(linalg::unitarity_defect(&u) < 1e-11);
    let k = characteristic_fn(&CoeffVector(r.to_vec()), &b).value;
    prop_assert!((k - linalg::trace(&want)).norm() < 1e-11);
    Ok(())
}
