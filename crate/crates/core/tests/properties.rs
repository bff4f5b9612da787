use proptest::prelude::*;

use singlq::geometry::{reachable, vstar, Quadruple};
use singlq::matlib::{
    lyapunov_solve, orthonormal_image, pseudo_inverse, spectral_abscissa, subspace_intersection,
    subspace_sum, Matrix, Subspace, Tolerances,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

/// Product of two random factors, so the rank is at most `k`.
fn low_rank(rows: usize, cols: usize, k: usize) -> impl Strategy<Value = Matrix> {
    (matrix(rows, k), matrix(k, cols)).prop_map(|(l, r)| l * r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudo_inverse_penrose(m in low_rank(5, 4, 2)) {
        let tol = Tolerances::default();
        let p = pseudo_inverse(&m, &tol);
        let scale = 1.0 + m.norm() * p.norm();
        prop_assert!((&m * &p * &m - &m).norm() <= 1e-9 * scale * m.norm().max(1.0));
        prop_assert!((&p * &m * &p - &p).norm() <= 1e-9 * scale * p.norm().max(1.0));
        let mp = &m * &p;
        prop_assert!((&mp - mp.transpose()).norm() <= 1e-9 * scale);
        let pm = &p * &m;
        prop_assert!((&pm - pm.transpose()).norm() <= 1e-9 * scale);
    }

    #[test]
    fn sum_and_intersection_dimensions(a in matrix(6, 3), b in matrix(6, 2)) {
        let tol = Tolerances::default();
        let u = orthonormal_image(&a, &tol);
        let w = orthonormal_image(&b, &tol);
        let sum = subspace_sum(&u, &w, &tol).unwrap();
        let cap = subspace_intersection(&u, &w, &tol).unwrap();
        prop_assert_eq!(sum.dim() + cap.dim(), u.dim() + w.dim());
        prop_assert!(sum.contains(&u, 1e-9) && sum.contains(&w, 1e-9));
        prop_assert!(u.contains(&cap, 1e-9) && w.contains(&cap, 1e-9));
    }

    #[test]
    fn complement_is_orthogonal(a in low_rank(5, 5, 3)) {
        let tol = Tolerances::default();
        let u = orthonormal_image(&a, &tol);
        let c = u.complement();
        prop_assert_eq!(u.dim() + c.dim(), 5);
        prop_assert!((u.basis().transpose() * c.basis()).norm() < 1e-12);
        let full = subspace_sum(&u, &c, &tol).unwrap();
        prop_assert!(full.same_as(&Subspace::full(5), 1e-9));
    }

    #[test]
    fn lyapunov_residual(f in matrix(4, 4), g in matrix(4, 4)) {
        let shift = spectral_abscissa(&f).unwrap() + 0.5;
        let f = f - Matrix::identity(4, 4) * shift.max(0.0);
        let w = &g * g.transpose();
        let p = lyapunov_solve(&f, &w).unwrap();
        let res = f.transpose() * &p + &p * &f + &w;
        prop_assert!(res.norm() <= 1e-8 * (1.0 + w.norm() + f.norm() * p.norm()));
    }

    #[test]
    fn vstar_is_output_nulling(a in matrix(4, 4), b in matrix(4, 1), c in matrix(2, 4)) {
        let tol = Tolerances::default();
        let d = Matrix::zeros(2, 1);
        let q = Quadruple::new(a.clone(), b.clone(), c.clone(), d).unwrap();
        let v = vstar(&q, &tol).unwrap();
        // Every basis vector admits an input keeping it in V* with zero output.
        let ab = subspace_sum(&v, &orthonormal_image(&b, &tol), &tol).unwrap();
        prop_assert!(ab.residual_of(&(&a * v.basis())) < 1e-7 * (1.0 + a.norm()));
        prop_assert!((&c * v.basis()).norm() < 1e-7 * (1.0 + c.norm()));
    }

    #[test]
    fn reachable_is_invariant(a in matrix(5, 5), b in low_rank(5, 2, 1)) {
        let tol = Tolerances::default();
        let r = reachable(&a, &b, &tol).unwrap();
        prop_assert!(r.contains(&orthonormal_image(&b, &tol), 1e-8));
        prop_assert!(r.residual_of(&(&a * r.basis())) < 1e-7 * (1.0 + a.norm()));
    }
}
