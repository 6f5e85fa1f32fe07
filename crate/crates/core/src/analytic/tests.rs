use super::*;
use crate::netmodel::RawCase;
use crate::swingsim::{coi_rhs, find_equilibrium};

fn nine_bus() -> (CoiModel, Equilibrium) {
    let case = RawCase::builtin("wscc9").unwrap();
    let (model, guess) = CoiModel::from_case(&case).unwrap();
    let eq = find_equilibrium(&model, &guess).unwrap();
    (model, eq)
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[test]
fn full_jacobian_rows_sum_to_zero() {
    let (model, _) = nine_bus();
    let j = pe_jacobian_full(&[0.3, -1.1, 0.7], &model.network);
    for r in 0..3 {
        assert!(j.row(r).sum().abs() < 1e-13);
    }
}

#[test]
fn coi_jacobian_matches_finite_differences() {
    let (model, eq) = nine_bus();
    let x0 = {
        let mut x = eq.state(&model);
        x[0] += 0.05;
        x[1] -= 0.03;
        x
    };
    let k = jacobian_coi(&model.expand(&x0[..2]), &model);
    let m = model.m_indep();
    let h = 1e-6;
    for j in 0..2 {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (coi_rhs(&xp, &model), coi_rhs(&xm, &model));
        for i in 0..2 {
            let fd = -(fp[2 + i] - fm[2 + i]) / (2.0 * h) * m[i];
            assert!((fd - k[(i, j)]).abs() <= 1e-6 * k.abs().max(), "({i},{j}) {fd} vs {}", k[(i, j)]);
        }
    }
}

#[test]
fn nine_bus_jacobian_frozen() {
    // Frozen from an independent evaluation of the shipped case.
    let (model, eq) = nine_bus();
    let k = jacobian_coi(&eq.delta, &model);
    let expected = DMatrix::from_row_slice(2, 2, &[8.0662, 1.2380, 2.8143, 5.0838]);
    assert!((&k - expected).amax() < 1e-4, "{k}");
}

#[test]
fn unit_state_matrix() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let one = DVector::from_element(2, 1.0);
    let a = state_matrix(&i2, &one, &one);
    let expected = DMatrix::from_row_slice(
        4,
        4,
        &[0., 0., 1., 0., 0., 0., 0., 1., -1., 0., -1., 0., 0., -1., 0., -1.],
    );
    assert_eq!(a.a, expected);
    assert_eq!(a.j_block(), -i2);
}

#[test]
fn nine_bus_state_matrix_is_hurwitz_with_exact_blocks() {
    let (model, eq) = nine_bus();
    let (_, a, _) = linearize(&model, &eq);
    assert!(a.max_real_eigenvalue() < 0.0);
    let n = a.n_indep();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(a.a[(i, j)], 0.0);
            assert_eq!(a.a[(i, n + j)], if i == j { 1.0 } else { 0.0 });
        }
        assert_eq!(a.a[(n + i, n + i)], -model.d[i] / model.m[i]);
    }
}

#[test]
fn state_matrix_relabeling() {
    let k = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 0.8, 3.0, 0.2, 0.1, 0.9, 5.0]);
    let m = dv(&[1.0, 2.0, 3.0]);
    let d = dv(&[0.4, 0.5, 0.6]);
    let p = [2usize, 0, 1];
    let kp = DMatrix::from_fn(3, 3, |i, j| k[(p[i], p[j])]);
    let mp = DVector::from_fn(3, |i, _| m[p[i]]);
    let dp = DVector::from_fn(3, |i, _| d[p[i]]);
    let a = state_matrix(&k, &m, &d).a;
    let ap = state_matrix(&kp, &mp, &dp).a;
    let full = |i: usize| if i < 3 { p[i] } else { 3 + p[i - 3] };
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(ap[(i, j)], a[(full(i), full(j))]);
        }
    }
}

#[test]
fn input_matrix_entries() {
    let b = input_matrix(&dv(&[1.0, 1.0]), &dv(&[1.0, 1.0])).b;
    assert_eq!(b.rows(2, 2).into_owned(), DMatrix::identity(2, 2));
    assert_eq!(b.rows(0, 2).into_owned(), DMatrix::zeros(2, 2));
    let b = input_matrix(&dv(&[2.0]), &dv(&[0.01])).b;
    assert!((b[(1, 0)] - 0.005).abs() < 1e-18);
}

#[test]
fn lyapunov_scalar_balance() {
    let a = -DMatrix::<f64>::identity(2, 2);
    let c = solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap();
    assert!((c - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
    let c0 = solve_lyapunov(&a, &DMatrix::zeros(2, 2)).unwrap();
    assert_eq!(c0, DMatrix::zeros(2, 2));
}

#[test]
fn lyapunov_rejects_unstable() {
    let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]);
    assert!(matches!(solve_lyapunov(&a, &DMatrix::identity(2, 2)), Err(Error::NotHurwitz { .. })));
}

#[test]
fn nine_bus_lyapunov_solution() {
    let (model, eq) = nine_bus();
    let (_, a, b) = linearize(&model, &eq);
    let c = solve_lyapunov(&a.a, &b.b).unwrap();
    let q = &b.b * b.b.transpose();
    assert!(lyapunov_residual(&a.a, &b.b, &c) <= 1e-10 * q.norm());
    assert_eq!(c, c.transpose());
    let ev = c.clone().symmetric_eigenvalues();
    assert!(ev.min() > -1e-15);
    // Same orders of magnitude as the sampled covariances of the 300 s run.
    for i in 0..2 {
        assert!((1e-6..1e-4).contains(&c[(i, i)]), "C_dd {}", c[(i, i)]);
        assert!((1e-5..1e-3).contains(&c[(2 + i, 2 + i)]), "C_ww {}", c[(2 + i, 2 + i)]);
    }
}

#[test]
fn scalar_closed_form() {
    let one = dv(&[1.0]);
    let k = DMatrix::from_element(1, 1, 3.0);
    let p = predicted_covariances(&k, &one, &one, &one).unwrap();
    assert_eq!(p.c_ww[(0, 0)], 0.5);
    let a = state_matrix(&k, &one, &one).a;
    let b = input_matrix(&one, &one).b;
    let c = solve_lyapunov(&a, &b).unwrap();
    assert!((c[(0, 0)] - p.c_dd[(0, 0)]).abs() < 1e-14);
    assert!(c[(0, 1)].abs() < 1e-14);
    assert!((c[(1, 1)] - p.c_ww[(0, 0)]).abs() < 1e-14);
}

#[test]
fn closed_form_bias_on_nine_bus_is_small() {
    let (model, eq) = nine_bus();
    let (_, a, b) = linearize(&model, &eq);
    let c = solve_lyapunov(&a.a, &b.b).unwrap();
    let p = theoretical_covariances(&model, &eq).unwrap();
    let c_ww = c.view((2, 2), (2, 2)).into_owned();
    // Frozen: the diagonal formula ignores inter-machine coupling.
    let bias = (&p.c_ww - &c_ww).norm() / c_ww.norm();
    assert!((bias - 0.0562).abs() < 1e-3, "{bias}");
    assert!(predicted_covariances(&DMatrix::identity(1, 1), &dv(&[1.0]), &dv(&[0.0]), &dv(&[1.0])).is_err());
}
