use super::*;
use crate::analytic::{linearize, state_matrix};
use crate::netmodel::{RawCase, ReducedNetwork};
use crate::swingsim::{find_equilibrium, Equilibrium};

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn check_pairs(a: &DMatrix<f64>, md: &ModalDecomposition) {
    assert!(md.residual(a) <= 1e-8, "right residual {}", md.residual(a));
    assert!(md.left_residual(a) <= 1e-8, "left residual {}", md.left_residual(a));
    let (off, diag) = md.biorthogonality_error();
    assert!(off <= 1e-8 && diag <= 1e-8, "{off} {diag}");
}

#[test]
fn diagonal_matrix() {
    let a = DMatrix::from_diagonal(&dv(&[-2.0, -1.0]));
    let md = eigen_decompose(&a).unwrap();
    assert_eq!(md.eigenvalues, vec![Complex64::new(-1.0, 0.0), Complex64::new(-2.0, 0.0)]);
    assert_eq!(md.right[(1, 0)], Complex64::new(1.0, 0.0));
    assert_eq!(md.right[(0, 0)], Complex64::new(0.0, 0.0));
    assert_eq!(critical_eigenvalue(&md), (0, Complex64::new(-1.0, 0.0)));
    let pf = participation_factors(&md);
    assert_eq!(pf, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    let rows = mode_table(&md);
    assert!(rows.iter().all(|r| r.frequency_hz == 0.0));
}

#[test]
fn constructed_spectrum_recovered() {
    // V·Λ·V⁻¹ with Λ in real block form: pairs −0.3 ± 2i, −1 ± 0.5i and reals −0.05, −4.
    let lam = DMatrix::from_row_slice(
        6,
        6,
        &[
            -0.3, 2.0, 0.0, 0.0, 0.0, 0.0, //
            -2.0, -0.3, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, -1.0, 0.5, 0.0, 0.0, //
            0.0, 0.0, -0.5, -1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, -0.05, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, -4.0,
        ],
    );
    let v = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0 + if i == j { 3.0 } else { 0.0 });
    let a = &v * lam * v.clone().try_inverse().unwrap();
    let md = eigen_decompose(&a).unwrap();
    let mut expected = [
        Complex64::new(-0.05, 0.0),
        Complex64::new(-0.3, 2.0),
        Complex64::new(-0.3, -2.0),
        Complex64::new(-1.0, 0.5),
        Complex64::new(-1.0, -0.5),
        Complex64::new(-4.0, 0.0),
    ];
    expected.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    for (got, want) in md.eigenvalues.iter().zip(&expected) {
        assert!((got - want).norm() < 1e-8, "{got} vs {want}");
    }
    check_pairs(&a, &md);
    assert_eq!(md.conjugate, vec![false, false, true, false, true, false]);
    assert_eq!(mode_table(&md).len(), 4);
}

#[test]
fn oscillatory_block_table() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.588, 9.076, -9.076, -0.588]);
    let md = eigen_decompose(&a).unwrap();
    let rows = mode_table(&md);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].frequency_hz - 1.445).abs() < 1e-3);
    assert!((rows[0].re + 0.588).abs() < 1e-12);
    assert!((rows[0].im - 9.076).abs() < 1e-12);
    let (k, l) = least_damped_pair(&md, 0.5).unwrap();
    assert_eq!(k, 0);
    assert!(l.im > 0.0);
    assert!(least_damped_pair(&md, 2.0).is_none());
}

#[test]
fn critical_tie_prefers_oscillation() {
    let a = DMatrix::from_row_slice(3, 3, &[-0.5, 0.0, 0.0, 0.0, -0.5, 3.0, 0.0, -3.0, -0.5]);
    let md = eigen_decompose(&a).unwrap();
    let (_, l) = critical_eigenvalue(&md);
    assert!((l.re + 0.5).abs() < 1e-12 && (l.im - 3.0).abs() < 1e-12, "{l}");
}

#[test]
fn participation_invariant_under_diagonal_scaling() {
    let a = DMatrix::from_row_slice(4, 4, &[0., 0., 1., 0., 0., 0., 0., 1., -8., -1.2, -1., 0., -3., -5., 0., -1.]);
    let s = DMatrix::from_diagonal(&dv(&[2.0, 0.1, 7.0, 0.5]));
    let s_inv = s.clone().try_inverse().unwrap();
    let p1 = participation_factors(&eigen_decompose(&a).unwrap());
    let p2 = participation_factors(&eigen_decompose(&(&s * &a * s_inv)).unwrap());
    assert!((p1.clone() - p2).amax() < 1e-10);
    for c in p1.column_iter() {
        assert!((c.sum() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn negative_stiffness_detected() {
    let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -0.1]);
    let one = dv(&[1.0, 1.0]);
    let a = state_matrix(&k, &one, &one).a;
    let (_, l) = critical_eigenvalue(&eigen_decompose(&a).unwrap());
    assert!(l.re >= 0.0);
}

#[test]
fn defective_matrix_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
    assert!(matches!(eigen_decompose(&a), Err(Error::Eigen(_))));
    assert!(eigen_decompose(&DMatrix::zeros(2, 3)).is_err());
}

fn heavy_reference_model() -> CoiModel {
    let net = ReducedNetwork::new(
        DMatrix::zeros(3, 3),
        DMatrix::from_row_slice(3, 3, &[-3.0, 1.0, 2.0, 1.0, -3.0, 2.0, 2.0, 2.0, -4.0]),
        DVector::from_element(3, 1.0),
    )
    .unwrap();
    CoiModel::new(net, dv(&[1.0, 1.0, 100.0]), dv(&[1.0, 1.0, 1.0]), dv(&[0.1, 0.2, -0.3]), dv(&[0.0; 3])).unwrap()
}

#[test]
fn ranking_of_unit_mode_and_sign_flip() {
    let model = heavy_reference_model();
    let a = DMatrix::from_diagonal(&dv(&[-0.01, -1.0, -2.0, -3.0]));
    let md = eigen_decompose(&a).unwrap();
    let (k, _) = critical_eigenvalue(&md);
    let ranking = unstable_machine_ranking(&md, k, &model);
    assert_eq!(ranking[0].machine, 1);
    assert_eq!(ranking[0].value, 1.0);
    assert_eq!(ranking.len(), 3);
    let mut flipped = md.clone();
    flipped.right = -flipped.right;
    assert_eq!(unstable_machine_ranking(&flipped, k, &model), ranking);
}

#[test]
fn normal_vector_properties() {
    let model = heavy_reference_model();
    let a = DMatrix::from_row_slice(4, 4, &[0., 0., 1., 0., 0., 0., 0., 1., -0.02, -0.3, -1., 0., -0.1, -3., 0., -1.]);
    let md = eigen_decompose(&a).unwrap();
    let (k, l) = critical_eigenvalue(&md);
    assert_eq!(l.im, 0.0);
    let n = normal_vector(&model, &md, k).unwrap();
    assert!((n.norm() - 1.0).abs() < 1e-14);
    let mut scaled = md.clone();
    scaled.left.column_mut(k).scale_mut(-2.5);
    assert!((normal_vector(&model, &scaled, k).unwrap() - &n).amax() < 1e-14);

    let osc = eigen_decompose(&DMatrix::from_row_slice(2, 2, &[-0.1, 2.0, -2.0, -0.1])).unwrap();
    assert!(matches!(normal_vector(&model, &osc, 0), Err(Error::ComplexCritical { .. })));
}

#[test]
fn normal_vector_single_machine() {
    let net = ReducedNetwork::new(DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]), dv(&[1.0, 1.0]))
        .unwrap();
    let model = CoiModel::new(net, dv(&[1.0, 1.0]), dv(&[1.0, 1.0]), dv(&[0.2, -0.2]), dv(&[0.0, 0.0])).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, -1.0]);
    let md = eigen_decompose(&a).unwrap();
    let (k, _) = critical_eigenvalue(&md);
    let n = normal_vector(&model, &md, k).unwrap();
    assert_eq!(n.len(), 1);
    assert_eq!(n[0], 1.0);
}

#[test]
fn unit_redispatch() {
    let n = dv(&[1.0, 0.0]);
    let plan = redispatch_plan(&n, &[1, 2], &[1, 2, 3], 1.0, Some(2)).unwrap();
    assert_eq!(plan.delta_pm, vec![(1, -1.0), (2, 1.0), (3, 0.0)]);
    assert_eq!(plan.total(), 0.0);
    assert_eq!(plan.slack_pickup, 1.0);
    let auto = redispatch_plan(&dv(&[0.9, -0.05, 0.4]), &[1, 2, 3], &[1, 2, 3, 4], 2.0, None).unwrap();
    assert_eq!(auto.slack, 2);
    assert!(auto.total().abs() < 1e-15);
    assert!(redispatch_plan(&n, &[1, 2], &[1, 2], 1.0, Some(9)).is_err());
    assert!(redispatch_plan(&n, &[1], &[1, 2], 1.0, None).is_err());
}

#[test]
fn published_slack_pickup() {
    // Normal-vector entries as published for the near-fold 39-bus case.
    let n = dv(&[0.9995, -0.0080, -0.0087, -0.0063, 0.0104, -0.0019, -0.0012, 0.0013, -0.0085]);
    let plan = redispatch_plan(&n, &[1, 2, 3, 4, 5, 6, 7, 8, 9], &(1..=10).collect::<Vec<_>>(), 1.0, Some(9)).unwrap();
    assert!((plan.total()).abs() < 1e-12);
    assert!((plan.slack_pickup - n.sum()).abs() < 1e-15);
}

fn nine_bus() -> (CoiModel, Equilibrium) {
    let case = RawCase::builtin("wscc9").unwrap();
    let (model, guess) = CoiModel::from_case(&case).unwrap();
    let eq = find_equilibrium(&model, &guess).unwrap();
    (model, eq)
}

#[test]
fn nine_bus_modes() {
    let (model, eq) = nine_bus();
    let (_, a, _) = linearize(&model, &eq);
    let md = eigen_decompose(&a.a).unwrap();
    check_pairs(&a.a, &md);
    let rows = mode_table(&md);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| (r.re + 0.5).abs() < 1e-9));
    assert!((rows[0].im - 4.219).abs() < 1e-3 || (rows[1].im - 4.219).abs() < 1e-3);
}

/// Push the independent injections outward along `dir` until the stable
/// equilibrium is lost; return the last stable point.
fn fold_point(model: &CoiModel, eq: &Equilibrium, dir: (f64, f64)) -> (CoiModel, Equilibrium) {
    let with = |s: f64| {
        let mut m = model.clone();
        m.pm[0] += s * dir.0;
        m.pm[1] += s * dir.1;
        m
    };
    let solve = |s: f64, from: &Equilibrium| find_equilibrium(&with(s), &from.delta).ok().filter(|e| e.stable);
    let (mut lo, mut hi) = (0.0, 0.0);
    let mut last = eq.clone();
    loop {
        hi += 0.25;
        match solve(hi, &last) {
            Some(e) => {
                lo = hi;
                last = e;
            }
            None => break,
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        match solve(mid, &last) {
            Some(e) => {
                lo = mid;
                last = e;
            }
            None => hi = mid,
        }
    }
    (with(lo), last)
}

#[test]
fn normal_vector_is_orthogonal_to_traced_fold() {
    let (model, eq) = nine_bus();
    let theta: f64 = 0.6;
    let dt = 0.01;
    let pt = |t: f64| {
        let (m, e) = fold_point(&model, &eq, (t.cos(), t.sin()));
        (dv(&[m.pm[0], m.pm[1]]), m, e)
    };
    let (p0, m0, e0) = pt(theta);
    let (p1, ..) = pt(theta - dt);
    let (p2, ..) = pt(theta + dt);
    let tangent = (&p2 - &p1).normalize();
    let (_, a, _) = linearize(&m0, &e0);
    let md = eigen_decompose(&a.a).unwrap();
    let (k, l) = critical_eigenvalue(&md);
    assert!(l.re.abs() < 1e-3 && l.im == 0.0, "{l}");
    let n = normal_vector(&m0, &md, k).unwrap();
    assert!(n.dot(&tangent).abs() < 1e-2, "n = {n}, t = {tangent}, p = {p0}");
}
