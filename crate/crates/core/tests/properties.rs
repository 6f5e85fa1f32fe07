//! Property suites; each runs standalone with `cargo test --test properties`.

use gridjac_core::analytic::{input_matrix, pe_jacobian_full, solve_lyapunov, state_matrix};
use gridjac_core::estimator::{
    batch_covariance, estimate_damping, estimate_jacobian, CovarianceBlocks, SlidingCovariance,
};
use gridjac_core::modal::{eigen_decompose, participation_factors};
use gridjac_core::netmodel::{kron_reduce, ReducedNetwork};
use gridjac_core::prony::{prony_fit, reconstruct, relative_rms, PronyConfig};
use gridjac_core::swingsim::{electrical_power, find_equilibrium, recover_dependent, simulate, NormalStream};
use gridjac_core::{CoiModel, Complex64, ContingencySchedule, DMatrix, DVector, RawCase, SimConfig};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn matrix(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn positive(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
}

/// Diagonally dominant `K`, hence invertible. Not necessarily stable.
fn stiffness(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, -1.0, 1.0).prop_map(move |mut k| {
        for i in 0..n {
            let row: f64 = k.row(i).iter().map(|v| v.abs()).sum();
            k[(i, i)] = row + 1.0;
        }
        k
    })
}

/// Symmetric positive definite matrix scaled by `s`.
fn spd(n: usize, s: f64) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, -1.0, 1.0).prop_map(move |a| (&a * a.transpose() + DMatrix::identity(n, n) * 0.5) * s)
}

/// Connected lossy network: series admittances on a ring plus random chords,
/// shunts at every node.
fn admittance(n: usize) -> impl Strategy<Value = DMatrix<Complex64>> {
    (prop::collection::vec((0.1..2.0f64, -20.0..-1.0f64), n * n), prop::collection::vec(0.01..0.5f64, n)).prop_map(
        move |(series, shunt)| {
            let mut y = DMatrix::<Complex64>::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    if j == i + 1 || (i * 7 + j * 3) % 4 == 0 {
                        let (g, b) = series[i * n + j];
                        let ys = Complex64::new(g, b);
                        y[(i, i)] += ys;
                        y[(j, j)] += ys;
                        y[(i, j)] -= ys;
                        y[(j, i)] -= ys;
                    }
                }
                y[(i, i)] += Complex64::new(shunt[i], shunt[i]);
            }
            y
        },
    )
}

fn complex_vec(n: usize) -> impl Strategy<Value = DVector<Complex64>> {
    prop::collection::vec((-1.5..1.5f64, -1.5..1.5f64), n)
        .prop_map(|v| DVector::from_iterator(v.len(), v.into_iter().map(|(a, b)| Complex64::new(a, b))))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn kron_reduction_preserves_terminal_currents(y in admittance(7), v_keep in complex_vec(3)) {
        let keep = [0usize, 3, 5];
        let elim = [1usize, 2, 4, 6];
        let y_red = kron_reduce(&y, &keep).unwrap();
        // Voltages at eliminated nodes follow from zero injection there.
        let y_ee = y.select_rows(&elim).select_columns(&elim);
        let y_ek = y.select_rows(&elim).select_columns(&keep);
        let v_elim = -y_ee.lu().solve(&(y_ek * &v_keep)).unwrap();
        let mut v = DVector::<Complex64>::zeros(7);
        for (i, &k) in keep.iter().enumerate() { v[k] = v_keep[i]; }
        for (i, &k) in elim.iter().enumerate() { v[k] = v_elim[i]; }
        let i_full = &y * v;
        let i_red = y_red * &v_keep;
        let scale = i_full.iter().map(|c| c.norm()).fold(1.0, f64::max);
        for (i, &k) in keep.iter().enumerate() {
            prop_assert!((i_full[k] - i_red[i]).norm() <= 1e-10 * scale);
        }
        for &k in &elim {
            prop_assert!(i_full[k].norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn pe_jacobian_matches_finite_differences(
        g in spd(4, 0.1), b in matrix(4, 1.0, 10.0), e in positive(4, 0.9, 1.2),
        delta in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let b = (&b + b.transpose()) * 0.5;
        let net = ReducedNetwork::new(g, b, e).unwrap();
        let j = pe_jacobian_full(&delta, &net);
        let h = 1e-6;
        for c in 0..4 {
            let mut dp = delta.clone();
            let mut dm = delta.clone();
            dp[c] += h;
            dm[c] -= h;
            let fd = (electrical_power(&dp, &net) - electrical_power(&dm, &net)) / (2.0 * h);
            for r in 0..4 {
                prop_assert!((fd[r] - j[(r, c)]).abs() <= 1e-6 * j.amax(), "({r},{c})");
            }
        }
    }

    #[test]
    fn jacobian_estimator_round_trip(k in stiffness(4), m in positive(4, 0.1, 3.0), c_ww in spd(4, 1e-3)) {
        let c_dd = k.clone().try_inverse().unwrap() * DMatrix::from_diagonal(&m) * &c_ww;
        let cov = CovarianceBlocks { c_dd, c_dw: DMatrix::zeros(4, 4), c_ww, window: (0.0, 1.0), samples: 10 };
        let est = estimate_jacobian(&m, &cov).unwrap();
        prop_assert!((&est.k - &k).norm() / k.norm() <= 1e-12);
    }

    #[test]
    fn damping_estimator_round_trip(m in positive(5, 0.1, 3.0), d in positive(5, 0.1, 30.0), s in positive(5, 0.001, 0.1)) {
        let c_ww = DMatrix::from_diagonal(&DVector::from_fn(5, |i, _| 0.5 * s[i] * s[i] / (m[i] * d[i])));
        let est = estimate_damping(&m, &s, &c_ww).unwrap();
        prop_assert!(((&est.d - &d).component_div(&d)).amax() <= 1e-12);
    }

    #[test]
    fn eigenpairs_are_consistent(k in stiffness(4), m in positive(4, 0.1, 3.0), d in positive(4, 0.05, 3.0)) {
        let a = state_matrix(&k, &m, &d).a;
        let md = eigen_decompose(&a).unwrap();
        prop_assert!(md.residual(&a) <= 1e-8);
        prop_assert!(md.left_residual(&a) <= 1e-8);
        let (off, diag) = md.biorthogonality_error();
        prop_assert!(off <= 1e-8 && diag <= 1e-8);
        let pf = participation_factors(&md);
        for col in pf.column_iter() {
            prop_assert!((col.sum() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn prony_recovers_noise_free_modes(
        p in 1usize..=3,
        freqs in prop::collection::vec(0.2..0.6f64, 3),
        damps in prop::collection::vec(-1.0..-0.1f64, 3),
        amps in prop::collection::vec((0.5..2.0f64, -3.0..3.0f64), 3),
    ) {
        // Frequencies spaced at least 0.2 Hz apart.
        let lambdas: Vec<Complex64> = (0..p)
            .map(|i| Complex64::new(damps[i], std::f64::consts::TAU * (freqs[i] + 0.6 * i as f64)))
            .collect();
        let dt = 0.02;
        let x: Vec<f64> = (0..400)
            .map(|n| {
                let t = n as f64 * dt;
                lambdas.iter().zip(&amps).map(|(l, (a, ph))| 2.0 * a * (l.re * t).exp() * (l.im * t + ph).cos()).sum()
            })
            .collect();
        let fit = prony_fit(&x, dt, &PronyConfig::new(2 * p).with_mean_removal(false)).unwrap();
        for l in &lambdas {
            let best = fit.modes.iter().map(|m| (m.lambda - l).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(best <= 1e-6, "{l}: {best}");
        }
        prop_assert!(fit.rms_error <= 1e-8, "rms {}", fit.rms_error);
        for m in &fit.modes {
            let mirror = fit.modes.iter().map(|o| (o.lambda - m.lambda.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(mirror <= 1e-8 * m.lambda.norm().max(1.0));
        }
        let rebuilt = relative_rms(&x, &reconstruct(&fit, &fit.time_grid()));
        prop_assert!((rebuilt - fit.rms_error).abs() <= 1e-10);
    }

    #[test]
    fn prony_error_does_not_grow_with_order(seed in 0u64..1000, order in 4usize..14) {
        let mut rng = NormalStream::new(seed);
        let x: Vec<f64> = (0..300)
            .map(|n| {
                let t = n as f64 * 0.05;
                (-0.2 * t).exp() * (6.0 * t).cos() + 0.5 * (-0.5 * t).exp() * (13.0 * t + 1.0).cos() + 0.01 * rng.next()
            })
            .collect();
        let lo = prony_fit(&x, 0.05, &PronyConfig::new(order)).unwrap();
        let hi = prony_fit(&x, 0.05, &PronyConfig::new(order + 1)).unwrap();
        // Each order has its own pole set, so only near-monotonicity holds;
        // the worst ratio over this whole domain is 1.080.
        prop_assert!(hi.rms_error <= 1.1 * lo.rms_error + 1e-9, "{} -> {}", lo.rms_error, hi.rms_error);
    }

    #[test]
    fn streaming_equals_batch(data in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 40..200), cap in 5usize..60) {
        let mut s = SlidingCovariance::new(4, cap).unwrap();
        for (i, row) in data.iter().enumerate() {
            s.push(row).unwrap();
            let lo = (i + 1).saturating_sub(cap);
            if i - lo >= 1 {
                let batch = batch_covariance(data[lo..=i].iter().map(|r| r.as_slice())).unwrap();
                prop_assert!((s.covariance().unwrap() - batch).amax() <= 1e-10);
            }
        }
    }

    #[test]
    fn lyapunov_scales_with_noise_squared(k in spd(3, 1.0), m in positive(3, 0.2, 2.0), d in positive(3, 0.2, 2.0), alpha in 0.1..10.0f64) {
        let a = state_matrix(&k, &m, &d).a;
        let sigma = DVector::from_element(3, 0.01);
        let c1 = solve_lyapunov(&a, &input_matrix(&m, &sigma).b).unwrap();
        let c2 = solve_lyapunov(&a, &input_matrix(&m, &(sigma * alpha)).b).unwrap();
        prop_assert!((c2 - c1.clone() * (alpha * alpha)).amax() <= 1e-9 * c1.amax() * alpha * alpha);
    }

    #[test]
    fn electrical_power_is_permutation_equivariant(
        g in spd(4, 0.1), b in matrix(4, 1.0, 10.0), e in positive(4, 0.9, 1.2),
        delta in prop::collection::vec(-1.0..1.0f64, 4), perm in Just([2usize, 0, 3, 1]).prop_shuffle(),
    ) {
        let b = (&b + b.transpose()) * 0.5;
        let net = ReducedNetwork::new(g.clone(), b.clone(), e.clone()).unwrap();
        let p = perm;
        let net_p = ReducedNetwork::new(
            DMatrix::from_fn(4, 4, |i, j| g[(p[i], p[j])]),
            DMatrix::from_fn(4, 4, |i, j| b[(p[i], p[j])]),
            DVector::from_fn(4, |i, _| e[p[i]]),
        ).unwrap();
        let pe = electrical_power(&delta, &net);
        let delta_p: Vec<f64> = (0..4).map(|i| delta[p[i]]).collect();
        let pe_p = electrical_power(&delta_p, &net_p);
        for i in 0..4 {
            prop_assert!((pe_p[i] - pe[p[i]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn dependent_recovery_conserves_inertia(m in positive(5, 0.05, 5.0), d in prop::collection::vec(-1.0..1.0f64, 4), w in prop::collection::vec(-0.1..0.1f64, 4)) {
        let (dr, wr) = recover_dependent(&d, &w, &m, 4);
        let sd: f64 = d.iter().zip(m.iter()).map(|(a, b)| a * b).sum::<f64>() + dr * m[4];
        let sw: f64 = w.iter().zip(m.iter()).map(|(a, b)| a * b).sum::<f64>() + wr * m[4];
        prop_assert!(sd.abs() <= 1e-12 && sw.abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn simulation_is_seed_deterministic(seed in any::<u64>()) {
        let case = RawCase::builtin("wscc9").unwrap();
        let (model, guess) = CoiModel::from_case(&case).unwrap();
        let eq = find_equilibrium(&model, &guess).unwrap();
        let cfg = SimConfig { dt: 1e-3, t_end: 2.0, record_every: 10, seed };
        let run = || simulate(&model, &ContingencySchedule::empty(), &eq.state(&model), &cfg).unwrap().trajectory.to_csv_string().unwrap();
        prop_assert_eq!(run(), run());
    }
}
