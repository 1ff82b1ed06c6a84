mod common;

use aoii_core::ctmc::{make_binary, make_spread, make_symmetric, ChannelSpec, GeneratorMatrix};
use aoii_core::cycle::{eat_cycle, esat_cycle, ps_cycle, ThresholdVector};
use aoii_core::mrph::{mrph_absorption_probs, mrph_moments, MrphSpec};
use aoii_core::numerics::{expm, linear_solve, DenseMatrix};
use aoii_core::optimizer::{evaluate_policy, policy_iteration, steady_state, Family, Policy, SolverConfig};
use aoii_core::phase_type::{absorption_probs, AmcSpec};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn matrix(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |v| DenseMatrix::from_row_major(n, n, v).unwrap())
}

fn generator(max_n: usize) -> impl Strategy<Value = GeneratorMatrix> {
    (2..=max_n).prop_flat_map(|n| prop::collection::vec(0.05f64..3.0, n * n)).prop_map(|v| {
        let n = (v.len() as f64).sqrt().round() as usize;
        let mut q = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { v[i * n + j] });
        for i in 0..n {
            q[(i, i)] = -q.row(i).iter().sum::<f64>();
        }
        GeneratorMatrix::try_from(q).unwrap()
    })
}

fn seeded() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, rng_seed: RngSeed::Fixed(0x5eed), failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn exponential_inverse(n in 1usize..8, scale in 0.1f64..50.0, m in matrix(7, -1.0, 1.0)) {
        let a = DenseMatrix::from_fn(n, n, |i, j| m[(i, j)]);
        let norm = a.norm_1().max(1e-300);
        let a = a.scale(scale / norm);
        // e^A e^{-A} carries rounding of order ‖e^A‖‖e^{-A}‖, which is huge for indefinite A
        let (e, f) = (expm(&a).unwrap(), expm(&a.scale(-1.0)).unwrap());
        let err = e.matmul(&f).sub(&DenseMatrix::identity(n)).norm_frobenius();
        prop_assert!(err < 1e-10 * (e.norm_frobenius() * f.norm_frobenius()).max(1.0));
        let skew = DenseMatrix::from_fn(n, n, |i, j| m[(i, j)] - m[(j, i)]);
        let skew = skew.scale(scale / skew.norm_1().max(1e-300));
        let prod = expm(&skew).unwrap().matmul(&expm(&skew.scale(-1.0)).unwrap());
        prop_assert!(prod.sub(&DenseMatrix::identity(n)).norm_frobenius() < 1e-10);
    }

    #[test]
    fn transition_matrix_is_stochastic(g in generator(8), t in 0.0f64..20.0) {
        let p = expm(&g.matrix().scale(t)).unwrap();
        for i in 0..g.n() {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(p.row(i).iter().all(|&x| x >= -1e-12));
        }
    }

    #[test]
    fn solve_round_trip(n in 1usize..10, m in matrix(9, -1.0, 1.0), rhs in matrix(9, -5.0, 5.0)) {
        let a = DenseMatrix::from_fn(n, n, |i, j| m[(i, j)] + if i == j { 3.0 } else { 0.0 });
        let b = DenseMatrix::from_fn(n, 3, |i, j| rhs[(i, j)]);
        let x = linear_solve(&a, &b).unwrap();
        prop_assert!(a.matmul(&x).sub(&b).norm_inf() <= 1e-9 * b.norm_inf().max(1e-300));
    }

    #[test]
    fn constructors_validate(n in 2usize..30, s in 0.01f64..10.0, s2 in 0.01f64..10.0, w in 0.0f64..1.0) {
        let sym = make_symmetric(n, s).unwrap();
        prop_assert!(GeneratorMatrix::try_from(sym.matrix().clone()).is_ok());
        prop_assert!(make_binary(s, s2).is_ok());
        let spread = make_spread(n, s.min(s2), s.max(s2), w, 2.0 - w).unwrap();
        for i in 0..n {
            prop_assert!(spread.matrix().row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        for g in [sym, spread] {
            for r in g.jump_probs().row_sums() {
                prop_assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_type_absorption_is_complete(seed in seeded(), k in 1usize..6, l in 1usize..5) {
        let mut r = rng(seed);
        let (a, b) = random_pair(&mut r, k, l);
        let spec = AmcSpec::new(a, b, random_prob(&mut r, k)).unwrap();
        let p = absorption_probs(&spec).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn mrph_absorption_is_complete(seed in seeded(), k in 1usize..6, l in 1usize..5, m in 1usize..5) {
        let mut r = rng(seed);
        let spec = random_mrph(&mut r, k, l, m);
        let p = mrph_absorption_probs(&spec).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let (e1, e2) = mrph_moments(&spec).unwrap();
        prop_assert!(e1 > 0.0 && e2 >= e1 * e1);
    }

    #[test]
    fn mrph_moments_continuous_in_boundaries(seed in seeded(), k in 1usize..5, m in 2usize..5) {
        let mut r = rng(seed);
        let spec = random_mrph(&mut r, k, 2, m);
        let (e1, _) = mrph_moments(&spec).unwrap();
        let eps = 1e-6;
        for b in 1..m {
            let mut gamma = spec.gamma().to_vec();
            gamma[b] += eps;
            let moved = MrphSpec::new(gamma, spec.regimes().to_vec(), spec.beta1().to_vec()).unwrap();
            let (f1, _) = mrph_moments(&moved).unwrap();
            prop_assert!((f1 - e1).abs() / eps < 1e3, "boundary {b}: slope {}", (f1 - e1) / eps);
        }
    }

    #[test]
    fn cycle_invariants(g in generator(5), mu in 0.1f64..20.0, taus in prop::collection::vec(0.0f64..6.0, 5), gamma in 0.0f64..5.0) {
        let n = g.n();
        let ch = ChannelSpec::new(mu).unwrap();
        for j in 0..n {
            let row: Vec<f64> = taus[..n].to_vec();
            let all = [
                esat_cycle(&g, &ch, j, &ThresholdVector::new(j, row).unwrap()).unwrap(),
                eat_cycle(&g, &ch, j, taus[j]).unwrap(),
                ps_cycle(&g, &ch, gamma, j).unwrap(),
            ];
            for c in &all {
                prop_assert!((c.p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                prop_assert!(c.d >= 1.0 / g.sigma(j) * (1.0 - 1e-12));
                prop_assert!(c.a >= 0.0 && c.c >= 0.0);
            }
        }
    }

    #[test]
    fn eat_equals_esat_with_equal_thresholds(g in generator(5), mu in 0.1f64..20.0, tau in 0.0f64..8.0) {
        let ch = ChannelSpec::new(mu).unwrap();
        for j in 0..g.n() {
            let e = eat_cycle(&g, &ch, j, tau).unwrap();
            let s = esat_cycle(&g, &ch, j, &ThresholdVector::uniform(g.n(), j, tau).unwrap()).unwrap();
            prop_assert!((e.d - s.d).abs() <= 1e-10 * s.d.max(1.0));
            prop_assert!((e.a - s.a).abs() <= 1e-10 * s.a.max(1.0));
            prop_assert!((e.c - s.c).abs() <= 1e-10);
            for i in 0..g.n() {
                prop_assert!((e.p[i] - s.p[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eat_cycles_monotone_in_threshold(g in generator(5), mu in 0.1f64..20.0, t in 0.0f64..5.0, dt in 0.001f64..2.0) {
        let ch = ChannelSpec::new(mu).unwrap();
        for j in 0..g.n() {
            let lo = eat_cycle(&g, &ch, j, t).unwrap();
            let hi = eat_cycle(&g, &ch, j, t + dt).unwrap();
            prop_assert!(hi.d >= lo.d * (1.0 - 1e-12));
            prop_assert!(hi.a >= lo.a * (1.0 - 1e-12));
            prop_assert!(hi.c <= lo.c + 1e-12);
            // a single p_ji can rise with τ once N ≥ 3; only leaving j at all is monotone
            prop_assert!(hi.p[j] >= lo.p[j] - 1e-12);
            if g.n() == 2 {
                prop_assert!(hi.p[1 - j] <= lo.p[1 - j] + 1e-12);
            }
        }
    }

    #[test]
    fn stationary_distribution(n in 2usize..8, m in matrix(7, 0.01, 1.0)) {
        let p = DenseMatrix::from_fn(n, n, |i, j| m[(i, j)]);
        let p = DenseMatrix::from_fn(n, n, |i, j| p[(i, j)] / p.row(i).iter().sum::<f64>());
        let pi = steady_state(&p).unwrap();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(pi.iter().all(|&x| x >= 0.0));
        let back = p.left_mul(&pi);
        for i in 0..n {
            prop_assert!((back[i] - pi[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_invariants(g in generator(4), mu in 0.2f64..10.0, taus in prop::collection::vec(0.0f64..4.0, 4), gamma in 0.0f64..4.0) {
        let ch = ChannelSpec::new(mu).unwrap();
        let n = g.n();
        for pol in [Policy::Eat(taus[..n].to_vec()), Policy::St(taus[0]), Policy::Ps(gamma)] {
            let e = evaluate_policy(&g, &ch, &pol).unwrap();
            prop_assert!((e.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(e.maoii >= 0.0 && e.rate >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, rng_seed: RngSeed::Fixed(0x5eed), failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn policy_iteration_improves(g in generator(4), mu in 0.2f64..10.0, lambda in 0.0f64..20.0) {
        let ch = ChannelSpec::new(mu).unwrap();
        let (_, report) = policy_iteration(&g, &ch, lambda, Family::Eat, &SolverConfig::default()).unwrap();
        prop_assert!(report.eta_trace.iter().all(|x| x.is_finite()));
        prop_assert!(report.eta_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", report.eta_trace);
        prop_assert_eq!(*report.value_vector.last().unwrap(), 0.0);
    }
}
