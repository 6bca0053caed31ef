use std::f64::consts::TAU;

use proptest::prelude::*;

use tdvarma::assumptions::{gaussian_kappa, xi};
use tdvarma::examples::{build, ExampleId};
use tdvarma::likelihood::objective_value;
use tdvarma::mc::{parse_summary_csv, summarize, summary_to_csv, ReplicationRecord};
use tdvarma::repr::{build_pi, build_psi, psi_coefficients, var1_a_power, varma11_pi_closed, varma11_psi_closed};
use tdvarma::simulate::{simulate, SimPlan};
use tdvarma::{Coef, Mat, MatrixTimeFunction, ParamLayout, Primitive, ScalarTimeFunction, TdVarmaModel};

const SLOTS: usize = 3;

fn coef() -> impl Strategy<Value = Coef> {
    prop_oneof![(0..SLOTS).prop_map(Coef::Param), (-1.0..1.0f64).prop_map(Coef::Fixed)]
}

fn primitive() -> impl Strategy<Value = Primitive> {
    prop_oneof![
        coef().prop_map(|value| Primitive::Constant { value }),
        (coef(), coef()).prop_map(|(intercept, slope)| Primitive::Linear { intercept, slope }),
        (coef(), 0.01..2.0f64, coef()).prop_map(|(amplitude, frequency, phase)| Primitive::Sine {
            amplitude,
            frequency,
            phase
        }),
        (coef(), 0.01..2.0f64).prop_map(|(rate, frequency)| Primitive::ExpSine { rate, frequency }),
    ]
}

fn scalar_fn() -> impl Strategy<Value = ScalarTimeFunction> {
    prop_oneof![
        primitive().prop_map(ScalarTimeFunction::Primitive),
        (primitive(), primitive()).prop_map(|(a, b)| ScalarTimeFunction::Sum(a, b)),
        (primitive(), primitive()).prop_map(|(a, b)| ScalarTimeFunction::Product(a, b)),
    ]
    .prop_filter("slot sharing rejected by validation", |f| f.validate().is_ok())
}

/// Linear primitives grow with `t`; keep their coefficients small so values stay O(1).
fn tame(f: ScalarTimeFunction) -> ScalarTimeFunction {
    let fix = |p: Primitive| match p {
        Primitive::Linear { intercept, slope: Coef::Fixed(s) } => Primitive::Linear { intercept, slope: Coef::Fixed(s * 1e-3) },
        other => other,
    };
    match f {
        ScalarTimeFunction::Primitive(a) => ScalarTimeFunction::Primitive(fix(a)),
        ScalarTimeFunction::Sum(a, b) => ScalarTimeFunction::Sum(fix(a), fix(b)),
        ScalarTimeFunction::Product(a, b) => ScalarTimeFunction::Product(fix(a), fix(b)),
    }
}

/// Sinusoidal VARMA(1,1) in `r = 2` with every amplitude a parameter: slots
/// 0..4 in `A`, 4..8 in `B`.
fn sine_varma(freqs: &[f64], phases: &[f64]) -> TdVarmaModel {
    let entry = |slot: usize| {
        ScalarTimeFunction::Primitive(Primitive::Sine {
            amplitude: Coef::Param(slot),
            frequency: freqs[slot],
            phase: Coef::Fixed(phases[slot]),
        })
    };
    let a = MatrixTimeFunction::new(2, (0..4).map(entry).collect()).unwrap();
    let b = MatrixTimeFunction::new(2, (4..8).map(entry).collect()).unwrap();
    let names = (0..8).map(|i| format!("p{i}")).collect();
    TdVarmaModel::new(
        vec![a],
        vec![b],
        MatrixTimeFunction::identity(2),
        Mat::identity(2, 2),
        ParamLayout::new(names, [4, 4, 0]).unwrap(),
    )
    .unwrap()
}

fn sine_varma_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.05..1.5f64, 8),
        prop::collection::vec(0.0..TAU, 8),
        prop::collection::vec(-0.6..0.6f64, 8),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn time_function_derivatives_match_differences(
        f in scalar_fn().prop_map(tame),
        theta in prop::collection::vec(-1.0..1.0f64, SLOTS),
        t in 1usize..=1000,
        idx in prop::collection::vec(0..SLOTS, 1..=3),
    ) {
        // Each order is differenced from the analytic order below it.
        let k = idx.len();
        let h = [1e-5, 1e-4, 1e-3][k - 1];
        let (head, last) = (&idx[..k - 1], idx[k - 1]);
        let analytic = f.eval_deriv(t, &theta, &idx).unwrap();
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[last] += h;
        dn[last] -= h;
        let fu = f.eval_deriv(t, &up, head).unwrap();
        let fd_ = f.eval_deriv(t, &dn, head).unwrap();
        let fd = (fu - fd_) / (2.0 * h);
        // Round-off floor of a central difference of values of size |fu|.
        let floor = 4.0 * f64::EPSILON * fu.abs().max(fd_.abs()) / h;
        if analytic.abs() > 1e-8 {
            prop_assert!(
                (analytic - fd).abs() <= 1e-5 * analytic.abs() + floor,
                "{f:?} idx {idx:?} t {t}: analytic {analytic}, fd {fd}"
            );
        } else {
            prop_assert!((analytic - fd).abs() <= 1e-8 + floor, "{f:?} idx {idx:?}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn mixed_derivatives_commute(
        f in scalar_fn(),
        theta in prop::collection::vec(-1.0..1.0f64, SLOTS),
        t in 1usize..=1000,
        i in 0..SLOTS,
        j in 0..SLOTS,
    ) {
        prop_assert_eq!(f.eval_deriv(t, &theta, &[i, j]).unwrap(), f.eval_deriv(t, &theta, &[j, i]).unwrap());
    }

    #[test]
    fn example2_covariance_is_symmetric_and_positive_definite(
        theta in (0.0..1.0f64, -1.0..0.0f64, -2.0..2.0f64, -2.0..2.0f64),
        t in 1usize..=400,
    ) {
        let m = build(ExampleId::Example2);
        let th = [theta.0, theta.1, theta.2, theta.3];
        let s = m.sigma_t(t, &th).unwrap();
        prop_assert!((&s - s.transpose()).amax() <= 1e-14);
        prop_assert!(s.clone().cholesky().is_some());
    }

    #[test]
    fn coefficient_blocks_are_independent(
        (freqs, phases, theta) in sine_varma_inputs(),
        t in 1usize..=200,
    ) {
        let m = sine_varma(&freqs, &phases);
        for i in 0..8 {
            let (ar, ma) = (&m.ar()[0], &m.ma()[0]);
            if i >= 4 {
                prop_assert_eq!(ar.eval_deriv(t, &theta, &[i]).unwrap().amax(), 0.0);
            } else {
                prop_assert_eq!(ma.eval_deriv(t, &theta, &[i]).unwrap().amax(), 0.0);
            }
            prop_assert_eq!(m.scale().eval_deriv(t, &theta, &[i]).unwrap().amax(), 0.0);
        }
    }

    #[test]
    fn pi_and_psi_are_dual((freqs, phases, theta) in sine_varma_inputs()) {
        let m = sine_varma(&freqs, &phases);
        let n = 40;
        let psi = build_psi(&m, &theta, &theta, n, 0).unwrap();
        for t in 2..=n {
            for k in 1..t {
                prop_assert!(psi.psi0(t, k).amax() <= 1e-10, "t {t} k {k}");
            }
        }
    }

    #[test]
    fn closed_forms_match_recursions((freqs, phases, theta) in sine_varma_inputs()) {
        let m = sine_varma(&freqs, &phases);
        let n = 40;
        let psi = psi_coefficients(&m, &theta, n).unwrap();
        let pi = build_pi(&m, &theta, n, 0).unwrap();
        for t in 2..=n {
            for k in 1..t {
                prop_assert!((psi.get(t, k) - varma11_psi_closed(&m, &theta, t, k).unwrap()).amax() <= 1e-12);
                prop_assert!((pi.pi(t, k) - varma11_pi_closed(&m, &theta, t, k).unwrap()).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn upper_triangular_var1_psi_is_a_product_of_coefficients((freqs, phases, theta) in sine_varma_inputs()) {
        let entry = |slot: usize| {
            ScalarTimeFunction::Primitive(Primitive::Sine {
                amplitude: Coef::Param(slot),
                frequency: freqs[slot],
                phase: Coef::Fixed(phases[slot]),
            })
        };
        let a = MatrixTimeFunction::new(2, vec![entry(0), entry(1), ScalarTimeFunction::zero(), entry(2)]).unwrap();
        let names = (0..3).map(|i| format!("p{i}")).collect();
        let m = TdVarmaModel::new(
            vec![a],
            vec![],
            MatrixTimeFunction::identity(2),
            Mat::identity(2, 2),
            ParamLayout::new(names, [3, 0, 0]).unwrap(),
        )
        .unwrap();
        let th = &theta[..3];
        let n = 30;
        let psi = psi_coefficients(&m, th, n).unwrap();
        for t in 1..=n {
            for k in 1..t {
                // ψ_tk = A_t ⋯ A_{t−k+1}
                prop_assert!((psi.get(t, k) - var1_a_power(&m, th, t + 1, k + 1).unwrap()).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn pi_derivatives_match_differences((freqs, phases, theta) in sine_varma_inputs()) {
        let m = sine_varma(&freqs, &phases);
        let n = 25;
        let h = 1e-5;
        let pi = build_pi(&m, &theta, n, 1).unwrap();
        for i in 0..8 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            let (pu, pd) = (build_pi(&m, &up, n, 0).unwrap(), build_pi(&m, &dn, n, 0).unwrap());
            for t in 2..=n {
                for k in 1..t {
                    let a = pi.pi_deriv(t, k, &[i]).unwrap();
                    let fd = (pu.pi(t, k) - pd.pi(t, k)) / (2.0 * h);
                    let scale = a.amax().max(1e-6);
                    prop_assert!((a - &fd).amax() <= 1e-5 * scale + 1e-10, "i {i} t {t} k {k}");
                }
            }
        }
    }

    #[test]
    fn objective_ignores_parameter_order(
        seed in any::<u64>(),
        jitter in prop::collection::vec(-0.1..0.1f64, 3),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let m = build(ExampleId::Example1Sim);
        let th0 = m.layout().theta0().unwrap().to_vec();
        let x = simulate(&SimPlan::at_truth(&m, 60, seed).unwrap()).unwrap();
        let th: Vec<f64> = th0.iter().zip(&jitter).map(|(a, b)| a + b).collect();
        let pm = m.with_permuted_params(&perm).unwrap();
        let mut pth = vec![0.0; 3];
        for (i, &p) in perm.iter().enumerate() {
            pth[p] = th[i];
        }
        prop_assert_eq!(objective_value(&m, &x, &th).unwrap(), objective_value(&pm, &x, &pth).unwrap());
    }

    #[test]
    fn simulation_is_causal(seed in any::<u64>(), n in 1usize..80) {
        let m = build(ExampleId::Example2);
        let short = simulate(&SimPlan::at_truth(&m, n, seed).unwrap()).unwrap();
        let long = simulate(&SimPlan::at_truth(&m, n + 10, seed).unwrap()).unwrap();
        prop_assert_eq!(short.values(), &long.values()[..n]);
    }

    #[test]
    fn gaussian_fourth_cumulant_identity(r in 1usize..=4, entries in prop::collection::vec(-2.0..2.0f64, 16)) {
        let l = Mat::from_fn(r, r, |i, j| entries[i * 4 + j]);
        let sigma = &l * l.transpose() + Mat::identity(r, r) * 0.1;
        let x = xi(&gaussian_kappa(&sigma), &sigma);
        prop_assert!(x.amax() <= 1e-12 * sigma.amax().powi(2).max(1.0));
    }

    #[test]
    fn summary_csv_round_trips(
        values in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 2), 1..20),
        se in prop::collection::vec(1e-9..10.0f64, 2),
    ) {
        let params = vec!["a".to_string(), "b".to_string()];
        let records: Vec<ReplicationRecord> = values
            .iter()
            .enumerate()
            .map(|(rep, v)| ReplicationRecord {
                n: 30,
                rep,
                estimate: v.clone(),
                se: Some(se.clone()),
                converged: true,
                reject: Some(vec![rep % 3 == 0, false]),
                error: None,
            })
            .collect();
        let s = summarize(params, &[30], &records);
        let parsed = parse_summary_csv(&summary_to_csv(&s).unwrap()).unwrap();
        prop_assert_eq!(parsed.len(), s.cells.len());
        for (a, b) in parsed.iter().zip(&s.cells) {
            prop_assert_eq!(a.n, b.n);
            prop_assert_eq!(&a.param, &b.param);
            prop_assert_eq!(a.line, b.line);
            prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }
}
