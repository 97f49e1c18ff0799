mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use adfuse::aggregates::{AdSummary, Clause, ConstraintSet, SubgroupPredicate};
use adfuse::data::Dataset;
use adfuse::el::solve_eta;
use adfuse::error::Error;
use adfuse::estimators::{fit_cmle_fast, fit_cmle_full, fit_mle, FitOptions};
use adfuse::io::{emit_ad, parse_ad_str, Table};
use adfuse::model::{Family, OutcomeFamily};
use adfuse::shift::{ShiftMode, ShiftSpec};

const P: usize = 3;

fn columns() -> Vec<String> {
    ["a", "b", "c"].iter().map(|s| s.to_string()).collect()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(1.0 / 3.0)]
}

/// (lo, hi] with lo < hi, either end possibly unbounded.
fn interval() -> impl Strategy<Value = (f64, f64)> {
    (finite(), 1e-3f64..100.0, 0u8..4).prop_map(|(lo, w, open)| match open {
        1 => (f64::NEG_INFINITY, lo + w),
        2 => (lo, f64::INFINITY),
        _ => (lo, lo + w),
    })
}

fn targets() -> impl Strategy<Value = Vec<usize>> {
    proptest::sample::subsequence((0..P).collect::<Vec<_>>(), 1..=P)
}

fn clause() -> impl Strategy<Value = Clause> {
    prop_oneof![
        ((0..P), interval()).prop_map(|(covariate, (lo, hi))| Clause::Interval { covariate, lo, hi }),
        ((0..P), prop::collection::vec(finite(), 1..4)).prop_map(|(covariate, values)| Clause::Categories { covariate, values }),
    ]
}

fn variance(q: usize) -> impl Strategy<Value = Option<DMatrix<f64>>> {
    prop::option::of(prop::collection::vec(-2.0f64..2.0, q * q).prop_map(move |v| {
        let a = DMatrix::from_vec(q, q, v);
        &a * a.transpose() + DMatrix::identity(q, q)
    }))
}

fn summary() -> impl Strategy<Value = AdSummary> {
    let base = prop_oneof![
        finite().prop_map(|v| AdSummary::outcome_mean(v, 1)),
        targets().prop_flat_map(|t| {
            let q = t.len();
            (Just(t), prop::collection::vec(finite(), q)).prop_map(|(t, v)| AdSummary::covariate_mean(t, v, 1))
        }),
        (prop::collection::vec(clause(), 1..3), finite())
            .prop_map(|(clauses, v)| AdSummary::outcome_mean_given(SubgroupPredicate { clauses, outcome: None }, v, 1)),
        (interval(), targets()).prop_flat_map(|((lo, hi), t)| {
            let q = t.len();
            (Just((lo, hi, t)), prop::collection::vec(finite(), q))
                .prop_map(|((lo, hi, t), v)| AdSummary::covariate_mean_given_outcome(lo, hi, t, v, 1))
        }),
    ];
    (base, prop::option::of(1u64..10_000_000), prop::option::of("[a-z:_0-9]{1,12}")).prop_flat_map(|(s, n, label)| {
        let q = s.dim();
        (Just(AdSummary { n, label, ..s }), variance(q)).prop_map(|(s, variance)| AdSummary { variance, ..s })
    })
}

fn gaussian_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = common::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| common::normal(&mut rng)).collect()).collect();
    let y = rows.iter().map(|x| 0.3 + x.iter().sum::<f64>() * 0.5 + common::normal(&mut rng)).collect();
    Dataset::from_rows(y, &rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ad_documents_round_trip_exactly(s in prop::collection::vec(summary(), 0..6)) {
        let text = emit_ad(&s, &columns()).unwrap();
        prop_assert_eq!(parse_ad_str(&text, &columns()).unwrap(), s);
    }

    #[test]
    fn csv_ingestion_keeps_rows_and_locates_bad_cells(
        cells in prop::collection::vec(prop::collection::vec(finite(), P + 1), 1..40),
        pick in any::<prop::sample::Index>(),
        col in 0..=P,
    ) {
        let mut text = String::from("y,a,b,c\n");
        for row in &cells {
            text.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
            text.push('\n');
        }
        let table = Table::from_reader(text.as_bytes()).unwrap();
        prop_assert_eq!(table.n_rows(), cells.len());
        let data = table.dataset("y", &columns()).unwrap();
        prop_assert_eq!(data.n(), cells.len());
        for (i, row) in cells.iter().enumerate() {
            prop_assert_eq!(data.y[i], row[0]);
            prop_assert_eq!(data.row(i), &row[1..]);
        }

        let bad = pick.index(cells.len());
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut fields: Vec<String> = lines[bad + 1].split(',').map(str::to_string).collect();
        fields[col] = "n/a".into();
        lines[bad + 1] = fields.join(",");
        let table = Table::from_reader(lines.join("\n").as_bytes()).unwrap();
        let err = table.dataset("y", &columns()).unwrap_err();
        prop_assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        let coords = format!("row {}, column {}", bad + 1, col + 1);
        prop_assert!(msg.contains(&coords), "{}", msg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_constraints_reproduce_the_mle_bitwise(seed in 0u64..10_000, n in 20usize..80, p in 1usize..4, poisson in any::<bool>()) {
        let mut data = gaussian_data(seed, n, p);
        let family = if poisson {
            let mut rng = common::rng(seed ^ 1);
            data.y = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            OutcomeFamily::new(Family::PoissonLog)
        } else {
            OutcomeFamily::new(Family::Gaussian)
        };
        let mle = fit_mle(&family, &data).unwrap();
        let cs = ConstraintSet::empty(p);
        for fit in [fit_cmle_fast(&cs, &family, &data, &FitOptions::default()), fit_cmle_full(&cs, &family, &data, &FitOptions::default())] {
            let fit = fit.unwrap();
            prop_assert_eq!(&fit.beta_hat[..], mle.beta());
            prop_assert_eq!(fit.beta_covariance(), mle.covariance.clone());
            prop_assert_eq!(&fit.relative_efficiency, &vec![1.0; p + 1]);
        }
    }

    #[test]
    fn inactive_shift_settings_change_nothing(seed in 0u64..10_000, phi in -0.5f64..0.5, degree in 1usize..4) {
        let data = gaussian_data(seed, 120, 2);
        let family = OutcomeFamily::new(Family::Gaussian);
        let summaries = vec![AdSummary::outcome_mean(0.3 + phi, 500), AdSummary::covariate_mean(vec![0], vec![phi], 500)];
        let plain = ConstraintSet::new(summaries.clone(), ShiftSpec::none(), 2).unwrap();
        let noisy = ConstraintSet::new(summaries, ShiftSpec { mode: ShiftMode::None, h_x: vec![0, 1], degree }, 2).unwrap();
        let opts = FitOptions::default();
        let a = fit_cmle_fast(&plain, &family, &data, &opts).unwrap();
        let b = fit_cmle_fast(&noisy, &family, &data, &opts).unwrap();
        prop_assert_eq!(&a.beta_hat, &b.beta_hat);
        prop_assert_eq!(&a.covariance, &b.covariance);
        prop_assert!(a.theta_hat.is_empty());
        prop_assert!(a.relative_efficiency.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn duplicated_summaries_are_rejected(seed in 0u64..10_000, value in -0.5f64..0.5) {
        let data = gaussian_data(seed, 100, 2);
        let s = AdSummary::covariate_mean(vec![1], vec![value], 300);
        let cs = ConstraintSet::new(vec![AdSummary::outcome_mean(0.3, 300), s.clone(), s], ShiftSpec::none(), 2).unwrap();
        let err = fit_cmle_fast(&cs, &OutcomeFamily::new(Family::Gaussian), &data, &FitOptions::default()).unwrap_err();
        prop_assert!(matches!(err, Error::Redundancy { .. }), "{:?}", err);
        prop_assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn el_newton_never_increases_the_dual(seed in 0u64..10_000, n in 10usize..200, r in 1usize..4, shift in 0.0f64..1.5) {
        let mut rng = common::rng(seed);
        let mut psi = DMatrix::from_fn(n, r, |_, _| common::normal(&mut rng) + shift);
        // recentre under positive weights so zero is strictly inside the hull
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        for j in 0..r {
            let m = (0..n).map(|i| w[i] * psi[(i, j)]).sum::<f64>() / total;
            psi.column_mut(j).add_scalar_mut(-m);
        }
        let sol = solve_eta(&psi).unwrap();
        prop_assert!(sol.converged);
        for pair in sol.trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * (1.0 + pair[0].abs()), "{:?}", sol.trace);
        }
        let mass: f64 = sol.weights.iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert!(sol.weights.iter().all(|p| *p > 0.0));
    }
}
