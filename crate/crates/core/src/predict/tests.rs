use std::collections::BTreeMap;

use super::*;

fn ids(sel: &Selection) -> Vec<&str> {
    sel.lambda().iter().map(|r| r.variant.as_str()).collect()
}

fn named(thetas: &[f64]) -> Vec<(String, f64)> {
    thetas.iter().enumerate().map(|(i, t)| (format!("v{i:02}"), *t)).collect()
}

#[test]
fn kernel_runtime_arithmetic() {
    let phi = kernel_runtime(4.0, 1e6, 8.0, 2.3e9).unwrap();
    assert_eq!(phi, 4e6 / (8.0 * 2.3e9));
    assert!((phi - 2.1739e-4).abs() < 1e-8);
    assert_eq!(kernel_runtime(8.0 * 2.3e9, 1.0, 8.0, 2.3e9).unwrap(), 1.0);
    assert_eq!(kernel_runtime(4.0, 1e6, 8.0, 4.6e9).unwrap(), phi / 2.0);
    assert!(matches!(kernel_runtime(0.0, 1.0, 8.0, 1e9), Err(PredictError::NonPositive { .. })));
    assert!(matches!(kernel_runtime(1.0, 1.0, 8.0, -1e9), Err(PredictError::NonPositive { .. })));
}

#[test]
fn combined_prediction_weights_alpha_by_iterations() {
    let k = KernelPrediction::combine("RHS", 1, 100, &[(2.0, 1.0), (4.0, 99.0)], 8.0, 1e9).unwrap();
    assert_eq!(k.beta, 100.0);
    assert!((k.alpha - 3.98).abs() < 1e-12);
    let direct = kernel_runtime(2.0, 1.0, 8.0, 1e9).unwrap() + kernel_runtime(4.0, 99.0, 8.0, 1e9).unwrap();
    assert!((k.phi - direct).abs() < 1e-15 * direct.max(1.0));
}

#[test]
fn comm_model_exact_and_constant_fits() {
    let line: Vec<(u32, f64)> = (1..=8).map(|t| (t, 1e-6 + 2e-7 * t as f64)).collect();
    let cm = fit_comm_model(&line).unwrap();
    assert!((cm.intercept - 1e-6).abs() < 1e-18);
    assert!((cm.slope - 2e-7).abs() < 1e-18);
    assert!(cm.residual < 1e-18);
    let flat: Vec<(u32, f64)> = (1..=4).map(|t| (t, 5e-7)).collect();
    let cm = fit_comm_model(&flat).unwrap();
    assert!((cm.intercept - 5e-7).abs() < 1e-20);
    assert!(cm.slope.abs() < 1e-20);
    assert_eq!(fit_comm_model(&[(2, 1.0), (2, 2.0)]), Err(PredictError::DegenerateSamples));
    assert_eq!(fit_comm_model(&[]), Err(PredictError::DegenerateSamples));
}

#[test]
fn comm_model_matches_normal_equations() {
    let samples = [(1, 1.1e-6), (2, 1.18e-6), (3, 1.52e-6), (4, 1.61e-6), (6, 2.2e-6), (8, 2.5e-6)];
    let cm = fit_comm_model(&samples).unwrap();
    // Solve [[k, Σx], [Σx, Σx²]] [a, b] = [Σy, Σxy] by Cramer's rule.
    let k = samples.len() as f64;
    let sx: f64 = samples.iter().map(|s| s.0 as f64).sum();
    let sxx: f64 = samples.iter().map(|s| (s.0 as f64).powi(2)).sum();
    let sy: f64 = samples.iter().map(|s| s.1).sum();
    let sxy: f64 = samples.iter().map(|s| s.0 as f64 * s.1).sum();
    let det = k * sxx - sx * sx;
    let a = (sy * sxx - sx * sxy) / det;
    let b = (k * sxy - sx * sy) / det;
    assert!((cm.intercept - a).abs() < 1e-18);
    assert!((cm.slope - b).abs() < 1e-18);
    let perturbed = |da: f64, db: f64| -> f64 {
        samples
            .iter()
            .map(|s| (s.1 - (a + da) - (b + db) * s.0 as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    assert!(cm.residual <= perturbed(1e-9, 0.0));
    assert!(cm.residual <= perturbed(0.0, -1e-9));
}

#[test]
fn barrier_cost_is_clamped_to_the_fitted_range() {
    let cm = fit_comm_model(&[(2, 2e-6), (4, 1e-6)]).unwrap();
    assert!((cm.barrier_cost(1) - 2e-6).abs() < 1e-18);
    assert!((cm.barrier_cost(8) - 1e-6).abs() < 1e-18);
    let steep = fit_comm_model(&[(1, 1e-6), (2, -5e-6)]).unwrap();
    assert_eq!(steep.barrier_cost(2), 0.0);
}

#[test]
fn reads_barrier_benchmarks() {
    let rows = read_barrier_csv("tau,seconds\n1, 1e-6\n2,2e-6\n").unwrap();
    assert_eq!(rows, vec![(1, 1e-6), (2, 2e-6)]);
    assert!(read_barrier_csv("tau,seconds\nx,1\n").is_err());
}

fn kp(kernel: &str, phi_target: f64, tau: u32, n: u64) -> KernelPrediction {
    // δ·f = 1 makes φ = α·β.
    KernelPrediction::new(kernel, tau, n, phi_target, 1.0, 1.0, 1.0).unwrap()
}

#[test]
fn variant_prediction_sums_kernels_and_barriers() {
    let cm = CommModel {
        intercept: 1e-6,
        ..CommModel::zero()
    };
    let (a, b) = (kp("a", 1e-3, 4, 10), kp("b", 2e-3, 4, 10));
    let p = variant_prediction("X", &[(&a, 1), (&b, 1)], 14, &cm, 4).unwrap();
    assert_eq!(p.t_com, 14.0 * 1e-6);
    assert_eq!(p.theta, 1e-3 + 2e-3 + 14.0 * 1e-6);
    assert_eq!(p.theta, p.recompute_theta());
    let p = variant_prediction("X", &[(&a, 1), (&b, 1)], 0, &cm, 4).unwrap();
    assert_eq!(p.theta, 3e-3);
    let cm = fit_comm_model(&[(1, 3e-6), (8, 1e-5)]).unwrap();
    let p = variant_prediction("X", &[(&a, 1)], 1, &cm, 4).unwrap();
    assert_eq!(p.theta, 1e-3 + (cm.intercept + cm.slope * 4.0));
    let p = variant_prediction("X", &[(&a, 6)], 0, &cm, 4).unwrap();
    assert_eq!(p.theta, 6.0 * 1e-3);
}

#[test]
fn variant_prediction_rejects_mixed_inputs() {
    let cm = CommModel::zero();
    let (a, b, c) = (kp("a", 1.0, 4, 10), kp("b", 1.0, 2, 10), kp("c", 1.0, 4, 11));
    assert!(matches!(
        variant_prediction("X", &[(&a, 1), (&b, 1)], 0, &cm, 4),
        Err(PredictError::Mixed { .. })
    ));
    assert!(matches!(
        variant_prediction("X", &[(&a, 1), (&c, 1)], 0, &cm, 4),
        Err(PredictError::Mixed { .. })
    ));
}

#[test]
fn selection_examples() {
    let sel = rank_thetas(&named(&[1.12, 1.00, 1.04]), 5.0).unwrap();
    assert_eq!(ids(&sel), ["v01", "v02"]);
    let sel = rank_thetas(&named(&[1.00, 1.04, 1.12]), 10.0).unwrap();
    assert_eq!(ids(&sel), ["v00", "v01"]);
    let sel = rank_thetas(&named(&[2.0, 1.0, 1.0, 1.5]), 0.0).unwrap();
    assert_eq!(ids(&sel), ["v01", "v02"]);
    assert_eq!(rank_thetas(&[], 5.0), Err(PredictError::Empty));
}

#[test]
fn ties_are_broken_by_id() {
    let sel = rank_thetas(&[("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 0.5)], 0.0).unwrap();
    let order: Vec<&str> = sel.ranking.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(order, ["c", "a", "b"]);
    assert_eq!(ids(&sel), ["c"]);
}

#[test]
fn rank_and_select_checks_uniformity() {
    let mk = |v: &str, tau, n, theta| VariantPrediction {
        variant: v.into(),
        tau,
        n,
        theta,
        kernels: vec![],
        t_com: 0.0,
        barriers: 0,
    };
    let sel = rank_and_select(&[mk("a", 2, 5, 2.0), mk("b", 2, 5, 1.0)], 5.0).unwrap();
    assert_eq!(ids(&sel), ["b"]);
    assert!(rank_and_select(&[mk("a", 2, 5, 2.0), mk("b", 4, 5, 1.0)], 5.0).is_err());
    assert!(rank_and_select(&[mk("a", 2, 5, 2.0), mk("b", 2, 6, 1.0)], 5.0).is_err());
    assert_eq!(rank_and_select(&[], 5.0), Err(PredictError::Empty));
}

#[test]
fn metric_examples() {
    assert_eq!(tuning_overhead(&[2.0], 2.0).unwrap(), 0.0);
    assert_eq!(tuning_overhead(&[1.0, 1.5], 1.0).unwrap(), 25.0);
    let t = 0.7;
    let t_ra = 56.0 * t;
    let t_at = t_at(&[t; 5], 56).unwrap();
    assert_eq!(performance_gain(t_ra, t_at).unwrap(), 0.0);
    assert!(tuning_overhead(&[1.0], 0.0).is_err());
    assert!(performance_gain(0.0, 1.0).is_err());
}

fn measured(times: &[f64]) -> BTreeMap<String, f64> {
    named(times).into_iter().collect()
}

#[test]
fn run_all_and_best_variant() {
    let m = measured(&[3.0, 1.0, 2.0, 4.0]);
    let sel = rank_thetas(&named(&[1.0, 2.0, 3.0, 4.0]), 5.0).unwrap();
    let ra = run_strategy(Strategy::RunAll, &m, &sel, 0).unwrap();
    assert_eq!(ra.chosen, "v01");
    assert_eq!(ra.t_at, 10.0);
    assert_eq!(ra.gain, 0.0);
    assert_eq!(ra.overhead, (10.0 - 4.0) / 4.0 * 100.0);
    let bv = run_strategy(Strategy::BestVariant, &m, &sel, 0).unwrap();
    assert_eq!((bv.chosen.as_str(), bv.t_at, bv.loss, bv.overhead), ("v01", 4.0, 0.0, 0.0));
    assert_eq!(bv.gain, 60.0);
}

#[test]
fn offsite_preselect_charges_the_remaining_runs_to_the_best_tested() {
    let m = measured(&[3.0, 1.0, 2.0, 4.0]);
    // Predictions rank v00 and v02 within 10 %.
    let sel = rank_thetas(&named(&[1.0, 5.0, 1.05, 7.0]), 5.0).unwrap();
    let o5 = run_strategy(Strategy::OffsitePreselect(5.0), &m, &sel, 0).unwrap();
    assert_eq!(o5.tested, ["v00", "v02"]);
    assert_eq!(o5.chosen, "v02");
    assert_eq!(o5.t_at, 3.0 + 2.0 + 2.0 * 2.0);
    assert_eq!(o5.loss, 100.0);
    assert_eq!(o5.overhead, 25.0);
    assert_eq!(o5.gain, (10.0 - 9.0) / 10.0 * 100.0);
    let o1 = run_strategy(Strategy::OffsitePreselect(1.0), &m, &sel, 0).unwrap();
    assert_eq!(o1.tested, ["v00"]);

    let sel = rank_thetas(&named(&[5.0, 1.0, 6.0, 7.0]), 5.0).unwrap();
    let o = run_strategy(Strategy::OffsitePreselect(5.0), &m, &sel, 0).unwrap();
    assert_eq!((o.chosen.as_str(), o.loss, o.overhead), ("v01", 0.0, 0.0));

    let partial: BTreeMap<String, f64> = [("v01".to_string(), 1.0)].into();
    let sel = rank_thetas(&named(&[1.0, 1.0]), 5.0).unwrap();
    assert_eq!(
        run_strategy(Strategy::OffsitePreselect(5.0), &partial, &sel, 0),
        Err(PredictError::MissingMeasurement("v00".into()))
    );
}

#[test]
fn random_select_is_deterministic_per_seed() {
    let times: Vec<f64> = (0..56).map(|i| 1.0 + ((i * 37) % 56) as f64 / 10.0).collect();
    let m = measured(&times);
    let sel = rank_thetas(&named(&times), 5.0).unwrap();
    let a = run_strategy(Strategy::RandomSelect { k: 20 }, &m, &sel, 7).unwrap();
    let b = run_strategy(Strategy::RandomSelect { k: 20 }, &m, &sel, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.tested.len(), 20);
    let mut uniq = a.tested.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 20);
    let tested: Vec<f64> = a.tested.iter().map(|v| m[v]).collect();
    let min = tested.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(a.t_at, tested.iter().sum::<f64>() + 36.0 * min);
    assert_eq!(a.t_step, min);
    let all = run_strategy(Strategy::RandomSelect { k: 100 }, &m, &sel, 7).unwrap();
    assert_eq!(all.tested.len(), 56);
}

mod props {
    use proptest::prelude::*;

    use super::*;
    use crate::predict::Strategy;

    proptest! {
        #[test]
        fn lambda_grows_with_deviation(thetas in prop::collection::vec(0.01f64..100.0, 1..60), d1 in 0.0f64..50.0, extra in 0.0f64..50.0) {
            let named = named(&thetas);
            let small = rank_thetas(&named, d1).unwrap();
            let large = rank_thetas(&named, d1 + extra).unwrap();
            prop_assert!(!small.lambda().is_empty());
            prop_assert_eq!(small.lambda(), &large.lambda()[..small.selected]);
        }

        #[test]
        fn selection_is_scale_invariant(thetas in prop::collection::vec(0.01f64..100.0, 1..60), d in 0.0f64..30.0, c in 1e-3f64..1e3) {
            let named = named(&thetas);
            let scaled: Vec<(String, f64)> = named.iter().map(|(v, t)| (v.clone(), t * c)).collect();
            let a = rank_thetas(&named, d).unwrap();
            let b = rank_thetas(&scaled, d).unwrap();
            let order = |s: &Selection| s.ranking.iter().map(|r| r.variant.clone()).collect::<Vec<_>>();
            prop_assert_eq!(order(&a), order(&b));
            prop_assert_eq!(a.selected, b.selected);
        }

        #[test]
        fn phi_reasserts_from_fields(alpha in 1e-3f64..1e3, beta in 1.0f64..1e9, f in 1e8f64..5e9) {
            let k = KernelPrediction::new("k", 1, 1, alpha, beta, 8.0, f).unwrap();
            prop_assert_eq!(k.phi, k.alpha * k.beta / (k.delta * k.frequency));
            let fast = KernelPrediction::new("k", 1, 1, alpha, beta, 8.0, 2.0 * f).unwrap();
            prop_assert_eq!(fast.phi, k.phi / 2.0);
        }

        #[test]
        fn preselect_loses_nothing_when_lambda_holds_the_best(times in prop::collection::vec(0.1f64..10.0, 2..40), noise in prop::collection::vec(0.9f64..1.1, 40)) {
            let m = measured(&times);
            let predicted: Vec<f64> = times.iter().zip(&noise).map(|(t, e)| t * e).collect();
            let sel = rank_thetas(&named(&predicted), 5.0).unwrap();
            let best = run_strategy(Strategy::BestVariant, &m, &sel, 0).unwrap();
            let o = run_strategy(Strategy::OffsitePreselect(5.0), &m, &sel, 0).unwrap();
            if o.tested.contains(&best.chosen) {
                prop_assert_eq!(o.loss, 0.0);
            }
            prop_assert!(o.loss >= 0.0);
        }
    }
}
