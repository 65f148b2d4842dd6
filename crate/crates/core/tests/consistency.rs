//! Consistency metrics on generated suites, and the Welch test against a
//! direct numerical integration of the t density.

use crm_core::consistency::{
    evaluate, gen_synthetic_suite, oracle_predictions, random_predictions, welch_t_test, SynthSpec,
};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Composite Simpson's rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Two-sided tail of Student's t with `nu` degrees of freedom. Under
/// `x = sqrt(nu) tan θ` the density becomes proportional to `cos^(nu-1) θ`
/// on `(-π/2, π/2)`.
fn t_tail_by_quadrature(t: f64, nu: f64) -> f64 {
    let kernel = |th: f64| th.cos().powf(nu - 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let theta = (t.abs() / nu.sqrt()).atan();
    simpson(kernel, theta, half_pi, 200_000) / simpson(kernel, 0.0, half_pi, 200_000)
}

#[test]
fn welch_matches_the_quadrature_oracle() {
    let fixtures: [([f64; 5], [f64; 5]); 3] = [
        ([1.2, 2.3, 1.9, 2.8, 2.1], [2.9, 3.4, 2.6, 3.8, 3.1]),
        ([10.0, 12.0, 9.5, 11.0, 10.5], [10.2, 10.1, 10.4, 10.3, 10.0]),
        ([82.0, 75.5, 90.1, 85.0, 79.3], [45.0, 60.2, 38.7, 51.1, 40.0]),
    ];
    for (a, b) in fixtures {
        let r = welch_t_test(&a, &b).unwrap();
        let ((ma, va), (mb, vb)) = (mean_var(&a), mean_var(&b));
        let (sa, sb) = (va / 5.0, vb / 5.0);
        let t = (ma - mb) / (sa + sb).sqrt();
        let nu = (sa + sb).powi(2) / (sa * sa / 4.0 + sb * sb / 4.0);
        assert!((r.t - t).abs() < 1e-12, "t {} vs {t}", r.t);
        assert!((r.df - nu).abs() < 1e-9, "df {} vs {nu}", r.df);
        let p = t_tail_by_quadrature(t, nu);
        assert!((r.p - p).abs() < 1e-3, "p {} vs quadrature {p}", r.p);
    }
}

#[test]
fn welch_boundary_cases() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let r = welch_t_test(&a, &a).unwrap();
    assert_eq!(r.t, 0.0);
    assert!((r.p - 1.0).abs() < 1e-12);
    let z = [0.0, 1e-6, -1e-6, 0.0];
    let o = [1.0, 1.0 + 1e-6, 1.0 - 1e-6, 1.0];
    assert!(welch_t_test(&z, &o).unwrap().p < 1e-3);
    assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
}

#[test]
fn oracle_classifier_is_perfectly_consistent() {
    let bundle = gen_synthetic_suite(&SynthSpec::default()).unwrap();
    bundle.suite.validate().unwrap();
    let preds = oracle_predictions(&bundle.world, &bundle.suite).unwrap();
    let r = evaluate(&bundle.suite, &preds, None).unwrap();
    assert_eq!(r.accuracy.value, Some(100.0));
    for m in [&r.tau_sem, &r.tau_neg, &r.tau_sym, &r.tau_trn] {
        assert_eq!(m.value, Some(0.0), "{m:?}");
        assert!(m.denominator > 0);
    }
}

#[test]
fn uniform_random_classifier_disagrees_at_the_closed_form_rate() {
    let spec = SynthSpec {
        semantic: 20_000,
        negation: 10,
        symmetry: 10,
        transitive: 10,
        ..SynthSpec::default()
    };
    let bundle = gen_synthetic_suite(&spec).unwrap();
    let labels = bundle.suite.labels.len() as f64;
    let expected = 100.0 * (1.0 - 1.0 / labels);
    let r = evaluate(&bundle.suite, &random_predictions(&bundle.suite, 5).unwrap(), None).unwrap();
    // Binomial standard error at n = 20000 is about 0.35 points.
    let got = r.tau_sem.value.unwrap();
    assert!((got - expected).abs() < 1.5, "tau_sem {got} vs {expected}");
}

#[test]
fn constant_predictor_has_zero_semantic_inconsistency() {
    let bundle = gen_synthetic_suite(&SynthSpec::default()).unwrap();
    let preds = random_predictions(&bundle.suite, 1).unwrap();
    let constant = crm_core::consistency::PredictionSet::new(
        preds
            .records()
            .iter()
            .map(|r| crm_core::consistency::PredictionRecord {
                predicted: 0,
                distribution: None,
                ..r.clone()
            })
            .collect(),
    )
    .unwrap();
    let r = evaluate(&bundle.suite, &constant, None).unwrap();
    assert_eq!(r.tau_sem.value, Some(0.0));
}

#[test]
fn synthetic_suite_bytes_depend_only_on_the_spec() {
    let spec = SynthSpec {
        seed: 9,
        ..SynthSpec::default()
    };
    let a = gen_synthetic_suite(&spec).unwrap();
    let b = gen_synthetic_suite(&spec).unwrap();
    assert_eq!(a.suite.to_jsonl(), b.suite.to_jsonl());
    assert_eq!(a.lexicon, b.lexicon);
    assert_eq!(a.train, b.train);
    let c = gen_synthetic_suite(&SynthSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.suite.to_jsonl(), c.suite.to_jsonl());
}
