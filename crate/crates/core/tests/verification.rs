mod common;

use proptest::prelude::*;
use stackelberg_heat::presets;
use stackelberg_heat::scenario::{to_similarity, PhysicalScenario, SimilarityScenario};
use stackelberg_heat::verification::inequalities::{
    l1_embedding_constant_exact, run_inequality_suite,
};
use stackelberg_heat::verification::{
    convergence_study, loglog_fit, run_suite, StudyKind, StudySettings, SuiteCase, SuiteReport,
    SuiteSettings,
};
use stackelberg_heat::Grid;

fn desk() -> SimilarityScenario {
    to_similarity(&PhysicalScenario::from_config(&presets::desk()).unwrap()).unwrap()
}

#[test]
fn crank_nicolson_is_second_order_in_space_and_time() {
    let scenario = desk();
    let settings = StudySettings::for_dim(1);
    let space = convergence_study(&scenario, StudyKind::Space, &settings).unwrap();
    let time = convergence_study(&scenario, StudyKind::Time, &settings).unwrap();
    assert!(
        (space.fitted_rate - 2.0).abs() <= 0.3,
        "{}",
        space.fitted_rate
    );
    assert!(
        (time.fitted_rate - 2.0).abs() <= 0.3,
        "{}",
        time.fitted_rate
    );
    assert!(space.r_squared > 0.99 && time.r_squared > 0.99);
    assert_eq!(space.rows.len(), settings.refinements);
}

#[test]
fn implicit_euler_is_first_order_in_time() {
    let settings = StudySettings {
        theta: 1.0,
        ..StudySettings::for_dim(1)
    };
    let time = convergence_study(&desk(), StudyKind::Time, &settings).unwrap();
    assert!(
        (time.fitted_rate - 1.0).abs() <= 0.2,
        "{}",
        time.fitted_rate
    );
    assert_eq!(time.theta, 1.0);
}

#[test]
fn truncation_error_is_flat_beyond_radius_eight() {
    let table = convergence_study(&desk(), StudyKind::Radius, &StudySettings::for_dim(1)).unwrap();
    assert!(table.floor.unwrap() > 0.0);
    assert!(table.flat_beyond(8.0));
    let errors: Vec<f64> = table.rows.iter().skip(1).map(|r| r.error).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    let csv = table.to_csv();
    assert!(csv.starts_with("kind,parameter,spacing,error,rate,extra\n"));
    assert_eq!(csv.lines().count(), table.rows.len() + 1);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("radius,")));
}

#[test]
fn study_kind_parses() {
    assert_eq!("space".parse::<StudyKind>().unwrap(), StudyKind::Space);
    assert_eq!("radius".parse::<StudyKind>().unwrap(), StudyKind::Radius);
    assert!("all".parse::<StudyKind>().is_err());
}

#[test]
fn loglog_fit_recovers_a_power_law() {
    let x = [0.5, 0.25, 0.125, 0.0625];
    let y: Vec<f64> = x.iter().map(|h: &f64| 3.0 * h.powf(1.7)).collect();
    let (rate, r2) = loglog_fit(&x, &y);
    assert!((rate - 1.7).abs() < 1e-12);
    assert!((r2 - 1.0).abs() < 1e-12);
    let (nan, _) = loglog_fit(&[1.0], &[1.0]);
    assert!(nan.is_nan());
}

#[test]
fn inequalities_hold_on_random_fields() {
    let report = run_inequality_suite(&Grid::new(1, 8.0, 257).unwrap(), 200, 3).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.poincare_violations, 0);
    assert!(report.poincare_worst_ratio > 0.0 && report.poincare_worst_ratio <= 1.0 + 1e-12);
    assert!(report.ground_state_gap < 1e-4);
    assert!((report.l1_constant_exact - l1_embedding_constant_exact(1)).abs() < 1e-15);
    assert!(report.l1_constant <= report.l1_constant_exact * (1.0 + 1e-3));
}

#[test]
fn junit_output_escapes_and_counts() {
    let report = SuiteReport {
        name: "a<b>".into(),
        cases: vec![
            SuiteCase {
                name: "ok".into(),
                passed: true,
                message: "fine & dandy".into(),
                seconds: 0.5,
            },
            SuiteCase {
                name: "bad \"one\"".into(),
                passed: false,
                message: "x < y".into(),
                seconds: 0.25,
            },
        ],
    };
    assert!(!report.passed());
    assert_eq!(report.failures(), 1);
    let xml = report.to_junit_xml();
    assert!(xml.starts_with("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"));
    assert!(
        xml.contains("<testsuite name=\"a&lt;b&gt;\" tests=\"2\" failures=\"1\" time=\"0.750\">")
    );
    assert!(xml.contains("<system-out>fine &amp; dandy</system-out>"));
    assert!(xml.contains("<testcase name=\"bad &quot;one&quot;\""));
    assert!(xml.contains("<failure message=\"x &lt; y\"/>"));
    assert_eq!(xml.matches("<testcase ").count(), 2);
    assert!(xml.trim_end().ends_with("</testsuite>"));
}

#[test]
fn full_suite_passes_on_tiny() {
    let model = common::tiny(2);
    let settings = SuiteSettings {
        inequality_trials: 40,
        duality_pairs: 20,
        coercivity_bundles: 20,
        gradient_trials: 3,
        ..SuiteSettings::default()
    };
    let report = run_suite(&model, &settings);
    let failed: Vec<_> = report
        .cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| (&c.name, &c.message))
        .collect();
    assert!(report.passed(), "{failed:?}");
    let names: Vec<&str> = report.cases.iter().map(|c| c.name.as_str()).collect();
    for expected in [
        "eigenpair",
        "inequalities",
        "duality",
        "coercivity",
        "dense_oracles",
        "verify_nash",
        "leader_gradient",
    ] {
        assert!(
            names.contains(&expected),
            "{expected} missing from {names:?}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loglog_fit_is_exact_for_any_power(rate in -4.0f64..4.0, c in 0.1f64..10.0) {
        let x: Vec<f64> = (1..6).map(|k| 2f64.powi(-k)).collect();
        let y: Vec<f64> = x.iter().map(|h| c * h.powf(rate)).collect();
        let (fit, r2) = loglog_fit(&x, &y);
        prop_assert!((fit - rate).abs() < 1e-10);
        prop_assert!(rate.abs() < 1e-6 || (r2 - 1.0).abs() < 1e-10);
    }
}
