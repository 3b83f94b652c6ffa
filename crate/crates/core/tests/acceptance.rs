//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Quantitative criteria (1–5) share suite results computed once at the desk
//! defaults with three seeds; property criteria (6–12) run the fast
//! invariant checks. Run with `cargo test --test acceptance -- --nocapture`
//! to see every line.

use once_cell::sync::Lazy;

use pgt_core::bench::suites::{
    run_ablation, run_heat_suite, run_noise_suite, run_ns_suite, ExperimentSettings, SuiteRow,
};
use pgt_core::check::{
    self, criterion_ablation_orderings, criterion_heat_accuracy, criterion_heat_monotonicity,
    criterion_noise_stability, criterion_ns_dual, CheckOutcome,
};

fn desk_settings() -> ExperimentSettings {
    let mut settings = ExperimentSettings::default();
    settings.seeds = vec![0, 1, 2];
    settings.heat_m_values = vec![100, 200, 500];
    settings
}

static HEAT: Lazy<Vec<SuiteRow>> =
    Lazy::new(|| run_heat_suite(&desk_settings()).expect("heat suite"));
static NS: Lazy<Vec<SuiteRow>> = Lazy::new(|| run_ns_suite(&desk_settings()).expect("ns suite"));
static ABLATION: Lazy<Vec<SuiteRow>> =
    Lazy::new(|| run_ablation(&desk_settings()).expect("ablation suite"));
static NOISE: Lazy<Vec<SuiteRow>> =
    Lazy::new(|| run_noise_suite(&desk_settings()).expect("noise suite"));
static FAST: Lazy<Vec<CheckOutcome>> = Lazy::new(check::fast_checks);

fn assert_outcome(outcome: &CheckOutcome) {
    println!("{}", outcome.line());
    assert!(outcome.passed, "{}", outcome.line());
}

fn assert_fast(names: &[&str]) {
    for name in names {
        let outcome = FAST
            .iter()
            .find(|o| o.name == *name)
            .unwrap_or_else(|| panic!("missing fast check '{name}'"));
        assert_outcome(outcome);
    }
}

#[test]
fn criterion_01_heat_accuracy_and_margins() {
    assert_outcome(&criterion_heat_accuracy(&HEAT));
}

#[test]
fn criterion_02_heat_monotonicity_in_m() {
    assert_outcome(&criterion_heat_monotonicity(&HEAT));
}

#[test]
fn criterion_03_flow_dual_bounds() {
    assert_outcome(&criterion_ns_dual(&NS));
}

#[test]
fn criterion_04_ablation_orderings() {
    assert_outcome(&criterion_ablation_orderings(&ABLATION));
}

#[test]
fn criterion_05_noise_stability() {
    assert_outcome(&criterion_noise_stability(&NOISE));
}

#[test]
fn criterion_06_gradient_fidelity() {
    assert_fast(&["gradient_primitives", "gradient_end_to_end"]);
}

#[test]
fn criterion_07_causality() {
    assert_fast(&["causality_parabolic", "causality_hyperbolic"]);
}

#[test]
fn criterion_08_heat_kernel_normalization() {
    assert_fast(&["heat_kernel_normalization"]);
}

#[test]
fn criterion_09_vanilla_attention_recovery() {
    assert_fast(&["vanilla_attention_recovery"]);
}

#[test]
fn criterion_10_identity_film_and_uw_reduction() {
    assert_fast(&["identity_film_equivalence", "uw_unit_variance_reduction"]);
}

#[test]
fn criterion_11_analytic_oracles() {
    assert_fast(&["analytic_oracles"]);
}

#[test]
fn criterion_12_determinism() {
    assert_fast(&["suite_determinism"]);
}
