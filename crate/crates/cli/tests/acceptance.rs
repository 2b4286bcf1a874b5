//! Acceptance suite: one test per criterion, each printing a measured
//! pass/fail line. Every tolerance is pinned inside the corresponding
//! verification suite; run with `cargo test --test acceptance -- --nocapture`
//! to see the measurements.

use sharpen_cli::verify::{run_suite, SuiteResult};

fn check(criterion: usize, suite_name: &str) {
    let suite: SuiteResult = run_suite(suite_name).expect("suite runs");
    let mut all = true;
    for c in &suite.checks {
        println!(
            "[{}] criterion {criterion} ({suite_name}) {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured
        );
        all &= c.pass;
    }
    assert!(all, "criterion {criterion} failed in suite {suite_name}");
}

#[test]
fn criterion_01_bon_distribution_oracle() {
    check(1, "bon-oracle");
}

#[test]
fn criterion_02_greedy_proposition() {
    check(2, "greedy-prop");
}

#[test]
fn criterion_03_inference_time_bon_bound() {
    check(3, "bon-bound");
}

#[test]
fn criterion_04_adaptive_stopping() {
    check(4, "adaptive");
}

#[test]
fn criterion_05_sft_sharpening_trend() {
    check(5, "sft-trend");
}

#[test]
fn criterion_06_tilt_optimality_and_margin_chain() {
    check(6, "tilt-margin");
}

#[test]
fn criterion_07_dpo_identity_and_fitting() {
    check(7, "dpo");
}

#[test]
fn criterion_08_xpo_vs_sft_separation() {
    check(8, "separation");
}

#[test]
fn criterion_09_maxcut_hardness_reduction() {
    check(9, "maxcut");
}

#[test]
fn criterion_10_representational_ceiling() {
    check(10, "representational");
}

#[test]
fn criterion_11_offline_analyzer() {
    check(11, "analyzer");
}

#[test]
fn criterion_12_tilt_concentrability_bounds() {
    check(12, "concentrability");
}
