//! Cross-module invariants exercised through the sweep harness: degradation
//! monotone in the disturbance bound, observed inflation inside the
//! predicted level, and complete run metadata in the summary.

use tempfile::tempdir;

use rcbf_core::config::ExperimentConfig;
use rcbf_core::sweep::run_experiment;
use rcbf_core::Outcome;

fn actuation_sweep_cfg(dir: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"
[experiment]
name = thm1_invariants
seed = 5

[system]
kind = scalar

[alpha]
kind = linear
c = 1.0

[filter]
kind = rcbf
gamma1 = 0.2
gamma2 = 0.2

[nominal]
kind = zero

[estimate]
kind = exact

[disturbance]
kind = worst_case
dbar = 0.1

[sim]
dt = 0.001
horizon = 20.0
escape_radius = 10.0
record_stride = 10
x0 = 0.5

[sweep]
variable = disturbance_dbar
values = 0.05, 0.1, 0.15, 0.5, 1.0

[output]
dir = {}
prefix = thm1
"#,
        dir.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

#[test]
fn actuation_sweep_invariants() {
    let dir = tempdir().unwrap();
    let cfg = actuation_sweep_cfg(dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 5);

    // small disturbances keep the original set; larger ones stay within the
    // predicted inflation
    let mut prev = -1.0f64;
    for run in &report.runs {
        let m = &run.metrics;
        assert_eq!(m.outcome, Outcome::Completed);
        let dbar = run.sweep_value.unwrap();
        let pred = m.predicted_inflation.expect("actuation sweep has a prediction");
        if dbar <= 0.2 {
            assert_eq!(pred, 0.0);
            assert!(m.min_h >= -1e-6, "dbar={dbar}: min h = {}", m.min_h);
        }
        assert!(
            m.observed_inflation <= pred + 0.01,
            "dbar={dbar}: observed {} above predicted {pred}",
            m.observed_inflation
        );
        // observed degradation is monotone in dbar
        assert!(
            m.observed_inflation + 1e-6 >= prev,
            "dbar={dbar}: inflation decreased"
        );
        prev = m.observed_inflation;
    }

    // summary has one row per sweep value, with seeds and model variants
    let summary = std::fs::read_to_string(&report.summary_path).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[0].contains("seed"));
    assert!(lines[0].contains("alpha"));
    assert!(lines[0].contains("rho"));
    for row in &lines[1..] {
        assert!(row.contains("linear(c=1)"));
        assert!(row.contains("poly(gamma1=0.2,gamma2=0.2)") || row.contains("poly(0.2,0.2)"));
        assert!(row.contains("worst_case"));
        assert!(row.contains(",5,"), "seed column present: {row}");
    }
}

#[test]
fn estimate_sweep_records_models() {
    let dir = tempdir().unwrap();
    let text = format!(
        r#"
[experiment]
name = est_sweep
seed = 9

[system]
kind = scalar

[filter]
kind = rcbf
gamma1 = 0.2
gamma2 = 0.2

[estimate]
kind = random_bounded
delta = 0.1
seed = 77

[sim]
dt = 0.001
horizon = 0.5
x0 = 0.5
record_stride = 5

[sweep]
variable = estimate_delta
values = 0.0, 0.1

[output]
dir = {}
prefix = est
"#,
        dir.path().display()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 2);
    let summary = std::fs::read_to_string(&report.summary_path).unwrap();
    assert!(summary.contains("random_bounded(delta=0.1,seed=77)"));
    // estimate sweeps carry no actuation-side prediction
    assert!(report.runs.iter().all(|r| r.metrics.predicted_inflation.is_none()));
}
