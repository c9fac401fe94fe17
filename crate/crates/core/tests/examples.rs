mod validate_deployment {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/validate_deployment.rs"));
}

#[test]
fn validate_deployment_example_runs() {
    validate_deployment::run_example().expect("validate_deployment example should run");
}

mod evaluate {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/evaluate.rs"));
}

#[test]
fn evaluate_example_runs() {
    evaluate::run_example().expect("evaluate example should run");
}

mod stress_schedule {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/stress_schedule.rs"));
}

#[test]
fn stress_schedule_example_runs() {
    stress_schedule::run_example().expect("stress_schedule example should run");
}

mod discover_imrs {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/discover_imrs.rs"));
}

#[test]
fn discover_imrs_example_runs() {
    discover_imrs::run_example().expect("discover_imrs example should run");
}

mod phase1_clampdown {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/phase1_clampdown.rs"));
}

#[test]
fn phase1_clampdown_example_runs() {
    phase1_clampdown::run_example().expect("phase1_clampdown example should run");
}

mod phase2_improve {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/phase2_improve.rs"));
}

#[test]
fn phase2_improve_example_runs() {
    phase2_improve::run_example().expect("phase2_improve example should run");
}

mod full_pipeline {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/full_pipeline.rs"));
}

#[test]
fn full_pipeline_example_runs() {
    full_pipeline::run_example().expect("full_pipeline example should run");
}

mod trace_switching {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/trace_switching.rs"));
}

#[test]
fn trace_switching_example_runs() {
    trace_switching::run_example().expect("trace_switching example should run");
}

mod autoscaler {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/autoscaler.rs"));
}

#[test]
fn autoscaler_example_runs() {
    autoscaler::run_example().expect("autoscaler example should run");
}

mod oracle {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/oracle.rs"));
}

#[test]
fn oracle_example_runs() {
    oracle::run_example().expect("oracle example should run");
}

mod export_fixtures {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/export_fixtures.rs"));
}

#[test]
fn export_fixtures_example_runs() {
    export_fixtures::run_example().expect("export_fixtures example should run");
}
