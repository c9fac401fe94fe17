// Threshold autoscaling over a day of load, then the optimizer applied to
// whatever the autoscaler grew.

use tightfit::fixtures;
use tightfit::pipeline::{run_trace_analysis, PipelineConfig};
use tightfit::dynamic::RateTrace;

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::mean();
    let week = fixtures::diurnal_trace(5, 20.0, false);
    // First day only.
    let day = RateTrace::new(week.samples()[..8640].to_vec())?;

    let mut cfg = PipelineConfig::for_fixture_dir(".");
    cfg.measurement.deterministic = true;
    cfg.dynamic.baseline_threshold = Some(60.0);
    let analysis = run_trace_analysis(&cfg, &f, &day)?;

    let traj = analysis.autoscale_trajectory.as_ref().expect("threshold was set");
    for w in traj.trajectory.iter().filter(|w| !w.scaled.is_empty()) {
        println!("t={:>6} rate {:>6.1}: {}", w.start_s, w.mean_rate, w.scaled.join(", "));
    }
    let row = analysis.autoscale.as_ref().expect("threshold was set");
    println!(
        "autoscaled: {} servers, p99 {:.3} ms; optimized: {} servers, p99 {:.3} ms",
        row.servers_without, row.value_without, row.servers_with, row.value_with
    );
    assert!(row.servers_with <= row.servers_without);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
