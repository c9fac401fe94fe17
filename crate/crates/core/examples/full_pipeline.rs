// Both phases from a config, the way the command-line tool runs them, with
// report.json and audit.jsonl written to a scratch directory.

use tightfit::fixtures;
use tightfit::pipeline::{run_pipeline, write_run, PipelineConfig};

pub fn run_example() -> tightfit::Result<()> {
    let dir = std::env::temp_dir().join(format!("tightfit-full-{}", std::process::id()));
    let f = fixtures::elk();
    f.save(&dir)?;

    let mut cfg = PipelineConfig::for_fixture_dir(&dir);
    cfg.seed = 11;
    cfg.measurement.trials = 9;
    let run = run_pipeline(&cfg, false)?;
    for s in &run.report.stages {
        println!("{:<10} {} servers  p99 {:.3} ms", s.stage, s.servers, s.value);
    }
    println!("{} measurements, tau {}", run.report.measurements, run.report.tau);

    write_run(&run, dir.join("out"))?;
    let audit = std::fs::read_to_string(dir.join("out/audit.jsonl"))?;
    println!("audit: {} events", audit.lines().count());
    assert_eq!(audit.lines().count(), run.audit.len());

    let initial = run.report.stages[0].value;
    assert!(run.report.last_stage().value <= initial * (1.0 + run.report.tau));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
