// The exhaustive optimum of a tiny application next to the optimizer's answer.

use tightfit::domain::server_count;
use tightfit::fixtures;
use tightfit::oracle::brute_force_best;
use tightfit::pipeline::{run_on, PipelineConfig};

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::random_small(2, 3);
    let mut cfg = PipelineConfig::for_fixture_dir(".");
    cfg.measurement.deterministic = true;
    let run = run_on(&cfg, &f, false)?;
    let k = server_count(&run.deployment);

    let best = brute_force_best(&f.model, &f.cluster, &f.workload, 4, Some(k))?;
    let ours = run.report.last_stage().value;
    println!("{} grid points on {k} server(s)", best.evaluated);
    println!("optimizer {ours:.3} ms, exhaustive {:.3} ms", best.value.value);
    println!("gap {:+.2}%", 100.0 * (ours - best.value.value) / best.value.value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
