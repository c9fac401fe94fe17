// Phase 1 on the HotROD-style chain: tighten every MR as far as it goes
// without hurting p99, then pack the result onto fewer servers.

use tightfit::clampdown::{run_phase1, ClampdownConfig};
use tightfit::domain::server_count;
use tightfit::fixtures;
use tightfit::pipeline::describe;
use tightfit::probe::Probe;
use tightfit::sim::SimEvaluator;

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::hotrod();
    let ev = SimEvaluator::deterministic(&f.model, &f.workload)?;
    let probe = Probe::new(&ev, &f.cluster, 0.0);
    let r = run_phase1(&probe, &f.deployment, &f.constraints, &ClampdownConfig::default())?;

    println!("before: {}", describe(&f.cluster, &f.deployment));
    for round in &r.report.rounds {
        println!(
            "  round {} at fraction {:.4}: {} impacted, {} reduced",
            round.iteration,
            round.fraction,
            round.imrs.len(),
            round.committed.len()
        );
    }
    println!("after:  {}", describe(&f.cluster, &r.deployment));
    println!("p99 {:.3} -> {:.3} ms", r.baseline.value, r.final_value.value);
    assert!(server_count(&r.deployment) * 2 <= server_count(&f.deployment));
    assert!(r.final_value.value <= r.baseline.value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
