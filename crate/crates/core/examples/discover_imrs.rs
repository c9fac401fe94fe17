// Finds the impacted MRs of a 48-MR deployment by recursive partition
// stressing and compares the cost with stressing every MR on its own.

use tightfit::audit::AuditLog;
use tightfit::clampdown::discover_imrs;
use tightfit::fixtures;
use tightfit::oracle::exhaustive_imr_set;
use tightfit::probe::Probe;
use tightfit::sim::{Blackbox, SimEvaluator};

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::apartment();
    let ev = SimEvaluator::deterministic(&f.model, &f.workload)?;
    let probe = Probe::new(&ev, &f.cluster, 0.0);
    let baseline = probe.measure(&f.deployment)?;

    let found = discover_imrs(&probe, &f.deployment, &baseline, 0.3, 4, 7, &mut AuditLog::new())?;
    println!("{} MRs, {} impacted, {} measurements", f.mr_count(), found.imrs.len(), found.measurements);
    for mr in &found.imrs {
        println!("  {mr:<24} {:+.4}", found.impact.get(mr));
    }

    let before = ev.measurement_count();
    let every = exhaustive_imr_set(&probe, &f.deployment, &baseline, 0.3)?;
    println!("one-at-a-time sweep: {} measurements", ev.measurement_count() - before);
    assert_eq!(found.imrs, every);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
