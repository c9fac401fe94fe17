// Phase 2 on the apartment fixture: spare capacity goes to the instances
// that need it, then colocated MRs trade resources while p99 keeps falling.

use tightfit::clampdown::{run_phase1, ClampdownConfig};
use tightfit::fixtures;
use tightfit::improver::{run_phase2, server_kind_totals, ImproverConfig};
use tightfit::probe::Probe;
use tightfit::sim::SimEvaluator;

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::apartment();
    let ev = SimEvaluator::deterministic(&f.model, &f.workload)?;
    let probe = Probe::new(&ev, &f.cluster, 0.0);
    let p1 = run_phase1(&probe, &f.deployment, &f.constraints, &ClampdownConfig::default())?;
    let p2 = run_phase2(&probe, &p1.deployment, &p1.impact, &ImproverConfig::default())?;

    let r = &p2.report;
    println!("entering p99 {:.3} ms", r.entering_value);
    for g in &r.leftover {
        println!("  leftover {} {} -> {} (+{:.2})", g.server, g.kind, g.instance, g.amount);
    }
    println!("after leftover {:.3} ms (kept: {})", r.leftover_value, r.leftover_kept);
    for s in &p2.steps {
        println!(
            "  {} -> {}: {:.2} of {:.2} proposed, {}",
            s.donor,
            s.recipient,
            s.amount,
            s.proposed,
            s.outcome.as_str()
        );
    }
    println!("final {:.3} ms, stopped: {}", r.final_value, r.stop_reason);

    // Transfers move resources around a server, never onto or off it.
    let granted = tightfit::improver::assign_leftover(&p1.deployment, &p1.impact, &f.cluster)?.0;
    if r.leftover_kept {
        assert_eq!(server_kind_totals(&granted), server_kind_totals(&p2.deployment));
    }
    assert!(r.final_value <= 0.95 * r.entering_value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
