// Checks a deployment against its cluster and constraints, then breaks it
// on purpose to show the violations that come back.

use tightfit::domain::{validate_deployment, PlacementConstraint, ResourceKind, MrKey};
use tightfit::fixtures;

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::mean();
    let report = validate_deployment(&f.deployment, &f.cluster, &f.constraints);
    println!("{}: {} MRs, valid = {}", f.name, f.mr_count(), report.is_ok());
    assert!(report.is_ok());

    // Overcommit the web server's cpu and demand that api and db share a host.
    let mut broken = f.deployment.clone();
    broken.allocation.insert(MrKey::new("web", ResourceKind::Cpu), 100.0);
    let together = PlacementConstraint::colocate(["api", "db"]);
    let report = validate_deployment(&broken, &f.cluster, &[together]);
    for v in &report.violations {
        println!("  violation: {v}");
    }
    assert_eq!(report.violations.len(), 2);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
