// The decaying stress schedule and what one stress step removes from an MR.

use tightfit::domain::{MrKey, ResourceKind};
use tightfit::fixtures;
use tightfit::stressor::{apply_stress, stress_delta, stress_fraction, StressSchedule};

pub fn run_example() -> tightfit::Result<()> {
    let mut s = StressSchedule::default();
    for _ in 0..6 {
        println!("iteration {}: fraction {:.4}", s.iteration, stress_fraction(&s));
        s.advance();
    }

    let f = fixtures::mean();
    let floors = f.cluster.floors();
    let mr = MrKey::new("api", ResourceKind::Cpu);
    let before = f.deployment.amount(&mr)?;
    let delta = stress_delta(&f.deployment, &mr, 0.3, &f.cluster)?;
    let stressed = apply_stress(&f.deployment, std::slice::from_ref(&mr), 0.3, &f.cluster, &floors)?;
    let after = stressed.amount(&mr)?;
    println!("{mr}: {before} -> {after} (delta {delta}, floor {})", floors.get(ResourceKind::Cpu));
    assert!((after - (before - delta).max(floors.get(ResourceKind::Cpu))).abs() < 1e-12);
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
