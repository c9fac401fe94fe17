// A week of diurnal load against a ladder of deployments: how much extra
// capacity each overprovisioning factor buys and how often it has to switch.

use tightfit::dynamic::{simulate_switching, standard_curve, DeploymentFamily, DEFAULT_WINDOW_S};
use tightfit::fixtures;

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::mean();
    let trace = fixtures::diurnal_trace(3, 20.0, true);
    println!(
        "{} samples, mean {:.1} rps, peak {:.1} rps",
        trace.samples().len(),
        trace.mean_rate(),
        trace.max_rate()
    );

    let reference = f.cluster.max_capacity();
    let curve = standard_curve(&trace, &f.deployment, &reference, DEFAULT_WINDOW_S)?;
    println!("factor  extra%  hours/change  overloaded%");
    for row in &curve {
        println!(
            "{:>6.1} {:>7.1} {:>13.2} {:>12.2}",
            row.factor, row.percent_extra_resources, row.mean_hours_between_changes, row.pct_time_overloaded
        );
    }
    for pair in curve.windows(2) {
        assert!(pair[1].percent_extra_resources >= pair[0].percent_extra_resources);
    }

    let family = DeploymentFamily::geometric(&f.deployment, trace.mean_rate(), 1.6, trace.min_rate(), trace.max_rate())?;
    let (events, _) = simulate_switching(&trace, &family, DEFAULT_WINDOW_S)?;
    for e in events.iter().take(5) {
        println!("  t={:>7} {:?} {:.1} -> {:.1}", e.time, e.direction, e.from_design_rate, e.to_design_rate);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
