// Measures a deployment with the simulator, once exactly and once with
// measurement noise, and shows how p99 latency reacts to load.

use tightfit::fixtures;
use tightfit::sim::{evaluate, Blackbox, MeasureConfig, SimEvaluator};

pub fn run_example() -> tightfit::Result<()> {
    let f = fixtures::elk();
    let exact = evaluate(&f.model, &f.deployment, &f.workload, true)?;
    println!("{} at {} rps: p99 = {:.3} ms", f.name, f.workload.request_rate, exact.value);

    let noisy = SimEvaluator::new(&f.model, &f.workload, MeasureConfig::default())?;
    let a = noisy.measure(&f.deployment)?;
    let b = noisy.measure(&f.deployment)?;
    println!("noisy: {:.3} ms, repeat {:.3} ms", a.value, b.value);
    // Same deployment, same seed: the noise stream repeats.
    assert_eq!(a, b);

    let mut last = 0.0;
    for rate in [5.0, 20.0, 40.0, 80.0] {
        let v = evaluate(&f.model, &f.deployment, &f.workload.with_rate(rate), true)?.value;
        println!("  {rate:>5} rps -> {v:.3} ms");
        assert!(v >= last);
        last = v;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    run_example()
}
