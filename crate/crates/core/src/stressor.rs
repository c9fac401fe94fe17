//! Stress arithmetic: how much to take away from an MR, and how.
//!
//! Probing only ever reduces allocations. A reduction is a fraction of the
//! hosting server's capacity for that kind, and the fraction shrinks
//! geometrically from one iteration to the next.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::audit::AuditEvent;
use crate::domain::{ClusterSpec, Deployment, Floors, MrKey};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressSchedule {
    pub initial_fraction: f64,
    pub decay: f64,
    pub iteration: u32,
}

impl Default for StressSchedule {
    fn default() -> Self {
        StressSchedule {
            initial_fraction: 0.30,
            decay: 1.2,
            iteration: 0,
        }
    }
}

impl StressSchedule {
    pub fn at(iteration: u32) -> Self {
        StressSchedule {
            iteration,
            ..StressSchedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return Err(Error::invalid("initial_fraction must lie in (0, 1)"));
        }
        if !(self.decay > 1.0 && self.decay.is_finite()) {
            return Err(Error::invalid("decay must be > 1"));
        }
        Ok(())
    }

    pub fn advance(&mut self) {
        self.iteration += 1;
    }

    pub fn next(self) -> Self {
        StressSchedule {
            iteration: self.iteration + 1,
            ..self
        }
    }
}

/// `initial_fraction / decay^iteration`.
pub fn stress_fraction(s: &StressSchedule) -> f64 {
    s.initial_fraction / s.decay.powi(s.iteration as i32)
}

/// Amount a stress at `fraction` removes from `mr`: `fraction` of the hosting
/// server's capacity for the kind.
pub fn stress_delta(d: &Deployment, mr: &MrKey, fraction: f64, cluster: &ClusterSpec) -> Result<f64> {
    let server = d
        .server_of(&mr.instance)
        .ok_or_else(|| Error::UnknownMr(mr.clone()))?;
    Ok(fraction * cluster.capacity(server)?[mr.kind])
}

/// Reduces every target by `fraction` of its server's capacity, clamped at the floor.
///
/// Placement and non-target allocations are untouched; nothing ever increases.
pub fn apply_stress<'a>(
    d: &Deployment,
    targets: impl IntoIterator<Item = &'a MrKey>,
    fraction: f64,
    cluster: &ClusterSpec,
    floors: &Floors,
) -> Result<Deployment> {
    Ok(apply_stress_logged(d, targets, fraction, cluster, floors, 0)?.0)
}

/// [`apply_stress`] that also returns one audit event per target.
pub fn apply_stress_logged<'a>(
    d: &Deployment,
    targets: impl IntoIterator<Item = &'a MrKey>,
    fraction: f64,
    cluster: &ClusterSpec,
    floors: &Floors,
    timestamp: usize,
) -> Result<(Deployment, Vec<AuditEvent>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("stress fraction {fraction} outside (0, 1)")));
    }
    let mut out = d.clone();
    let mut events = Vec::new();
    let unique: BTreeSet<&MrKey> = targets.into_iter().collect();
    for mr in unique {
        let old = d.amount(mr)?;
        let delta = stress_delta(d, mr, fraction, cluster)?;
        let floor = floors.get(mr.kind);
        let (new, clamped) = if old - delta < floor {
            (old.min(floor), true)
        } else {
            (old - delta, false)
        };
        out.allocation.insert(mr.clone(), new);
        events.push(AuditEvent::Stress {
            timestamp,
            mr: mr.clone(),
            old,
            new,
            fraction,
            clamped,
        });
    }
    Ok((out, events))
}

/// Quota left after taking one core away from a `cores`-core allocation.
pub fn stress_cpu_by_core_removal(quota: f64, cores: u32) -> Result<f64> {
    if cores == 0 {
        return Err(Error::invalid("core count must be >= 1"));
    }
    if !(quota > 0.0) {
        return Err(Error::invalid("quota must be > 0"));
    }
    Ok(quota / f64::from(cores) * f64::from(cores - 1))
}

/// Bandwidth cap after imposing `k_percent` stress on `max_bw`.
///
/// `k_percent` is clamped into `[0, 100]`.
pub fn stress_net_limit(max_bw: f64, k_percent: f64) -> f64 {
    let k = k_percent.clamp(0.0, 100.0);
    max_bw * (100.0 - k) / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ResourceKind, Resources};

    fn setup() -> (Deployment, ClusterSpec) {
        let cluster = ClusterSpec::uniform("s", 2, Resources::new(4.0, 4096.0, 200.0, 1000.0));
        let d = Deployment::new()
            .with_instance("a", "s1", Resources::new(3.0, 1024.0, 50.0, 20.0))
            .with_instance("b", "s2", Resources::new(1.0, 512.0, 100.0, 500.0));
        (d, cluster)
    }

    #[test]
    fn schedule_values() {
        assert!((stress_fraction(&StressSchedule::at(0)) - 0.30).abs() < 1e-12);
        assert!((stress_fraction(&StressSchedule::at(1)) - 0.25).abs() < 1e-12);
        assert!((stress_fraction(&StressSchedule::at(2)) - 0.30 / 1.44).abs() < 1e-9);
    }

    #[test]
    fn cpu_stress_uses_hosting_capacity() {
        let (d, cluster) = setup();
        let mr = MrKey::new("a", ResourceKind::Cpu);
        let out = apply_stress(&d, [&mr], 0.30, &cluster, &cluster.floors()).unwrap();
        assert!((out.get(&mr).unwrap() - 1.8).abs() < 1e-12);
        assert_eq!(out.placement, d.placement);
    }

    #[test]
    fn stress_at_floor_is_unchanged() {
        let (d, cluster) = setup();
        // net floor = 20
        let mr = MrKey::new("a", ResourceKind::NetBw);
        let (out, events) =
            apply_stress_logged(&d, [&mr], 0.30, &cluster, &cluster.floors(), 0).unwrap();
        assert_eq!(out, d);
        assert!(matches!(events[..], [AuditEvent::Stress { clamped: true, .. }]));
    }

    #[test]
    fn empty_targets_is_identity() {
        let (d, cluster) = setup();
        let out = apply_stress(&d, std::iter::empty(), 0.3, &cluster, &cluster.floors()).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn unknown_target_errors() {
        let (d, cluster) = setup();
        let mr = MrKey::new("ghost", ResourceKind::Cpu);
        assert!(apply_stress(&d, [&mr], 0.3, &cluster, &cluster.floors()).is_err());
    }

    #[test]
    fn core_removal() {
        assert_eq!(stress_cpu_by_core_removal(4.0, 4).unwrap(), 3.0);
        assert_eq!(stress_cpu_by_core_removal(2.0, 1).unwrap(), 0.0);
        assert_eq!(stress_cpu_by_core_removal(3.0, 3).unwrap(), 2.0);
        assert!(stress_cpu_by_core_removal(3.0, 0).is_err());
    }

    #[test]
    fn net_limit() {
        assert_eq!(stress_net_limit(1000.0, 30.0), 700.0);
        assert_eq!(stress_net_limit(1000.0, 0.0), 1000.0);
        assert_eq!(stress_net_limit(1000.0, 100.0), 0.0);
    }
}
