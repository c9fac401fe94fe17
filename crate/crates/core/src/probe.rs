//! Measurement context shared by both optimization phases.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::audit::AuditLog;
use crate::domain::{ClusterSpec, Deployment, Floors, MrKey, PerfValue};
use crate::error::Result;
use crate::sim::{degradation, is_degraded, is_improved, Blackbox};
use crate::stressor::apply_stress_logged;

/// A blackbox plus the cluster facts needed to stress deployments on it.
pub struct Probe<'a, B: Blackbox + ?Sized> {
    pub blackbox: &'a B,
    pub cluster: &'a ClusterSpec,
    pub floors: Floors,
    /// Relative tolerance below which a change counts as "no effect".
    pub tau: f64,
}

impl<'a, B: Blackbox + ?Sized> Probe<'a, B> {
    pub fn new(blackbox: &'a B, cluster: &'a ClusterSpec, tau: f64) -> Self {
        Probe {
            blackbox,
            cluster,
            floors: cluster.floors(),
            tau,
        }
    }

    pub fn measure(&self, d: &Deployment) -> Result<PerfValue> {
        self.blackbox.measure(d)
    }

    /// Logical clock for audit events.
    pub fn now(&self) -> usize {
        self.blackbox.measurement_count()
    }

    pub fn stress(
        &self,
        d: &Deployment,
        targets: &[MrKey],
        fraction: f64,
        audit: &mut AuditLog,
    ) -> Result<Deployment> {
        let (out, events) =
            apply_stress_logged(d, targets, fraction, self.cluster, &self.floors, self.now())?;
        audit.events.extend(events);
        Ok(out)
    }

    /// Stresses `targets` together and measures the result.
    pub fn stress_and_measure(
        &self,
        d: &Deployment,
        targets: &[MrKey],
        fraction: f64,
        audit: &mut AuditLog,
    ) -> Result<PerfValue> {
        let stressed = self.stress(d, targets, fraction, audit)?;
        self.measure(&stressed)
    }

    pub fn degraded(&self, candidate: &PerfValue, baseline: &PerfValue) -> Result<bool> {
        is_degraded(candidate, baseline, self.tau)
    }

    pub fn improved(&self, candidate: &PerfValue, baseline: &PerfValue) -> Result<bool> {
        is_improved(candidate, baseline, self.tau)
    }

    pub fn degradation(&self, candidate: &PerfValue, baseline: &PerfValue) -> f64 {
        degradation(candidate, baseline)
    }
}

/// Shuffles `items` and cuts them into `min(p, len)` contiguous groups whose
/// sizes differ by at most one.
pub fn random_partition<T: Clone, R: Rng + ?Sized>(items: &[T], p: usize, rng: &mut R) -> Vec<Vec<T>> {
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let parts = p.min(shuffled.len()).max(1);
    let base = shuffled.len() / parts;
    let extra = shuffled.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut rest = shuffled.as_slice();
    for i in 0..parts {
        let take = base + usize::from(i < extra);
        let (head, tail) = rest.split_at(take);
        if !head.is_empty() {
            out.push(head.to_vec());
        }
        rest = tail;
    }
    out
}

/// Deterministic per-purpose seed derived from a top-level seed.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    // splitmix64 over the inputs
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for b in purpose.bytes().map(u64::from).chain([index]) {
        x = x.wrapping_add(b).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}
