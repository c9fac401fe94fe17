//! Phase 2: hand unallocated server capacity to the instances that need it most,
//! then shift resources between colocated MRs of the same kind by discrete
//! gradient steps.
//!
//! Placement is never touched here, so per-server totals only change when
//! leftover capacity is granted; every transfer conserves them.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, AuditLog};
use crate::domain::{ClusterSpec, Deployment, Floors, InstanceId, MrKey, PerfValue, ResourceKind, EPS};
use crate::error::{Error, Result};
use crate::probe::{derive_seed, random_partition, Probe};
use crate::sim::{is_degraded, Blackbox, ImpactTable};
use crate::stressor::{stress_fraction, StressSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImproverConfig {
    pub partitions: usize,
    pub schedule: StressSchedule,
    pub min_fraction: f64,
    /// Stop once an iteration improves by no more than this relative amount.
    pub improvement_threshold: f64,
    /// Binary-search resolution as a fraction of the hosting server's capacity.
    pub resolution: f64,
    pub max_halvings: u32,
    pub max_iterations: usize,
    /// A donor's degradation may be at most this multiple of the recipient's.
    pub donor_margin: f64,
    pub seed: u64,
}

impl Default for ImproverConfig {
    fn default() -> Self {
        ImproverConfig {
            partitions: 4,
            schedule: StressSchedule::default(),
            min_fraction: 0.01,
            improvement_threshold: 0.01,
            resolution: 0.01,
            max_halvings: 7,
            max_iterations: 50,
            donor_margin: 0.5,
            seed: 0,
        }
    }
}

impl ImproverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partitions < 2 {
            return Err(Error::invalid("partitions must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.donor_margin) {
            return Err(Error::invalid("donor_margin must lie in [0, 1)"));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::invalid("resolution must be > 0"));
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferOutcome {
    Kept,
    RefinedByBinarySearch,
    Backtracked,
}

impl TransferOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferOutcome::Kept => "kept",
            TransferOutcome::RefinedByBinarySearch => "refined_by_binary_search",
            TransferOutcome::Backtracked => "backtracked",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferStep {
    pub donor: MrKey,
    pub recipient: MrKey,
    /// Amount actually moved; zero when backtracked.
    pub amount: f64,
    /// Amount first tried.
    pub proposed: f64,
    pub measured_before: PerfValue,
    pub measured_after: PerfValue,
    pub outcome: TransferOutcome,
    /// Every (amount, value) pair measured while resolving this step.
    pub probes: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeftoverGrant {
    pub server: crate::domain::ServerId,
    pub kind: ResourceKind,
    pub instance: InstanceId,
    pub amount: f64,
    /// No colocated instance showed any impact for this kind.
    pub forced_tie_break: bool,
}

/// Gives each server's unallocated capacity of each kind to the colocated
/// instance most impacted by that kind.
pub fn assign_leftover(
    d: &Deployment,
    impact: &ImpactTable,
    cluster: &ClusterSpec,
) -> Result<(Deployment, Vec<LeftoverGrant>)> {
    let mut out = d.clone();
    let mut grants = Vec::new();
    for server in d.servers() {
        let capacity = cluster.capacity(server)?;
        let totals = d.server_totals(server);
        let hosted: Vec<&InstanceId> = d.instances_on(server).collect();
        for kind in ResourceKind::ALL {
            let slack = capacity[kind] - totals[kind];
            if slack <= EPS {
                continue;
            }
            // Instances are sorted by id, so the first maximum wins ties.
            let mut best = hosted[0];
            for &inst in &hosted[1..] {
                if impact.of(inst, kind) > impact.of(best, kind) {
                    best = inst;
                }
            }
            let mr = MrKey::new(best.clone(), kind);
            let old = out.amount(&mr)?;
            out.allocation.insert(mr, old + slack);
            grants.push(LeftoverGrant {
                server: server.clone(),
                kind,
                instance: best.clone(),
                amount: slack,
                forced_tie_break: hosted.iter().all(|i| impact.of(i, kind) <= 0.0),
            });
        }
    }
    Ok((out, grants))
}

/// MR ranking from one pruned gradient round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Members of the most-impacted partition, individually measured, most impacted first.
    pub members: Vec<(MrKey, f64)>,
    /// Every other MR scored with its partition's joint degradation.
    pub others: Vec<(MrKey, f64)>,
    pub measurements: usize,
}

impl Ranking {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members followed by the partition-scored MRs.
    pub fn ordered(&self) -> Vec<(MrKey, f64)> {
        self.members.iter().chain(&self.others).cloned().collect()
    }
}

fn sort_desc(v: &mut [(MrKey, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Stresses `p` random partitions, then each member of the worst one.
///
/// Costs `p + |worst partition|` measurements. Returns an empty ranking when no
/// partition degrades performance beyond tolerance.
pub fn rank_impacts_pruned<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    baseline: &PerfValue,
    fraction: f64,
    p: usize,
    seed: u64,
    audit: &mut AuditLog,
) -> Result<Ranking> {
    if p < 2 {
        return Err(Error::invalid("partition count must be >= 2"));
    }
    let start = probe.now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = random_partition(&d.mr_keys(), p, &mut rng);
    let mut scores = Vec::with_capacity(parts.len());
    for part in &parts {
        let v = probe.stress_and_measure(d, part, fraction, audit)?;
        scores.push((probe.degradation(&v, baseline), probe.degraded(&v, baseline)?));
    }
    let Some(worst) = (0..parts.len())
        .filter(|&i| scores[i].1)
        .max_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0).then(b.cmp(&a)))
    else {
        return Ok(Ranking {
            measurements: probe.now() - start,
            ..Ranking::default()
        });
    };

    let mut members = Vec::with_capacity(parts[worst].len());
    for mr in &parts[worst] {
        let v = probe.stress_and_measure(d, std::slice::from_ref(mr), fraction, audit)?;
        members.push((mr.clone(), probe.degradation(&v, baseline)));
    }
    let mut others: Vec<(MrKey, f64)> = parts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != worst)
        .flat_map(|(i, part)| {
            let score = scores[i].0;
            part.iter().map(move |mr| (mr.clone(), score))
        })
        .collect();
    sort_desc(&mut members);
    sort_desc(&mut others);
    Ok(Ranking {
        members,
        others,
        measurements: probe.now() - start,
    })
}

/// First (donor, recipient) pair that is colocated, of one kind, with the donor
/// clearly less impacted and above its floor.
///
/// Recipients are scanned from the top of `ranking`, donors from the bottom.
pub fn propose_transfer(
    ranking: &[(MrKey, f64)],
    d: &Deployment,
    floors: &Floors,
    donor_margin: f64,
) -> Option<(MrKey, MrKey)> {
    for (recipient, r_deg) in ranking {
        if *r_deg <= 0.0 {
            continue;
        }
        for (donor, d_deg) in ranking.iter().rev() {
            if donor == recipient
                || donor.kind != recipient.kind
                || !d.colocated(&donor.instance, &recipient.instance)
                || *d_deg >= *r_deg
                || *d_deg > donor_margin * r_deg
            {
                continue;
            }
            match d.get(donor) {
                Some(v) if !floors.is_at_floor(donor.kind, v) => {
                    return Some((donor.clone(), recipient.clone()));
                }
                _ => continue,
            }
        }
    }
    None
}

fn moved(d: &Deployment, donor: &MrKey, recipient: &MrKey, amount: f64, floor: f64) -> Deployment {
    let mut out = d.clone();
    let from = d.allocation[donor];
    let to = d.allocation[recipient];
    out.allocation.insert(donor.clone(), (from - amount).max(floor));
    out.allocation.insert(recipient.clone(), to + amount);
    out
}

/// Moves `delta` from donor to recipient and keeps it only if performance improves.
///
/// An unchanged result triggers a halving search over smaller amounts; a
/// degraded one is reverted exactly.
#[allow(clippy::too_many_arguments)]
pub fn execute_transfer<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    pair: (&MrKey, &MrKey),
    delta: f64,
    baseline_iter: &PerfValue,
    resolution: f64,
    max_halvings: u32,
    audit: &mut AuditLog,
) -> Result<(Deployment, TransferStep)> {
    let (donor, recipient) = pair;
    if donor.kind != recipient.kind {
        return Err(Error::invalid(format!("{donor} and {recipient} differ in kind")));
    }
    if !d.colocated(&donor.instance, &recipient.instance) {
        return Err(Error::invalid(format!("{donor} and {recipient} are not colocated")));
    }
    let floor = probe.floors.get(donor.kind);
    let headroom = d.amount(donor)? - floor;
    d.amount(recipient)?;
    if !(delta >= 0.0) || delta > headroom + EPS {
        return Err(Error::DonorFloor {
            donor: donor.clone(),
            amount: delta,
            headroom,
        });
    }

    let mut step = TransferStep {
        donor: donor.clone(),
        recipient: recipient.clone(),
        amount: 0.0,
        proposed: delta,
        measured_before: *baseline_iter,
        measured_after: *baseline_iter,
        outcome: TransferOutcome::Backtracked,
        probes: Vec::new(),
    };
    let mut result = d.clone();

    if delta > EPS {
        let candidate = moved(d, donor, recipient, delta, floor);
        let value = probe.measure(&candidate)?;
        step.probes.push((delta, value.value));
        if probe.improved(&value, baseline_iter)? {
            step.outcome = TransferOutcome::Kept;
            step.amount = delta;
            step.measured_after = value;
            result = candidate;
        } else if !probe.degraded(&value, baseline_iter)? {
            let mut amount = delta;
            for _ in 0..max_halvings {
                amount /= 2.0;
                if amount < resolution {
                    break;
                }
                let candidate = moved(d, donor, recipient, amount, floor);
                let value = probe.measure(&candidate)?;
                step.probes.push((amount, value.value));
                if probe.improved(&value, baseline_iter)? {
                    step.outcome = TransferOutcome::RefinedByBinarySearch;
                    step.amount = amount;
                    step.measured_after = value;
                    result = candidate;
                    break;
                }
            }
        }
    }

    audit.push(AuditEvent::Transfer {
        timestamp: probe.now(),
        donor: donor.clone(),
        recipient: recipient.clone(),
        amount: step.amount,
        before: step.measured_before.value,
        after: step.measured_after.value,
        outcome: step.outcome.as_str().to_owned(),
    });
    Ok((result, step))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Iteration {
    pub iteration: usize,
    pub fraction: f64,
    pub ranking: Vec<(MrKey, f64)>,
    pub measurements: usize,
    pub step: Option<TransferStep>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Report {
    pub entering_value: f64,
    pub leftover: Vec<LeftoverGrant>,
    pub leftover_value: f64,
    pub leftover_kept: bool,
    pub iterations: Vec<Phase2Iteration>,
    pub trajectory: Vec<f64>,
    pub final_value: f64,
    pub stop_reason: String,
    pub measurements: usize,
}

#[derive(Clone, Debug)]
pub struct Phase2Result {
    pub deployment: Deployment,
    pub steps: Vec<TransferStep>,
    pub final_value: PerfValue,
    pub audit: AuditLog,
    pub report: Phase2Report,
}

/// Leftover assignment followed by pruned gradient transfers.
pub fn run_phase2<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d1: &Deployment,
    impact: &ImpactTable,
    config: &ImproverConfig,
) -> Result<Phase2Result> {
    config.validate()?;
    let start = probe.now();
    let mut audit = AuditLog::new();
    let entering = probe.measure(d1)?;

    let (with_leftover, grants) = assign_leftover(d1, impact, probe.cluster)?;
    let leftover_value = probe.measure(&with_leftover)?;
    // Extra capacity never hurts the model, but a noisy reading might say so.
    let leftover_kept = !is_degraded(&leftover_value, &entering, 0.0)?;
    let (mut d, mut value) = if leftover_kept {
        let now = probe.now();
        for g in &grants {
            audit.push(AuditEvent::Leftover {
                timestamp: now,
                server: g.server.clone(),
                kind: g.kind,
                mr: MrKey::new(g.instance.clone(), g.kind),
                amount: g.amount,
                forced_tie_break: g.forced_tie_break,
            });
        }
        (with_leftover, leftover_value)
    } else {
        (d1.clone(), entering)
    };

    let mut schedule = config.schedule;
    let mut steps = Vec::new();
    let mut iterations = Vec::new();
    let mut trajectory = vec![entering.value, value.value];
    let mut stop_reason = "max_iterations".to_owned();

    for it in 0..config.max_iterations {
        let fraction = stress_fraction(&schedule).max(config.min_fraction);
        let seed = derive_seed(config.seed, "rank", it as u64);
        let ranking = rank_impacts_pruned(probe, &d, &value, fraction, config.partitions, seed, &mut audit)?;
        let ordered = ranking.ordered();
        let mut record = Phase2Iteration {
            iteration: it,
            fraction,
            ranking: ordered.clone(),
            measurements: ranking.measurements,
            step: None,
            value: value.value,
        };
        if ranking.is_empty() {
            iterations.push(record);
            stop_reason = "no_impacted_partition".into();
            break;
        }
        let Some((donor, recipient)) = propose_transfer(&ordered, &d, &probe.floors, config.donor_margin) else {
            iterations.push(record);
            stop_reason = "no_transfer_candidate".into();
            break;
        };
        let server = d
            .server_of(&donor.instance)
            .ok_or_else(|| Error::UnknownMr(donor.clone()))?;
        let capacity = probe.cluster.capacity(server)?[donor.kind];
        let headroom = d.amount(&donor)? - probe.floors.get(donor.kind);
        let delta = (fraction * capacity).min(headroom).max(0.0);
        let (next, step) = execute_transfer(
            probe,
            &d,
            (&donor, &recipient),
            delta,
            &value,
            config.resolution * capacity,
            config.max_halvings,
            &mut audit,
        )?;
        let before = value.value;
        value = step.measured_after;
        d = next;
        record.value = value.value;
        record.step = Some(step.clone());
        iterations.push(record);
        steps.push(step);
        trajectory.push(value.value);
        schedule.advance();

        let gain = if value.lower_is_better {
            (before - value.value) / before
        } else {
            (value.value - before) / before
        };
        if gain <= config.improvement_threshold {
            stop_reason = "improvement_below_threshold".into();
            break;
        }
    }

    let report = Phase2Report {
        entering_value: entering.value,
        leftover: if leftover_kept { grants } else { Vec::new() },
        leftover_value: leftover_value.value,
        leftover_kept,
        iterations,
        trajectory,
        final_value: value.value,
        stop_reason,
        measurements: probe.now() - start,
    };
    Ok(Phase2Result {
        deployment: d,
        steps,
        final_value: value,
        audit,
        report,
    })
}

/// Per-server, per-kind allocation totals. Transfers must leave these unchanged.
pub fn server_kind_totals(d: &Deployment) -> BTreeMap<(crate::domain::ServerId, ResourceKind), f64> {
    let mut out = BTreeMap::new();
    for server in d.servers() {
        let totals = d.server_totals(server);
        for kind in ResourceKind::ALL {
            out.insert((server.clone(), kind), totals[kind]);
        }
    }
    out
}
