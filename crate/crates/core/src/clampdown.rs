//! Phase 1: find which MRs matter, squeeze everything else, then repack the
//! instances onto as few servers as performance allows.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, AuditLog};
use crate::domain::{
    server_count, validate_constraints, validate_deployment, ClusterSpec, ConstraintKind,
    Deployment, InstanceId, MrKey, PerfValue, PlacementConstraint, ResourceKind, Resources,
    ServerId,
};
use crate::error::{Error, Result};
use crate::probe::{derive_seed, random_partition, Probe};
use crate::sim::{Blackbox, ImpactTable};
use crate::stressor::{stress_fraction, StressSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClampdownConfig {
    /// Number of random partitions per split.
    pub partitions: usize,
    pub schedule: StressSchedule,
    /// Once the schedule decays below this fraction it stays here.
    pub min_fraction: f64,
    /// Guard on tightening rounds.
    pub max_rounds: usize,
    /// Shuffled placement orders tried per server count.
    pub max_variants: usize,
    pub seed: u64,
}

impl Default for ClampdownConfig {
    fn default() -> Self {
        ClampdownConfig {
            partitions: 4,
            schedule: StressSchedule::default(),
            min_fraction: 0.01,
            max_rounds: 200,
            max_variants: 10,
            seed: 0,
        }
    }
}

impl ClampdownConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partitions < 2 {
            return Err(Error::invalid("partitions must be >= 2"));
        }
        if !(self.min_fraction > 0.0 && self.min_fraction < 1.0) {
            return Err(Error::invalid("min_fraction must lie in (0, 1)"));
        }
        self.schedule.validate()
    }
}

/// Outcome of one recursive partition search.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Discovery {
    /// MRs whose individual stress degrades performance.
    pub imrs: BTreeSet<MrKey>,
    /// Singleton degradations observed during the search.
    pub impact: ImpactTable,
    /// Groups whose joint stress left performance within tolerance, in probe order.
    pub clean_groups: Vec<Vec<MrKey>>,
    pub measurements: usize,
}

/// Recursive partitioned stressing over every MR of `d`.
pub fn discover_imrs<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    baseline: &PerfValue,
    fraction: f64,
    p: usize,
    seed: u64,
    audit: &mut AuditLog,
) -> Result<Discovery> {
    discover_imrs_in(probe, d, &d.mr_keys(), baseline, fraction, p, seed, audit)
}

/// [`discover_imrs`] restricted to `universe`.
///
/// The universe is split into `p` random partitions, each stressed as a whole.
/// Degraded partitions are split again until singletons remain; a degraded
/// singleton is an IMR.
#[allow(clippy::too_many_arguments)]
pub fn discover_imrs_in<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    universe: &[MrKey],
    baseline: &PerfValue,
    fraction: f64,
    p: usize,
    seed: u64,
    audit: &mut AuditLog,
) -> Result<Discovery> {
    if p < 2 {
        return Err(Error::invalid("partition count must be >= 2"));
    }
    for mr in universe {
        d.amount(mr)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Discovery {
        impact: ImpactTable::new(baseline.value, fraction),
        ..Discovery::default()
    };
    let mut sorted = universe.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.is_empty() {
        return Ok(out);
    }
    let start = probe.now();
    let mut pending: Vec<Vec<MrKey>> = random_partition(&sorted, p, &mut rng);
    pending.reverse();
    // Depth-first over the partition tree, children visited in split order.
    while let Some(group) = pending.pop() {
        let value = probe.stress_and_measure(d, &group, fraction, audit)?;
        let degraded = probe.degraded(&value, baseline)?;
        if group.len() == 1 {
            let mr = group[0].clone();
            out.impact.record(mr.clone(), probe.degradation(&value, baseline));
            if degraded {
                out.imrs.insert(mr);
            } else {
                out.clean_groups.push(group);
            }
        } else if degraded {
            let mut children = random_partition(&group, p, &mut rng);
            children.reverse();
            pending.extend(children);
        } else {
            out.clean_groups.push(group);
        }
    }
    out.measurements = probe.now() - start;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommittedReduction {
    pub mr: MrKey,
    pub old: f64,
    pub new: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightenRound {
    pub iteration: u32,
    pub fraction: f64,
    pub probed: usize,
    pub imrs: Vec<MrKey>,
    pub committed: Vec<CommittedReduction>,
    /// False when committing every NIMR at once degraded performance and the
    /// groups were committed one by one instead.
    pub batch_commit: bool,
    pub measurements: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tightened {
    pub deployment: Deployment,
    pub impact: ImpactTable,
    pub rounds: Vec<TightenRound>,
    /// Fraction used by the last round; every MR above its floor degrades at it.
    pub final_fraction: f64,
}

/// Repeatedly discovers NIMRs and keeps their stressed allocation until a
/// round commits nothing. Placement never changes.
pub fn tighten<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d0: &Deployment,
    baseline: &PerfValue,
    config: &ClampdownConfig,
    audit: &mut AuditLog,
) -> Result<Tightened> {
    config.validate()?;
    let mut d = d0.clone();
    let mut schedule = config.schedule;
    let mut impact = ImpactTable::new(baseline.value, stress_fraction(&schedule));
    let mut rounds = Vec::new();
    let mut final_fraction = stress_fraction(&schedule).max(config.min_fraction);

    for round in 0..config.max_rounds {
        let fraction = stress_fraction(&schedule).max(config.min_fraction);
        final_fraction = fraction;
        let universe: Vec<MrKey> = d
            .allocation
            .iter()
            .filter(|(mr, &v)| !probe.floors.is_at_floor(mr.kind, v))
            .map(|(mr, _)| mr.clone())
            .collect();
        if universe.is_empty() {
            break;
        }
        let start = probe.now();
        let seed = derive_seed(config.seed, "tighten", round as u64);
        let disc = discover_imrs_in(probe, &d, &universe, baseline, fraction, config.partitions, seed, audit)?;
        impact.merge(disc.impact.clone());

        let (next, batch_commit) = commit_clean_groups(probe, &d, &disc.clean_groups, fraction, baseline, audit)?;
        let committed: Vec<CommittedReduction> = d
            .allocation
            .iter()
            .filter_map(|(mr, &old)| {
                let new = next.allocation[mr];
                (new != old).then(|| CommittedReduction {
                    mr: mr.clone(),
                    old,
                    new,
                })
            })
            .collect();
        let now = probe.now();
        for c in &committed {
            audit.push(AuditEvent::Commit {
                timestamp: now,
                mr: c.mr.clone(),
                old: c.old,
                new: c.new,
                fraction,
            });
        }
        let done = committed.is_empty();
        rounds.push(TightenRound {
            iteration: schedule.iteration,
            fraction,
            probed: universe.len(),
            imrs: disc.imrs.into_iter().collect(),
            committed,
            batch_commit,
            measurements: now - start,
        });
        d = next;
        if done {
            break;
        }
        schedule.advance();
    }

    Ok(Tightened {
        deployment: d,
        impact,
        rounds,
        final_fraction,
    })
}

/// Keeps the stressed allocation of every clean group. If the union degrades
/// performance, groups are added one at a time and kept only while the
/// deployment stays within tolerance of `baseline`.
fn commit_clean_groups<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    groups: &[Vec<MrKey>],
    fraction: f64,
    baseline: &PerfValue,
    audit: &mut AuditLog,
) -> Result<(Deployment, bool)> {
    if groups.is_empty() {
        return Ok((d.clone(), true));
    }
    let all: Vec<MrKey> = groups.concat();
    let batch = probe.stress(d, &all, fraction, audit)?;
    if &batch == d {
        return Ok((batch, true));
    }
    let value = probe.measure(&batch)?;
    if !probe.degraded(&value, baseline)? {
        return Ok((batch, true));
    }
    let mut cur = d.clone();
    for group in groups {
        let next = probe.stress(&cur, group, fraction, audit)?;
        if next == cur {
            continue;
        }
        let value = probe.measure(&next)?;
        if !probe.degraded(&value, baseline)? {
            cur = next;
        }
    }
    Ok((cur, false))
}

/// One candidate placement tried by [`pack`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementAttempt {
    pub target_servers: usize,
    pub servers_used: usize,
    pub variant: String,
    pub feasible: bool,
    pub value: Option<f64>,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packed {
    pub deployment: Deployment,
    /// Smallest server count a first-fit-decreasing pass admits.
    pub min_servers: usize,
    pub attempts: Vec<PlacementAttempt>,
}

/// Instances that must share a server, treated as one item.
#[derive(Clone, Debug)]
struct Unit {
    members: Vec<InstanceId>,
    size: Resources,
    kinds: BTreeSet<ResourceKind>,
    key: f64,
}

struct Packer<'a> {
    units: Vec<Unit>,
    servers: Vec<(ServerId, Resources)>,
    separations: Vec<&'a BTreeSet<InstanceId>>,
    initial: &'a BTreeMap<InstanceId, ServerId>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Strategy {
    FirstFit,
    ImpactAware,
}

impl Packer<'_> {
    fn place(&self, order: &[usize], k: usize, strategy: Strategy) -> Option<BTreeMap<InstanceId, ServerId>> {
        let k = k.min(self.servers.len());
        let mut load = vec![Resources::default(); k];
        let mut hosted: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut rr = 0usize;
        for &u in order {
            let unit = &self.units[u];
            let fits = |s: usize, hosted: &[Vec<usize>], load: &[Resources]| {
                load[s].fits_with(&unit.size, &self.servers[s].1) && self.separation_ok(unit, &hosted[s])
            };
            let chosen = match strategy {
                Strategy::FirstFit => (0..k).find(|&s| fits(s, &hosted, &load)),
                Strategy::ImpactAware => {
                    let mut best: Option<(usize, usize)> = None;
                    for s in (0..k).filter(|&s| fits(s, &hosted, &load)) {
                        let affinity = self.affinity(unit, &hosted[s]);
                        let conflict = hosted[s]
                            .iter()
                            .any(|&o| !self.units[o].kinds.is_disjoint(&unit.kinds));
                        if (affinity > 0 || !conflict) && best.is_none_or(|(_, a)| affinity > a) {
                            best = Some((s, affinity));
                        }
                    }
                    match best {
                        Some((s, _)) => Some(s),
                        None => {
                            let pick = (0..k).map(|j| (rr + j) % k).find(|&s| fits(s, &hosted, &load));
                            if let Some(s) = pick {
                                rr = s + 1;
                            }
                            pick
                        }
                    }
                }
            }?;
            load[chosen] += unit.size;
            hosted[chosen].push(u);
        }
        let mut placement = BTreeMap::new();
        for (s, units) in hosted.iter().enumerate() {
            for &u in units {
                for m in &self.units[u].members {
                    placement.insert(m.clone(), self.servers[s].0.clone());
                }
            }
        }
        Some(placement)
    }

    fn separation_ok(&self, unit: &Unit, hosted: &[usize]) -> bool {
        self.separations.iter().all(|set| {
            let here = hosted
                .iter()
                .flat_map(|&o| &self.units[o].members)
                .chain(&unit.members)
                .filter(|m| set.contains(*m))
                .count();
            here <= 1
        })
    }

    /// Instances on the candidate server that shared a server with the unit
    /// before packing.
    fn affinity(&self, unit: &Unit, hosted: &[usize]) -> usize {
        hosted
            .iter()
            .flat_map(|&o| &self.units[o].members)
            .filter(|other| {
                unit.members
                    .iter()
                    .any(|m| self.initial.get(m).is_some() && self.initial.get(m) == self.initial.get(*other))
            })
            .count()
    }

    fn ffd_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.units.len()).collect();
        order.sort_by(|&a, &b| {
            self.units[b]
                .key
                .total_cmp(&self.units[a].key)
                .then_with(|| self.units[a].members[0].cmp(&self.units[b].members[0]))
        });
        order
    }
}

fn build_units(
    d: &Deployment,
    impact: &ImpactTable,
    constraints: &[PlacementConstraint],
    cluster: &ClusterSpec,
) -> Result<Vec<Unit>> {
    let instances: Vec<InstanceId> = d.placement.keys().cloned().collect();
    let mut group_of: BTreeMap<InstanceId, usize> =
        instances.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    for c in constraints.iter().filter(|c| c.kind == ConstraintKind::MustColocate) {
        let Some(first) = c.instances.iter().next() else {
            continue;
        };
        let target = group_of[first];
        for m in &c.instances {
            let old = group_of[m];
            if old != target {
                for g in group_of.values_mut() {
                    if *g == old {
                        *g = target;
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<InstanceId>> = BTreeMap::new();
    for (id, g) in &group_of {
        groups.entry(*g).or_default().push(id.clone());
    }
    let max_cap = cluster.max_capacity();
    let mut units = Vec::new();
    for members in groups.into_values() {
        let mut size = Resources::default();
        let mut kinds = BTreeSet::new();
        let mut key = 0.0;
        for m in &members {
            let alloc = d.resources_of(m);
            size += alloc;
            let kind = impact.most_impacted_kind(m);
            kinds.insert(kind);
            key += alloc[kind] / max_cap[kind];
        }
        if !cluster
            .servers
            .iter()
            .any(|s| Resources::default().fits_with(&size, &s.capacity))
        {
            let names: Vec<&str> = members.iter().map(|m| m.as_str()).collect();
            return Err(Error::InfeasibleConstraint(format!(
                "must_colocate {{{}}} does not fit on any server",
                names.join(",")
            )));
        }
        units.push(Unit {
            members,
            size,
            kinds,
            key,
        });
    }
    for c in constraints.iter().filter(|c| c.kind == ConstraintKind::MustSeparate) {
        if c.instances.len() > cluster.servers.len() {
            return Err(Error::InfeasibleConstraint(format!(
                "{} needs {} servers, cluster has {}",
                c.describe(),
                c.instances.len(),
                cluster.servers.len()
            )));
        }
        for u in &units {
            if u.members.iter().filter(|m| c.instances.contains(*m)).count() > 1 {
                return Err(Error::InfeasibleConstraint(format!(
                    "{} separates instances that must be colocated",
                    c.describe()
                )));
            }
        }
    }
    Ok(units)
}

/// Servers already in use first, then the rest; cluster order within each group.
fn server_order(cluster: &ClusterSpec, d: &Deployment) -> Vec<(ServerId, Resources)> {
    let used = d.servers();
    let max = cluster.max_capacity();
    let size = |c: &Resources| -> f64 {
        ResourceKind::ALL
            .iter()
            .map(|&k| if max[k] > 0.0 { c[k] / max[k] } else { 0.0 })
            .sum()
    };
    let mut order: Vec<(ServerId, Resources)> = cluster.servers.iter().map(|s| (s.id.clone(), s.capacity)).collect();
    // Larger servers first; among equals, those already in use.
    order.sort_by(|a, b| {
        size(&b.1)
            .total_cmp(&size(&a.1))
            .then_with(|| used.contains(&b.0).cmp(&used.contains(&a.0)))
    });
    order
}

/// Repacks a tight deployment onto fewer servers.
///
/// Starting from the smallest server count first-fit-decreasing admits, it
/// tries an impact-aware placement, then shuffled placement orders, then plain
/// first-fit-decreasing, keeping the first candidate whose measured value is
/// not degraded against `baseline`. When every candidate at a server count
/// fails, the count grows; at the original count the original placement is kept.
#[allow(clippy::too_many_arguments)]
pub fn pack<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d_tight: &Deployment,
    impact: &ImpactTable,
    constraints: &[PlacementConstraint],
    baseline: &PerfValue,
    max_variants: usize,
    seed: u64,
    audit: &mut AuditLog,
) -> Result<Packed> {
    validate_constraints(constraints, d_tight.placement.keys())?;
    let units = build_units(d_tight, impact, constraints, probe.cluster)?;
    let packer = Packer {
        units,
        servers: server_order(probe.cluster, d_tight),
        separations: constraints
            .iter()
            .filter(|c| c.kind == ConstraintKind::MustSeparate)
            .map(|c| &c.instances)
            .collect(),
        initial: &d_tight.placement,
    };
    let current = server_count(d_tight);
    let ffd = packer.ffd_order();
    let min_servers = (1..=packer.servers.len())
        .find(|&k| packer.place(&ffd, k, Strategy::FirstFit).is_some())
        .unwrap_or(current);

    let mut attempts = Vec::new();
    let mut tried: Vec<BTreeMap<InstanceId, ServerId>> = vec![d_tight.placement.clone()];
    for k in min_servers..current {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pack", k as u64));
        let mut candidates: Vec<(String, Vec<usize>, Strategy)> = vec![("impact-aware".into(), ffd.clone(), Strategy::ImpactAware)];
        for v in 1..=max_variants {
            let mut order = ffd.clone();
            order.shuffle(&mut rng);
            candidates.push((format!("shuffle-{v}"), order, Strategy::ImpactAware));
        }
        candidates.push(("first-fit-decreasing".into(), ffd.clone(), Strategy::FirstFit));

        for (variant, order, strategy) in candidates {
            let Some(placement) = packer.place(&order, k, strategy) else {
                attempts.push(PlacementAttempt {
                    target_servers: k,
                    servers_used: 0,
                    variant,
                    feasible: false,
                    value: None,
                    accepted: false,
                });
                continue;
            };
            if tried.contains(&placement) {
                continue;
            }
            tried.push(placement.clone());
            let candidate = d_tight.with_placement(placement);
            let value = probe.measure(&candidate)?;
            let accepted = !probe.degraded(&value, baseline)?;
            audit.push(AuditEvent::Placement {
                timestamp: probe.now(),
                servers: server_count(&candidate),
                variant: variant.clone(),
                value: Some(value.value),
                accepted,
            });
            attempts.push(PlacementAttempt {
                target_servers: k,
                servers_used: server_count(&candidate),
                variant,
                feasible: true,
                value: Some(value.value),
                accepted,
            });
            if accepted {
                return Ok(Packed {
                    deployment: candidate,
                    min_servers,
                    attempts,
                });
            }
        }
    }
    audit.push(AuditEvent::Placement {
        timestamp: probe.now(),
        servers: current,
        variant: "original".into(),
        value: None,
        accepted: true,
    });
    attempts.push(PlacementAttempt {
        target_servers: current,
        servers_used: current,
        variant: "original".into(),
        feasible: true,
        value: None,
        accepted: true,
    });
    Ok(Packed {
        deployment: d_tight.clone(),
        min_servers,
        attempts,
    })
}

/// Data behind the phase-1 stages of the end-to-end report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub p0: f64,
    pub initial_servers: usize,
    pub tight_value: f64,
    pub rounds: Vec<TightenRound>,
    pub final_fraction: f64,
    pub min_servers: usize,
    pub attempts: Vec<PlacementAttempt>,
    pub packed_servers: usize,
    pub final_value: f64,
    pub impact: ImpactTable,
    pub measurements: usize,
}

#[derive(Clone, Debug)]
pub struct ClampdownResult {
    /// Tight, packed and verified.
    pub deployment: Deployment,
    /// Tight allocations on the original placement.
    pub tight: Deployment,
    pub impact: ImpactTable,
    pub baseline: PerfValue,
    pub final_value: PerfValue,
    pub iterations: usize,
    pub audit: AuditLog,
    pub report: Phase1Report,
}

/// Measures P0, tightens, packs and verifies.
pub fn run_phase1<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d0: &Deployment,
    constraints: &[PlacementConstraint],
    config: &ClampdownConfig,
) -> Result<ClampdownResult> {
    config.validate()?;
    probe.cluster.validate()?;
    validate_constraints(constraints, d0.placement.keys())?;
    validate_deployment(d0, probe.cluster, constraints).into_result()?;

    let start = probe.now();
    let mut audit = AuditLog::new();
    let baseline = probe.measure(d0)?;
    let tight = tighten(probe, d0, &baseline, config, &mut audit)?;
    let tight_value = probe.measure(&tight.deployment)?;
    let packed = pack(
        probe,
        &tight.deployment,
        &tight.impact,
        constraints,
        &baseline,
        config.max_variants,
        derive_seed(config.seed, "pack", 0),
        &mut audit,
    )?;
    let mut deployment = packed.deployment;
    let mut final_value = probe.measure(&deployment)?;
    if probe.degraded(&final_value, &baseline)? {
        // Fall back to the placement the tight allocation was verified on.
        deployment = tight.deployment.clone();
        final_value = tight_value;
    }

    let report = Phase1Report {
        p0: baseline.value,
        initial_servers: server_count(d0),
        tight_value: tight_value.value,
        final_fraction: tight.final_fraction,
        rounds: tight.rounds.clone(),
        min_servers: packed.min_servers,
        attempts: packed.attempts,
        packed_servers: server_count(&deployment),
        final_value: final_value.value,
        impact: tight.impact.clone(),
        measurements: probe.now() - start,
    };
    Ok(ClampdownResult {
        deployment,
        tight: tight.deployment,
        impact: tight.impact,
        baseline,
        final_value,
        iterations: tight.rounds.len(),
        audit,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MicroserviceInstance;
    use crate::oracle::exhaustive_imr_set;
    use crate::sim::{AppModel, SimEvaluator};
    use crate::domain::WorkloadSpec;

    const CAP: Resources = Resources {
        cpu: 4.0,
        memory: 4096.0,
        disk_bw: 200.0,
        net_bw: 1000.0,
    };

    fn model(ids: &[&str], demand: &[(&str, ResourceKind, f64)], gamma: f64) -> AppModel {
        AppModel {
            instances: ids.iter().map(|i| MicroserviceInstance::new(*i, *i)).collect(),
            edges: ids.windows(2).map(|w| (w[0].into(), w[1].into())).collect(),
            demand: demand.iter().map(|(i, k, v)| (MrKey::new(*i, *k), *v)).collect(),
            base_latency: BTreeMap::from([(InstanceId::from(ids[0]), 1.0)]),
            interference_gamma: gamma,
            noise_cv: 0.0,
            seed: 0,
        }
    }

    fn spread(ids: &[&str], alloc: Resources) -> Deployment {
        ids.iter().enumerate().fold(Deployment::new(), |d, (n, i)| {
            d.with_instance(*i, format!("s{}", n + 1).as_str(), alloc)
        })
    }

    fn w() -> WorkloadSpec {
        WorkloadSpec::new(1.0, 10.0)
    }

    #[test]
    fn single_impacted_mr_found_cheaply() {
        let ids = ["node", "b", "c"];
        let m = model(&ids, &[("node", ResourceKind::Cpu, 0.01)], 0.0);
        let cluster = ClusterSpec::uniform("s", 3, CAP);
        let d = spread(&ids, Resources::new(2.0, 1024.0, 50.0, 100.0));
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d).unwrap();
        let start = ev.measurement_count();
        let disc = discover_imrs(&probe, &d, &base, 0.3, 4, 9, &mut AuditLog::new()).unwrap();
        assert_eq!(disc.imrs, BTreeSet::from([MrKey::new("node", ResourceKind::Cpu)]));
        assert_eq!(disc.measurements, ev.measurement_count() - start);
        // 4 partitions of 3, then the 3 members of the degraded one
        assert_eq!(disc.measurements, 7);
        assert_eq!(disc.imrs, exhaustive_imr_set(&probe, &d, &base, 0.3).unwrap());
    }

    #[test]
    fn nothing_impacted_costs_p_measurements() {
        let ids = ["a", "b", "c"];
        let m = model(&ids, &[], 0.0);
        let cluster = ClusterSpec::uniform("s", 3, CAP);
        let d = spread(&ids, Resources::new(2.0, 1024.0, 50.0, 100.0));
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d).unwrap();
        let disc = discover_imrs(&probe, &d, &base, 0.3, 4, 1, &mut AuditLog::new()).unwrap();
        assert!(disc.imrs.is_empty());
        assert_eq!(disc.measurements, 4);
    }

    #[test]
    fn all_impacted_expands_full_tree() {
        let ids: Vec<String> = (0..12).map(|i| format!("i{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let demand: Vec<(&str, ResourceKind, f64)> = ids
            .iter()
            .flat_map(|i| ResourceKind::ALL.map(|k| (*i, k, 0.001)))
            .collect();
        let m = model(&ids, &demand, 0.0);
        let cluster = ClusterSpec::uniform("s", 12, CAP);
        let d = spread(&ids, Resources::new(2.0, 1024.0, 50.0, 100.0));
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d).unwrap();
        let disc = discover_imrs(&probe, &d, &base, 0.3, 4, 5, &mut AuditLog::new()).unwrap();
        assert_eq!(disc.imrs.len(), 48);
        // 48 leaves + 4 + 16 internal groups
        assert_eq!(disc.measurements, 68);
        assert_eq!(disc.imrs, exhaustive_imr_set(&probe, &d, &base, 0.3).unwrap());
    }

    #[test]
    fn zero_demand_mr_descends_to_floor() {
        let m = model(&["a"], &[("a", ResourceKind::Memory, 1.0)], 0.0);
        let cluster = ClusterSpec::uniform("s", 1, CAP);
        let d0 = Deployment::new().with_instance("a", "s1", Resources::new(3.0, 1024.0, 50.0, 100.0));
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d0).unwrap();
        let t = tighten(&probe, &d0, &base, &ClampdownConfig::default(), &mut AuditLog::new()).unwrap();
        let cpu = MrKey::new("a", ResourceKind::Cpu);
        let trail: Vec<f64> = t
            .rounds
            .iter()
            .flat_map(|r| r.committed.iter().filter(|c| c.mr == cpu).map(|c| c.new))
            .collect();
        assert_eq!(trail.len(), 3);
        assert!((trail[0] - 1.8).abs() < 1e-9);
        assert!((trail[1] - 0.8).abs() < 1e-9);
        assert!((trail[2] - 0.08).abs() < 1e-9);
        assert_eq!(t.deployment.get(&MrKey::new("a", ResourceKind::Memory)), Some(1024.0));
    }

    #[test]
    fn fully_impacted_deployment_is_a_fixed_point() {
        let demand: Vec<_> = ResourceKind::ALL.map(|k| ("a", k, 0.001)).to_vec();
        let m = model(&["a"], &demand, 0.0);
        let cluster = ClusterSpec::uniform("s", 1, CAP);
        let d0 = Deployment::new().with_instance("a", "s1", Resources::new(3.0, 1024.0, 50.0, 100.0));
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d0).unwrap();
        let t = tighten(&probe, &d0, &base, &ClampdownConfig::default(), &mut AuditLog::new()).unwrap();
        assert_eq!(t.deployment, d0);
        assert_eq!(t.rounds.len(), 1);
    }

    #[test]
    fn cpu_only_chain_squeezes_everything_else() {
        let ids = ["a", "b"];
        let m = model(&ids, &[("a", ResourceKind::Cpu, 0.01), ("b", ResourceKind::Cpu, 0.02)], 0.0);
        let cluster = ClusterSpec::uniform("s", 2, CAP);
        let d0 = spread(&ids, Resources::new(2.0, 2048.0, 100.0, 300.0));
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d0).unwrap();
        let t = tighten(&probe, &d0, &base, &ClampdownConfig::default(), &mut AuditLog::new()).unwrap();
        let floors = cluster.floors();
        for (mr, &v) in &t.deployment.allocation {
            if mr.kind == ResourceKind::Cpu {
                assert_eq!(v, 2.0);
            } else {
                assert!(floors.is_at_floor(mr.kind, v), "{mr} = {v}");
            }
        }
        assert_eq!(t.deployment.placement, d0.placement);
    }

    /// Chain c1 -> d1 -> c2 -> d2 -> c3 -> d3 of cpu- and disk-bound
    /// instances, one per server, allocations already tight.
    fn mixed_six(gamma: f64) -> (AppModel, ClusterSpec, Deployment, ImpactTable) {
        let ids = ["c1", "d1", "c2", "d2", "c3", "d3"];
        let demand: Vec<_> = ids
            .iter()
            .map(|i| {
                let kind = if i.starts_with('c') { ResourceKind::Cpu } else { ResourceKind::DiskBw };
                (*i, kind, if kind == ResourceKind::Cpu { 0.01 } else { 0.5 })
            })
            .collect();
        let m = model(&ids, &demand, gamma);
        let cluster = ClusterSpec::uniform("s", 6, CAP);
        let floors = cluster.floors();
        let mut d = Deployment::new();
        let mut impact = ImpactTable::new(1.0, 0.3);
        for (n, (i, kind, _)) in demand.iter().enumerate() {
            let mut alloc = floors.0;
            alloc[*kind] = if *kind == ResourceKind::Cpu { 1.5 } else { 80.0 };
            d = d.with_instance(*i, format!("s{}", n + 1).as_str(), alloc);
            impact.record(MrKey::new(*i, *kind), 0.5);
        }
        (m, cluster, d, impact)
    }

    #[test]
    fn packing_pairs_differing_kinds() {
        let (m, cluster, d, impact) = mixed_six(0.5);
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d).unwrap();
        let packed = pack(&probe, &d, &impact, &[], &base, 10, 3, &mut AuditLog::new()).unwrap();
        assert_eq!(packed.min_servers, 2);
        // two servers force a same-kind pair, which interferes
        assert_eq!(server_count(&packed.deployment), 3);
        for s in packed.deployment.servers() {
            let kinds: BTreeSet<ResourceKind> = packed
                .deployment
                .instances_on(s)
                .map(|i| impact.most_impacted_kind(i))
                .collect();
            assert_eq!(kinds.len(), 2, "server {s}");
        }
        let v = probe.measure(&packed.deployment).unwrap();
        assert!(!probe.degraded(&v, &base).unwrap());
        assert!(packed
            .attempts
            .iter()
            .any(|a| a.target_servers == 2 && a.feasible && !a.accepted));
    }

    #[test]
    fn without_interference_two_servers_suffice() {
        let (m, cluster, d, impact) = mixed_six(0.0);
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d).unwrap();
        let packed = pack(&probe, &d, &impact, &[], &base, 10, 3, &mut AuditLog::new()).unwrap();
        assert_eq!(server_count(&packed.deployment), 2);
    }

    #[test]
    fn colocation_constraint_uses_the_big_server() {
        let (m, mut cluster, d, impact) = mixed_six(0.0);
        cluster.servers.push(crate::domain::ServerSpec::new("big", Resources::new(64.0, 65536.0, 1000.0, 5000.0)));
        let all = PlacementConstraint::colocate(["c1", "d1", "c2", "d2", "c3", "d3"]);
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &cluster, 0.0);
        let base = probe.measure(&d).unwrap();
        let packed = pack(&probe, &d, &impact, &[all], &base, 10, 3, &mut AuditLog::new()).unwrap();
        assert_eq!(server_count(&packed.deployment), 1, "{:?}", packed.attempts);
        assert!(packed.deployment.placement.values().all(|s| s.as_str() == "big"));
    }

    #[test]
    fn oversized_separation_is_infeasible() {
        let (m, cluster, d, impact) = mixed_six(0.0);
        let small = ClusterSpec::new(cluster.servers[..3].to_vec());
        let d = d.with_placement(d.placement.keys().map(|i| (i.clone(), ServerId::from("s1"))).collect());
        let sep = PlacementConstraint::separate(["c1", "d1", "c2", "d2"]);
        let ev = SimEvaluator::deterministic(&m, &w()).unwrap();
        let probe = Probe::new(&ev, &small, 0.0);
        let base = probe.measure(&d).unwrap();
        let err = pack(&probe, &d, &impact, &[sep], &base, 10, 3, &mut AuditLog::new()).unwrap_err();
        match err {
            Error::InfeasibleConstraint(msg) => assert!(msg.contains("must_separate"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn phase1_only_shrinks_and_is_idempotent() {
        let f = crate::fixtures::mean();
        let ev = SimEvaluator::deterministic(&f.model, &f.workload).unwrap();
        let probe = Probe::new(&ev, &f.cluster, 0.0);
        let r = run_phase1(&probe, &f.deployment, &[], &ClampdownConfig::default()).unwrap();
        assert!(server_count(&r.deployment) <= 2);
        assert!(r.final_value.value <= r.baseline.value);
        for (mr, &v) in &r.deployment.allocation {
            assert!(v <= f.deployment.allocation[mr]);
        }
        let again = run_phase1(&probe, &r.deployment, &[], &ClampdownConfig::default()).unwrap();
        assert_eq!(again.final_value.value, r.final_value.value);
        assert_eq!(server_count(&again.deployment), server_count(&r.deployment));
        assert!(r.audit.events.iter().any(|e| matches!(e, AuditEvent::Stress { .. })));
        assert!(r.audit.events.iter().any(|e| matches!(e, AuditEvent::Commit { .. })));
        assert!(r.audit.events.iter().any(|e| matches!(e, AuditEvent::Placement { .. })));
    }
}
