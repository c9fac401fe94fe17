//! Brute-force references for desk-sized instances.
//!
//! Nothing here shares code paths with the partition search or the packer: the
//! IMR sweep stresses every MR on its own, and the optimum search enumerates
//! placements and allocation grids outright.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::audit::AuditLog;
use crate::domain::{ClusterSpec, Deployment, MrKey, PerfValue, ResourceKind, WorkloadSpec, EPS};
use crate::error::{Error, Result};
use crate::probe::Probe;
use crate::sim::{AppModel, Blackbox, CompiledModel};

/// Every MR whose individual stress at `fraction` degrades performance.
/// Takes exactly one measurement per MR.
pub fn exhaustive_imr_set<B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    baseline: &PerfValue,
    fraction: f64,
) -> Result<BTreeSet<MrKey>> {
    exhaustive_imr_set_over(probe, d, d.allocation.keys(), baseline, fraction)
}

/// [`exhaustive_imr_set`] over an explicit enumeration of MRs.
pub fn exhaustive_imr_set_over<'k, B: Blackbox + ?Sized>(
    probe: &Probe<'_, B>,
    d: &Deployment,
    keys: impl IntoIterator<Item = &'k MrKey>,
    baseline: &PerfValue,
    fraction: f64,
) -> Result<BTreeSet<MrKey>> {
    let mut scratch = AuditLog::new();
    let mut out = BTreeSet::new();
    for mr in keys {
        let v = probe.stress_and_measure(d, std::slice::from_ref(mr), fraction, &mut scratch)?;
        if probe.degraded(&v, baseline)? {
            out.insert(mr.clone());
        }
    }
    Ok(out)
}

pub const MAX_INSTANCES: usize = 4;
pub const MAX_SERVERS: usize = 2;
pub const MAX_GRID_LEVELS: usize = 5;

/// Best deployment found by [`brute_force_best`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleOptimum {
    pub deployment: Deployment,
    pub value: PerfValue,
    pub servers: usize,
    pub evaluated: u64,
}

/// `levels` geometric steps from `floor` to `cap`, inclusive.
pub fn geometric_grid(floor: f64, cap: f64, levels: usize) -> Vec<f64> {
    if levels <= 1 {
        return vec![cap];
    }
    let ratio = cap / floor;
    (0..levels)
        .map(|j| {
            if j == levels - 1 {
                cap
            } else {
                floor * ratio.powf(j as f64 / (levels - 1) as f64)
            }
        })
        .collect()
}

/// Exhaustive search over placements and geometric allocation grids.
///
/// Considers only placements at the minimum feasible server count, or at
/// exactly `servers` when given. MRs with zero demand cannot affect the
/// value and are pinned at their floor; every other MR ranges over
/// `grid_levels` geometric levels between floor and its server's capacity.
/// Ties keep the first optimum in enumeration order.
pub fn brute_force_best(
    model: &AppModel,
    cluster: &ClusterSpec,
    w: &WorkloadSpec,
    grid_levels: usize,
    servers: Option<usize>,
) -> Result<OracleOptimum> {
    cluster.validate()?;
    let compiled = CompiledModel::new(model)?;
    let n = compiled.len();
    let m = cluster.servers.len();
    if n > MAX_INSTANCES || m > MAX_SERVERS || !(1..=MAX_GRID_LEVELS).contains(&grid_levels) {
        return Err(Error::invalid(format!(
            "oracle limited to {MAX_INSTANCES} instances, {MAX_SERVERS} servers, {MAX_GRID_LEVELS} grid levels"
        )));
    }
    let floors = cluster.floors();
    let demand: Vec<[f64; 4]> = compiled
        .ids()
        .iter()
        .map(|id| ResourceKind::ALL.map(|k| model.demand_of(id, k)))
        .collect();

    // All assignments of n instances to m servers.
    let placements: Vec<Vec<usize>> = (0..m.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let s = code % m;
                    code /= m;
                    s
                })
                .collect()
        })
        .collect();
    let used = |p: &[usize]| p.iter().collect::<BTreeSet<_>>().len();
    let floor_fits = |p: &[usize]| {
        (0..m).all(|s| {
            ResourceKind::ALL.iter().all(|&k| {
                let total = p.iter().filter(|&&x| x == s).count() as f64 * floors.get(k);
                total <= cluster.servers[s].capacity[k] + EPS
            })
        })
    };
    let target = match servers {
        Some(k) => k,
        None => placements
            .iter()
            .filter(|p| floor_fits(p))
            .map(|p| used(p))
            .min()
            .ok_or(Error::NoFeasiblePoint)?,
    };

    let mut best: Option<Best> = None;
    let mut evaluated = 0u64;
    for placement in placements.iter().filter(|p| used(p) == target && floor_fits(p)) {
        // Free MRs: (instance, kind, grid).
        let mut free = Vec::new();
        let mut alloc: Vec<[f64; 4]> = vec![[0.0; 4]; n];
        let mut load = vec![[0.0f64; 4]; m];
        for i in 0..n {
            for kind in ResourceKind::ALL {
                let k = kind.index();
                let cap = cluster.servers[placement[i]].capacity[kind];
                if demand[i][k] > 0.0 {
                    free.push((i, k, geometric_grid(floors.get(kind), cap, grid_levels)));
                } else {
                    alloc[i][k] = floors.get(kind);
                    load[placement[i]][k] += floors.get(kind);
                }
            }
        }
        search(
            &compiled,
            cluster,
            placement,
            w.request_rate,
            &free,
            0,
            &mut alloc,
            &mut load,
            &mut best,
            &mut evaluated,
        );
    }

    let (value, placement, alloc) = best.ok_or(Error::NoFeasiblePoint)?;
    let mut d = Deployment::new();
    for (i, id) in compiled.ids().iter().enumerate() {
        let a = alloc[i];
        d = d.with_instance(
            id.clone(),
            cluster.servers[placement[i]].id.clone(),
            crate::domain::Resources::new(a[0], a[1], a[2], a[3]),
        );
    }
    Ok(OracleOptimum {
        servers: crate::domain::server_count(&d),
        deployment: d,
        value: PerfValue::p99(value),
        evaluated,
    })
}

/// Value, placement and allocations of the best point so far.
type Best = (f64, Vec<usize>, Vec<[f64; 4]>);

#[allow(clippy::too_many_arguments)]
fn search(
    compiled: &CompiledModel,
    cluster: &ClusterSpec,
    placement: &[usize],
    rate: f64,
    free: &[(usize, usize, Vec<f64>)],
    depth: usize,
    alloc: &mut Vec<[f64; 4]>,
    load: &mut Vec<[f64; 4]>,
    best: &mut Option<Best>,
    evaluated: &mut u64,
) {
    if depth == free.len() {
        *evaluated += 1;
        let v = compiled.latency_unchecked(alloc, placement, rate);
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            *best = Some((v, placement.to_vec(), alloc.clone()));
        }
        return;
    }
    let (i, k, ref grid) = free[depth];
    let s = placement[i];
    let cap = cluster.servers[s].capacity[ResourceKind::ALL[k]];
    for &level in grid {
        if load[s][k] + level > cap + EPS {
            // Grid is ascending.
            break;
        }
        alloc[i][k] = level;
        load[s][k] += level;
        search(compiled, cluster, placement, rate, free, depth + 1, alloc, load, best, evaluated);
        load[s][k] -= level;
    }
}
