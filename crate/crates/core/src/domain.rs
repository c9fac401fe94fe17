//! Vocabulary shared by every stage of the optimizer: resource kinds, instances,
//! servers, deployments, workloads and performance values.
//!
//! All types are plain values. A "mutation" of a [`Deployment`] always produces a
//! new value, so deployments can be compared bit-for-bit before and after a step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for every comparison between resource amounts.
pub const EPS: f64 = 1e-9;

/// Per-kind allocation floor, as a fraction of the smallest server's capacity.
pub const FLOOR_FRACTION: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    /// Cores; fractional values are allowed.
    Cpu,
    /// MiB.
    Memory,
    /// MiB/s.
    DiskBw,
    /// Mbit/s.
    NetBw,
}

impl ResourceKind {
    /// Fixed order; also the tie-break order wherever kinds compete.
    pub const ALL: [ResourceKind; 4] = [
        ResourceKind::Cpu,
        ResourceKind::Memory,
        ResourceKind::DiskBw,
        ResourceKind::NetBw,
    ];

    pub fn unit(self) -> &'static str {
        match self {
            ResourceKind::Cpu => "cores",
            ResourceKind::Memory => "MiB",
            ResourceKind::DiskBw => "MiB/s",
            ResourceKind::NetBw => "Mbit/s",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Cpu => "cpu",
            ResourceKind::Memory => "memory",
            ResourceKind::DiskBw => "disk_bw",
            ResourceKind::NetBw => "net_bw",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One amount per resource kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Resources {
    pub cpu: f64,
    pub memory: f64,
    pub disk_bw: f64,
    pub net_bw: f64,
}

impl Resources {
    pub const fn new(cpu: f64, memory: f64, disk_bw: f64, net_bw: f64) -> Self {
        Resources {
            cpu,
            memory,
            disk_bw,
            net_bw,
        }
    }

    pub fn splat(v: f64) -> Self {
        Resources::new(v, v, v, v)
    }

    pub fn map(self, f: impl Fn(ResourceKind, f64) -> f64) -> Self {
        let mut out = self;
        for kind in ResourceKind::ALL {
            out[kind] = f(kind, self[kind]);
        }
        out
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cpu, self.memory, self.disk_bw, self.net_bw]
    }

    /// True when `self + extra` fits under `capacity` on every kind.
    pub fn fits_with(&self, extra: &Resources, capacity: &Resources) -> bool {
        ResourceKind::ALL
            .iter()
            .all(|&k| self[k] + extra[k] <= capacity[k] + EPS)
    }
}

impl Index<ResourceKind> for Resources {
    type Output = f64;

    fn index(&self, kind: ResourceKind) -> &f64 {
        match kind {
            ResourceKind::Cpu => &self.cpu,
            ResourceKind::Memory => &self.memory,
            ResourceKind::DiskBw => &self.disk_bw,
            ResourceKind::NetBw => &self.net_bw,
        }
    }
}

impl IndexMut<ResourceKind> for Resources {
    fn index_mut(&mut self, kind: ResourceKind) -> &mut f64 {
        match kind {
            ResourceKind::Cpu => &mut self.cpu,
            ResourceKind::Memory => &mut self.memory,
            ResourceKind::DiskBw => &mut self.disk_bw,
            ResourceKind::NetBw => &mut self.net_bw,
        }
    }
}

impl std::ops::Add for Resources {
    type Output = Resources;

    fn add(self, rhs: Resources) -> Resources {
        self.map(|k, v| v + rhs[k])
    }
}

impl std::ops::AddAssign for Resources {
    fn add_assign(&mut self, rhs: Resources) {
        *self = *self + rhs;
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(
    /// Identifies one microservice instance (a replica) within an application.
    InstanceId
);
string_id!(
    /// Identifies one server (or VM) in the cluster.
    ServerId
);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroserviceInstance {
    pub id: InstanceId,
    /// Name of the microservice this instance replicates.
    pub service_name: String,
}

impl MicroserviceInstance {
    pub fn new(id: impl Into<InstanceId>, service_name: impl Into<String>) -> Self {
        MicroserviceInstance {
            id: id.into(),
            service_name: service_name.into(),
        }
    }
}

/// A microservice resource: one resource kind of one instance.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MrKey {
    pub instance: InstanceId,
    pub kind: ResourceKind,
}

impl MrKey {
    pub fn new(instance: impl Into<InstanceId>, kind: ResourceKind) -> Self {
        MrKey {
            instance: instance.into(),
            kind,
        }
    }
}

impl fmt::Display for MrKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.instance, self.kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: ServerId,
    pub capacity: Resources,
}

impl ServerSpec {
    pub fn new(id: impl Into<ServerId>, capacity: Resources) -> Self {
        ServerSpec {
            id: id.into(),
            capacity,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub servers: Vec<ServerSpec>,
}

impl ClusterSpec {
    pub fn new(servers: Vec<ServerSpec>) -> Self {
        ClusterSpec { servers }
    }

    /// `count` identical servers named `{prefix}{n}`, starting at 1.
    pub fn uniform(prefix: &str, count: usize, capacity: Resources) -> Self {
        ClusterSpec {
            servers: (1..=count)
                .map(|n| ServerSpec::new(format!("{prefix}{n}"), capacity))
                .collect(),
        }
    }

    pub fn server(&self, id: &ServerId) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| &s.id == id)
    }

    pub fn capacity(&self, id: &ServerId) -> Result<&Resources> {
        self.server(id)
            .map(|s| &s.capacity)
            .ok_or_else(|| Error::invalid(format!("unknown server {id}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers.is_empty() {
            return Err(Error::invalid("cluster has no servers"));
        }
        let mut seen = BTreeSet::new();
        for s in &self.servers {
            if !seen.insert(&s.id) {
                return Err(Error::invalid(format!("duplicate server id {}", s.id)));
            }
            for kind in ResourceKind::ALL {
                let c = s.capacity[kind];
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::invalid(format!(
                        "server {} has non-positive {kind} capacity {c}",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Allocation floors derived from this cluster.
    pub fn floors(&self) -> Floors {
        Floors::from_cluster(self)
    }

    /// Largest capacity of each kind across the cluster.
    pub fn max_capacity(&self) -> Resources {
        let mut out = Resources::default();
        for s in &self.servers {
            for kind in ResourceKind::ALL {
                out[kind] = out[kind].max(s.capacity[kind]);
            }
        }
        out
    }
}

/// Minimum allocation per kind: [`FLOOR_FRACTION`] of the smallest server's capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Floors(pub Resources);

impl Floors {
    pub fn from_cluster(cluster: &ClusterSpec) -> Self {
        let mut min = Resources::splat(f64::INFINITY);
        for s in &cluster.servers {
            for kind in ResourceKind::ALL {
                min[kind] = min[kind].min(s.capacity[kind]);
            }
        }
        Floors(min.map(|_, v| if v.is_finite() { v * FLOOR_FRACTION } else { 0.0 }))
    }

    pub fn get(&self, kind: ResourceKind) -> f64 {
        self.0[kind]
    }

    pub fn is_at_floor(&self, kind: ResourceKind, amount: f64) -> bool {
        amount <= self.0[kind] + EPS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    MustColocate,
    MustSeparate,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::MustColocate => "must_colocate",
            ConstraintKind::MustSeparate => "must_separate",
        })
    }
}

/// Operator-supplied placement rule over a set of instances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementConstraint {
    pub kind: ConstraintKind,
    pub instances: BTreeSet<InstanceId>,
}

impl PlacementConstraint {
    pub fn colocate<I, S>(instances: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<InstanceId>,
    {
        PlacementConstraint {
            kind: ConstraintKind::MustColocate,
            instances: instances.into_iter().map(Into::into).collect(),
        }
    }

    pub fn separate<I, S>(instances: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<InstanceId>,
    {
        PlacementConstraint {
            kind: ConstraintKind::MustSeparate,
            instances: instances.into_iter().map(Into::into).collect(),
        }
    }

    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.instances.iter().map(|i| i.as_str()).collect();
        format!("{} {{{}}}", self.kind, names.join(","))
    }

    /// Whether `placement` honors this constraint. Unplaced members are ignored.
    pub fn is_satisfied(&self, placement: &BTreeMap<InstanceId, ServerId>) -> bool {
        let servers: Vec<&ServerId> = self
            .instances
            .iter()
            .filter_map(|i| placement.get(i))
            .collect();
        match self.kind {
            ConstraintKind::MustColocate => servers.windows(2).all(|w| w[0] == w[1]),
            ConstraintKind::MustSeparate => {
                let distinct: BTreeSet<_> = servers.iter().collect();
                distinct.len() == servers.len()
            }
        }
    }
}

/// Checks that constraints only name known instances and never both join and
/// split the same pair.
pub fn validate_constraints<'a>(
    constraints: &[PlacementConstraint],
    instances: impl IntoIterator<Item = &'a InstanceId>,
) -> Result<()> {
    let known: BTreeSet<&InstanceId> = instances.into_iter().collect();
    let mut colocated = BTreeSet::new();
    for c in constraints {
        for i in &c.instances {
            if !known.contains(i) {
                return Err(Error::invalid(format!(
                    "constraint {} names unknown instance {i}",
                    c.describe()
                )));
            }
        }
        if c.kind == ConstraintKind::MustColocate {
            for a in &c.instances {
                for b in &c.instances {
                    if a < b {
                        colocated.insert((a, b));
                    }
                }
            }
        }
    }
    for c in constraints
        .iter()
        .filter(|c| c.kind == ConstraintKind::MustSeparate)
    {
        for a in &c.instances {
            for b in &c.instances {
                if a < b && colocated.contains(&(a, b)) {
                    return Err(Error::InfeasibleConstraint(format!(
                        "{a} and {b} are both colocated and separated"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Placement plus per-MR allocation: the optimizer's search state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub placement: BTreeMap<InstanceId, ServerId>,
    #[serde(with = "allocation_serde")]
    pub allocation: BTreeMap<MrKey, f64>,
}

impl Deployment {
    pub fn new() -> Self {
        Deployment::default()
    }

    /// Places `instance` on `server` with the given per-kind allocation.
    pub fn with_instance(
        mut self,
        instance: impl Into<InstanceId>,
        server: impl Into<ServerId>,
        alloc: Resources,
    ) -> Self {
        let instance = instance.into();
        for kind in ResourceKind::ALL {
            self.allocation
                .insert(MrKey::new(instance.clone(), kind), alloc[kind]);
        }
        self.placement.insert(instance, server.into());
        self
    }

    pub fn get(&self, mr: &MrKey) -> Option<f64> {
        self.allocation.get(mr).copied()
    }

    pub fn amount(&self, mr: &MrKey) -> Result<f64> {
        self.get(mr).ok_or_else(|| Error::UnknownMr(mr.clone()))
    }

    pub fn resources_of(&self, instance: &InstanceId) -> Resources {
        let mut out = Resources::default();
        for kind in ResourceKind::ALL {
            out[kind] = self
                .allocation
                .get(&MrKey::new(instance.clone(), kind))
                .copied()
                .unwrap_or(0.0);
        }
        out
    }

    pub fn server_of(&self, instance: &InstanceId) -> Option<&ServerId> {
        self.placement.get(instance)
    }

    pub fn instances_on<'a>(&'a self, server: &'a ServerId) -> impl Iterator<Item = &'a InstanceId> {
        self.placement
            .iter()
            .filter(move |(_, s)| *s == server)
            .map(|(i, _)| i)
    }

    /// Distinct servers in use, sorted.
    pub fn servers(&self) -> BTreeSet<&ServerId> {
        self.placement.values().collect()
    }

    pub fn mr_keys(&self) -> Vec<MrKey> {
        self.allocation.keys().cloned().collect()
    }

    /// Sum of allocations of the instances placed on `server`.
    pub fn server_totals(&self, server: &ServerId) -> Resources {
        let mut out = Resources::default();
        for inst in self.instances_on(server) {
            out += self.resources_of(inst);
        }
        out
    }

    pub fn colocated(&self, a: &InstanceId, b: &InstanceId) -> bool {
        match (self.placement.get(a), self.placement.get(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// Copy with a different placement map; allocations untouched.
    pub fn with_placement(&self, placement: BTreeMap<InstanceId, ServerId>) -> Self {
        Deployment {
            placement,
            allocation: self.allocation.clone(),
        }
    }
}

/// Returns the number of distinct servers hosting at least one instance.
pub fn server_count(d: &Deployment) -> usize {
    d.servers().len()
}

/// A single broken invariant found by [`validate_deployment`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    UnknownServer {
        instance: InstanceId,
        server: ServerId,
    },
    MissingAllocation {
        mr: MrKey,
    },
    AllocationWithoutPlacement {
        mr: MrKey,
    },
    InvalidAmount {
        mr: MrKey,
        amount: f64,
    },
    BelowFloor {
        mr: MrKey,
        amount: f64,
        floor: f64,
    },
    Oversubscribed {
        server: ServerId,
        kind: ResourceKind,
        total: f64,
        capacity: f64,
    },
    ConstraintBroken {
        constraint: String,
    },
    UnknownConstraintInstance {
        constraint: String,
        instance: InstanceId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownServer { instance, server } => {
                write!(f, "instance {instance} placed on unknown server {server}")
            }
            Violation::MissingAllocation { mr } => write!(f, "missing allocation for {mr}"),
            Violation::AllocationWithoutPlacement { mr } => {
                write!(f, "allocation for unplaced instance {mr}")
            }
            Violation::InvalidAmount { mr, amount } => {
                write!(f, "allocation of {mr} is not a finite non-negative amount: {amount}")
            }
            Violation::BelowFloor { mr, amount, floor } => {
                write!(f, "allocation of {mr} is {amount}, below floor {floor}")
            }
            Violation::Oversubscribed {
                server,
                kind,
                total,
                capacity,
            } => write!(
                f,
                "{kind} oversubscribed on server {server}: {total} > {capacity} {}",
                kind.unit()
            ),
            Violation::ConstraintBroken { constraint } => {
                let kind = constraint.split(' ').next().unwrap_or_default();
                write!(f, "constraint {kind} broken: {constraint}")
            }
            Violation::UnknownConstraintInstance {
                constraint,
                instance,
            } => write!(f, "constraint {constraint} names unknown instance {instance}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::invalid(format!("invalid deployment: {}", msgs.join("; "))))
        }
    }
}

/// Checks every [`Deployment`] invariant against `cluster` and `constraints`.
///
/// Violations are reported as data; an empty report means the deployment is valid.
pub fn validate_deployment(
    d: &Deployment,
    cluster: &ClusterSpec,
    constraints: &[PlacementConstraint],
) -> ValidationReport {
    let mut violations = Vec::new();
    let floors = cluster.floors();

    for (inst, server) in &d.placement {
        if cluster.server(server).is_none() {
            violations.push(Violation::UnknownServer {
                instance: inst.clone(),
                server: server.clone(),
            });
        }
        for kind in ResourceKind::ALL {
            let mr = MrKey::new(inst.clone(), kind);
            if !d.allocation.contains_key(&mr) {
                violations.push(Violation::MissingAllocation { mr });
            }
        }
    }

    for (mr, &amount) in &d.allocation {
        if !d.placement.contains_key(&mr.instance) {
            violations.push(Violation::AllocationWithoutPlacement { mr: mr.clone() });
        }
        if !(amount.is_finite() && amount >= 0.0) {
            violations.push(Violation::InvalidAmount {
                mr: mr.clone(),
                amount,
            });
        } else if amount < floors.get(mr.kind) - EPS {
            violations.push(Violation::BelowFloor {
                mr: mr.clone(),
                amount,
                floor: floors.get(mr.kind),
            });
        }
    }

    for server in d.servers() {
        let Some(spec) = cluster.server(server) else {
            continue;
        };
        let totals = d.server_totals(server);
        for kind in ResourceKind::ALL {
            if totals[kind] > spec.capacity[kind] + EPS {
                violations.push(Violation::Oversubscribed {
                    server: server.clone(),
                    kind,
                    total: totals[kind],
                    capacity: spec.capacity[kind],
                });
            }
        }
    }

    for c in constraints {
        let mut known = true;
        for i in &c.instances {
            if !d.placement.contains_key(i) {
                known = false;
                violations.push(Violation::UnknownConstraintInstance {
                    constraint: c.describe(),
                    instance: i.clone(),
                });
            }
        }
        if known && !c.is_satisfied(&d.placement) {
            violations.push(Violation::ConstraintBroken {
                constraint: c.describe(),
            });
        }
    }

    ValidationReport { violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    P99LatencyMs,
    MedianLatencyMs,
    MeanLatencyMs,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::P99LatencyMs => "p99_latency_ms",
            Metric::MedianLatencyMs => "median_latency_ms",
            Metric::MeanLatencyMs => "mean_latency_ms",
        })
    }
}

/// One measured end-to-end performance number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfValue {
    pub value: f64,
    pub metric: Metric,
    pub lower_is_better: bool,
}

impl PerfValue {
    pub fn latency(value: f64, metric: Metric) -> Self {
        PerfValue {
            value,
            metric,
            lower_is_better: true,
        }
    }

    pub fn p99(value: f64) -> Self {
        PerfValue::latency(value, Metric::P99LatencyMs)
    }
}

/// Representative workload the application is tuned for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Requests per second.
    pub request_rate: f64,
    /// Endpoint name to weight; weights sum to 1.
    #[serde(default)]
    pub request_mix: BTreeMap<String, f64>,
    /// Seconds.
    pub duration: f64,
}

impl WorkloadSpec {
    pub fn new(request_rate: f64, duration: f64) -> Self {
        WorkloadSpec {
            request_rate,
            request_mix: BTreeMap::from([("default".to_owned(), 1.0)]),
            duration,
        }
    }

    pub fn with_rate(&self, request_rate: f64) -> Self {
        WorkloadSpec {
            request_rate,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.request_rate.is_finite() && self.request_rate > 0.0) {
            return Err(Error::invalid(format!(
                "request_rate must be > 0, got {}",
                self.request_rate
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid("duration must be > 0"));
        }
        if !self.request_mix.is_empty() {
            if self.request_mix.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::invalid("request_mix weights must be non-negative"));
            }
            let total: f64 = self.request_mix.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "request_mix weights sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Serializes the MR-keyed allocation map as `{instance: {kind: amount}}`.
pub(crate) mod allocation_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<MrKey, f64>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut nested: BTreeMap<&InstanceId, BTreeMap<ResourceKind, f64>> = BTreeMap::new();
        for (mr, &v) in map {
            nested.entry(&mr.instance).or_default().insert(mr.kind, v);
        }
        nested.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> std::result::Result<BTreeMap<MrKey, f64>, D::Error> {
        let nested: BTreeMap<InstanceId, BTreeMap<ResourceKind, f64>> =
            BTreeMap::deserialize(de)?;
        Ok(nested
            .into_iter()
            .flat_map(|(inst, kinds)| {
                kinds
                    .into_iter()
                    .map(move |(kind, v)| (MrKey::new(inst.clone(), kind), v))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster() -> ClusterSpec {
        ClusterSpec::uniform("s", 2, Resources::new(4.0, 4096.0, 200.0, 1000.0))
    }

    #[test]
    fn single_instance_under_capacity_is_ok() {
        let d = Deployment::new().with_instance("a", "s1", Resources::new(2.0, 1024.0, 50.0, 100.0));
        assert!(validate_deployment(&d, &cluster(), &[]).is_ok());
    }

    #[test]
    fn oversubscribed_cpu_is_reported() {
        let alloc = Resources::new(3.0, 100.0, 10.0, 100.0);
        let d = Deployment::new()
            .with_instance("a", "s1", alloc)
            .with_instance("b", "s1", alloc);
        let report = validate_deployment(&d, &cluster(), &[]);
        assert_eq!(report.violations.len(), 1);
        let msg = report.violations[0].to_string();
        assert!(msg.contains("cpu oversubscribed on server"), "{msg}");
    }

    #[test]
    fn broken_separation_is_reported() {
        let alloc = Resources::new(1.0, 100.0, 10.0, 100.0);
        let d = Deployment::new()
            .with_instance("a", "s1", alloc)
            .with_instance("b", "s1", alloc);
        let report = validate_deployment(&d, &cluster(), &[PlacementConstraint::separate(["a", "b"])]);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0]
            .to_string()
            .contains("constraint must_separate broken"));
    }

    #[test]
    fn unknown_server_and_missing_kind() {
        let mut d = Deployment::new().with_instance("a", "nowhere", Resources::new(1.0, 100.0, 10.0, 100.0));
        d.allocation.remove(&MrKey::new("a", ResourceKind::NetBw));
        let report = validate_deployment(&d, &cluster(), &[]);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnknownServer { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MissingAllocation { .. })));
    }

    #[test]
    fn below_floor_is_reported() {
        // floor cpu = 0.02 * 4 = 0.08
        let d = Deployment::new().with_instance("a", "s1", Resources::new(0.05, 100.0, 10.0, 100.0));
        let report = validate_deployment(&d, &cluster(), &[]);
        assert!(matches!(report.violations[..], [Violation::BelowFloor { .. }]));
    }

    #[test]
    fn server_count_examples() {
        let r = Resources::new(0.5, 100.0, 10.0, 10.0);
        let mut d = Deployment::new();
        for (i, s) in ["s1", "s1", "s2", "s2", "s3", "s3"].iter().enumerate() {
            d = d.with_instance(format!("i{i}"), *s, r);
        }
        assert_eq!(server_count(&d), 3);
        assert_eq!(server_count(&Deployment::new()), 0);

        let mut d = Deployment::new();
        for i in 0..4 {
            d = d.with_instance(format!("i{i}"), "s1", r);
        }
        assert_eq!(server_count(&d), 1);
    }

    #[test]
    fn floors_use_smallest_server() {
        let c = ClusterSpec::new(vec![
            ServerSpec::new("big", Resources::new(8.0, 8192.0, 400.0, 2000.0)),
            ServerSpec::new("small", Resources::new(4.0, 4096.0, 200.0, 1000.0)),
        ]);
        let f = c.floors();
        assert!((f.get(ResourceKind::Cpu) - 0.08).abs() < 1e-12);
        assert!((f.get(ResourceKind::NetBw) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn conflicting_constraints_rejected() {
        let ids: Vec<InstanceId> = vec!["a".into(), "b".into()];
        let cs = [
            PlacementConstraint::colocate(["a", "b"]),
            PlacementConstraint::separate(["a", "b"]),
        ];
        assert!(matches!(
            validate_constraints(&cs, &ids),
            Err(Error::InfeasibleConstraint(_))
        ));
        assert!(validate_constraints(&cs[..1], &ids).is_ok());
    }

    #[test]
    fn deployment_json_shape() {
        let d = Deployment::new().with_instance("a", "s1", Resources::new(2.0, 1024.0, 50.0, 100.0));
        let json = serde_json::to_value(&d).unwrap();
        assert_eq!(json["placement"]["a"], "s1");
        assert_eq!(json["allocation"]["a"]["disk_bw"], 50.0);
        let back: Deployment = serde_json::from_value(json).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn workload_mix_must_sum_to_one() {
        let mut w = WorkloadSpec::new(10.0, 60.0);
        assert!(w.validate().is_ok());
        w.request_mix.insert("extra".into(), 0.5);
        assert!(w.validate().is_err());
    }
}
