//! Ready-made applications, clusters and traces.
//!
//! The named fixtures are small synthetic stand-ins for familiar benchmark
//! applications. Every one starts from a generous deployment, leaving at
//! least half of the cluster idle, so there is something to clamp down.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    ClusterSpec, Deployment, MicroserviceInstance, MrKey, PlacementConstraint,
    ResourceKind, Resources, WorkloadSpec,
};
use crate::dynamic::RateTrace;
use crate::error::{Error, Result};
use crate::sim::AppModel;

/// Capacity of every server in the named fixtures: 8 cores, 16 GiB,
/// 400 MB/s disk, 1000 Mb/s network.
pub const NODE: Resources = Resources {
    cpu: 8.0,
    memory: 16384.0,
    disk_bw: 400.0,
    net_bw: 1000.0,
};

/// Everything needed to run the optimizer on one application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub model: AppModel,
    pub cluster: ClusterSpec,
    pub deployment: Deployment,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub constraints: Vec<PlacementConstraint>,
}

impl Fixture {
    /// Reads `model.json`, `cluster.json`, `deployment.json`, `workload.json`
    /// and, if present, `constraints.json` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<String> { Ok(std::fs::read_to_string(dir.join(name))?) };
        let constraints = match std::fs::read_to_string(dir.join("constraints.json")) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Fixture {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            model: serde_json::from_str(&read("model.json")?)?,
            cluster: serde_json::from_str(&read("cluster.json")?)?,
            deployment: serde_json::from_str(&read("deployment.json")?)?,
            workload: serde_json::from_str(&read("workload.json")?)?,
            constraints,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, text: String| std::fs::write(dir.join(name), text + "\n");
        write("model.json", serde_json::to_string_pretty(&self.model)?)?;
        write("cluster.json", serde_json::to_string_pretty(&self.cluster)?)?;
        write("deployment.json", serde_json::to_string_pretty(&self.deployment)?)?;
        write("workload.json", serde_json::to_string_pretty(&self.workload)?)?;
        write("constraints.json", serde_json::to_string_pretty(&self.constraints)?)?;
        Ok(())
    }

    pub fn mr_count(&self) -> usize {
        self.deployment.allocation.len()
    }

    /// Idle share of the capacity of the servers in use, averaged over kinds.
    pub fn aggregate_slack(&self) -> f64 {
        let used = self.deployment.servers();
        let mut total = Resources::default();
        let mut cap = Resources::default();
        for s in self.cluster.servers.iter().filter(|s| used.contains(&s.id)) {
            total += self.deployment.server_totals(&s.id);
            cap += s.capacity;
        }
        let idle: f64 = ResourceKind::ALL
            .iter()
            .map(|&k| 1.0 - total[k] / cap[k])
            .sum();
        idle / 4.0
    }
}

/// Accumulates instances for a fixture.
struct Spec {
    model: AppModel,
    deployment: Deployment,
}

impl Spec {
    fn new(gamma: f64) -> Self {
        Spec {
            model: AppModel {
                instances: Vec::new(),
                edges: Vec::new(),
                demand: BTreeMap::new(),
                base_latency: BTreeMap::new(),
                interference_gamma: gamma,
                noise_cv: 0.05,
                seed: 0,
            },
            deployment: Deployment::new(),
        }
    }

    fn add(&mut self, id: &str, server: &str, base_ms: f64, demand: [f64; 4], alloc: [f64; 4]) -> &mut Self {
        self.add_replica_of(id, id, server, base_ms, demand, alloc)
    }

    fn add_replica_of(
        &mut self,
        id: &str,
        service: &str,
        server: &str,
        base_ms: f64,
        demand: [f64; 4],
        alloc: [f64; 4],
    ) -> &mut Self {
        self.model.instances.push(MicroserviceInstance::new(id, service));
        for (k, &v) in ResourceKind::ALL.iter().zip(&demand) {
            if v > 0.0 {
                self.model.demand.insert(MrKey::new(id, *k), v);
            }
        }
        if base_ms > 0.0 {
            self.model.base_latency.insert(id.into(), base_ms);
        }
        let d = std::mem::take(&mut self.deployment);
        self.deployment = d.with_instance(id, server, Resources::new(alloc[0], alloc[1], alloc[2], alloc[3]));
        self
    }

    fn call(&mut self, from: &str, to: &str) -> &mut Self {
        self.model.edges.push((from.into(), to.into()));
        self
    }

    fn finish(self, name: &str, servers: usize, rate: f64) -> Fixture {
        Fixture {
            name: name.into(),
            model: self.model,
            cluster: ClusterSpec::uniform("node-", servers, NODE),
            deployment: self.deployment,
            workload: WorkloadSpec::new(rate, 10.0),
            constraints: Vec::new(),
        }
    }
}

/// Three-tier web app (12 MRs): network-bound web tier, CPU-bound API,
/// disk-bound database, one per server.
pub fn mean() -> Fixture {
    let alloc = [2.0, 4096.0, 100.0, 200.0];
    let mut s = Spec::new(0.2);
    s.add("web", "node-1", 1.0, [0.004, 0.0, 0.0, 0.5], alloc)
        .add("api", "node-2", 1.0, [0.01, 0.0, 0.0, 0.0], alloc)
        .add("db", "node-3", 2.0, [0.0, 0.0, 0.8, 0.0], alloc)
        .call("web", "api")
        .call("api", "db");
    s.finish("mean", 3, 20.0)
}

/// Chain of eight identical CPU-bound services (32 MRs), two per server.
/// Packs to full CPU with nothing left over.
pub fn hotrod() -> Fixture {
    let names = ["frontend", "customer", "driver", "route", "redis", "mysql", "pricing", "eta"];
    let mut s = Spec::new(0.2);
    for (i, n) in names.iter().enumerate() {
        let server = format!("node-{}", i / 2 + 1);
        s.add(n, &server, 0.5, [0.01, 0.0, 0.0, 0.0], [2.0, 2048.0, 50.0, 100.0]);
        if i > 0 {
            s.call(names[i - 1], n);
        }
    }
    s.finish("hotrod", 4, 20.0)
}

/// Hotel-reservation style fan-out (48 MRs) with every bottleneck kind
/// present. Initially each server hosts three services sharing a bottleneck.
pub fn apartment() -> Fixture {
    let mut s = Spec::new(0.2);
    // cpu
    s.add("frontend", "node-1", 1.0, [0.012, 0.0, 0.0, 0.0], [1.5, 1024.0, 20.0, 100.0])
        .add("search", "node-1", 1.0, [0.008, 0.0, 0.0, 0.0], [1.2, 1024.0, 20.0, 100.0])
        .add("profile", "node-1", 1.0, [0.006, 0.0, 0.0, 0.0], [1.0, 1024.0, 20.0, 100.0]);
    // net
    s.add("gateway", "node-2", 0.5, [0.0, 0.0, 0.0, 0.6], [0.5, 1024.0, 20.0, 250.0])
        .add("reserve", "node-2", 1.0, [0.0, 0.0, 0.0, 0.5], [0.5, 1024.0, 20.0, 200.0])
        .add("recommend", "node-2", 1.0, [0.0, 0.0, 0.0, 0.4], [0.5, 1024.0, 20.0, 200.0]);
    // disk
    s.add("user-db", "node-3", 2.0, [0.0, 0.0, 0.6, 0.0], [0.5, 1024.0, 110.0, 100.0])
        .add("res-db", "node-3", 2.0, [0.0, 0.0, 0.9, 0.0], [0.5, 1024.0, 130.0, 100.0])
        .add("review-db", "node-3", 2.0, [0.0, 0.0, 0.5, 0.0], [0.5, 1024.0, 120.0, 100.0]);
    // memory
    s.add("geo", "node-4", 0.5, [0.0, 30.0, 0.0, 0.0], [0.5, 3072.0, 20.0, 100.0])
        .add("rate", "node-4", 0.5, [0.0, 20.0, 0.0, 0.0], [0.5, 2048.0, 20.0, 100.0])
        .add("memcached", "node-4", 0.2, [0.0, 16.0, 0.0, 0.0], [0.5, 2048.0, 20.0, 100.0]);
    s.call("gateway", "frontend");
    for c in ["search", "profile", "reserve", "recommend"] {
        s.call("frontend", c);
    }
    s.call("search", "geo")
        .call("search", "rate")
        .call("profile", "user-db")
        .call("profile", "memcached")
        .call("reserve", "res-db")
        .call("recommend", "review-db");
    s.finish("apartment", 4, 20.0)
}

/// Log pipeline (48 MRs): three parallel ingest branches of unequal weight
/// and a light dashboard branch, so most branches sit off the critical path.
pub fn elk() -> Fixture {
    let mut s = Spec::new(0.2);
    s.add("lb", "node-1", 0.5, [0.0, 0.0, 0.0, 0.5], [0.5, 1024.0, 20.0, 250.0])
        .add("beat", "node-1", 0.5, [0.0, 0.0, 0.0, 0.2], [0.5, 1024.0, 20.0, 150.0])
        .add("metrics", "node-1", 0.5, [0.0, 0.0, 0.0, 0.3], [0.5, 1024.0, 20.0, 150.0]);
    s.add("router", "node-2", 0.5, [0.006, 0.0, 0.0, 0.0], [1.5, 1024.0, 20.0, 100.0])
        .add("ls-a", "node-2", 1.0, [0.02, 0.0, 0.0, 0.0], [2.0, 1024.0, 20.0, 100.0])
        .add("ls-b", "node-2", 1.0, [0.01, 0.0, 0.0, 0.0], [1.5, 1024.0, 20.0, 100.0]);
    s.add("es-a", "node-3", 2.0, [0.0, 0.0, 1.0, 0.0], [0.5, 1024.0, 110.0, 100.0])
        .add("es-b", "node-3", 2.0, [0.0, 0.0, 0.5, 0.0], [0.5, 1024.0, 110.0, 100.0])
        .add("es-c", "node-3", 2.0, [0.0, 0.0, 0.4, 0.0], [0.5, 1024.0, 110.0, 100.0]);
    s.add("ls-c", "node-4", 1.0, [0.008, 0.0, 0.0, 0.0], [1.5, 1024.0, 20.0, 100.0])
        .add("kibana", "node-4", 1.0, [0.004, 0.0, 0.0, 0.0], [1.0, 1024.0, 20.0, 100.0])
        .add("cache", "node-4", 0.2, [0.0, 10.0, 0.0, 0.0], [0.5, 2048.0, 20.0, 100.0]);
    s.call("lb", "router")
        .call("lb", "beat")
        .call("lb", "metrics");
    for (ls, es) in [("ls-a", "es-a"), ("ls-b", "es-b"), ("ls-c", "es-c")] {
        s.call("router", ls).call(ls, es);
    }
    s.call("router", "kibana").call("kibana", "cache");
    s.finish("elk", 4, 20.0)
}

/// The named fixtures in ascending size.
pub fn all() -> Vec<Fixture> {
    vec![mean(), hotrod(), apartment(), elk()]
}

pub fn by_name(name: &str) -> Result<Fixture> {
    all()
        .into_iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::invalid(format!("no fixture named {name}")))
}

/// Random tree-shaped application with `n` instances, three per server,
/// deployed with room to spare. Each instance demands one or two kinds.
pub fn random_fixture(seed: u64, n: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = [0.01, 20.0, 0.6, 0.5];
    let mut s = Spec::new(if rng.random_bool(0.5) { 0.2 } else { 0.0 });
    let servers = n.div_ceil(3);
    let per_server = n.div_ceil(servers) as f64;
    for i in 0..n {
        let mut demand = [0.0; 4];
        let first = rng.random_range(0..4);
        demand[first] = scale[first] * rng.random_range(0.3..1.5);
        if rng.random_bool(0.4) {
            let second = rng.random_range(0..4);
            demand[second] = scale[second] * rng.random_range(0.1..0.6);
        }
        if rng.random_bool(0.1) {
            demand = [0.0; 4];
        }
        let alloc: [f64; 4] = std::array::from_fn(|k| {
            NODE.to_array()[k] / per_server * rng.random_range(0.25..0.6)
        });
        let id = format!("svc-{i}");
        let server = format!("node-{}", i / 3 + 1);
        s.add(&id, &server, rng.random_range(0.0..2.0), demand, alloc);
        if i > 0 {
            let parent = rng.random_range(0..i);
            s.call(&format!("svc-{parent}"), &id);
        }
    }
    s.finish(&format!("random-{seed}"), servers, rng.random_range(5.0..30.0))
}

/// Random application small enough for exhaustive search: `n` instances
/// (at most four) spread over two servers.
pub fn random_small(seed: u64, n: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
    let scale = [0.01, 20.0, 0.6, 0.5];
    let mut s = Spec::new(0.0);
    for i in 0..n {
        let mut demand = [0.0; 4];
        let first = rng.random_range(0..4);
        demand[first] = scale[first] * rng.random_range(0.5..1.5);
        if rng.random_bool(0.3) {
            let second = rng.random_range(0..4);
            demand[second] += scale[second] * rng.random_range(0.1..0.5);
        }
        let alloc: [f64; 4] = std::array::from_fn(|k| {
            let share = if demand[k] > 0.0 { rng.random_range(0.15..0.3) } else { 0.1 };
            NODE.to_array()[k] * share
        });
        let id = format!("svc-{i}");
        let server = format!("node-{}", i % 2 + 1);
        s.add(&id, &server, 0.0, demand, alloc);
        if i > 0 {
            let parent = rng.random_range(0..i);
            s.call(&format!("svc-{parent}"), &id);
        }
    }
    s.finish(&format!("small-{seed}"), 2, rng.random_range(5.0..20.0))
}

/// Week-long diurnal request-rate trace at 10 s resolution.
///
/// A daily sinusoid around `mean_rate` with a quieter weekend, slow
/// multiplicative jitter, and (when `spikes`) a burst of a few minutes
/// every six hours that the switching policy should ignore.
pub fn diurnal_trace(seed: u64, mean_rate: f64, spikes: bool) -> RateTrace {
    let interval = 10.0;
    let days = 7;
    let n = days * 8640;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let mut drift = 0.0f64;
    let rates: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * interval;
            let day = (t / 86_400.0) as usize;
            let phase = 2.0 * std::f64::consts::PI * (t / 86_400.0 - 0.25);
            let weekend = if day >= 5 { 0.7 } else { 1.0 };
            drift = 0.98 * drift + jitter.sample(&mut rng);
            let mut r = mean_rate * weekend * (1.0 + 0.6 * phase.sin()) * (1.0 + drift);
            // 3-minute burst at 06:00, 12:00, 18:00 and 24:00 of every day
            if spikes && (i % 2160) < 18 && i >= 2160 {
                r *= 2.5;
            }
            r.max(0.0)
        })
        .collect();
    RateTrace::from_rates(&rates, interval).expect("generated trace is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_deployment;

    #[test]
    fn named_fixtures_are_valid_and_roomy() {
        for f in all() {
            f.model.validate().unwrap();
            validate_deployment(&f.deployment, &f.cluster, &f.constraints)
                .into_result()
                .unwrap();
            assert!(f.aggregate_slack() >= 0.5, "{} slack {}", f.name, f.aggregate_slack());
        }
        let sizes: Vec<usize> = all().iter().map(Fixture::mr_count).collect();
        assert_eq!(sizes, vec![12, 32, 48, 48]);
    }

    #[test]
    fn random_fixtures_are_valid() {
        for seed in 0..20 {
            for n in [3, 7, 12] {
                let f = random_fixture(seed, n);
                f.model.validate().unwrap();
                validate_deployment(&f.deployment, &f.cluster, &[]).into_result().unwrap();
            }
            let f = random_small(seed, 4);
            validate_deployment(&f.deployment, &f.cluster, &[]).into_result().unwrap();
        }
    }

    #[test]
    fn trace_shape() {
        let t = diurnal_trace(1, 200.0, true);
        assert_eq!(t.samples().len(), 7 * 8640);
        assert!(t.max_rate() > 300.0);
        assert!(t.min_rate() < 100.0);
    }
}
