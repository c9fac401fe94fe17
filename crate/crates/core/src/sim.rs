//! Synthetic microservice application used as the optimizer's blackbox.
//!
//! Each instance contributes a service time
//!
//! ```text
//! t_i = base_i + 1000 * sum_r demand(i, r) / alloc(i, r) * 1 / (1 - rho_i)     [ms]
//! rho_i = min(0.99, rate_i * max_r demand(i, r) / alloc(i, r))
//! ```
//!
//! where `rate_i` is the request rate divided evenly across the replicas of the
//! instance's service. Two instances on one server whose largest-demand kind
//! matches are both slowed by `1 + interference_gamma`. End-to-end latency is the
//! heaviest entry-to-leaf path. In noise mode every trial draws per-request
//! samples scaled by a mean-one log-normal factor and reports their percentile.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    allocation_serde, Deployment, InstanceId, Metric, MicroserviceInstance, MrKey, PerfValue,
    ResourceKind, WorkloadSpec,
};
use crate::error::{Error, Result};

/// Utilization cap; keeps the queue factor finite under overload.
pub const RHO_CAP: f64 = 0.99;

/// Default number of repeated trials per measurement.
pub const DEFAULT_TRIALS: usize = 25;

/// Degradation tolerance used when measurements are exact.
pub const TAU_DETERMINISTIC: f64 = 0.0;
/// Degradation tolerance used when measurements carry noise.
pub const TAU_NOISY: f64 = 0.05;

const MIN_SAMPLES: usize = 100;
const MAX_SAMPLES: usize = 2000;

/// Parametric application: a DAG of instances with per-request demands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppModel {
    pub instances: Vec<MicroserviceInstance>,
    /// Caller to callee.
    pub edges: Vec<(InstanceId, InstanceId)>,
    /// Per-request demand in unit-seconds (core-s, MiB-s, ...). Missing means zero.
    #[serde(with = "allocation_serde")]
    pub demand: BTreeMap<MrKey, f64>,
    /// Fixed per-instance latency in ms. Missing means zero.
    #[serde(default)]
    pub base_latency: BTreeMap<InstanceId, f64>,
    #[serde(default)]
    pub interference_gamma: f64,
    /// Coefficient of variation of the multiplicative measurement noise.
    #[serde(default)]
    pub noise_cv: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AppModel {
    pub fn instance_ids(&self) -> impl Iterator<Item = &InstanceId> {
        self.instances.iter().map(|i| &i.id)
    }

    pub fn demand_of(&self, instance: &InstanceId, kind: ResourceKind) -> f64 {
        self.demand
            .get(&MrKey::new(instance.clone(), kind))
            .copied()
            .unwrap_or(0.0)
    }

    /// Kind with the largest per-request demand, ties in [`ResourceKind::ALL`] order.
    /// `None` when the instance demands nothing.
    pub fn dominant_kind(&self, instance: &InstanceId) -> Option<ResourceKind> {
        dominant(&ResourceKind::ALL.map(|k| self.demand_of(instance, k))).map(|i| ResourceKind::ALL[i])
    }

    pub fn service_of(&self, instance: &InstanceId) -> Option<&str> {
        self.instances
            .iter()
            .find(|i| &i.id == instance)
            .map(|i| i.service_name.as_str())
    }

    /// The single instance with no callers.
    pub fn entry(&self) -> Result<&InstanceId> {
        let callees: BTreeSet<&InstanceId> = self.edges.iter().map(|(_, to)| to).collect();
        let roots: Vec<&InstanceId> = self
            .instance_ids()
            .filter(|i| !callees.contains(i))
            .collect();
        match roots.as_slice() {
            [only] => Ok(only),
            [] => Err(Error::invalid("model has no entry instance")),
            many => Err(Error::invalid(format!(
                "model has {} entry instances, expected one",
                many.len()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        CompiledModel::new(self).map(|_| ())
    }

    /// Adds a replica of `template` named `id`: same service, demands, base
    /// latency and edges.
    pub fn add_replica(&mut self, template: &InstanceId, id: InstanceId) -> Result<()> {
        let service = self
            .service_of(template)
            .ok_or_else(|| Error::invalid(format!("unknown instance {template}")))?
            .to_owned();
        self.instances.push(MicroserviceInstance {
            id: id.clone(),
            service_name: service,
        });
        for kind in ResourceKind::ALL {
            let d = self.demand_of(template, kind);
            if d > 0.0 {
                self.demand.insert(MrKey::new(id.clone(), kind), d);
            }
        }
        if let Some(&b) = self.base_latency.get(template) {
            self.base_latency.insert(id.clone(), b);
        }
        let mut added = Vec::new();
        for (from, to) in &self.edges {
            if from == template {
                added.push((id.clone(), to.clone()));
            }
            if to == template {
                added.push((from.clone(), id.clone()));
            }
        }
        self.edges.extend(added);
        Ok(())
    }
}

fn dominant(demand: &[f64; 4]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &d) in demand.iter().enumerate() {
        if d > 0.0 && best.is_none_or(|b| d > demand[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index-based form of an [`AppModel`] for fast repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    ids: Vec<InstanceId>,
    index: BTreeMap<InstanceId, usize>,
    demand: Vec<[f64; 4]>,
    base: Vec<f64>,
    share: Vec<f64>,
    dominant: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Reverse topological order: callees before callers.
    order: Vec<usize>,
    entry: usize,
    gamma: f64,
    noise_cv: f64,
    seed: u64,
}

impl CompiledModel {
    pub fn new(model: &AppModel) -> Result<Self> {
        let n = model.instances.len();
        if n == 0 {
            return Err(Error::invalid("model has no instances"));
        }
        let mut index = BTreeMap::new();
        for (i, inst) in model.instances.iter().enumerate() {
            if index.insert(inst.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate instance id {}", inst.id)));
            }
        }
        for (mr, &v) in &model.demand {
            if !index.contains_key(&mr.instance) {
                return Err(Error::invalid(format!("demand for unknown instance {}", mr.instance)));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("demand of {mr} must be finite and >= 0")));
            }
        }
        for (id, &b) in &model.base_latency {
            if !index.contains_key(id) {
                return Err(Error::invalid(format!("base latency for unknown instance {id}")));
            }
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::invalid(format!("base latency of {id} must be >= 0")));
            }
        }
        if !(model.interference_gamma.is_finite() && model.interference_gamma >= 0.0) {
            return Err(Error::invalid("interference_gamma must be >= 0"));
        }
        if !(model.noise_cv.is_finite() && model.noise_cv >= 0.0) {
            return Err(Error::invalid("noise_cv must be >= 0"));
        }

        let mut children = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for (from, to) in &model.edges {
            let (Some(&a), Some(&b)) = (index.get(from), index.get(to)) else {
                return Err(Error::invalid(format!("edge {from}->{to} names an unknown instance")));
            };
            children[a].push(b);
            indegree[b] += 1;
        }
        let roots: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        if roots.len() != 1 {
            return Err(Error::invalid(format!(
                "model must have exactly one entry instance, found {}",
                roots.len()
            )));
        }
        let entry = roots[0];

        // Kahn's algorithm; leftover nodes mean a cycle.
        let mut topo = Vec::with_capacity(n);
        let mut indeg = indegree.clone();
        let mut stack = vec![entry];
        while let Some(v) = stack.pop() {
            topo.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    stack.push(c);
                }
            }
        }
        if topo.len() != n {
            return Err(Error::invalid("edges contain a cycle or unreachable instances"));
        }
        topo.reverse();

        let ids: Vec<InstanceId> = model.instances.iter().map(|i| i.id.clone()).collect();
        let demand: Vec<[f64; 4]> = ids
            .iter()
            .map(|id| ResourceKind::ALL.map(|k| model.demand_of(id, k)))
            .collect();
        let mut replicas: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in &model.instances {
            *replicas.entry(inst.service_name.as_str()).or_default() += 1;
        }
        let share = model
            .instances
            .iter()
            .map(|i| 1.0 / replicas[i.service_name.as_str()] as f64)
            .collect();

        Ok(CompiledModel {
            base: ids
                .iter()
                .map(|id| model.base_latency.get(id).copied().unwrap_or(0.0))
                .collect(),
            dominant: demand.iter().map(dominant).collect(),
            ids,
            index,
            demand,
            share,
            children,
            order: topo,
            entry,
            gamma: model.interference_gamma,
            noise_cv: model.noise_cv,
            seed: model.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn noise_cv(&self) -> f64 {
        self.noise_cv
    }

    /// Per-instance allocation vectors and interned server indices for `d`.
    pub fn layout(&self, d: &Deployment) -> Result<(Vec<[f64; 4]>, Vec<usize>)> {
        let mut servers: BTreeMap<&str, usize> = BTreeMap::new();
        let mut alloc = Vec::with_capacity(self.ids.len());
        let mut placed = Vec::with_capacity(self.ids.len());
        for id in &self.ids {
            let server = d
                .server_of(id)
                .ok_or_else(|| Error::invalid(format!("instance {id} is not placed")))?;
            let next = servers.len();
            placed.push(*servers.entry(server.as_str()).or_insert(next));
            let mut a = [0.0; 4];
            for kind in ResourceKind::ALL {
                let mr = MrKey::new(id.clone(), kind);
                a[kind.index()] = d.get(&mr).ok_or(Error::UnknownMr(mr))?;
            }
            alloc.push(a);
        }
        for inst in d.placement.keys() {
            if !self.index.contains_key(inst) {
                return Err(Error::invalid(format!("deployment places unknown instance {inst}")));
            }
        }
        Ok((alloc, placed))
    }

    fn check_alloc(&self, alloc: &[[f64; 4]]) -> Result<()> {
        for (i, a) in alloc.iter().enumerate() {
            for kind in ResourceKind::ALL {
                let v = a[kind.index()];
                if !(v > 0.0) {
                    return Err(Error::Singularity {
                        mr: MrKey::new(self.ids[i].clone(), kind),
                        amount: v,
                    });
                }
            }
        }
        Ok(())
    }

    fn utilization(&self, i: usize, alloc: &[f64; 4], rate: f64) -> f64 {
        let worst = self.demand[i]
            .iter()
            .zip(alloc)
            .filter(|(d, _)| **d > 0.0)
            .fold(0.0f64, |w, (d, a)| w.max(d / a));
        (rate * self.share[i] * worst).min(RHO_CAP)
    }

    fn interfered(&self, i: usize, servers: &[usize]) -> bool {
        match self.dominant[i] {
            None => false,
            Some(k) => (0..self.ids.len())
                .any(|j| j != i && servers[j] == servers[i] && self.dominant[j] == Some(k)),
        }
    }

    /// Service time of every instance in ms.
    pub fn service_times(&self, alloc: &[[f64; 4]], servers: &[usize], rate: f64) -> Result<Vec<f64>> {
        self.check_alloc(alloc)?;
        Ok(self.service_times_unchecked(alloc, servers, rate))
    }

    fn service_times_unchecked(&self, alloc: &[[f64; 4]], servers: &[usize], rate: f64) -> Vec<f64> {
        (0..self.ids.len())
            .map(|i| {
                let rho = self.utilization(i, &alloc[i], rate);
                let queue = 1.0 / (1.0 - rho);
                let work: f64 = self.demand[i]
                    .iter()
                    .zip(&alloc[i])
                    .filter(|(d, _)| **d > 0.0)
                    .map(|(d, a)| d / a)
                    .sum();
                let mut t = self.base[i] + 1000.0 * work * queue;
                if self.gamma > 0.0 && self.interfered(i, servers) {
                    t *= 1.0 + self.gamma;
                }
                t
            })
            .collect()
    }

    /// Deterministic end-to-end latency in ms.
    pub fn latency(&self, alloc: &[[f64; 4]], servers: &[usize], rate: f64) -> Result<f64> {
        self.check_alloc(alloc)?;
        Ok(self.latency_unchecked(alloc, servers, rate))
    }

    pub(crate) fn latency_unchecked(&self, alloc: &[[f64; 4]], servers: &[usize], rate: f64) -> f64 {
        let t = self.service_times_unchecked(alloc, servers, rate);
        let mut path = vec![0.0; t.len()];
        for &v in &self.order {
            let tail = self.children[v]
                .iter()
                .map(|&c| path[c])
                .fold(0.0, f64::max);
            path[v] = t[v] + tail;
        }
        path[self.entry]
    }

    /// Capped utilization per instance.
    pub fn utilizations(&self, alloc: &[[f64; 4]], rate: f64) -> Vec<f64> {
        (0..self.ids.len())
            .map(|i| self.utilization(i, &alloc[i], rate))
            .collect()
    }
}

/// Deterministic or noisy evaluation of one deployment (a single trial).
pub fn evaluate(model: &AppModel, d: &Deployment, w: &WorkloadSpec, deterministic: bool) -> Result<PerfValue> {
    let compiled = CompiledModel::new(model)?;
    let cfg = MeasureConfig {
        trials: 1,
        deterministic,
        ..MeasureConfig::default()
    };
    trial_value(&compiled, d, w, &cfg, 0).map(PerfValue::p99)
}

/// Repeats [`evaluate`] over `trials` seeded trials and aggregates them.
pub fn measure(model: &AppModel, d: &Deployment, w: &WorkloadSpec, trials: usize) -> Result<PerfValue> {
    let cfg = MeasureConfig {
        trials,
        deterministic: model.noise_cv == 0.0,
        ..MeasureConfig::default()
    };
    SimEvaluator::new(model, w, cfg)?.measure(d)
}

/// Per-request latency samples of one trial, sorted ascending. Used for CDF plots.
pub fn latency_samples(model: &AppModel, d: &Deployment, w: &WorkloadSpec, trial: u64) -> Result<Vec<f64>> {
    let compiled = CompiledModel::new(model)?;
    let (alloc, servers) = compiled.layout(d)?;
    let base = compiled.latency(&alloc, &servers, w.request_rate)?;
    let n = sample_count(w);
    if compiled.noise_cv == 0.0 {
        return Ok(vec![base; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(compiled.seed, trial, d, w));
    let noise = LogNormal::from_mean_cv(1.0, compiled.noise_cv)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let mut samples: Vec<f64> = (0..n).map(|_| base * noise.sample(&mut rng)).collect();
    samples.sort_by(f64::total_cmp);
    Ok(samples)
}

/// Capped utilization of every instance under `w`.
pub fn utilizations(model: &AppModel, d: &Deployment, w: &WorkloadSpec) -> Result<BTreeMap<InstanceId, f64>> {
    let compiled = CompiledModel::new(model)?;
    let (alloc, _) = compiled.layout(d)?;
    Ok(compiled
        .ids
        .iter()
        .cloned()
        .zip(compiled.utilizations(&alloc, w.request_rate))
        .collect())
}

fn sample_count(w: &WorkloadSpec) -> usize {
    ((w.request_rate * w.duration).round() as usize).clamp(MIN_SAMPLES, MAX_SAMPLES)
}

/// Seed for one trial: fixed by the model seed, the trial index, the deployment
/// and the workload, so identical inputs replay bit-identically while distinct
/// deployments see independent noise.
fn trial_seed(seed: u64, trial: u64, d: &Deployment, w: &WorkloadSpec) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    trial.hash(&mut h);
    for (inst, server) in &d.placement {
        inst.hash(&mut h);
        server.hash(&mut h);
    }
    for (mr, v) in &d.allocation {
        mr.hash(&mut h);
        v.to_bits().hash(&mut h);
    }
    w.request_rate.to_bits().hash(&mut h);
    w.duration.to_bits().hash(&mut h);
    h.finish()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn trial_value(
    compiled: &CompiledModel,
    d: &Deployment,
    w: &WorkloadSpec,
    cfg: &MeasureConfig,
    trial: u64,
) -> Result<f64> {
    let (alloc, servers) = compiled.layout(d)?;
    let base = compiled.latency(&alloc, &servers, w.request_rate)?;
    if cfg.is_deterministic(compiled) {
        return Ok(base);
    }
    let noise = LogNormal::from_mean_cv(1.0, compiled.noise_cv)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(compiled.seed, trial, d, w));
    let mut samples: Vec<f64> = (0..sample_count(w))
        .map(|_| base * noise.sample(&mut rng))
        .collect();
    samples.sort_by(f64::total_cmp);
    Ok(match cfg.metric {
        Metric::P99LatencyMs => percentile(&samples, 0.99),
        Metric::MedianLatencyMs => percentile(&samples, 0.5),
        Metric::MeanLatencyMs => samples.iter().sum::<f64>() / samples.len() as f64,
    })
}

/// How repeated trials collapse into one number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub trials: usize,
    pub deterministic: bool,
    pub metric: Metric,
    pub aggregation: Aggregation,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            trials: DEFAULT_TRIALS,
            deterministic: false,
            metric: Metric::P99LatencyMs,
            aggregation: Aggregation::Median,
        }
    }
}

impl MeasureConfig {
    fn is_deterministic(&self, compiled: &CompiledModel) -> bool {
        self.deterministic || compiled.noise_cv == 0.0
    }
}

/// Anything that can score a deployment. The optimizer only ever talks to this.
pub trait Blackbox {
    fn measure(&self, d: &Deployment) -> Result<PerfValue>;

    /// Number of measurements taken so far.
    fn measurement_count(&self) -> usize;
}

impl<B: Blackbox + ?Sized> Blackbox for &B {
    fn measure(&self, d: &Deployment) -> Result<PerfValue> {
        (**self).measure(d)
    }

    fn measurement_count(&self) -> usize {
        (**self).measurement_count()
    }
}

/// [`Blackbox`] backed by the synthetic model, with a measurement counter.
#[derive(Debug)]
pub struct SimEvaluator {
    compiled: CompiledModel,
    workload: WorkloadSpec,
    config: MeasureConfig,
    count: AtomicUsize,
}

impl SimEvaluator {
    pub fn new(model: &AppModel, workload: &WorkloadSpec, config: MeasureConfig) -> Result<Self> {
        if config.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        workload.validate()?;
        Ok(SimEvaluator {
            compiled: CompiledModel::new(model)?,
            workload: workload.clone(),
            config,
            count: AtomicUsize::new(0),
        })
    }

    pub fn deterministic(model: &AppModel, workload: &WorkloadSpec) -> Result<Self> {
        SimEvaluator::new(
            model,
            workload,
            MeasureConfig {
                deterministic: true,
                ..MeasureConfig::default()
            },
        )
    }

    pub fn is_deterministic(&self) -> bool {
        self.config.is_deterministic(&self.compiled)
    }

    /// Degradation tolerance matching the evaluator's noise mode.
    pub fn default_tau(&self) -> f64 {
        if self.is_deterministic() {
            TAU_DETERMINISTIC
        } else {
            TAU_NOISY
        }
    }

    pub fn compiled(&self) -> &CompiledModel {
        &self.compiled
    }

    pub fn workload(&self) -> &WorkloadSpec {
        &self.workload
    }

    pub fn reset_count(&self) {
        self.count.store(0, Ordering::Relaxed);
    }
}

impl Blackbox for SimEvaluator {
    fn measure(&self, d: &Deployment) -> Result<PerfValue> {
        self.count.fetch_add(1, Ordering::Relaxed);
        let metric = self.config.metric;
        if self.is_deterministic() {
            let v = trial_value(&self.compiled, d, &self.workload, &self.config, 0)?;
            return Ok(PerfValue::latency(v, metric));
        }
        let mut values = (0..self.config.trials as u64)
            .map(|t| trial_value(&self.compiled, d, &self.workload, &self.config, t))
            .collect::<Result<Vec<f64>>>()?;
        let v = match self.config.aggregation {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        };
        Ok(PerfValue::latency(v, metric))
    }

    fn measurement_count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

fn check_comparable(candidate: &PerfValue, baseline: &PerfValue) -> Result<()> {
    if candidate.metric != baseline.metric || candidate.lower_is_better != baseline.lower_is_better {
        return Err(Error::MetricMismatch(candidate.metric, baseline.metric));
    }
    if !(baseline.value > 0.0) {
        return Err(Error::invalid("baseline value must be > 0"));
    }
    Ok(())
}

/// True when `candidate` is worse than `baseline` by more than a `tau` fraction.
pub fn is_degraded(candidate: &PerfValue, baseline: &PerfValue, tau: f64) -> Result<bool> {
    check_comparable(candidate, baseline)?;
    Ok(if baseline.lower_is_better {
        candidate.value > baseline.value * (1.0 + tau)
    } else {
        candidate.value < baseline.value * (1.0 - tau)
    })
}

/// True when `candidate` is better than `baseline` by more than a `tau` fraction.
pub fn is_improved(candidate: &PerfValue, baseline: &PerfValue, tau: f64) -> Result<bool> {
    check_comparable(candidate, baseline)?;
    Ok(if baseline.lower_is_better {
        candidate.value < baseline.value * (1.0 - tau)
    } else {
        candidate.value > baseline.value * (1.0 + tau)
    })
}

/// Relative worsening of `candidate` against `baseline`; positive is worse.
pub fn degradation(candidate: &PerfValue, baseline: &PerfValue) -> f64 {
    let rel = (candidate.value - baseline.value) / baseline.value;
    if baseline.lower_is_better {
        rel
    } else {
        -rel
    }
}

/// Measured relative degradation per stressed MR.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactTable {
    /// Value the degradations are relative to.
    pub baseline: f64,
    /// Stress fraction of the most recent entries.
    pub fraction: f64,
    #[serde(with = "allocation_serde")]
    pub entries: BTreeMap<MrKey, f64>,
}

impl ImpactTable {
    pub fn new(baseline: f64, fraction: f64) -> Self {
        ImpactTable {
            baseline,
            fraction,
            entries: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, mr: MrKey, degradation: f64) {
        self.entries.insert(mr, degradation);
    }

    /// Degradation of `mr`; unmeasured MRs count as unimpacted.
    pub fn get(&self, mr: &MrKey) -> f64 {
        self.entries.get(mr).copied().unwrap_or(0.0)
    }

    pub fn of(&self, instance: &InstanceId, kind: ResourceKind) -> f64 {
        self.get(&MrKey::new(instance.clone(), kind))
    }

    /// Argmax of the instance's degradations, ties in [`ResourceKind::ALL`] order.
    pub fn most_impacted_kind(&self, instance: &InstanceId) -> ResourceKind {
        let mut best = ResourceKind::Cpu;
        for kind in ResourceKind::ALL {
            if self.of(instance, kind) > self.of(instance, best) {
                best = kind;
            }
        }
        best
    }

    /// Newer measurements replace older ones.
    pub fn merge(&mut self, newer: ImpactTable) {
        self.baseline = newer.baseline;
        self.fraction = newer.fraction;
        self.entries.extend(newer.entries);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Resources;

    fn chain() -> (AppModel, Deployment) {
        let model = AppModel {
            instances: vec![
                MicroserviceInstance::new("a", "front"),
                MicroserviceInstance::new("b", "store"),
            ],
            edges: vec![("a".into(), "b".into())],
            demand: BTreeMap::from([
                (MrKey::new("a", ResourceKind::Cpu), 0.1),
                (MrKey::new("b", ResourceKind::DiskBw), 10.0),
            ]),
            base_latency: BTreeMap::new(),
            interference_gamma: 0.0,
            noise_cv: 0.0,
            seed: 1,
        };
        let d = Deployment::new()
            .with_instance("a", "s1", Resources::new(2.0, 512.0, 20.0, 100.0))
            .with_instance("b", "s2", Resources::new(1.0, 512.0, 50.0, 100.0));
        (model, d)
    }

    #[test]
    fn chain_latency_matches_formula() {
        let (model, d) = chain();
        let w = WorkloadSpec::new(1e-6, 60.0);
        let v = evaluate(&model, &d, &w, true).unwrap().value;
        // 0.1/2 + 10/50 = 0.25 s
        assert!((v - 250.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn doubling_allocations_halves_latency() {
        let (model, d) = chain();
        let w = WorkloadSpec::new(1e-6, 60.0);
        let mut doubled = d.clone();
        for v in doubled.allocation.values_mut() {
            *v *= 2.0;
        }
        let v = evaluate(&model, &doubled, &w, true).unwrap().value;
        assert!((v - 125.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn base_latency_only() {
        let model = AppModel {
            instances: vec![MicroserviceInstance::new("a", "a")],
            edges: vec![],
            demand: BTreeMap::new(),
            base_latency: BTreeMap::from([("a".into(), 100.0)]),
            interference_gamma: 0.0,
            noise_cv: 0.0,
            seed: 0,
        };
        let w = WorkloadSpec::new(50.0, 60.0);
        for cpu in [0.1, 1.0, 8.0] {
            let d = Deployment::new().with_instance("a", "s1", Resources::new(cpu, 10.0, 10.0, 10.0));
            assert_eq!(evaluate(&model, &d, &w, true).unwrap().value, 100.0);
        }
    }

    #[test]
    fn queue_factor_uses_bottleneck_kind() {
        let (model, d) = chain();
        // b: rho = 4 * 10/50 = 0.8 -> queue 5; a: rho = 4 * 0.1/2 = 0.2
        let w = WorkloadSpec::new(4.0, 60.0);
        let v = evaluate(&model, &d, &w, true).unwrap().value;
        let expected = 1000.0 * (0.05 / (1.0 - 0.2) + 0.2 / (1.0 - 0.8));
        assert!((v - expected).abs() < 1e-6, "{v} vs {expected}");
        // past saturation the queue factor is capped
        let v = evaluate(&model, &d, &w.with_rate(40.0), true).unwrap().value;
        let expected = 1000.0 * (0.05 / (1.0 - 0.99) + 0.2 / (1.0 - 0.99));
        assert!((v - expected).abs() < 1e-6, "{v} vs {expected}");
    }

    #[test]
    fn interference_applies_to_shared_dominant_kind() {
        let (mut model, d) = chain();
        model.interference_gamma = 0.5;
        let w = WorkloadSpec::new(1e-6, 60.0);
        let apart = evaluate(&model, &d, &w, true).unwrap().value;
        let mut together = d.clone();
        together.placement.insert("b".into(), "s1".into());
        // distinct dominant kinds: no change
        assert_eq!(evaluate(&model, &together, &w, true).unwrap().value, apart);

        model.demand.insert(MrKey::new("b", ResourceKind::Cpu), 20.0);
        let apart = evaluate(&model, &d, &w, true).unwrap().value;
        let packed = evaluate(&model, &together, &w, true).unwrap().value;
        assert!((packed - 1.5 * apart).abs() < 1e-9);
    }

    #[test]
    fn zero_allocation_is_a_singularity() {
        let (model, mut d) = chain();
        d.allocation.insert(MrKey::new("a", ResourceKind::Cpu), 0.0);
        let err = evaluate(&model, &d, &WorkloadSpec::new(1.0, 1.0), true).unwrap_err();
        assert!(matches!(err, Error::Singularity { .. }));
    }

    #[test]
    fn measure_trials_contract() {
        let (model, d) = chain();
        let w = WorkloadSpec::new(5.0, 60.0);
        assert!(measure(&model, &d, &w, 0).is_err());
        let once = evaluate(&model, &d, &w, true).unwrap();
        assert_eq!(measure(&model, &d, &w, 25).unwrap(), once);
    }

    #[test]
    fn noisy_measure_replays_bit_identically() {
        let (mut model, d) = chain();
        model.noise_cv = 0.05;
        model.seed = 42;
        let w = WorkloadSpec::new(5.0, 60.0);
        let a = measure(&model, &d, &w, 25).unwrap();
        let b = measure(&model, &d, &w, 25).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let det = evaluate(&model, &d, &w, true).unwrap().value;
        assert!(a.value > det, "p99 of mean-one noise sits above the mean");
        assert!(a.value < det * 1.25);
    }

    #[test]
    fn degraded_boundaries() {
        let b = PerfValue::p99(100.0);
        assert!(!is_degraded(&PerfValue::p99(105.0), &b, 0.05).unwrap());
        assert!(is_degraded(&PerfValue::p99(106.0), &b, 0.05).unwrap());
        assert!(!is_degraded(&PerfValue::p99(100.0), &b, 0.0).unwrap());
        let other = PerfValue::latency(1.0, Metric::MeanLatencyMs);
        assert!(matches!(
            is_degraded(&other, &b, 0.0),
            Err(Error::MetricMismatch(..))
        ));
    }

    #[test]
    fn rejects_cycles_and_multiple_entries() {
        let (mut model, _) = chain();
        model.edges.push(("b".into(), "a".into()));
        assert!(model.validate().is_err());
        let (mut model, _) = chain();
        model.edges.clear();
        assert!(model.validate().is_err());
    }

    #[test]
    fn replicas_split_load() {
        let (mut model, mut d) = chain();
        let w = WorkloadSpec::new(2.0, 60.0);
        let before = utilizations(&model, &d, &w).unwrap()[&InstanceId::from("b")];
        model.add_replica(&"b".into(), "b2".into()).unwrap();
        d = d.with_instance("b2", "s3", Resources::new(1.0, 512.0, 50.0, 100.0));
        let after = utilizations(&model, &d, &w).unwrap();
        assert!((after[&InstanceId::from("b")] - before / 2.0).abs() < 1e-12);
        assert!(model.edges.contains(&("a".into(), "b2".into())));
    }

    #[test]
    fn most_impacted_kind_tie_breaks_by_kind_order() {
        let mut t = ImpactTable::new(1.0, 0.3);
        t.record(MrKey::new("a", ResourceKind::NetBw), 0.2);
        t.record(MrKey::new("a", ResourceKind::DiskBw), 0.2);
        assert_eq!(t.most_impacted_kind(&"a".into()), ResourceKind::DiskBw);
        assert_eq!(t.most_impacted_kind(&"zzz".into()), ResourceKind::Cpu);
    }
}
