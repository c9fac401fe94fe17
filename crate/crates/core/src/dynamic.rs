//! Deployment switching under a time-varying request rate.
//!
//! A family holds deployments sized for a ladder of design rates. The policy
//! keeps one of them active and moves to another only after the load has sat
//! outside the active entry's band for a full window.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    ClusterSpec, Deployment, InstanceId, ResourceKind, ServerId, ServerSpec, WorkloadSpec, EPS,
};
use crate::error::{Error, Result};
use crate::sim::{self, AppModel};

pub const DEFAULT_WINDOW_S: f64 = 300.0;
pub const DEFAULT_INTERVAL_S: f64 = 10.0;
pub const CURVE_FACTORS: [f64; 6] = [1.2, 1.4, 1.6, 1.8, 2.0, 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub timestamp_s: f64,
    pub request_rate: f64,
}

/// Request rate sampled at a fixed interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateTrace {
    samples: Vec<RateSample>,
    interval: f64,
}

impl RateTrace {
    pub fn new(samples: Vec<RateSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trace is empty"));
        }
        let interval = if samples.len() > 1 {
            samples[1].timestamp_s - samples[0].timestamp_s
        } else {
            DEFAULT_INTERVAL_S
        };
        if !(interval > 0.0) {
            return Err(Error::Trace {
                line: 3,
                message: "timestamps must be strictly increasing".into(),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            // header is line 1
            let line = i + 2;
            if !(s.request_rate >= 0.0 && s.request_rate.is_finite()) {
                return Err(Error::Trace {
                    line,
                    message: format!("request_rate {} must be finite and >= 0", s.request_rate),
                });
            }
            if i > 0 {
                let gap = s.timestamp_s - samples[i - 1].timestamp_s;
                if (gap - interval).abs() > 1e-6 {
                    return Err(Error::Trace {
                        line,
                        message: format!("spacing {gap} s differs from {interval} s"),
                    });
                }
            }
        }
        Ok(RateTrace { samples, interval })
    }

    /// Builds a trace from rates at `interval` seconds starting at zero.
    pub fn from_rates(rates: &[f64], interval: f64) -> Result<Self> {
        Self::new(
            rates
                .iter()
                .enumerate()
                .map(|(i, &r)| RateSample {
                    timestamp_s: i as f64 * interval,
                    request_rate: r,
                })
                .collect(),
        )
    }

    /// Reads `timestamp_s,request_rate` CSV.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["timestamp_s", "request_rate"] {
            return Err(Error::Trace {
                line: 1,
                message: "header must be `timestamp_s,request_rate`".into(),
            });
        }
        let mut samples = Vec::new();
        for (i, rec) in rdr.deserialize::<RateSample>().enumerate() {
            let sample = rec.map_err(|e| Error::Trace {
                line: i + 2,
                message: e.to_string(),
            })?;
            samples.push(sample);
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.samples {
            w.serialize(s)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
            .expect("csv output is utf-8"))
    }

    pub fn samples(&self) -> &[RateSample] {
        &self.samples
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    /// Covered time, counting each sample as one interval.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.interval
    }

    pub fn mean_rate(&self) -> f64 {
        self.samples.iter().map(|s| s.request_rate).sum::<f64>() / self.samples.len() as f64
    }

    pub fn max_rate(&self) -> f64 {
        self.samples.iter().map(|s| s.request_rate).fold(0.0, f64::max)
    }

    pub fn min_rate(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.request_rate)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub design_rate: f64,
    pub deployment: Deployment,
}

/// Deployments for increasing design rates plus the headroom factor used to
/// pick among them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentFamily {
    pub entries: Vec<FamilyEntry>,
    pub overprovision_factor: f64,
}

impl DeploymentFamily {
    pub fn new(entries: Vec<FamilyEntry>, overprovision_factor: f64) -> Result<Self> {
        let fam = DeploymentFamily {
            entries,
            overprovision_factor,
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid("deployment family is empty"));
        }
        if !(self.overprovision_factor >= 1.0 && self.overprovision_factor.is_finite()) {
            return Err(Error::invalid("overprovision factor must be >= 1"));
        }
        if self.entries.iter().any(|e| !(e.design_rate > 0.0)) {
            return Err(Error::invalid("design rates must be > 0"));
        }
        if self
            .entries
            .windows(2)
            .any(|w| w[1].design_rate <= w[0].design_rate)
        {
            return Err(Error::invalid("design rates must be strictly increasing"));
        }
        Ok(())
    }

    /// Geometric ladder `base_rate * f^j` covering `f * [min_rate, max_rate]`,
    /// each entry being `base` with every allocation scaled by its design rate
    /// over `base_rate`. With `f == 1` the family is `base` alone.
    pub fn geometric(
        base: &Deployment,
        base_rate: f64,
        f: f64,
        min_rate: f64,
        max_rate: f64,
    ) -> Result<Self> {
        if !(base_rate > 0.0) {
            return Err(Error::invalid("base rate must be > 0"));
        }
        if !(f >= 1.0 && f.is_finite()) {
            return Err(Error::invalid("overprovision factor must be >= 1"));
        }
        let entry = |rate: f64| FamilyEntry {
            design_rate: rate,
            deployment: scale_deployment(base, rate / base_rate),
        };
        if (f - 1.0).abs() < EPS {
            return Self::new(vec![entry(base_rate)], 1.0);
        }
        let lo_target = (f * min_rate).max(base_rate * 1e-3);
        let hi_target = (f * max_rate).max(lo_target);
        let j_lo = ((lo_target / base_rate).ln() / f.ln() - 1e-9).ceil() as i32;
        let j_hi = ((hi_target / base_rate).ln() / f.ln() - 1e-9).ceil() as i32;
        let entries = (j_lo.min(0)..=j_hi.max(j_lo))
            .map(|j| entry(base_rate * f.powi(j)))
            .collect();
        Self::new(entries, f)
    }

    /// Index of the lowest entry whose design rate is at least `f * rate`, or
    /// the last entry when none is.
    pub fn target_index(&self, rate: f64) -> (usize, bool) {
        let need = self.overprovision_factor * rate;
        match self.entries.iter().position(|e| e.design_rate >= need) {
            Some(i) => (i, false),
            None => (self.entries.len() - 1, true),
        }
    }
}

/// `d` with every allocation multiplied by `scale`.
pub fn scale_deployment(d: &Deployment, scale: f64) -> Deployment {
    let mut out = d.clone();
    for v in out.allocation.values_mut() {
        *v *= scale;
    }
    out
}

/// Size of a deployment: every allocation as a fraction of the largest
/// server capacity of its kind, summed.
pub fn deployment_cost(d: &Deployment, reference: &crate::domain::Resources) -> f64 {
    d.allocation
        .iter()
        .map(|(mr, &v)| v / reference[mr.kind])
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub from_design_rate: f64,
    pub to_design_rate: f64,
    pub direction: Direction,
    pub window_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchStats {
    pub events: usize,
    pub mean_hours_between_changes: f64,
    pub pct_time_overloaded: f64,
    /// Design rate of the active entry at every sample.
    #[serde(skip)]
    pub active: Vec<usize>,
}

/// Replays `trace` against `family` with a `window`-second hysteresis.
///
/// A sample is out of band upward when `f * rate` exceeds the active design
/// rate, and downward when `f * rate` is at or below the next-lower entry's.
/// Once a one-directional run of such samples has lasted `window` seconds the
/// policy moves to the lowest entry covering `f` times the trailing window
/// mean, and the run restarts. Samples whose rate exceeds the active design
/// rate count as overloaded time.
pub fn simulate_switching(
    trace: &RateTrace,
    family: &DeploymentFamily,
    window: f64,
) -> Result<(Vec<SwitchEvent>, SwitchStats)> {
    family.validate()?;
    if !(window > 0.0) {
        return Err(Error::invalid("window must be > 0"));
    }
    let f = family.overprovision_factor;
    let samples = trace.samples();
    let (mut current, _) = family.target_index(samples[0].request_rate);
    let mut run: Option<(Direction, f64)> = None;
    let mut events = Vec::new();
    let mut overloaded = 0usize;
    let mut active = Vec::with_capacity(samples.len());
    // trailing window as a running sum over [lo, i]
    let mut lo = 0usize;
    let mut sum = 0.0;

    for (i, s) in samples.iter().enumerate() {
        sum += s.request_rate;
        while samples[lo].timestamp_s <= s.timestamp_s - window {
            sum -= samples[lo].request_rate;
            lo += 1;
        }
        let need = f * s.request_rate;
        let dir = if current + 1 < family.entries.len() && need > family.entries[current].design_rate {
            Some(Direction::Up)
        } else if current > 0 && need <= family.entries[current - 1].design_rate {
            Some(Direction::Down)
        } else {
            None
        };
        run = match (run, dir) {
            (Some((d0, start)), Some(d)) if d0 == d => Some((d0, start)),
            (_, Some(d)) => Some((d, s.timestamp_s)),
            (_, None) => None,
        };
        if let Some((d, start)) = run {
            if s.timestamp_s - start >= window - 1e-9 {
                let mean = sum / (i + 1 - lo) as f64;
                let (target, _) = family.target_index(mean);
                if target != current {
                    events.push(SwitchEvent {
                        time: s.timestamp_s,
                        from_design_rate: family.entries[current].design_rate,
                        to_design_rate: family.entries[target].design_rate,
                        direction: d,
                        window_mean: mean,
                    });
                    current = target;
                }
                run = None;
            }
        }
        if s.request_rate > family.entries[current].design_rate + EPS {
            overloaded += 1;
        }
        active.push(current);
    }

    let hours = trace.duration_s() / 3600.0;
    let stats = SwitchStats {
        events: events.len(),
        mean_hours_between_changes: if events.is_empty() {
            hours
        } else {
            hours / events.len() as f64
        },
        pct_time_overloaded: 100.0 * overloaded as f64 / samples.len() as f64,
        active,
    };
    Ok((events, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub factor: f64,
    pub percent_extra_resources: f64,
    pub mean_hours_between_changes: f64,
    pub events: usize,
    pub pct_time_overloaded: f64,
}

/// Time-averaged resource cost of the entries the policy keeps active,
/// relative to `base_cost`, for each family.
pub fn overprovisioning_curve(
    trace: &RateTrace,
    families: &[DeploymentFamily],
    base_cost: f64,
    reference: &crate::domain::Resources,
    window: f64,
) -> Result<Vec<CurveRow>> {
    if !(base_cost > 0.0) {
        return Err(Error::invalid("base cost must be > 0"));
    }
    let mut rows = Vec::with_capacity(families.len());
    for fam in families {
        let (_, stats) = simulate_switching(trace, fam, window)?;
        let costs: Vec<f64> = fam
            .entries
            .iter()
            .map(|e| deployment_cost(&e.deployment, reference))
            .collect();
        let avg = stats.active.iter().map(|&i| costs[i]).sum::<f64>() / stats.active.len() as f64;
        rows.push(CurveRow {
            factor: fam.overprovision_factor,
            percent_extra_resources: 100.0 * (avg - base_cost) / base_cost,
            mean_hours_between_changes: stats.mean_hours_between_changes,
            events: stats.events,
            pct_time_overloaded: stats.pct_time_overloaded,
        });
    }
    rows.sort_by(|a, b| a.factor.total_cmp(&b.factor));
    Ok(rows)
}

/// Curve over [`CURVE_FACTORS`] for families scaled from `base`, whose design
/// rate is the trace mean.
pub fn standard_curve(
    trace: &RateTrace,
    base: &Deployment,
    reference: &crate::domain::Resources,
    window: f64,
) -> Result<Vec<CurveRow>> {
    let base_rate = trace.mean_rate().max(EPS);
    let families = CURVE_FACTORS
        .iter()
        .map(|&f| DeploymentFamily::geometric(base, base_rate, f, trace.min_rate(), trace.max_rate()))
        .collect::<Result<Vec<_>>>()?;
    overprovisioning_curve(trace, &families, deployment_cost(base, reference), reference, window)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutoscaleWindow {
    pub start_s: f64,
    pub mean_rate: f64,
    pub servers: usize,
    pub instances: usize,
    pub value: f64,
    pub scaled: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutoscaleResult {
    pub threshold_pct: f64,
    pub initial_servers: usize,
    pub final_servers: usize,
    pub trajectory: Vec<AutoscaleWindow>,
    #[serde(skip)]
    pub model: AppModel,
    #[serde(skip)]
    pub cluster: ClusterSpec,
    #[serde(skip)]
    pub deployment: Deployment,
}

impl AutoscaleResult {
    pub fn peak_rate(&self) -> f64 {
        self.trajectory.iter().map(|w| w.mean_rate).fold(0.0, f64::max)
    }
}

/// Utilization-threshold horizontal scaler, evaluated once per `window`.
///
/// Whenever a service's mean instance utilization over its replicas exceeds
/// `threshold_pct`, one replica with the template's allocation is added on
/// the emptiest server it fits on; if none fits, a copy of the template's
/// server joins the cluster. Replicas are never removed. Each window is
/// measured deterministically at its mean rate after scaling.
pub fn autoscaler_baseline(
    trace: &RateTrace,
    model: &AppModel,
    initial: &Deployment,
    cluster: &ClusterSpec,
    threshold_pct: f64,
    w: &WorkloadSpec,
    window: f64,
) -> Result<AutoscaleResult> {
    if !(threshold_pct > 0.0 && threshold_pct <= 100.0) {
        return Err(Error::invalid("threshold must lie in (0, 100]"));
    }
    if !(window >= trace.interval()) {
        return Err(Error::invalid("window must span at least one sample"));
    }
    model.validate()?;
    let mut model = model.clone();
    let mut cluster = cluster.clone();
    let mut d = initial.clone();
    let initial_servers = crate::domain::server_count(&d);
    let per_window = ((window / trace.interval()).round() as usize).max(1);
    let mut trajectory = Vec::new();

    for chunk in trace.samples().chunks(per_window) {
        let mean_rate = chunk.iter().map(|s| s.request_rate).sum::<f64>() / chunk.len() as f64;
        let wl = w.with_rate(mean_rate);
        let mut scaled = Vec::new();
        if mean_rate > 0.0 {
            let util = sim::utilizations(&model, &d, &wl)?;
            let mut by_service: BTreeMap<String, Vec<(InstanceId, f64)>> = BTreeMap::new();
            for inst in &model.instances {
                by_service
                    .entry(inst.service_name.clone())
                    .or_default()
                    .push((inst.id.clone(), util[&inst.id]));
            }
            for (service, members) in by_service {
                let avg = members.iter().map(|(_, u)| u).sum::<f64>() / members.len() as f64;
                if avg * 100.0 > threshold_pct {
                    let template = members[0].0.clone();
                    add_replica(&mut model, &mut cluster, &mut d, &template, &service)?;
                    scaled.push(service);
                }
            }
        }
        let value = sim::evaluate(&model, &d, &wl, true)?.value;
        trajectory.push(AutoscaleWindow {
            start_s: chunk[0].timestamp_s,
            mean_rate,
            servers: crate::domain::server_count(&d),
            instances: d.placement.len(),
            value,
            scaled,
        });
    }

    Ok(AutoscaleResult {
        threshold_pct,
        initial_servers,
        final_servers: crate::domain::server_count(&d),
        trajectory,
        model,
        cluster,
        deployment: d,
    })
}

fn add_replica(
    model: &mut AppModel,
    cluster: &mut ClusterSpec,
    d: &mut Deployment,
    template: &InstanceId,
    service: &str,
) -> Result<()> {
    let mut k = 1;
    let id = loop {
        let id = InstanceId::from(format!("{service}-r{k}").as_str());
        if !d.placement.contains_key(&id) {
            break id;
        }
        k += 1;
    };
    let need = d.resources_of(template);
    let reference = cluster.max_capacity();
    let mut best: Option<(f64, ServerId)> = None;
    for s in &cluster.servers {
        let used = d.server_totals(&s.id);
        if !need.fits_with(&used, &s.capacity) {
            continue;
        }
        let free: f64 = ResourceKind::ALL
            .iter()
            .map(|&k| (s.capacity[k] - used[k]) / reference[k])
            .sum();
        if best.as_ref().is_none_or(|(b, _)| free > *b + EPS) {
            best = Some((free, s.id.clone()));
        }
    }
    let server = match best {
        Some((_, s)) => s,
        None => {
            let home = d
                .server_of(template)
                .ok_or_else(|| Error::invalid(format!("{template} is not placed")))?;
            let capacity = *cluster.capacity(home)?;
            let mut n = 1;
            let id = loop {
                let id = ServerId::from(format!("auto-{n}").as_str());
                if cluster.server(&id).is_none() {
                    break id;
                }
                n += 1;
            };
            cluster.servers.push(ServerSpec::new(id.clone(), capacity));
            id
        }
    };
    model.add_replica(template, id.clone())?;
    *d = d.clone().with_instance(id, server, need);
    Ok(())
}
