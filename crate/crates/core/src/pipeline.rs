//! Config-driven end-to-end runs and the report files they leave behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::clampdown::{run_phase1, ClampdownConfig, Phase1Report};
use crate::domain::{
    server_count, validate_deployment, ClusterSpec, Deployment, Metric, PlacementConstraint,
    WorkloadSpec,
};
use crate::dynamic::{
    self, autoscaler_baseline, simulate_switching, AutoscaleResult, CurveRow, DeploymentFamily,
    RateTrace, SwitchEvent, CURVE_FACTORS, DEFAULT_WINDOW_S,
};
use crate::error::{Error, Result};
use crate::fixtures::Fixture;
use crate::improver::{run_phase2, ImproverConfig, Phase2Report};
use crate::probe::{derive_seed, Probe};
use crate::sim::{AppModel, Blackbox, MeasureConfig, SimEvaluator};

pub const REPORT_VERSION: u32 = 1;

/// Paths of the input documents, relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub model: PathBuf,
    pub cluster: PathBuf,
    pub deployment: PathBuf,
    pub workload: PathBuf,
    #[serde(default)]
    pub constraints: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementSection {
    pub trials: usize,
    pub deterministic: bool,
    pub metric: Metric,
    pub aggregation: crate::sim::Aggregation,
    /// Defaults to 0 for exact measurements and 0.05 otherwise.
    pub tau: Option<f64>,
}

impl Default for MeasurementSection {
    fn default() -> Self {
        let m = MeasureConfig::default();
        MeasurementSection {
            trials: m.trials,
            deterministic: m.deterministic,
            metric: m.metric,
            aggregation: m.aggregation,
            tau: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicSection {
    pub window_s: f64,
    pub factors: Vec<f64>,
    /// Utilization threshold in percent for the autoscaler comparison.
    pub baseline_threshold: Option<f64>,
}

impl Default for DynamicSection {
    fn default() -> Self {
        DynamicSection {
            window_s: DEFAULT_WINDOW_S,
            factors: CURVE_FACTORS.to_vec(),
            baseline_threshold: None,
        }
    }
}

/// One run's configuration. `seed` overrides the seeds of every subsection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub inputs: Inputs,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub clampdown: ClampdownConfig,
    #[serde(default)]
    pub improver: ImproverConfig,
    #[serde(default)]
    pub dynamic: DynamicSection,
    /// Set by [`PipelineConfig::load`]; input paths are resolved against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// Parses TOML, or JSON when the file ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Config for a fixture saved in `dir` under the standard file names.
    pub fn for_fixture_dir(dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            name: None,
            seed: 0,
            inputs: Inputs {
                model: "model.json".into(),
                cluster: "cluster.json".into(),
                deployment: "deployment.json".into(),
                workload: "workload.json".into(),
                constraints: Some("constraints.json".into()),
            },
            measurement: MeasurementSection::default(),
            clampdown: ClampdownConfig::default(),
            improver: ImproverConfig::default(),
            dynamic: DynamicSection::default(),
            base_dir: dir.into(),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_inputs(&self) -> Result<Fixture> {
        fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
        }
        let constraints: Vec<PlacementConstraint> = match &self.inputs.constraints {
            Some(p) => read(&self.resolve(p))?,
            None => Vec::new(),
        };
        Ok(Fixture {
            name: self.name.clone().unwrap_or_else(|| {
                self.base_dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "app".into())
            }),
            model: read(&self.resolve(&self.inputs.model))?,
            cluster: read(&self.resolve(&self.inputs.cluster))?,
            deployment: read(&self.resolve(&self.inputs.deployment))?,
            workload: read(&self.resolve(&self.inputs.workload))?,
            constraints,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurement.trials == 0 {
            return Err(Error::invalid("measurement.trials must be >= 1"));
        }
        if let Some(tau) = self.measurement.tau {
            if !(0.0..1.0).contains(&tau) {
                return Err(Error::invalid("measurement.tau must lie in [0, 1)"));
            }
        }
        if !(self.dynamic.window_s > 0.0) {
            return Err(Error::invalid("dynamic.window_s must be > 0"));
        }
        if self.dynamic.factors.iter().any(|f| !(*f >= 1.0)) {
            return Err(Error::invalid("dynamic.factors must all be >= 1"));
        }
        self.clampdown.validate()?;
        self.improver.validate()
    }

    /// Subsystem seeds derived from the top-level seed.
    fn seeded(&self) -> (ClampdownConfig, ImproverConfig, u64) {
        let clampdown = ClampdownConfig {
            seed: derive_seed(self.seed, "clampdown", 0),
            ..self.clampdown.clone()
        };
        let improver = ImproverConfig {
            seed: derive_seed(self.seed, "improver", 0),
            ..self.improver.clone()
        };
        (clampdown, improver, derive_seed(self.seed, "noise", 0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stage: String,
    pub servers: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub version: u32,
    pub app: String,
    pub seed: u64,
    pub deterministic: bool,
    pub tau: f64,
    pub metric: Metric,
    pub mr_count: usize,
    pub stages: Vec<Stage>,
    pub phase1: Phase1Report,
    pub phase2: Option<Phase2Report>,
    pub final_deployment: Deployment,
    pub measurements: usize,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn last_stage(&self) -> &Stage {
        self.stages.last().expect("a report always has stages")
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub report: Report,
    pub audit: AuditLog,
    pub deployment: Deployment,
}

/// Options applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub deterministic: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.measurement.trials = trials;
        }
        if self.deterministic {
            cfg.measurement.deterministic = true;
        }
    }
}

/// Evaluator for `model` under the config's measurement settings.
pub fn evaluator(cfg: &PipelineConfig, model: &AppModel, w: &WorkloadSpec) -> Result<SimEvaluator> {
    let (_, _, noise_seed) = cfg.seeded();
    let mut model = model.clone();
    model.seed = noise_seed;
    let m = &cfg.measurement;
    SimEvaluator::new(
        &model,
        w,
        MeasureConfig {
            trials: m.trials,
            deterministic: m.deterministic,
            metric: m.metric,
            aggregation: m.aggregation,
        },
    )
}

/// Phase 1, then (unless `phase1_only`) phase 2, on already-loaded inputs.
pub fn run_on(cfg: &PipelineConfig, app: &Fixture, phase1_only: bool) -> Result<PipelineRun> {
    cfg.validate()?;
    app.model.validate()?;
    app.cluster.validate()?;
    app.workload.validate()?;
    crate::domain::validate_constraints(&app.constraints, app.deployment.placement.keys())?;
    if let Some(c) = app.constraints.iter().find(|c| {
        c.kind == crate::domain::ConstraintKind::MustSeparate && c.instances.len() > app.cluster.servers.len()
    }) {
        return Err(Error::InfeasibleConstraint(format!(
            "{} needs more servers than the cluster has",
            c.describe()
        )));
    }
    validate_deployment(&app.deployment, &app.cluster, &app.constraints).into_result()?;

    let ev = evaluator(cfg, &app.model, &app.workload)?;
    let tau = cfg.measurement.tau.unwrap_or_else(|| ev.default_tau());
    let probe = Probe::new(&ev, &app.cluster, tau);
    let (clampdown, improver, _) = cfg.seeded();

    let p1 = run_phase1(&probe, &app.deployment, &app.constraints, &clampdown)?;
    let mut stages = vec![
        Stage {
            stage: "initial".into(),
            servers: server_count(&app.deployment),
            value: p1.baseline.value,
        },
        Stage {
            stage: "tightened".into(),
            servers: server_count(&p1.tight),
            value: p1.report.tight_value,
        },
        Stage {
            stage: "packed".into(),
            servers: server_count(&p1.deployment),
            value: p1.final_value.value,
        },
    ];
    let mut audit = p1.audit.clone();
    let mut deployment = p1.deployment.clone();
    let mut phase2 = None;
    if !phase1_only {
        let p2 = run_phase2(&probe, &p1.deployment, &p1.impact, &improver)?;
        stages.push(Stage {
            stage: "improved".into(),
            servers: server_count(&p2.deployment),
            value: p2.final_value.value,
        });
        audit.extend(p2.audit);
        deployment = p2.deployment;
        phase2 = Some(p2.report);
    }

    let report = Report {
        version: REPORT_VERSION,
        app: app.name.clone(),
        seed: cfg.seed,
        deterministic: ev.is_deterministic(),
        tau,
        metric: p1.baseline.metric,
        mr_count: app.deployment.allocation.len(),
        stages,
        phase1: p1.report,
        phase2,
        final_deployment: deployment.clone(),
        measurements: ev.measurement_count(),
    };
    Ok(PipelineRun {
        report,
        audit,
        deployment,
    })
}

/// Loads the config's inputs and runs the optimizer on them.
pub fn run_pipeline(cfg: &PipelineConfig, phase1_only: bool) -> Result<PipelineRun> {
    cfg.validate()?;
    let app = cfg.load_inputs()?;
    run_on(cfg, &app, phase1_only)
}

/// Writes `report.json` and `audit.jsonl` into `out_dir`.
pub fn write_run(run: &PipelineRun, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), run.report.to_json()?)?;
    std::fs::write(out.join("audit.jsonl"), run.audit.to_jsonl())?;
    Ok(())
}

/// One row of the autoscaler comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutoscaleRow {
    pub app: String,
    pub threshold_pct: f64,
    pub servers_without: usize,
    pub value_without: f64,
    pub servers_with: usize,
    pub value_with: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceAnalysis {
    pub curve: Vec<CurveRow>,
    /// Switch events of every factor, tagged with it.
    pub events: Vec<(f64, SwitchEvent)>,
    pub autoscale: Option<AutoscaleRow>,
    #[serde(skip)]
    pub autoscale_trajectory: Option<AutoscaleResult>,
}

/// Overprovisioning curve, switch events and (with a threshold) the
/// autoscaler comparison for `trace`.
///
/// The base deployment is the optimizer's output for the config at the
/// trace's mean rate. For the comparison, the optimizer is rerun on the
/// autoscaler's final deployment at the trace's peak window rate.
pub fn run_trace_analysis(cfg: &PipelineConfig, app: &Fixture, trace: &RateTrace) -> Result<TraceAnalysis> {
    cfg.validate()?;
    let window = cfg.dynamic.window_s;
    let base_rate = trace.mean_rate();
    if !(base_rate > 0.0) {
        return Err(Error::invalid("trace has no load"));
    }
    let at_mean = Fixture {
        workload: app.workload.with_rate(base_rate),
        ..app.clone()
    };
    let base = run_on(cfg, &at_mean, false)?.deployment;
    let reference = app.cluster.max_capacity();

    let mut factors = cfg.dynamic.factors.clone();
    factors.sort_by(f64::total_cmp);
    let families = factors
        .iter()
        .map(|&f| DeploymentFamily::geometric(&base, base_rate, f, trace.min_rate(), trace.max_rate()))
        .collect::<Result<Vec<_>>>()?;
    let curve = dynamic::overprovisioning_curve(
        trace,
        &families,
        dynamic::deployment_cost(&base, &reference),
        &reference,
        window,
    )?;
    let mut events = Vec::new();
    for fam in &families {
        let (evs, _) = simulate_switching(trace, fam, window)?;
        events.extend(evs.into_iter().map(|e| (fam.overprovision_factor, e)));
    }

    let (autoscale, autoscale_trajectory) = match cfg.dynamic.baseline_threshold {
        None => (None, None),
        Some(threshold) => {
            let scaled = autoscaler_baseline(
                trace,
                &app.model,
                &app.deployment,
                &app.cluster,
                threshold,
                &app.workload,
                window,
            )?;
            let peak = scaled.peak_rate().max(f64::MIN_POSITIVE);
            let grown = Fixture {
                name: app.name.clone(),
                model: scaled.model.clone(),
                cluster: scaled.cluster.clone(),
                deployment: scaled.deployment.clone(),
                workload: app.workload.with_rate(peak),
                constraints: app.constraints.clone(),
            };
            let tuned = run_on(cfg, &grown, false)?;
            let without = crate::sim::evaluate(&grown.model, &grown.deployment, &grown.workload, true)?;
            let with = crate::sim::evaluate(&grown.model, &tuned.deployment, &grown.workload, true)?;
            (
                Some(AutoscaleRow {
                    app: app.name.clone(),
                    threshold_pct: threshold,
                    servers_without: scaled.final_servers,
                    value_without: without.value,
                    servers_with: server_count(&tuned.deployment),
                    value_with: with.value,
                }),
                Some(scaled),
            )
        }
    };
    Ok(TraceAnalysis {
        curve,
        events,
        autoscale,
        autoscale_trajectory,
    })
}

/// Writes `curve.csv`, `switch_events.csv` and, when present, `autoscaling.csv`.
pub fn write_trace_analysis(analysis: &TraceAnalysis, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;

    let mut w = csv::Writer::from_path(out.join("curve.csv"))?;
    for row in &analysis.curve {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("switch_events.csv"))?;
    w.write_record(["factor", "time_s", "from_design_rate", "to_design_rate", "direction", "window_mean"])?;
    for (f, e) in &analysis.events {
        w.write_record([
            f.to_string(),
            e.time.to_string(),
            e.from_design_rate.to_string(),
            e.to_design_rate.to_string(),
            match e.direction {
                dynamic::Direction::Up => "up".into(),
                dynamic::Direction::Down => "down".into(),
            },
            e.window_mean.to_string(),
        ])?;
    }
    w.flush()?;

    if let Some(row) = &analysis.autoscale {
        let mut w = csv::Writer::from_path(out.join("autoscaling.csv"))?;
        w.serialize(row)?;
        w.flush()?;
    }
    Ok(())
}

/// Cluster and deployment sizes for quick summaries.
pub fn describe(cluster: &ClusterSpec, d: &Deployment) -> String {
    format!(
        "{} instances on {} of {} servers",
        d.placement.len(),
        server_count(d),
        cluster.servers.len()
    )
}
