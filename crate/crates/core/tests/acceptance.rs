//! Acceptance criteria 1-11. Each test prints one PASS/FAIL line.

use std::cell::Cell;
use std::path::{Path, PathBuf};

use tightfit::audit::AuditLog;
use tightfit::clampdown::{discover_imrs, run_phase1, ClampdownConfig};
use tightfit::domain::{server_count, Deployment, MrKey, PerfValue, ResourceKind, Resources, WorkloadSpec};
use tightfit::dynamic::{simulate_switching, DeploymentFamily, RateTrace, SwitchEvent, CURVE_FACTORS, DEFAULT_WINDOW_S};
use tightfit::fixtures::{self, Fixture};
use tightfit::improver::{
    assign_leftover, execute_transfer, rank_impacts_pruned, run_phase2, server_kind_totals, ImproverConfig,
    TransferOutcome,
};
use tightfit::oracle::{brute_force_best, exhaustive_imr_set};
use tightfit::pipeline::{run_on, run_pipeline, run_trace_analysis, PipelineConfig};
use tightfit::probe::Probe;
use tightfit::sim::{AppModel, Blackbox, SimEvaluator};
use tightfit::stressor::{stress_fraction, StressSchedule};

fn verdict(n: u32, name: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("criterion {n:>2} {:<4} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn shipped_config(name: &str) -> PipelineConfig {
    PipelineConfig::load(shipped(name).join("config.toml")).unwrap()
}

fn exact_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_fixture_dir(".");
    cfg.seed = seed;
    cfg.measurement.deterministic = true;
    cfg
}

fn noisy_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_fixture_dir(".");
    cfg.seed = seed;
    cfg
}

#[test]
fn c01_imr_oracle_equivalence() {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for model_seed in 0..20u64 {
        // 3..=12 instances: 12 to 48 MRs
        let f = fixtures::random_fixture(100 + model_seed, 3 + (model_seed as usize * 9) / 19);
        let ev = SimEvaluator::deterministic(&f.model, &f.workload).unwrap();
        let probe = Probe::new(&ev, &f.cluster, 0.0);
        let baseline = probe.measure(&f.deployment).unwrap();
        let expected = exhaustive_imr_set(&probe, &f.deployment, &baseline, 0.3).unwrap();
        for p in [2, 3, 4] {
            for seed in 0..10 {
                let got = discover_imrs(&probe, &f.deployment, &baseline, 0.3, p, seed, &mut AuditLog::new())
                    .unwrap()
                    .imrs;
                checked += 1;
                if got != expected {
                    mismatches.push((f.name.clone(), p, seed));
                }
            }
        }
    }
    verdict(
        1,
        "IMR oracle equivalence",
        mismatches.is_empty(),
        format!("{checked} searches, mismatches {mismatches:?}"),
    );
}

/// MRs above floor that do not degrade when stressed alone at `fraction`.
fn loose_mrs(f: &Fixture, d: &Deployment, fraction: f64) -> Vec<MrKey> {
    let ev = SimEvaluator::deterministic(&f.model, &f.workload).unwrap();
    let probe = Probe::new(&ev, &f.cluster, 0.0);
    let baseline = probe.measure(d).unwrap();
    let imrs = exhaustive_imr_set(&probe, d, &baseline, fraction).unwrap();
    let floors = f.cluster.floors();
    d.allocation
        .iter()
        .filter(|(mr, v)| !floors.is_at_floor(mr.kind, **v) && !imrs.contains(*mr))
        .map(|(mr, _)| mr.clone())
        .collect()
}

#[test]
fn c02_tightness() {
    let mut loose = Vec::new();
    let mut checked = 0;
    for f in fixtures::all() {
        let ev = SimEvaluator::deterministic(&f.model, &f.workload).unwrap();
        let probe = Probe::new(&ev, &f.cluster, 0.0);
        let r = run_phase1(&probe, &f.deployment, &f.constraints, &ClampdownConfig::default()).unwrap();
        let fraction = r.report.final_fraction;
        for d in [&r.tight, &r.deployment] {
            checked += d.allocation.len();
            loose.extend(loose_mrs(&f, d, fraction).into_iter().map(|mr| format!("{}:{mr}", f.name)));
        }
    }
    verdict(2, "tightness", loose.is_empty(), format!("{checked} MRs checked, loose {loose:?}"));
}

#[test]
fn c03_safety() {
    let mut failures = Vec::new();
    let mut runs = 0;
    for f in fixtures::all() {
        for seed in 0..10 {
            for cfg in [exact_config(seed), noisy_config(seed)] {
                let r = run_on(&cfg, &f, false).unwrap().report;
                let p0 = r.stages[0].value;
                let last = r.last_stage();
                runs += 1;
                if last.value > p0 * (1.0 + r.tau) || last.servers > r.stages[0].servers {
                    failures.push(format!("{} seed {seed} tau {}: {p0} -> {}", f.name, r.tau, last.value));
                }
                if r.tau == 0.0 && last.value > p0 {
                    failures.push(format!("{} seed {seed}: exact run worsened", f.name));
                }
            }
        }
    }
    verdict(3, "safety", failures.is_empty(), format!("{runs} runs, failures {failures:?}"));
}

#[test]
fn c04_server_reduction() {
    let mut rows = Vec::new();
    let mut ok = true;
    for name in ["mean", "hotrod", "apartment", "elk"] {
        let cfg = shipped_config(name);
        let app = cfg.load_inputs().unwrap();
        assert!(app.aggregate_slack() >= 0.5, "{name} slack {}", app.aggregate_slack());
        for deterministic in [true, false] {
            let mut cfg = cfg.clone();
            cfg.measurement.deterministic = deterministic;
            let r = run_on(&cfg, &app, true).unwrap().report;
            let (before, after) = (r.stages[0].servers, r.stage("packed").unwrap().servers);
            ok &= after * 2 <= before;
            rows.push(format!("{name}{}: {before}->{after}", if deterministic { "" } else { "~" }));
        }
    }
    verdict(4, "server reduction >= 2x", ok, rows.join(", "));
}

#[test]
fn c05_phase2_improvement() {
    let mut detail = Vec::new();
    let mut ok = true;
    for seed in 0..10 {
        let cfg = exact_config(seed);
        let apt = run_on(&cfg, &fixtures::apartment(), false).unwrap().report;
        let p1 = apt.phase1.final_value;
        let p2 = apt.phase2.as_ref().unwrap().final_value;
        ok &= p2 <= 0.95 * p1;
        if seed == 0 {
            detail.push(format!("apartment {p1:.3} -> {p2:.3} ({:.1}%)", 100.0 * (p1 - p2) / p1));
        }

        let hot = run_on(&cfg, &fixtures::hotrod(), false).unwrap().report;
        let ph2 = hot.phase2.as_ref().unwrap();
        let kept = ph2
            .iterations
            .iter()
            .filter_map(|it| it.step.as_ref())
            .filter(|s| s.outcome != TransferOutcome::Backtracked)
            .count();
        let same = ph2.final_value == hot.phase1.final_value;
        ok &= kept == 0 && same;
        if seed == 0 || kept > 0 || !same {
            detail.push(format!(
                "hotrod seed {seed}: {} kept transfers, {:.3} -> {:.3}",
                kept, hot.phase1.final_value, ph2.final_value
            ));
        }
    }
    verdict(5, "phase-2 improvement", ok, detail.join("; "));
}

fn totals_match(a: &Deployment, b: &Deployment) -> bool {
    let (ta, tb) = (server_kind_totals(a), server_kind_totals(b));
    ta.len() == tb.len() && ta.iter().all(|(k, v)| tb.get(k).is_some_and(|w| (v - w).abs() <= 1e-9))
}

fn bit_identical(a: &Deployment, b: &Deployment) -> bool {
    a.placement == b.placement
        && a.allocation.len() == b.allocation.len()
        && a.allocation
            .iter()
            .all(|(k, v)| b.allocation.get(k).is_some_and(|w| v.to_bits() == w.to_bits()))
}

#[test]
fn c06_conservation() {
    let mut steps = 0;
    let mut backtracked = 0;
    let mut failures = Vec::new();
    for f in fixtures::all() {
        for seed in 0..5u64 {
            let ev = SimEvaluator::new(&f.model, &f.workload, Default::default()).unwrap();
            let probe = Probe::new(&ev, &f.cluster, ev.default_tau());
            let cfg = ClampdownConfig {
                seed,
                ..Default::default()
            };
            let p1 = run_phase1(&probe, &f.deployment, &f.constraints, &cfg).unwrap();
            let icfg = ImproverConfig {
                seed,
                ..Default::default()
            };
            let p2 = run_phase2(&probe, &p1.deployment, &p1.impact, &icfg).unwrap();
            let entering = if p2.report.leftover_kept {
                assign_leftover(&p1.deployment, &p1.impact, &f.cluster).unwrap().0
            } else {
                p1.deployment.clone()
            };
            if !totals_match(&entering, &p2.deployment) {
                failures.push(format!("{} seed {seed}: phase-2 totals drifted", f.name));
            }

            // Replay every proposed pair directly, at its proposed amount.
            let baseline = probe.measure(&entering).unwrap();
            for s in &p2.steps {
                let headroom = entering.get(&s.donor).unwrap() - f.cluster.floors().get(s.donor.kind);
                let delta = s.proposed.min(headroom);
                let (after, step) = execute_transfer(
                    &probe,
                    &entering,
                    (&s.donor, &s.recipient),
                    delta,
                    &baseline,
                    0.01,
                    6,
                    &mut AuditLog::new(),
                )
                .unwrap();
                steps += 1;
                if !totals_match(&entering, &after) {
                    failures.push(format!("{} {} -> {}: totals changed", f.name, s.donor, s.recipient));
                }
                if step.outcome == TransferOutcome::Backtracked {
                    backtracked += 1;
                    if !bit_identical(&entering, &after) {
                        failures.push(format!("{} {} -> {}: backtrack not exact", f.name, s.donor, s.recipient));
                    }
                }
            }
        }
    }
    verdict(
        6,
        "conservation",
        failures.is_empty(),
        format!("{steps} replayed steps, {backtracked} backtracked, failures {failures:?}"),
    );
}

/// Counts every measurement passed through to the simulator.
struct Counting<'a> {
    inner: &'a SimEvaluator,
    calls: Cell<usize>,
}

impl Blackbox for Counting<'_> {
    fn measure(&self, d: &Deployment) -> tightfit::Result<PerfValue> {
        self.calls.set(self.calls.get() + 1);
        self.inner.measure(d)
    }

    fn measurement_count(&self) -> usize {
        self.calls.get()
    }
}

#[test]
fn c07_pruning_cost() {
    // 12 instances x 4 kinds, one demanding MR: one impacted partition of 12
    let ids: Vec<String> = (0..12).map(|i| format!("i{i:02}")).collect();
    let model = AppModel {
        instances: ids.iter().map(|i| tightfit::domain::MicroserviceInstance::new(i.as_str(), i.as_str())).collect(),
        edges: ids.windows(2).map(|w| (w[0].as_str().into(), w[1].as_str().into())).collect(),
        demand: [(MrKey::new("i04", ResourceKind::DiskBw), 0.5)].into(),
        base_latency: [("i00".into(), 1.0)].into(),
        interference_gamma: 0.0,
        noise_cv: 0.0,
        seed: 0,
    };
    let cluster = tightfit::domain::ClusterSpec::uniform("s", 4, Resources::new(8.0, 16384.0, 400.0, 1000.0));
    let d = ids.iter().enumerate().fold(Deployment::new(), |d, (n, i)| {
        d.with_instance(i.as_str(), format!("s{}", n / 3 + 1).as_str(), Resources::new(2.0, 4096.0, 100.0, 250.0))
    });
    assert_eq!(d.allocation.len(), 48);
    let sim = SimEvaluator::deterministic(&model, &WorkloadSpec::new(10.0, 10.0)).unwrap();
    let mut counts = Vec::new();
    for seed in 0..10 {
        let counter = Counting {
            inner: &sim,
            calls: Cell::new(0),
        };
        let probe = Probe::new(&counter, &cluster, 0.0);
        let baseline = sim.measure(&d).unwrap();
        let r = rank_impacts_pruned(&probe, &d, &baseline, 0.3, 4, seed, &mut AuditLog::new()).unwrap();
        assert_eq!(r.measurements, counter.calls.get());
        counts.push(counter.calls.get());
    }
    verdict(7, "pruning cost", counts.iter().all(|&c| c == 16), format!("measurements per seed {counts:?}"));
}

#[test]
fn c08_step_schedule() {
    let expected = [0.30, 0.25, 0.3 / 1.44, 0.3 / 1.728];
    let got: Vec<f64> = (0..4).map(|i| stress_fraction(&StressSchedule::at(i))).collect();
    let ok = got.iter().zip(expected).all(|(g, e)| (g - e).abs() <= 1e-9)
        && (got[2] - 0.208_333_333_3).abs() < 1e-9
        && (got[3] - 0.173_611_111_1).abs() < 1e-9;
    verdict(8, "step schedule", ok, format!("{got:?}"));
}

#[test]
fn c09_oracle_gap() {
    let mut rows = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let f = fixtures::random_small(seed, 3 + (seed as usize % 2));
        let run = run_on(&exact_config(seed), &f, false).unwrap();
        let k = server_count(&run.deployment);
        let ours = run.report.last_stage().value;
        let best = brute_force_best(&f.model, &f.cluster, &f.workload, 5, Some(k)).unwrap().value.value;
        let gap = (ours - best) / best;
        ok &= gap <= 0.10;
        rows.push(format!("{}: {ours:.3} vs {best:.3} on {k} ({:+.1}%)", f.name, 100.0 * gap));
    }
    verdict(9, "oracle gap <= 10%", ok, rows.join(", "));
}

fn min_spacing(events: &[SwitchEvent]) -> f64 {
    events
        .windows(2)
        .map(|w| w[1].time - w[0].time)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn c10_switching_policy() {
    let trace = RateTrace::from_csv_path(shipped("traces").join("diurnal.csv")).unwrap();
    let cfg = shipped_config("mean");
    let app = cfg.load_inputs().unwrap();
    let mut exact = cfg.clone();
    exact.measurement.deterministic = true;
    let analysis = run_trace_analysis(&exact, &app, &trace).unwrap();
    let hours: Vec<f64> = analysis.curve.iter().map(|r| r.mean_hours_between_changes).collect();
    let factors: Vec<f64> = analysis.curve.iter().map(|r| r.factor).collect();
    let monotone = factors == CURVE_FACTORS && hours.windows(2).all(|w| w[1] >= w[0]);

    let mut spacing = f64::INFINITY;
    for &f in &CURVE_FACTORS {
        let evs: Vec<SwitchEvent> = analysis.events.iter().filter(|(g, _)| *g == f).map(|(_, e)| e.clone()).collect();
        spacing = spacing.min(min_spacing(&evs));
    }

    // Flat load with the same 3-minute bursts as the shipped trace.
    let mean = trace.mean_rate();
    let rates: Vec<f64> = (0..trace.samples().len())
        .map(|i| if i >= 2160 && i % 2160 < 18 { 2.5 * mean } else { mean })
        .collect();
    let spiky = RateTrace::from_rates(&rates, trace.interval()).unwrap();
    let mut spike_events = 0;
    for &f in &CURVE_FACTORS {
        let fam = DeploymentFamily::geometric(&app.deployment, mean, f, spiky.min_rate(), spiky.max_rate()).unwrap();
        spike_events += simulate_switching(&spiky, &fam, DEFAULT_WINDOW_S).unwrap().0.len();
    }

    verdict(
        10,
        "switching policy",
        monotone && spacing >= DEFAULT_WINDOW_S && spike_events == 0,
        format!("hours {hours:.2?}, min spacing {spacing} s, events from bursts {spike_events}"),
    );
}

#[test]
fn c11_determinism() {
    let mut detail = Vec::new();
    let mut ok = true;
    for name in ["mean", "hotrod", "apartment", "elk"] {
        let mut cfg = shipped_config(name);
        cfg.seed = 42;
        let a = run_pipeline(&cfg, false).unwrap();
        let b = run_pipeline(&cfg, false).unwrap();
        let same = a.report.to_json().unwrap() == b.report.to_json().unwrap()
            && a.audit.to_jsonl() == b.audit.to_jsonl();
        ok &= same;
        detail.push(format!("{name}: {}", if same { "identical" } else { "differs" }));
    }
    verdict(11, "determinism", ok, detail.join(", "));
}
