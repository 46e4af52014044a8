//! Experiment drivers: single runs with persisted outputs, parameter sweeps,
//! fluid-limit comparison against the thermal model, and the validation suite.

use crate::error::{Error, Result};
use crate::generate;
use crate::graph::Network;
use crate::policy::{bp_decide, hd_decide, vbp_decide, Decision, Policy, SlotState};
use crate::scenario::{bundled, parse_scenario, Scenario, ScenarioConfig, SweepSpec};
use crate::scheduling::{ConflictGraph, Interference, Scheduler};
use crate::sim::{self, d_functional, lemma5_check, Lemma5, Metrics, RunOutput, Verdict};
use crate::thermal::{
    assumption2_check, lemma2_residual, lemma_checks, m_circ, reference_model,
    solve_nonlinear_poisson, solve_thomson, CapacityCheck, ThermalGraph, ThermalSolution,
    ThomsonSolution,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Where run artefacts go.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub format: Format,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>, format: Format) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(OutputDir { dir, format })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Appends records to `results.csv` or `results.jsonl`.
    pub fn append_records(&self, records: &[ResultRecord]) -> Result<()> {
        match self.format {
            Format::Json => {
                let mut file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(self.path("results.jsonl"))?;
                for r in records {
                    let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
                    writeln!(file, "{line}")?;
                }
            }
            Format::Csv => {
                let path = self.path("results.csv");
                let fresh = !path.exists();
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                let mut w = csv::Writer::from_writer(file);
                if fresh {
                    w.write_record(ResultRecord::CSV_HEADER)
                        .map_err(|e| Error::Io(e.to_string()))?;
                }
                for r in records {
                    w.write_record(r.csv_row())
                        .map_err(|e| Error::Io(e.to_string()))?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

/// One row of the result store.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub scenario: String,
    pub policy: String,
    pub parameter: Option<f64>,
    pub seed: u64,
    pub q_bar: f64,
    pub r_bar: f64,
    pub f_bar: Vec<f64>,
    pub verdict: String,
    pub reason: Option<String>,
    pub null_rate: f64,
    pub runtime_s: f64,
}

impl ResultRecord {
    const CSV_HEADER: [&'static str; 11] = [
        "scenario",
        "policy",
        "parameter",
        "seed",
        "q_bar",
        "r_bar",
        "null_rate",
        "verdict",
        "reason",
        "runtime_s",
        "f_bar",
    ];

    fn csv_row(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.policy.clone(),
            self.parameter.map(|p| p.to_string()).unwrap_or_default(),
            self.seed.to_string(),
            self.q_bar.to_string(),
            self.r_bar.to_string(),
            self.null_rate.to_string(),
            self.verdict.clone(),
            self.reason.clone().unwrap_or_default(),
            format!("{:.3}", self.runtime_s),
            self.f_bar
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        ]
    }

    pub fn is_stable(&self) -> bool {
        self.verdict == "stable"
    }

    fn failed(cfg: &ScenarioConfig, seed: u64, err: &Error) -> Self {
        ResultRecord {
            scenario: cfg.id.clone(),
            policy: cfg.policy.name().into(),
            parameter: cfg.policy.parameter(),
            seed,
            q_bar: f64::NAN,
            r_bar: f64::NAN,
            f_bar: Vec::new(),
            verdict: "error".into(),
            reason: Some(err.to_string()),
            null_rate: f64::NAN,
            runtime_s: 0.0,
        }
    }
}

fn run_stem(sc: &Scenario, seed: u64) -> String {
    match sc.policy.parameter() {
        Some(p) => format!("{}-{}-{}-s{}", sc.id, sc.policy.name(), p, seed),
        None => format!("{}-{}-s{}", sc.id, sc.policy.name(), seed),
    }
}

/// Metrics file contents: everything about a run except wall-clock time.
#[derive(Debug, Clone, Serialize)]
struct MetricsFile<'a> {
    scenario: &'a str,
    policy: Policy,
    seed: u64,
    horizon: usize,
    verdict: &'a Verdict,
    metrics: &'a Metrics,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub record: ResultRecord,
    pub output: RunOutput,
}

/// Runs a resolved scenario once. With an output directory the trace (CSV)
/// and metrics (JSON) are written next to the result store.
pub fn run_scenario(sc: &Scenario, seed: u64, out: Option<&OutputDir>) -> Result<RunResult> {
    let started = Instant::now();
    let scheduler = sc.scheduler()?;
    let mut cfg = sc.run_config(seed);
    cfg.record_trace = out.is_some();
    let output = sim::run(
        &sc.network,
        &scheduler,
        &sc.policy,
        &sc.arrivals,
        &sc.channel,
        &cfg,
    )?;
    let (verdict, reason) = match &output.verdict {
        Verdict::Stable => ("stable".to_string(), None),
        Verdict::Unstable(r) => ("unstable".to_string(), Some(r.clone())),
    };
    let record = ResultRecord {
        scenario: sc.id.clone(),
        policy: sc.policy.name().into(),
        parameter: sc.policy.parameter(),
        seed,
        q_bar: output.metrics.q_bar,
        r_bar: output.metrics.r_bar,
        f_bar: output.metrics.f_bar.clone(),
        verdict,
        reason,
        null_rate: output.metrics.null_rate,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    if let Some(out) = out {
        let stem = run_stem(sc, seed);
        if let Some(trace) = &output.trace {
            let file = fs::File::create(out.path(&format!("{stem}.trace.csv")))?;
            sim::write_trace_csv(&sc.network, trace, std::io::BufWriter::new(file))?;
        }
        let body = MetricsFile {
            scenario: &sc.id,
            policy: sc.policy,
            seed,
            horizon: cfg.horizon,
            verdict: &output.verdict,
            metrics: &output.metrics,
        };
        let text = serde_json::to_string_pretty(&body).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(out.path(&format!("{stem}.metrics.json")), text + "\n")?;
        out.append_records(std::slice::from_ref(&record))?;
    }
    Ok(RunResult { record, output })
}

/// Runs every (grid point, seed) pair in parallel. Failed runs are recorded
/// with verdict `error` and the sweep carries on. Records come back in grid
/// order, then seed order.
pub fn sweep(cfg: &ScenarioConfig, spec: &SweepSpec) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    let seeds = spec.seeds.clone().unwrap_or_else(|| cfg.run.seeds.clone());
    let mut jobs = Vec::with_capacity(spec.grid.len() * seeds.len());
    for &value in &spec.grid {
        let point = spec.apply(cfg, value)?;
        for &seed in &seeds {
            jobs.push((point.clone(), seed));
        }
    }
    Ok(jobs
        .par_iter()
        .map(|(point, seed)| {
            let attempt = point
                .resolve(*seed)
                .and_then(|sc| run_scenario(&sc, *seed, None));
            match attempt {
                Ok(r) => r.record,
                Err(e) => ResultRecord::failed(point, *seed, &e),
            }
        })
        .collect())
}

/// Mean and standard error over seeds at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub value: f64,
    pub runs: usize,
    pub unstable: usize,
    pub q_mean: f64,
    pub q_se: f64,
    pub r_mean: f64,
    pub r_se: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Collapses sweep records into one row per grid value, in grid order.
pub fn pareto_table(spec: &SweepSpec, records: &[ResultRecord]) -> Vec<ParetoRow> {
    let per_point = records.len() / spec.grid.len().max(1);
    spec.grid
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let chunk = &records[i * per_point..(i + 1) * per_point];
            let ok: Vec<&ResultRecord> = chunk.iter().filter(|r| r.verdict != "error").collect();
            let q: Vec<f64> = ok.iter().map(|r| r.q_bar).collect();
            let r: Vec<f64> = ok.iter().map(|r| r.r_bar).collect();
            let (q_mean, q_se) = mean_se(&q);
            let (r_mean, r_se) = mean_se(&r);
            ParetoRow {
                value,
                runs: chunk.len(),
                unstable: chunk.iter().filter(|r| !r.is_stable()).count(),
                q_mean,
                q_se,
                r_mean,
                r_se,
            }
        })
        .collect()
}

/// Simulated mean flows of HD against the thermal model's prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidReport {
    pub beta: f64,
    pub seed: u64,
    pub f_bar: Vec<f64>,
    pub f_opt: Vec<f64>,
    pub max_abs_error: f64,
    /// `|f̄ - f_opt| / max(f_opt, 0.1)` per edge.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub mu_eff: Vec<f64>,
    pub assumption2: CapacityCheck,
    /// False when the prediction exceeds the effective capacity somewhere,
    /// in which case the comparison says nothing about convergence.
    pub binding: bool,
    pub verdict: Verdict,
}

pub fn fluid_compare(sc: &Scenario, beta: f64, seed: u64) -> Result<FluidReport> {
    let mut sc = sc.clone();
    sc.policy = Policy::hd(beta);
    let out = run_scenario(&sc, seed, None)?.output;
    let expected = sc.channel.expected()?;
    let model = reference_model(&sc.network, beta, &expected.rho, &sc.arrivals.mean())?;
    let f_bar = out.metrics.f_bar.clone();
    let mu_eff = out.metrics.mu_eff.clone().ok_or(Error::NotErgodic)?;
    let relative_errors: Vec<f64> = f_bar
        .iter()
        .zip(&model.flows)
        .map(|(x, y)| (x - y).abs() / y.max(0.1))
        .collect();
    let assumption2 = assumption2_check(&model.flows, &mu_eff);
    Ok(FluidReport {
        beta,
        seed,
        max_abs_error: f_bar
            .iter()
            .zip(&model.flows)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        max_relative_error: relative_errors.iter().cloned().fold(0.0, f64::max),
        relative_errors,
        f_opt: model.flows,
        f_bar,
        binding: assumption2.holds,
        assumption2,
        mu_eff,
        verdict: out.verdict,
    })
}

/// Poisson and Thomson solutions of the reference model of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalReport {
    pub beta: f64,
    pub sigma: Vec<f64>,
    pub sources: Vec<f64>,
    pub poisson: ThermalSolution,
    pub thomson: ThomsonSolution,
    pub max_flow_gap: f64,
    pub max_temperature_gap: f64,
    /// `E_D + dissipation / 2`, zero at the optimum.
    pub duality_gap: f64,
}

pub fn thermal_report(sc: &Scenario, beta: f64) -> Result<ThermalReport> {
    let expected = sc.channel.expected()?;
    let sigma = crate::policy::hd_phis(&sc.network, beta, &expected.rho)?;
    let tg = ThermalGraph::new(sc.network.clone(), sigma.clone())?;
    let a = sc.arrivals.mean();
    let poisson = solve_nonlinear_poisson(&tg, &a, crate::thermal::DEFAULT_TOLERANCE)?;
    let thomson = solve_thomson(&tg, &a, crate::thermal::DEFAULT_TOLERANCE)?;
    let gap = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    Ok(ThermalReport {
        beta,
        sigma,
        max_flow_gap: gap(&poisson.flows, &thomson.flows),
        max_temperature_gap: gap(&poisson.temperatures, &thomson.duals),
        duality_gap: poisson.dirichlet_energy + 0.5 * thomson.dissipation,
        sources: a,
        poisson,
        thomson,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub summary: String,
    pub details: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Value>,
}

impl CheckResult {
    fn new(name: &str, passed: bool, summary: String, details: Value) -> Self {
        CheckResult {
            name: name.into(),
            status: if passed { Status::Pass } else { Status::Fail },
            summary,
            details,
            counterexample: None,
        }
    }

    fn skipped(name: &str, reason: &str) -> Self {
        CheckResult {
            name: name.into(),
            status: Status::Skip,
            summary: reason.into(),
            details: Value::Null,
            counterexample: None,
        }
    }

    fn with_counterexample(mut self, c: Option<Value>) -> Self {
        self.counterexample = c;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Sizes of the randomised checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Random graphs for the `M◦` probes.
    pub lemma_graphs: usize,
    /// Random probe vectors per graph.
    pub probes: usize,
    pub duality_graphs: usize,
    pub perturbations: usize,
    pub slot_states: usize,
    pub lemma5_horizon: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 7,
            lemma_graphs: 1000,
            probes: 20,
            duality_graphs: 200,
            perturbations: 100,
            slot_states: 10_000,
            lemma5_horizon: 100_000,
        }
    }
}

/// Signature of an HD-style decision rule, so the oracle can be pointed at a
/// modified rule.
pub type Decider = dyn Fn(&Network, SlotState<'_>, f64, &Scheduler) -> Result<Decision> + Sync;

/// The heat-diffusion rule with fractional flows.
pub fn hd_fractional(
    net: &Network,
    state: SlotState<'_>,
    beta: f64,
    scheduler: &Scheduler,
) -> Result<Decision> {
    hd_decide(net, state, beta, scheduler, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub beta: f64,
    pub rho: Vec<f64>,
    pub q: Vec<f64>,
    pub policy_flows: Vec<f64>,
    pub policy_value: f64,
    pub oracle_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub cases: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<OracleCase>,
}

/// Grid resolution of the brute-force flow search.
const ORACLE_STEPS_PER_PACKET: u32 = 1024;

/// Exhaustive check of the per-slot optimality of a decision rule on a
/// three-node, three-link network under 1-hop interference.
///
/// For every integer queue state in `[0, 5]²`, every cost assignment from
/// `{1, 2, 4}³` and `beta ∈ {0, 0.5, 1}`, the rule's D-functional value must
/// equal the maximum over every maximal schedule and every flow on a
/// 1/1024-packet grid bounded by capacity and tail backlog. All inputs are
/// dyadic, so the comparison is exact.
pub fn th1_oracle(decider: &Decider) -> Result<OracleReport> {
    let pairs = [(0, 1), (1, 2), (0, 2)];
    let net = Network::new(3, &pairs, 2)?;
    let mu: [f64; 3] = [2.0, 3.0, 4.0];
    let scheduler = Scheduler::new(
        ConflictGraph::build(&net, &Interference::Khop(1))?,
        crate::scheduling::DEFAULT_ENUMERATION_CAP,
        false,
    )?;
    // maximal conflict-free sets found by brute force; links sharing a node conflict
    let shares = |i: usize, j: usize| {
        let (a, b) = (pairs[i], pairs[j]);
        a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1
    };
    let independent = |mask: u32| {
        (0..3).all(|i| {
            (0..3).all(|j| i == j || mask >> i & 1 == 0 || mask >> j & 1 == 0 || !shares(i, j))
        })
    };
    let schedules: Vec<u32> = (1..8u32)
        .filter(|&m| independent(m) && (0..3).all(|k| m >> k & 1 == 1 || !independent(m | 1 << k)))
        .collect();

    let mut report = OracleReport {
        cases: 0,
        mismatches: 0,
        first_mismatch: None,
    };
    let costs = [1.0, 2.0, 4.0];
    for &beta in &[0.0, 0.5, 1.0] {
        for r0 in costs {
            for r1 in costs {
                for r2 in costs {
                    let rho = [r0, r1, r2];
                    let phi: Vec<f64> = (0..3)
                        .map(|k| {
                            let theta = if pairs[k].1 == 2 { 1.0 } else { 2.0 };
                            (1.0 - beta) / theta + beta / rho[k]
                        })
                        .collect();
                    for q0 in 0..=5 {
                        for q1 in 0..=5 {
                            let q = [q0 as f64, q1 as f64];
                            let node_q: [f64; 3] = [q[0], q[1], 0.0];
                            let best_link = |k: usize| -> f64 {
                                let (t, h) = pairs[k];
                                let dq = node_q[t] - node_q[h];
                                let top = mu[k].min(node_q[t]);
                                let steps = (top * ORACLE_STEPS_PER_PACKET as f64) as u32;
                                (0..=steps)
                                    .map(|j| {
                                        let f = j as f64 / ORACLE_STEPS_PER_PACKET as f64;
                                        2.0 * phi[k] * dq * f - f * f
                                    })
                                    .fold(f64::NEG_INFINITY, f64::max)
                            };
                            let oracle = schedules
                                .iter()
                                .map(|&s| {
                                    (0..3)
                                        .filter(|k| s >> k & 1 == 1)
                                        .map(best_link)
                                        .sum::<f64>()
                                })
                                .fold(f64::NEG_INFINITY, f64::max);
                            let d = decider(
                                &net,
                                SlotState {
                                    q: &q,
                                    mu: &mu,
                                    rho: &rho,
                                },
                                beta,
                                &scheduler,
                            )?;
                            let value = d_functional(&net, &d.flows, &q, &phi);
                            report.cases += 1;
                            if value != oracle {
                                report.mismatches += 1;
                                if report.first_mismatch.is_none() {
                                    report.first_mismatch = Some(OracleCase {
                                        beta,
                                        rho: rho.to_vec(),
                                        q: q.to_vec(),
                                        policy_flows: d.flows.clone(),
                                        policy_value: value,
                                        oracle_value: oracle,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub states: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<Value>,
}

/// VBP with `v = 0` against BP on random networks and slot states.
pub fn vbp_degeneracy(states: usize, seed: u64) -> Result<DegeneracyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DegeneracyReport {
        states: 0,
        mismatches: 0,
        first_mismatch: None,
    };
    let per_network = 50;
    while report.states < states {
        let n = rng.random_range(2..=7);
        let net = generate::connected_network(&mut rng, n);
        let k = rng.random_range(1..=2);
        let scheduler = Scheduler::new(
            ConflictGraph::build(&net, &Interference::Khop(k))?,
            crate::scheduling::DEFAULT_ENUMERATION_CAP,
            true,
        )?;
        for _ in 0..per_network.min(states - report.states) {
            let q: Vec<f64> = (0..net.reduced_len())
                .map(|_| {
                    if rng.random_bool(0.8) {
                        rng.random_range(0..20) as f64
                    } else {
                        rng.random_range(0.0..20.0)
                    }
                })
                .collect();
            let mu: Vec<f64> = (0..net.edge_count())
                .map(|_| rng.random_range(0..6) as f64)
                .collect();
            let rho: Vec<f64> = (0..net.edge_count())
                .map(|_| rng.random_range(1.0..5.0))
                .collect();
            let state = SlotState {
                q: &q,
                mu: &mu,
                rho: &rho,
            };
            let bp = bp_decide(&net, state, &scheduler)?;
            let vbp = vbp_decide(&net, state, 0.0, &scheduler)?;
            report.states += 1;
            if bp != vbp {
                report.mismatches += 1;
                if report.first_mismatch.is_none() {
                    report.first_mismatch = Some(json!({
                        "edges": edge_pairs(&net),
                        "q": q, "mu": mu, "rho": rho,
                        "bp_flows": bp.flows, "vbp_flows": vbp.flows,
                    }));
                }
            }
        }
    }
    Ok(report)
}

fn edge_pairs(net: &Network) -> Vec<(usize, usize)> {
    net.edges().iter().map(|e| (e.tail, e.head)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub graphs: usize,
    pub max_flow_gap: f64,
    pub max_temperature_gap: f64,
    pub max_energy_gap: f64,
    pub perturbations: usize,
    /// Perturbations that beat the solver (should be zero).
    pub beaten: usize,
    pub solver_errors: usize,
    pub first_failure: Option<Value>,
}

impl DualityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_flow_gap <= tol
            && self.max_temperature_gap <= tol
            && self.max_energy_gap <= tol
            && self.beaten == 0
            && self.solver_errors == 0
    }
}

/// A flow meeting `B◦f = a`, `f ≥ 0`: each source follows a random walk
/// that takes the shortest-path hop half the time.
fn random_feasible_flow<R: Rng>(rng: &mut R, net: &Network, a: &[f64]) -> Vec<f64> {
    let next = net.next_hop_to_destination();
    let reach = net.reaches_destination();
    let mut f = vec![0.0; net.edge_count()];
    for (r, &x) in a.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        let mut node = net.node_of_row(r);
        let mut steps = 0;
        while node != net.destination() {
            let options: Vec<usize> = (0..net.edge_count())
                .filter(|&k| net.edge(k).tail == node && reach[net.edge(k).head])
                .collect();
            let k = if steps > 4 * net.node_count() || rng.random_bool(0.5) {
                next[node].expect("source reaches the sink")
            } else {
                options[rng.random_range(0..options.len())]
            };
            f[k] += x;
            node = net.edge(k).head;
            steps += 1;
        }
    }
    f
}

/// Poisson against Thomson on random sink-reachable graphs, plus random
/// feasible perturbations of both optima.
pub fn thermal_duality(graphs: usize, perturbations: usize, seed: u64) -> DualityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DualityReport {
        graphs,
        max_flow_gap: 0.0,
        max_temperature_gap: 0.0,
        max_energy_gap: 0.0,
        perturbations: 0,
        beaten: 0,
        solver_errors: 0,
        first_failure: None,
    };
    for g in 0..graphs {
        let n = rng.random_range(2..=12);
        let net = generate::sink_reachable_network(&mut rng, n);
        let sigma = generate::edge_values(&mut rng, &net, 0.05, 2.0);
        let a = generate::sources(&mut rng, &net, 0.3);
        let dump = json!({ "graph": g, "edges": edge_pairs(&net), "sigma": sigma, "sources": a });
        let tg = ThermalGraph::new(net.clone(), sigma).expect("positive diffusivities");
        let (p, t) = match (
            solve_nonlinear_poisson(&tg, &a, 1e-9),
            solve_thomson(&tg, &a, 1e-9),
        ) {
            (Ok(p), Ok(t)) => (p, t),
            (p, t) => {
                report.solver_errors += 1;
                if report.first_failure.is_none() {
                    let mut d = dump.clone();
                    d["error"] = json!(format!("{:?} / {:?}", p.err(), t.err()));
                    report.first_failure = Some(d);
                }
                continue;
            }
        };
        let gap = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let fg = gap(&p.flows, &t.flows);
        let tg_gap = gap(&p.temperatures, &t.duals);
        let eg = (p.dirichlet_energy + 0.5 * t.dissipation).abs();
        report.max_flow_gap = report.max_flow_gap.max(fg);
        report.max_temperature_gap = report.max_temperature_gap.max(tg_gap);
        report.max_energy_gap = report.max_energy_gap.max(eg);
        let mut bad = fg > 1e-6 || tg_gap > 1e-6 || eg > 1e-6;

        let e0 = tg.dirichlet_energy(&p.temperatures, &a);
        let d0 = tg.dissipation(&t.flows);
        for _ in 0..perturbations {
            let scale = rng.random_range(0.01..1.0);
            let q: Vec<f64> = p
                .temperatures
                .iter()
                .map(|x| x + scale * rng.random_range(-1.0..1.0))
                .collect();
            let other = random_feasible_flow(&mut rng, &net, &a);
            let w = rng.random_range(0.0..1.0);
            let f: Vec<f64> = t
                .flows
                .iter()
                .zip(&other)
                .map(|(x, y)| (1.0 - w) * x + w * y)
                .collect();
            report.perturbations += 1;
            let slack = 1e-9 * (1.0 + e0.abs().max(d0));
            if tg.dirichlet_energy(&q, &a) < e0 - slack || tg.dissipation(&f) < d0 - slack {
                report.beaten += 1;
                bad = true;
            }
        }
        if bad && report.first_failure.is_none() {
            let mut d = dump;
            d["flow_gap"] = json!(fg);
            d["temperature_gap"] = json!(tg_gap);
            d["energy_gap"] = json!(eg);
            report.first_failure = Some(d);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaSuiteReport {
    pub graphs: usize,
    pub probes_per_graph: usize,
    /// Graphs whose `M◦` has an eigenvalue with non-positive real part.
    pub eigenvalue_failures: usize,
    pub min_real_eigenvalue: f64,
    /// Graphs with some probe `xᵀM◦x < -tol`.
    pub quadratic_failures: usize,
    /// Graphs whose symmetric part is indefinite.
    pub indefinite_symmetric_part: usize,
    pub min_symmetric_eigenvalue: f64,
    pub lemma2_failures: usize,
    pub max_lemma2_residual: f64,
    /// Largest `lemma2` residual among graphs that are trees.
    pub max_lemma2_residual_trees: f64,
    pub skew_failures: usize,
    pub max_skew_excess: f64,
    pub first_quadratic_failure: Option<Value>,
    pub first_lemma2_failure: Option<Value>,
    pub first_skew_failure: Option<Value>,
    pub first_eigenvalue_failure: Option<Value>,
}

/// Random probes of `M◦` on random connected graphs with `φ ∈ (0, 1]`.
pub fn lemma_suite(graphs: usize, probes: usize, tol: f64, seed: u64) -> Result<LemmaSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = LemmaSuiteReport {
        graphs,
        probes_per_graph: probes,
        eigenvalue_failures: 0,
        min_real_eigenvalue: f64::INFINITY,
        quadratic_failures: 0,
        indefinite_symmetric_part: 0,
        min_symmetric_eigenvalue: f64::INFINITY,
        lemma2_failures: 0,
        max_lemma2_residual: 0.0,
        max_lemma2_residual_trees: 0.0,
        skew_failures: 0,
        max_skew_excess: f64::NEG_INFINITY,
        first_quadratic_failure: None,
        first_lemma2_failure: None,
        first_skew_failure: None,
        first_eigenvalue_failure: None,
    };
    for g in 0..graphs {
        let n = rng.random_range(2..=10);
        let net = generate::connected_network(&mut rng, n);
        let phi = generate::edge_values(&mut rng, &net, 0.0, 1.0);
        let m = m_circ(&net, &phi)?;
        let report = lemma_checks(&m, probes, tol, &mut rng);
        let xs: Vec<Vec<f64>> = (0..probes)
            .map(|_| {
                (0..net.reduced_len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let l2 = lemma2_residual(&net, &phi, &m, &xs);
        let dump = || json!({ "graph": g, "edges": edge_pairs(&net), "destination": net.destination(), "phi": phi });

        r.min_real_eigenvalue = r.min_real_eigenvalue.min(report.min_real_eigenvalue);
        if !report.eigenvalues_positive() {
            r.eigenvalue_failures += 1;
            r.first_eigenvalue_failure.get_or_insert_with(|| {
                let mut d = dump();
                d["min_real_eigenvalue"] = json!(report.min_real_eigenvalue);
                d
            });
        }
        r.min_symmetric_eigenvalue = r
            .min_symmetric_eigenvalue
            .min(report.symmetric_part_min_eigenvalue);
        if report.symmetric_part_min_eigenvalue < -tol {
            r.indefinite_symmetric_part += 1;
        }
        if !report.quadratic_ok() {
            r.quadratic_failures += 1;
            r.first_quadratic_failure.get_or_insert_with(|| {
                let mut d = dump();
                d["min_quadratic_ratio"] = json!(report.min_quadratic_ratio);
                d["symmetric_part_min_eigenvalue"] = json!(report.symmetric_part_min_eigenvalue);
                d
            });
        }
        r.max_lemma2_residual = r.max_lemma2_residual.max(l2);
        if net.edge_count() + 1 == net.node_count() {
            r.max_lemma2_residual_trees = r.max_lemma2_residual_trees.max(l2);
        }
        if l2 >= tol {
            r.lemma2_failures += 1;
            r.first_lemma2_failure.get_or_insert_with(|| {
                let mut d = dump();
                d["residual"] = json!(l2);
                d
            });
        }
        r.max_skew_excess = r.max_skew_excess.max(report.max_skew_excess);
        if !report.skew_ok() {
            r.skew_failures += 1;
            r.first_skew_failure.get_or_insert_with(|| {
                let mut d = dump();
                d["max_skew_excess"] = json!(report.max_skew_excess);
                d
            });
        }
    }
    Ok(r)
}

/// Covariance identity on a scenario's trace.
pub fn lemma5_on(sc: &Scenario, horizon: usize, seed: u64) -> Result<(Lemma5, Verdict)> {
    let scheduler = sc.scheduler()?;
    let mut cfg = sc.run_config(seed);
    cfg.horizon = horizon;
    cfg.burn_in = horizon / 5;
    cfg.record_trace = true;
    let out = sim::run(
        &sc.network,
        &scheduler,
        &sc.policy,
        &sc.arrivals,
        &sc.channel,
        &cfg,
    )?;
    let trace = out.trace.expect("trace requested");
    Ok((lemma5_check(&sc.network, &trace), out.verdict))
}

/// `|residual| ≤ 1e-3 · dominant`, with a round-off floor for traces whose
/// terms all vanish.
pub fn lemma5_passes(l: &Lemma5) -> bool {
    l.residual.abs() <= 1e-3 * l.dominant + 1e-12
}

/// Runs the whole suite. The scenario drives the trace-based checks and
/// defaults to the bundled lossy-link fixture.
pub fn validate(opts: &ValidateOptions, scenario: Option<&Scenario>) -> Result<ValidationReport> {
    let mut checks = Vec::new();

    let oracle = th1_oracle(&hd_fractional)?;
    checks.push(
        CheckResult::new(
            "th1_oracle",
            oracle.mismatches == 0,
            format!(
                "{} of {} slot states match the exhaustive maximum",
                oracle.cases - oracle.mismatches,
                oracle.cases
            ),
            json!({ "cases": oracle.cases, "mismatches": oracle.mismatches }),
        )
        .with_counterexample(oracle.first_mismatch.map(|c| json!(c))),
    );

    let vbp = vbp_degeneracy(opts.slot_states, opts.seed)?;
    checks.push(
        CheckResult::new(
            "vbp_degeneracy",
            vbp.mismatches == 0,
            format!(
                "{} mismatches over {} slot states",
                vbp.mismatches, vbp.states
            ),
            json!({ "states": vbp.states, "mismatches": vbp.mismatches }),
        )
        .with_counterexample(vbp.first_mismatch),
    );

    let duality = thermal_duality(opts.duality_graphs, opts.perturbations, opts.seed);
    checks.push(
        CheckResult::new(
            "thermal_duality",
            duality.passed(1e-6),
            format!(
                "max flow gap {:.2e}, temperature gap {:.2e}, energy gap {:.2e}, {} of {} perturbations beat the solver",
                duality.max_flow_gap, duality.max_temperature_gap, duality.max_energy_gap, duality.beaten, duality.perturbations
            ),
            json!({
                "graphs": duality.graphs,
                "max_flow_gap": duality.max_flow_gap,
                "max_temperature_gap": duality.max_temperature_gap,
                "max_energy_gap": duality.max_energy_gap,
                "solver_errors": duality.solver_errors,
            }),
        )
        .with_counterexample(duality.first_failure.clone()),
    );

    let lemmas = lemma_suite(opts.lemma_graphs, opts.probes, 1e-9, opts.seed)?;
    let details = json!(lemmas);
    checks.push(
        CheckResult::new(
            "m_circ_eigenvalues",
            lemmas.eigenvalue_failures == 0,
            format!(
                "min real part {:.3e} over {} graphs",
                lemmas.min_real_eigenvalue, lemmas.graphs
            ),
            details.clone(),
        )
        .with_counterexample(lemmas.first_eigenvalue_failure.clone()),
    );
    checks.push(
        CheckResult::new(
            "m_circ_quadratic_form",
            lemmas.quadratic_failures == 0,
            format!(
                "{} of {} graphs have a probe with xᵀM◦x < 0; {} have an indefinite symmetric part",
                lemmas.quadratic_failures, lemmas.graphs, lemmas.indefinite_symmetric_part
            ),
            details.clone(),
        )
        .with_counterexample(lemmas.first_quadratic_failure.clone()),
    );
    checks.push(
        CheckResult::new(
            "m_circ_edge_identity",
            lemmas.lemma2_failures == 0,
            format!(
                "{} of {} graphs exceed the residual tolerance (max {:.3e}; max on trees {:.3e})",
                lemmas.lemma2_failures,
                lemmas.graphs,
                lemmas.max_lemma2_residual,
                lemmas.max_lemma2_residual_trees
            ),
            details.clone(),
        )
        .with_counterexample(lemmas.first_lemma2_failure.clone()),
    );
    checks.push(
        CheckResult::new(
            "m_circ_skew_inequality",
            lemmas.skew_failures == 0,
            format!(
                "{} of {} graphs violate it (max excess {:.3e})",
                lemmas.skew_failures, lemmas.graphs, lemmas.max_skew_excess
            ),
            details,
        )
        .with_counterexample(lemmas.first_skew_failure.clone()),
    );

    let default_scenario;
    let sc = match scenario {
        Some(s) => s,
        None => {
            default_scenario =
                parse_scenario(bundled("lossy_link").expect("bundled"))?.resolve(opts.seed)?;
            &default_scenario
        }
    };
    if sc.network.edge_count() == 0 {
        checks.push(CheckResult::skipped(
            "lemma5_identity",
            "scenario has no edges; nothing to check",
        ));
    } else {
        let (l5, verdict) = lemma5_on(sc, opts.lemma5_horizon, opts.seed)?;
        if !verdict.is_stable() {
            checks.push(CheckResult::skipped(
                "lemma5_identity",
                "run was not stable; the identity needs a stationary regime",
            ));
        } else {
            checks.push(CheckResult::new(
                "lemma5_identity",
                lemma5_passes(&l5),
                format!(
                    "residual {:.3e} against dominant term {:.3e} on `{}`",
                    l5.residual, l5.dominant, sc.id
                ),
                json!(l5),
            ));
        }
    }
    Ok(ValidationReport { checks })
}

/// Writes a serialisable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes Pareto rows as CSV.
pub fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
