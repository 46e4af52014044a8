//! Slotted-time simulation loop, steady-state metrics and trace diagnostics.
//!
//! Within a slot the order is: observe queues and channel, decide, transmit,
//! then add arrivals. Recorded queues are the slot-start values.

use crate::channel::{ArrivalSpec, ChannelSpec};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::policy::{decide, Policy, ResidualLedger, SlotState};
use crate::scheduling::Scheduler;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Thresholds of the instability trend test on the last half of a run.
///
/// A run is flagged when the fitted rise of the total queue over the window
/// exceeds both `relative` times the window mean and `absolute` packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for TrendTest {
    fn default() -> Self {
        TrendTest {
            relative: 0.5,
            absolute: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Total queue above which the run aborts as unstable.
    pub guard: f64,
    pub trend: TrendTest,
    pub record_trace: bool,
    pub initial_queue: Option<Vec<f64>>,
}

impl RunConfig {
    /// Horizon with the default 20% burn-in and guard.
    pub fn new(horizon: usize, seed: u64) -> Self {
        RunConfig {
            horizon,
            burn_in: horizon / 5,
            seed,
            guard: 1e7,
            trend: TrendTest::default(),
            record_trace: false,
            initial_queue: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

/// Everything observed in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub q: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub flows: Vec<f64>,
    pub activation: Vec<bool>,
    pub schedule: Option<usize>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub burn_in: usize,
    pub slots: Vec<SlotRecord>,
    /// Cumulative forwarded packets per edge after each slot.
    pub cumulative_flow: Vec<f64>,
    /// Slots spent in each member of Π.
    pub schedule_tally: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable(String),
}

impl Verdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, Verdict::Stable)
    }
}

/// Steady-state averages over the slots after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub q_bar: f64,
    pub r_bar: f64,
    pub f_bar: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub null_rate: f64,
    /// Time average of `π ⊙ E{μ}`; absent when the channel law has no
    /// unique stationary distribution.
    pub mu_eff: Option<Vec<f64>>,
    /// `‖ā - B◦f̄‖ / ‖ā‖`, or the absolute norm when there are no arrivals.
    pub conservation_residual: f64,
    pub slots_averaged: usize,
    pub burn_in: usize,
}

impl Metrics {
    /// `(1 - beta) Q̄ + beta R̄`.
    pub fn pareto_objective(&self, beta: f64) -> f64 {
        (1.0 - beta) * self.q_bar + beta * self.r_bar
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub verdict: Verdict,
    pub total_queue: Vec<f64>,
    pub slot_cost: Vec<f64>,
    pub trace: Option<RunTrace>,
}

/// `q + a - B◦f`; a negative component is a feasibility bug.
pub fn queue_step(net: &Network, q: &[f64], a: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    queue_step_at(net, q, a, f, 0)
}

fn queue_step_at(net: &Network, q: &[f64], a: &[f64], f: &[f64], slot: usize) -> Result<Vec<f64>> {
    let out = net.net_outflow(f);
    let mut next = Vec::with_capacity(q.len());
    for (i, ((&qi, &ai), &oi)) in q.iter().zip(a).zip(&out).enumerate() {
        let v = qi + ai - oi;
        if v < -1e-9 {
            return Err(Error::NegativeQueue {
                node: net.node_of_row(i),
                value: v,
                slot,
            });
        }
        // round-off from fractional transmissions
        next.push(if v < 0.0 { 0.0 } else { v });
    }
    Ok(next)
}

/// Runs one simulation.
pub fn run(
    net: &Network,
    scheduler: &Scheduler,
    policy: &Policy,
    arrivals: &ArrivalSpec,
    channel: &ChannelSpec,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    policy.validate()?;
    let n = net.reduced_len();
    let m = net.edge_count();
    if arrivals.rates.len() != n || channel.edge_count() != m {
        return Err(crate::error::ConfigError::invalid(
            "run",
            "arrival or channel dimensions do not match the network",
        )
        .into());
    }
    let burn_in = cfg.burn_in.min(cfg.horizon);
    let mut arrival_proc = arrivals.start(cfg.seed);
    let mut channel_proc = channel.start(cfg.seed);
    let expected_mu = channel.expected().ok().map(|s| s.mu);
    let mut ledger = ResidualLedger::new(m);
    let mut q = cfg.initial_queue.clone().unwrap_or_else(|| vec![0.0; n]);

    let tally_len = scheduler.schedule_set().map_or(0, |s| s.len());
    let mut trace = cfg.record_trace.then(|| RunTrace {
        burn_in,
        slots: Vec::with_capacity(cfg.horizon),
        cumulative_flow: vec![0.0; m],
        schedule_tally: vec![0; tally_len],
    });

    let mut total_queue = Vec::with_capacity(cfg.horizon);
    let mut slot_cost = Vec::with_capacity(cfg.horizon);
    let mut sum_q = 0.0;
    let mut sum_r = 0.0;
    let mut sum_f = vec![0.0; m];
    let mut sum_a = vec![0.0; n];
    let mut sum_null = 0.0;
    let mut sum_mu_eff = vec![0.0; m];
    let mut counted = 0usize;
    let mut verdict = Verdict::Stable;

    for slot in 0..cfg.horizon {
        let total: f64 = q.iter().sum();
        if total > cfg.guard {
            verdict = Verdict::Unstable(format!(
                "total queue {total:.3e} exceeded guard {:.3e} at slot {slot}",
                cfg.guard
            ));
            break;
        }
        let state_idx = channel_proc.sample();
        let ch = channel_proc.state(state_idx);
        let decision = decide(
            net,
            policy,
            SlotState {
                q: &q,
                mu: &ch.mu,
                rho: &ch.rho,
            },
            scheduler,
            Some(&mut ledger),
        )?;
        let a = arrival_proc.sample();
        let cost: f64 = decision
            .flows
            .iter()
            .zip(&ch.rho)
            .map(|(f, r)| r * f * f)
            .sum();
        total_queue.push(total);
        slot_cost.push(cost);
        if slot >= burn_in {
            counted += 1;
            sum_q += total;
            sum_r += cost;
            sum_null += decision.null_packets;
            for k in 0..m {
                sum_f[k] += decision.flows[k];
                if decision.activation[k] {
                    if let Some(mu) = &expected_mu {
                        sum_mu_eff[k] += mu[k];
                    }
                }
            }
            for i in 0..n {
                sum_a[i] += a[i];
            }
        }
        let next = queue_step_at(net, &q, &a, &decision.flows, slot)?;
        if let Some(t) = trace.as_mut() {
            for k in 0..m {
                t.cumulative_flow[k] += decision.flows[k];
            }
            if let Some(s) = decision.schedule {
                t.schedule_tally[s] += 1;
            }
            t.slots.push(SlotRecord {
                q: std::mem::take(&mut q),
                arrivals: a,
                flows: decision.flows,
                activation: decision.activation,
                schedule: decision.schedule,
                mu: ch.mu.clone(),
                rho: ch.rho.clone(),
                weights: decision.weights,
            });
        }
        q = next;
    }

    let scale = if counted > 0 {
        1.0 / counted as f64
    } else {
        0.0
    };
    let f_bar: Vec<f64> = sum_f.iter().map(|x| x * scale).collect();
    let a_bar: Vec<f64> = sum_a.iter().map(|x| x * scale).collect();
    let outflow = net.net_outflow(&f_bar);
    let gap = a_bar
        .iter()
        .zip(&outflow)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let a_norm = a_bar.iter().map(|a| a * a).sum::<f64>().sqrt();
    let metrics = Metrics {
        q_bar: sum_q * scale,
        r_bar: sum_r * scale,
        f_bar,
        a_bar,
        null_rate: sum_null * scale,
        mu_eff: expected_mu.map(|_| sum_mu_eff.iter().map(|x| x * scale).collect()),
        conservation_residual: if a_norm > 0.0 { gap / a_norm } else { gap },
        slots_averaged: counted,
        burn_in,
    };
    if verdict.is_stable() {
        if let Some(reason) = trend_verdict(&total_queue, &cfg.trend) {
            verdict = Verdict::Unstable(reason);
        }
    }
    Ok(RunOutput {
        metrics,
        verdict,
        total_queue,
        slot_cost,
        trace,
    })
}

/// Least-squares fit over the last half of the series; `Some(reason)` when
/// the fitted growth marks the run as unstable.
pub fn trend_verdict(series: &[f64], test: &TrendTest) -> Option<String> {
    let window = &series[series.len() / 2..];
    let len = window.len();
    if len < 2 {
        return None;
    }
    let n = len as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = window.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in window.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let rise = sxy / sxx * n;
    (rise > test.relative * mean_y && rise > test.absolute).then(|| {
        format!("total queue rose by {rise:.1} over the last {len} slots (mean {mean_y:.1})")
    })
}

/// `2 fᵀ diag(φ) B◦ᵀ q - fᵀf`.
pub fn d_functional(net: &Network, f: &[f64], q: &[f64], phi: &[f64]) -> f64 {
    let diff = net.differentials(q);
    f.iter()
        .zip(&diff)
        .zip(phi)
        .map(|((fk, dk), pk)| 2.0 * fk * pk * dk - fk * fk)
        .sum()
}

/// `2 fᵀB◦ᵀq - fᵀB◦ᵀB◦f`.
pub fn g_functional(net: &Network, f: &[f64], q: &[f64]) -> f64 {
    let out = net.net_outflow(f);
    let linear: f64 = out.iter().zip(q).map(|(o, qi)| o * qi).sum();
    let quad: f64 = out.iter().map(|o| o * o).sum();
    2.0 * linear - quad
}

/// Lyapunov function `qᵀ M q`.
pub fn lyapunov_w(q: &[f64], m: &DMatrix<f64>) -> f64 {
    let n = q.len();
    let mut w = 0.0;
    for i in 0..n {
        for j in 0..n {
            w += q[i] * m[(i, j)] * q[j];
        }
    }
    w
}

/// Empirical sides of the steady-state covariance identity.
///
/// `lhs = 2 Cov(B◦f, q) - Var(B◦f)`, `rhs = 2 Cov(a, q - B◦f) + Var(a)`,
/// with time-averaged covariances over the slots after burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma5 {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Largest magnitude among the terms entering either side.
    pub dominant: f64,
}

pub fn lemma5_check(net: &Network, trace: &RunTrace) -> Lemma5 {
    let window = &trace.slots[trace.burn_in.min(trace.slots.len())..];
    let n = net.reduced_len();
    if window.is_empty() {
        return Lemma5 {
            lhs: 0.0,
            rhs: 0.0,
            residual: 0.0,
            dominant: 0.0,
        };
    }
    let len = window.len() as f64;
    let mut mean_b = vec![0.0; n];
    let mut mean_q = vec![0.0; n];
    let mut mean_a = vec![0.0; n];
    let (mut bq, mut bb, mut aq, mut ab, mut aa) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in window {
        let b = net.net_outflow(&s.flows);
        for i in 0..n {
            mean_b[i] += b[i] / len;
            mean_q[i] += s.q[i] / len;
            mean_a[i] += s.arrivals[i] / len;
            bq += b[i] * s.q[i] / len;
            bb += b[i] * b[i] / len;
            aq += s.arrivals[i] * s.q[i] / len;
            ab += s.arrivals[i] * b[i] / len;
            aa += s.arrivals[i] * s.arrivals[i] / len;
        }
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let cov_bq = bq - dot(&mean_b, &mean_q);
    let var_b = bb - dot(&mean_b, &mean_b);
    let cov_aq = aq - dot(&mean_a, &mean_q);
    let cov_ab = ab - dot(&mean_a, &mean_b);
    let var_a = aa - dot(&mean_a, &mean_a);
    let lhs = 2.0 * cov_bq - var_b;
    let rhs = 2.0 * (cov_aq - cov_ab) + var_a;
    let dominant = [
        lhs,
        rhs,
        2.0 * cov_bq,
        var_b,
        2.0 * cov_aq,
        2.0 * cov_ab,
        var_a,
    ]
    .iter()
    .fold(0.0f64, |acc, x| acc.max(x.abs()));
    Lemma5 {
        lhs,
        rhs,
        residual: rhs - lhs,
        dominant,
    }
}

/// Time average of `π ⊙ E{μ}` over the slots after burn-in.
pub fn effective_capacity(trace: &RunTrace, channel: &ChannelSpec) -> Result<Vec<f64>> {
    let mu = channel.expected()?.mu;
    let window = &trace.slots[trace.burn_in.min(trace.slots.len())..];
    let mut out = vec![0.0; mu.len()];
    if window.is_empty() {
        return Ok(out);
    }
    for s in window {
        for (k, on) in s.activation.iter().enumerate() {
            if *on {
                out[k] += mu[k];
            }
        }
    }
    let len = window.len() as f64;
    Ok(out.into_iter().map(|x| x / len).collect())
}

/// Writes the trace as CSV: slot, node queues, edge flows, schedule id,
/// total queue and slot cost.
pub fn write_trace_csv<W: Write>(net: &Network, trace: &RunTrace, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["slot".to_string()];
    for r in 0..net.reduced_len() {
        header.push(format!("q_{}", net.label(net.node_of_row(r))));
    }
    for k in 0..net.edge_count() {
        header.push(format!("f_{}", net.edge_label(k)));
    }
    header.extend(["schedule".into(), "total_queue".into(), "slot_cost".into()]);
    w.write_record(&header)?;
    for (n, s) in trace.slots.iter().enumerate() {
        let mut row = vec![n.to_string()];
        row.extend(s.q.iter().map(|x| x.to_string()));
        row.extend(s.flows.iter().map(|x| x.to_string()));
        row.push(s.schedule.map(|i| i.to_string()).unwrap_or_default());
        row.push(s.q.iter().sum::<f64>().to_string());
        let cost: f64 = s.flows.iter().zip(&s.rho).map(|(f, r)| r * f * f).sum();
        row.push(cost.to_string());
        w.write_record(&row)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduling::{ConflictGraph, Interference, ScheduleSet};

    #[test]
    fn queue_step_examples() {
        let single = Network::new(2, &[(0, 1)], 1).unwrap();
        assert_eq!(
            queue_step(&single, &[5.0], &[1.0], &[3.0]).unwrap(),
            vec![3.0]
        );
        assert_eq!(
            queue_step(&single, &[5.0], &[0.0], &[0.0]).unwrap(),
            vec![5.0]
        );
        let path = Network::new(3, &[(0, 1), (1, 2)], 2).unwrap();
        assert_eq!(
            queue_step(&path, &[4.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]).unwrap(),
            vec![3.0, 2.0]
        );
        assert!(matches!(
            queue_step(&single, &[1.0], &[0.0], &[2.0]),
            Err(Error::NegativeQueue { .. })
        ));
    }

    #[test]
    fn functionals_by_hand() {
        let single = Network::new(2, &[(0, 1)], 1).unwrap();
        assert_eq!(d_functional(&single, &[1.0], &[3.0], &[0.5]), 2.0);
        assert_eq!(d_functional(&single, &[0.0], &[3.0], &[0.5]), 0.0);
        assert_eq!(g_functional(&single, &[1.0], &[3.0]), 5.0);
        assert_eq!(g_functional(&single, &[0.0], &[3.0]), 0.0);
        let m = DMatrix::from_diagonal_element(2, 2, 0.5);
        assert_eq!(lyapunov_w(&[1.0, 2.0], &m), 2.5);
        assert_eq!(lyapunov_w(&[0.0, 0.0], &m), 0.0);
    }

    #[test]
    fn trend_flags_growth_only() {
        let flat: Vec<f64> = (0..1000).map(|i| 3.0 + (i % 2) as f64).collect();
        assert!(trend_verdict(&flat, &TrendTest::default()).is_none());
        let growing: Vec<f64> = (0..1000).map(|i| 0.2 * i as f64).collect();
        assert!(trend_verdict(&growing, &TrendTest::default()).is_some());
    }

    #[test]
    fn idle_run_is_all_zero() {
        let net = Network::new(2, &[(0, 1)], 1).unwrap();
        let c = ConflictGraph::build(&net, &Interference::Khop(1)).unwrap();
        let s = Scheduler::Enumerated(ScheduleSet::enumerate(&c, 24).unwrap());
        let out = run(
            &net,
            &s,
            &Policy::hd(0.5),
            &ArrivalSpec::deterministic(vec![0.0]).unwrap(),
            &ChannelSpec::constant(vec![3.0], vec![1.0]).unwrap(),
            &RunConfig::new(100, 0).with_trace(),
        )
        .unwrap();
        assert_eq!(out.metrics.q_bar, 0.0);
        assert_eq!(out.metrics.r_bar, 0.0);
        assert!(out.verdict.is_stable());
        let l5 = lemma5_check(&net, out.trace.as_ref().unwrap());
        assert_eq!((l5.lhs, l5.rhs), (0.0, 0.0));
    }
}
