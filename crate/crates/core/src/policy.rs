//! Per-slot routing rules: heat diffusion (HD), back-pressure (BP) and
//! V-parameter back-pressure (VBP).

use crate::error::{ConfigError, Result};
use crate::graph::Network;
use crate::scheduling::Scheduler;
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

/// Routing policy and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Hd {
        beta: f64,
        #[serde(default = "default_true")]
        residuals: bool,
    },
    Bp,
    Vbp {
        v: f64,
    },
}

impl Policy {
    pub fn hd(beta: f64) -> Self {
        Policy::Hd {
            beta,
            residuals: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::Hd { beta, .. } if !(0.0..=1.0).contains(&beta) => {
                Err(ConfigError::invalid("policy.hd.beta", "beta must lie in [0, 1]").into())
            }
            Policy::Vbp { v } if !(v >= 0.0) || !v.is_finite() => {
                Err(ConfigError::invalid("policy.vbp.v", "v must be finite and >= 0").into())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Hd { .. } => "hd",
            Policy::Bp => "bp",
            Policy::Vbp { .. } => "vbp",
        }
    }

    /// The swept parameter: beta for HD, v for VBP.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Policy::Hd { beta, .. } => Some(beta),
            Policy::Bp => None,
            Policy::Vbp { v } => Some(v),
        }
    }
}

/// Observed queues (reduced), capacities and cost factors in one slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotState<'a> {
    pub q: &'a [f64],
    pub mu: &'a [f64],
    pub rho: &'a [f64],
}

/// Outcome of one policy decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub weights: Vec<f64>,
    /// Packets each link would carry if activated.
    pub predictions: Vec<f64>,
    pub activation: Vec<bool>,
    pub schedule: Option<usize>,
    /// Packets actually forwarded.
    pub flows: Vec<f64>,
    /// Unused capacity on activated BP links.
    pub null_packets: f64,
}

/// Diffusion coefficient of a link.
///
/// `(1 - beta) / theta + beta / rho` with `theta = 1` for links into the
/// destination and `2` otherwise.
pub fn hd_phi(beta: f64, head_is_destination: bool, rho: f64) -> Result<f64> {
    if !(rho >= 1.0) {
        return Err(ConfigError::CostBelowOne {
            field: "rho".into(),
            value: rho,
        }
        .into());
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(ConfigError::invalid("beta", "beta must lie in [0, 1]").into());
    }
    let theta = if head_is_destination { 1.0 } else { 2.0 };
    Ok((1.0 - beta) / theta + beta / rho)
}

/// Diffusion coefficients of every link.
pub fn hd_phis(net: &Network, beta: f64, rho: &[f64]) -> Result<Vec<f64>> {
    (0..net.edge_count())
        .map(|k| hd_phi(beta, net.head_is_destination(k), rho[k]))
        .collect()
}

/// Packets a link would carry: `min(phi * (q_tail - q_head)⁺, mu)`.
pub fn hd_prediction(phi: f64, q_tail: f64, q_head: f64, mu: f64) -> f64 {
    (phi * (q_tail - q_head).max(0.0)).min(mu)
}

/// HD link weight `2 phi dq f - f²`.
pub fn hd_weight(phi: f64, q_diff: f64, prediction: f64) -> f64 {
    2.0 * phi * q_diff * prediction - prediction * prediction
}

/// Per-link fractional residue of HD transmissions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLedger {
    residue: Vec<f64>,
}

impl ResidualLedger {
    pub fn new(edges: usize) -> Self {
        ResidualLedger {
            residue: vec![0.0; edges],
        }
    }

    pub fn residue(&self) -> &[f64] {
        &self.residue
    }

    /// Rounds fractional flows to whole packets, carrying the fractional part.
    ///
    /// An extra packet is emitted once the carried residue reaches one. Links
    /// whose emission would exceed `limits` are clamped; the clamped amount is
    /// carried, but the residue is kept below one.
    pub fn apply(&mut self, flows: &[f64], limits: &[f64]) -> Vec<f64> {
        const EPS: f64 = 1e-9;
        flows
            .iter()
            .zip(limits)
            .zip(self.residue.iter_mut())
            .map(|((&f, &limit), r)| {
                let whole = f.floor();
                *r += f - whole;
                let mut out = whole;
                if *r >= 1.0 - EPS {
                    out += 1.0;
                    *r -= 1.0;
                } else if *r <= -1.0 + EPS {
                    out -= 1.0;
                    *r += 1.0;
                }
                if out > limit {
                    let clamped = limit.floor().max(0.0);
                    *r += out - clamped;
                    out = clamped;
                }
                if out < 0.0 {
                    *r += out;
                    out = 0.0;
                }
                *r = r.clamp(-1.0 + EPS, 1.0 - EPS);
                if r.abs() < EPS {
                    *r = 0.0;
                }
                out
            })
            .collect()
    }
}

/// Caps each node's total outflow at its queue by trimming its
/// lowest-weight active links first.
fn enforce_node_budget(net: &Network, q: &[f64], weights: &[f64], flows: &mut [f64]) {
    let mut outflow = vec![0.0; net.node_count()];
    for (k, e) in net.edges().iter().enumerate() {
        outflow[e.tail] += flows[k];
    }
    for node in 0..net.node_count() {
        let budget = net.value_at(q, node);
        if outflow[node] <= budget {
            continue;
        }
        let mut links: Vec<usize> = (0..net.edge_count())
            .filter(|&k| net.edge(k).tail == node && flows[k] > 0.0)
            .collect();
        links.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)));
        let mut excess = outflow[node] - budget;
        for k in links {
            if excess <= 0.0 {
                break;
            }
            let cut = flows[k].min(excess);
            flows[k] -= cut;
            excess -= cut;
        }
    }
}

/// HD decision. With a ledger the forwarded packets are rounded to whole
/// packets by residual accounting; without one they stay fractional.
pub fn hd_decide(
    net: &Network,
    state: SlotState<'_>,
    beta: f64,
    scheduler: &Scheduler,
    ledger: Option<&mut ResidualLedger>,
) -> Result<Decision> {
    let m = net.edge_count();
    let mut predictions = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 0..m {
        let e = net.edge(k);
        let phi = hd_phi(beta, net.head_is_destination(k), state.rho[k])?;
        let (qt, qh) = (net.value_at(state.q, e.tail), net.value_at(state.q, e.head));
        let f = hd_prediction(phi, qt, qh, state.mu[k]);
        predictions.push(f);
        weights.push(hd_weight(phi, qt - qh, f));
    }
    let (activation, schedule) = scheduler.select(&weights)?;
    let fractional: Vec<f64> = (0..m)
        .map(|k| if activation[k] { predictions[k] } else { 0.0 })
        .collect();
    let mut flows = match ledger {
        Some(ledger) => {
            let limits: Vec<f64> = (0..m)
                .map(|k| net.value_at(state.q, net.edge(k).tail).min(state.mu[k]))
                .collect();
            ledger.apply(&fractional, &limits)
        }
        None => fractional,
    };
    enforce_node_budget(net, state.q, &weights, &mut flows);
    Ok(Decision {
        weights,
        predictions,
        activation,
        schedule,
        flows,
        null_packets: 0.0,
    })
}

/// Full-capacity forwarding shared by BP and VBP: on every activated link
/// with positive weight send `min(q_tail, mu)` real packets and count the
/// rest of the capacity as null packets.
fn forward_at_capacity(
    net: &Network,
    state: SlotState<'_>,
    weights: Vec<f64>,
    scheduler: &Scheduler,
) -> Result<Decision> {
    let m = net.edge_count();
    let (activation, schedule) = scheduler.select(&weights)?;
    let predictions: Vec<f64> = (0..m)
        .map(|k| {
            if weights[k] > 0.0 {
                net.value_at(state.q, net.edge(k).tail).min(state.mu[k])
            } else {
                0.0
            }
        })
        .collect();
    let mut flows = vec![0.0; m];
    let mut null_packets = 0.0;
    for k in 0..m {
        if activation[k] && weights[k] > 0.0 {
            flows[k] = predictions[k];
            null_packets += state.mu[k] - predictions[k];
        }
    }
    enforce_node_budget(net, state.q, &weights, &mut flows);
    Ok(Decision {
        weights,
        predictions,
        activation,
        schedule,
        flows,
        null_packets,
    })
}

/// Original back-pressure: weight `mu (q_tail - q_head)⁺`.
pub fn bp_decide(net: &Network, state: SlotState<'_>, scheduler: &Scheduler) -> Result<Decision> {
    let weights = (0..net.edge_count())
        .map(|k| {
            let e = net.edge(k);
            let dq = net.value_at(state.q, e.tail) - net.value_at(state.q, e.head);
            state.mu[k] * dq.max(0.0)
        })
        .collect();
    forward_at_capacity(net, state, weights, scheduler)
}

/// V-parameter back-pressure: weight `mu (q_tail - q_head - v rho mu)⁺`.
pub fn vbp_decide(
    net: &Network,
    state: SlotState<'_>,
    v: f64,
    scheduler: &Scheduler,
) -> Result<Decision> {
    let weights = (0..net.edge_count())
        .map(|k| {
            let e = net.edge(k);
            let dq = net.value_at(state.q, e.tail) - net.value_at(state.q, e.head);
            let usage = v * state.rho[k] * state.mu[k];
            state.mu[k] * (dq - usage).max(0.0)
        })
        .collect();
    forward_at_capacity(net, state, weights, scheduler)
}

/// Dispatches on the policy.
pub fn decide(
    net: &Network,
    policy: &Policy,
    state: SlotState<'_>,
    scheduler: &Scheduler,
    ledger: Option<&mut ResidualLedger>,
) -> Result<Decision> {
    match *policy {
        Policy::Hd { beta, residuals } => hd_decide(
            net,
            state,
            beta,
            scheduler,
            if residuals { ledger } else { None },
        ),
        Policy::Bp => bp_decide(net, state, scheduler),
        Policy::Vbp { v } => vbp_decide(net, state, v, scheduler),
    }
}
