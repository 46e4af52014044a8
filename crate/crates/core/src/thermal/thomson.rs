//! Minimum-dissipation flows: `min fᵀdiag(σ)⁻¹f` s.t. `B◦f = a`, `f ≥ 0`.
//!
//! Primal active-set method. The working set holds edges pinned at zero;
//! the equality-constrained subproblem on the free edges is solved through
//! its multipliers, which double as node temperatures.

use super::{canonical_temperatures, weighted_laplacian, ThermalGraph};
use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThomsonSolution {
    pub flows: Vec<f64>,
    /// Multipliers of the conservation constraints (node temperatures).
    pub duals: Vec<f64>,
    pub dissipation: f64,
    pub iterations: usize,
}

/// Route every source along a shortest directed path to the sink.
fn shortest_path_start(tg: &ThermalGraph, a: &[f64]) -> Vec<f64> {
    let net = tg.network();
    let next = net.next_hop_to_destination();
    let mut f = vec![0.0; net.edge_count()];
    for (r, &x) in a.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        let mut node = net.node_of_row(r);
        while node != net.destination() {
            let Some(k) = next[node] else { break };
            f[k] += x;
            node = net.edge(k).head;
        }
    }
    f
}

/// Temperatures of free components that do not contain the sink are only
/// known up to a constant. Raise each component to the least level that keeps
/// pinned edges from pointing downhill into it.
fn settle_components(tg: &ThermalGraph, free: &[bool], lambda: &mut [f64]) {
    let net = tg.network();
    let mut comp: Vec<usize> = (0..net.node_count()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (k, e) in net.edges().iter().enumerate() {
        if free[k] {
            let (a, b) = (find(&mut comp, e.tail), find(&mut comp, e.head));
            if a != b {
                comp[a] = b;
            }
        }
    }
    let sink = find(&mut comp, net.destination());
    let roots: Vec<usize> = (0..net.node_count()).map(|v| find(&mut comp, v)).collect();
    let floating: Vec<usize> = (0..net.reduced_len())
        .filter(|&r| roots[net.node_of_row(r)] != sink)
        .collect();
    if floating.is_empty() {
        return;
    }
    let mut level = vec![f64::NEG_INFINITY; net.node_count()];
    for &r in &floating {
        level[roots[net.node_of_row(r)]] = 0.0;
    }
    for _ in 0..=floating.len() {
        let mut moved = false;
        for (k, e) in net.edges().iter().enumerate() {
            if free[k] {
                continue;
            }
            let hc = roots[e.head];
            if hc == sink {
                continue;
            }
            let tail_value = if roots[e.tail] == sink {
                net.value_at(lambda, e.tail)
            } else {
                level[roots[e.tail]]
            };
            if tail_value > level[hc] {
                level[hc] = tail_value;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    for &r in &floating {
        lambda[r] = level[roots[net.node_of_row(r)]];
    }
}

/// Multipliers on the free component of the sink; other nodes get zero.
///
/// A free component away from the sink carries no flow in or out, so with
/// non-negative sources it has none and its level is settled separately.
fn grounded_multipliers(tg: &ThermalGraph, free: &[bool], a: &[f64]) -> Result<Vec<f64>> {
    let net = tg.network();
    let mut grounded = vec![false; net.node_count()];
    grounded[net.destination()] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for (k, e) in net.edges().iter().enumerate() {
            if free[k] && grounded[e.tail] != grounded[e.head] {
                grounded[e.tail] = true;
                grounded[e.head] = true;
                changed = true;
            }
        }
    }
    let rows: Vec<usize> = (0..net.reduced_len())
        .filter(|&r| grounded[net.node_of_row(r)])
        .collect();
    let mut lambda = vec![0.0; net.reduced_len()];
    if rows.is_empty() {
        return Ok(lambda);
    }
    let l = weighted_laplacian(net, tg.sigma(), Some(free))
        .select_rows(&rows)
        .select_columns(&rows);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&r| a[r]));
    let x = l.cholesky().ok_or(Error::Singular)?.solve(&rhs);
    for (&r, v) in rows.iter().zip(x.iter()) {
        lambda[r] = *v;
    }
    Ok(lambda)
}

/// Solves the minimum-dissipation flow problem for non-negative, feasible sources.
pub fn solve_thomson(tg: &ThermalGraph, a: &[f64], tol: f64) -> Result<ThomsonSolution> {
    tg.check_sources(a)?;
    let net = tg.network();
    let m = net.edge_count();
    let sigma = tg.sigma();
    let mut f = shortest_path_start(tg, a);
    let mut free: Vec<bool> = f.iter().map(|x| *x > 0.0).collect();
    let scale = a.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    // round-off in the multipliers shows up in the step at about this size
    let step_eps = 1e-11 * scale;
    let cap = 50 * m + 50;
    let mut lambda = vec![0.0; net.reduced_len()];

    for iteration in 1..=cap {
        lambda = grounded_multipliers(tg, &free, a)?;
        let diff = net.differentials(&lambda);
        let target: Vec<f64> = (0..m)
            .map(|k| if free[k] { sigma[k] * diff[k] } else { 0.0 })
            .collect();
        let step: Vec<f64> = target.iter().zip(&f).map(|(t, x)| t - x).collect();
        let step_norm = step.iter().fold(0.0f64, |s, x| s.max(x.abs()));

        if step_norm <= step_eps {
            f = target;
            settle_components(tg, &free, &mut lambda);
            let diff = net.differentials(&lambda);
            let lam_scale = lambda.iter().fold(1.0f64, |s, x| s.max(x.abs()));
            // a pinned edge with a positive differential has a negative multiplier
            let release = (0..m)
                .filter(|&k| !free[k] && diff[k] > 1e-11 * lam_scale)
                .max_by(|&i, &j| diff[i].total_cmp(&diff[j]));
            match release {
                Some(k) => free[k] = true,
                None => {
                    for x in f.iter_mut() {
                        *x = x.max(0.0);
                    }
                    canonical_temperatures(net, &f, &mut lambda, 10.0 * tol * scale);
                    let residual = net
                        .net_outflow(&f)
                        .iter()
                        .zip(a)
                        .fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
                    if residual > tol * scale {
                        return Err(Error::NoConvergence {
                            iterations: iteration,
                            residual,
                        });
                    }
                    return Ok(ThomsonSolution {
                        dissipation: tg.dissipation(&f),
                        flows: f,
                        duals: lambda,
                        iterations: iteration,
                    });
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for k in 0..m {
            if free[k] && step[k] < -step_eps {
                let ratio = (-f[k] / step[k]).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(k);
                }
            }
        }
        for k in 0..m {
            f[k] += alpha * step[k];
        }
        if let Some(k) = blocking {
            f[k] = 0.0;
            free[k] = false;
        }
    }
    let residual = net
        .net_outflow(&f)
        .iter()
        .zip(a)
        .fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
    Err(Error::NoConvergence {
        iterations: cap,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Network;
    use crate::thermal::solve_nonlinear_poisson;

    #[test]
    fn single_edge() {
        let tg = ThermalGraph::new(Network::new(2, &[(0, 1)], 1).unwrap(), vec![1.0]).unwrap();
        let s = solve_thomson(&tg, &[2.0], 1e-9).unwrap();
        assert!((s.flows[0] - 2.0).abs() < 1e-12);
        assert!((s.duals[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn direct_and_two_hop_routes() {
        // a -> d with σ = 1 against a -> b -> d with σ = 4 per hop (series 2)
        let tg = ThermalGraph::new(
            Network::new(3, &[(0, 2), (0, 1), (1, 2)], 2).unwrap(),
            vec![1.0, 4.0, 4.0],
        )
        .unwrap();
        let s = solve_thomson(&tg, &[3.0, 0.0], 1e-9).unwrap();
        assert!((s.flows[0] - 1.0).abs() < 1e-12);
        assert!((s.flows[1] - 2.0).abs() < 1e-12);
        assert!((s.flows[2] - 2.0).abs() < 1e-12);
        let p = solve_nonlinear_poisson(&tg, &[3.0, 0.0], 1e-9).unwrap();
        for (x, y) in s.duals.iter().zip(&p.temperatures) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_source() {
        let tg = ThermalGraph::new(Network::new(2, &[(1, 0)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(
            solve_thomson(&tg, &[1.0], 1e-9),
            Err(Error::Infeasible { node: 0 })
        );
    }
}
