//! Nonlinear Poisson solver `ℒ◦q = a` by minimising the Dirichlet energy.
//!
//! The energy is convex and piecewise quadratic, with gradient `ℒ◦q - a`.
//! Each round takes a Newton step on the current active set (edges with a
//! positive temperature differential), followed by an exact line search over
//! the kinks. If the round cap is hit, plain steepest descent takes over.

use super::{canonical_temperatures, weighted_laplacian, ThermalGraph, ThermalSolution};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const FALLBACK_ROUNDS: usize = 200_000;

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eps = m.amax().max(1.0) * 1e-12;
    m.clone()
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(n, n))
}

/// Exact minimiser of the energy along `q + t d`, `t ≥ 0`.
fn line_search(tg: &ThermalGraph, q: &[f64], d: &[f64], a: &[f64]) -> Option<f64> {
    let net = tg.network();
    let delta = net.differentials(q);
    let slope_d = net.differentials(d);
    let da: f64 = d.iter().zip(a).map(|(x, y)| x * y).sum();
    let derivative = |t: f64| -> f64 {
        delta
            .iter()
            .zip(&slope_d)
            .zip(tg.sigma())
            .map(|((dl, c), s)| s * c * (dl + t * c).max(0.0))
            .sum::<f64>()
            - da
    };
    let mut kinks: Vec<f64> = delta
        .iter()
        .zip(&slope_d)
        .filter(|(_, c)| **c != 0.0)
        .map(|(dl, c)| -dl / c)
        .filter(|t| *t > 0.0 && t.is_finite())
        .collect();
    kinks.sort_by(f64::total_cmp);
    let (mut t0, mut g0) = (0.0, derivative(0.0));
    if g0 >= 0.0 {
        return None;
    }
    for &t1 in &kinks {
        let g1 = derivative(t1);
        if g1 >= 0.0 {
            return Some(t0 + (t1 - t0) * (-g0) / (g1 - g0));
        }
        t0 = t1;
        g0 = g1;
    }
    // derivative is affine past the last kink
    let g1 = derivative(t0 + 1.0);
    if g1 > g0 {
        Some(t0 + (-g0) / (g1 - g0))
    } else {
        None
    }
}

fn residual(tg: &ThermalGraph, q: &[f64], a: &[f64]) -> Vec<f64> {
    tg.nonlinear_laplacian_apply(q)
        .iter()
        .zip(a)
        .map(|(x, y)| x - y)
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `ℒ◦q = a` for non-negative, feasible sources.
///
/// `tol` bounds the residual ∞-norm, scaled by `max(1, ‖a‖∞)`.
pub fn solve_nonlinear_poisson(tg: &ThermalGraph, a: &[f64], tol: f64) -> Result<ThermalSolution> {
    tg.check_sources(a)?;
    let net = tg.network();
    let n = net.reduced_len();
    let m = net.edge_count();
    let scaled_tol = tol * inf_norm(a).max(1.0);

    // start from the linear solve with every edge active
    let full = weighted_laplacian(net, tg.sigma(), None);
    let rhs = DVector::from_column_slice(a);
    let mut q: Vec<f64> = (pseudo_inverse(&full) * rhs).iter().cloned().collect();

    let cap = (10 * m).max(1);
    let mut iterations = 0;
    let mut g = residual(tg, &q, a);
    let mut converged = inf_norm(&g) <= scaled_tol;
    while !converged && iterations < cap {
        iterations += 1;
        let active: Vec<bool> = net.differentials(&q).iter().map(|d| *d > 0.0).collect();
        let h = weighted_laplacian(net, tg.sigma(), Some(&active));
        let hp = pseudo_inverse(&h);
        let gv = DVector::from_column_slice(&g);
        let newton = -(&hp * &gv);
        // directions the active set cannot see
        let null = -(&gv - &h * (&hp * &gv));
        let d: Vec<f64> = (newton + null).iter().cloned().collect();
        let Some(t) = line_search(tg, &q, &d, a) else {
            break;
        };
        for (qi, di) in q.iter_mut().zip(&d) {
            *qi += t * di;
        }
        g = residual(tg, &q, a);
        converged = inf_norm(&g) <= scaled_tol;
    }
    let mut rounds = 0;
    while !converged && rounds < FALLBACK_ROUNDS {
        rounds += 1;
        let d: Vec<f64> = g.iter().map(|x| -x).collect();
        let Some(t) = line_search(tg, &q, &d, a) else {
            break;
        };
        for (qi, di) in q.iter_mut().zip(&d) {
            *qi += t * di;
        }
        g = residual(tg, &q, a);
        converged = inf_norm(&g) <= scaled_tol;
    }
    iterations += rounds;
    let res = inf_norm(&g);
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            residual: res,
        });
    }
    let flows = tg.flows(&q);
    canonical_temperatures(net, &flows, &mut q, 10.0 * scaled_tol);
    let flows = tg.flows(&q);
    let res = inf_norm(&residual(tg, &q, a));
    debug_assert_eq!(q.len(), n);
    Ok(ThermalSolution {
        dirichlet_energy: tg.dirichlet_energy(&q, a),
        dissipation_energy: tg.dissipation(&flows),
        temperatures: q,
        flows,
        residual: res,
        converged: true,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Network;

    #[test]
    fn single_edge() {
        let tg = ThermalGraph::new(Network::new(2, &[(0, 1)], 1).unwrap(), vec![1.0]).unwrap();
        let s = solve_nonlinear_poisson(&tg, &[2.0], 1e-9).unwrap();
        assert!((s.temperatures[0] - 2.0).abs() < 1e-12);
        assert!((s.flows[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn path_back_substitution() {
        let tg = ThermalGraph::new(
            Network::new(3, &[(0, 1), (1, 2)], 2).unwrap(),
            vec![1.0, 1.0],
        )
        .unwrap();
        let s = solve_nonlinear_poisson(&tg, &[1.0, 0.0], 1e-9).unwrap();
        assert!((s.flows[0] - 1.0).abs() < 1e-12 && (s.flows[1] - 1.0).abs() < 1e-12);
        assert!((s.temperatures[0] - 2.0).abs() < 1e-12);
        assert!((s.temperatures[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn node_fed_only_by_sink_is_infeasible() {
        let tg = ThermalGraph::new(Network::new(2, &[(1, 0)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(
            solve_nonlinear_poisson(&tg, &[1.0], 1e-9),
            Err(Error::Infeasible { node: 0 })
        );
    }

    #[test]
    fn wrong_way_edge_carries_nothing() {
        // 0 -> 2(sink), 1 -> 0, 0 -> 1; source at 0 only
        let tg = ThermalGraph::new(
            Network::new(3, &[(0, 2), (1, 0), (0, 1)], 2).unwrap(),
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let s = solve_nonlinear_poisson(&tg, &[3.0, 0.0], 1e-9).unwrap();
        assert!((s.flows[0] - 3.0).abs() < 1e-9);
        assert!(s.flows[1].abs() < 1e-12 && s.flows[2].abs() < 1e-12);
        // node 1 floats: least temperature with no inflow is q_0
        assert!((s.temperatures[1] - s.temperatures[0]).abs() < 1e-9);
    }

    #[test]
    fn zero_duality_gap() {
        let tg = ThermalGraph::new(
            Network::new(4, &[(0, 1), (1, 3), (0, 2), (2, 3), (2, 1)], 3).unwrap(),
            vec![1.0, 0.5, 2.0, 0.25, 1.0],
        )
        .unwrap();
        let s = solve_nonlinear_poisson(&tg, &[2.0, 1.0, 0.5], 1e-9).unwrap();
        assert!((s.dirichlet_energy + 0.5 * s.dissipation_energy).abs() < 1e-9);
    }
}
