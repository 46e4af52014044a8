//! Heat calculus on directed graphs with the destination as a zero-temperature sink.
//!
//! Temperatures live on non-destination nodes (reduced indexing). Heat flows
//! along an edge only from hot to cold: `f = σ ⊙ (B◦ᵀq)⁺`.

mod mcirc;
mod poisson;
mod thomson;

pub use mcirc::{lemma2_residual, lemma_checks, m_circ, LemmaReport};
pub use poisson::solve_nonlinear_poisson;
pub use thomson::{solve_thomson, ThomsonSolution};

use crate::error::{ConfigError, Error, Result};
use crate::graph::Network;
use crate::policy::hd_phis;
use nalgebra::DMatrix;
use serde::Serialize;

/// Default residual tolerance of the solvers.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// A network with a thermal diffusivity on every edge.
#[derive(Debug, Clone)]
pub struct ThermalGraph {
    net: Network,
    sigma: Vec<f64>,
}

impl ThermalGraph {
    pub fn new(net: Network, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != net.edge_count() {
            return Err(ConfigError::invalid("sigma", "one diffusivity per edge").into());
        }
        if let Some(k) = sigma.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(ConfigError::invalid(
                format!("sigma[{k}]"),
                "diffusivity must be finite and > 0",
            )
            .into());
        }
        Ok(ThermalGraph { net, sigma })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Heat flows `σ ⊙ (B◦ᵀq)⁺`.
    pub fn flows(&self, q: &[f64]) -> Vec<f64> {
        self.net
            .differentials(q)
            .iter()
            .zip(&self.sigma)
            .map(|(d, s)| if *d > 0.0 { s * d } else { 0.0 })
            .collect()
    }

    /// Nonlinear Dirichlet Laplacian `B◦ diag(σ) (B◦ᵀq)⁺`.
    pub fn nonlinear_laplacian_apply(&self, q: &[f64]) -> Vec<f64> {
        self.net.net_outflow(&self.flows(q))
    }

    /// `½ Σ σ ((B◦ᵀq)⁺)² - qᵀa`.
    pub fn dirichlet_energy(&self, q: &[f64], a: &[f64]) -> f64 {
        let quad: f64 = self
            .net
            .differentials(q)
            .iter()
            .zip(&self.sigma)
            .map(|(d, s)| {
                let p = d.max(0.0);
                s * p * p
            })
            .sum();
        0.5 * quad - q.iter().zip(a).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Dissipated energy `fᵀ diag(σ)⁻¹ f`.
    pub fn dissipation(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.sigma).map(|(x, s)| x * x / s).sum()
    }

    /// `L◦ = B◦ diag(σ) B◦ᵀ`; singular when a node is cut off from the sink.
    pub fn dirichlet_laplacian(&self) -> Result<DMatrix<f64>> {
        if !self.net.is_connected_to_destination() {
            return Err(Error::Singular);
        }
        Ok(weighted_laplacian(&self.net, &self.sigma, None))
    }

    /// Full symmetric Laplacian over all nodes.
    pub fn full_laplacian(&self) -> DMatrix<f64> {
        let b = self.net.incidence();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.sigma));
        &b * s * b.transpose()
    }

    /// Rejects negative sources and positive sources with no directed path
    /// to the sink.
    pub fn check_sources(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.net.reduced_len() {
            return Err(ConfigError::invalid("sources", "one entry per non-sink node").into());
        }
        let reach = self.net.reaches_destination();
        for (r, &x) in a.iter().enumerate() {
            let node = self.net.node_of_row(r);
            if x < 0.0 || !x.is_finite() {
                return Err(Error::NegativeSource { node, value: x });
            }
            if x > 0.0 && !reach[node] {
                return Err(Error::Infeasible { node });
            }
        }
        Ok(())
    }
}

/// `B◦ diag(σ) B◦ᵀ` restricted to edges with `mask[k]`.
pub(crate) fn weighted_laplacian(
    net: &Network,
    sigma: &[f64],
    mask: Option<&[bool]>,
) -> DMatrix<f64> {
    let n = net.reduced_len();
    let mut l = DMatrix::zeros(n, n);
    for (k, e) in net.edges().iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let (t, h) = (net.reduced_index(e.tail), net.reduced_index(e.head));
        let s = sigma[k];
        if let Some(t) = t {
            l[(t, t)] += s;
        }
        if let Some(h) = h {
            l[(h, h)] += s;
        }
        if let (Some(t), Some(h)) = (t, h) {
            l[(t, h)] -= s;
            l[(h, t)] -= s;
        }
    }
    l
}

/// Makes temperatures unique.
///
/// Nodes that carry no flow and are not tied to the sink through flowing
/// edges have undetermined temperature. Each is set to the least
/// non-negative value consistent with no heat entering it.
pub(crate) fn canonical_temperatures(net: &Network, flows: &[f64], q: &mut [f64], cutoff: f64) {
    let n = net.reduced_len();
    let flowing = |k: usize| flows[k] > cutoff;
    // nodes tied to the sink through flowing edges
    let mut tied = vec![false; net.node_count()];
    tied[net.destination()] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for (k, e) in net.edges().iter().enumerate() {
            if flowing(k) && tied[e.tail] != tied[e.head] {
                tied[e.tail] = true;
                tied[e.head] = true;
                changed = true;
            }
        }
    }
    let floating: Vec<usize> = (0..n).filter(|&r| !tied[net.node_of_row(r)]).collect();
    if floating.is_empty() {
        return;
    }
    for &r in &floating {
        q[r] = 0.0;
    }
    for _ in 0..=floating.len() {
        let mut moved = false;
        for &r in &floating {
            let node = net.node_of_row(r);
            let bound = net
                .edges()
                .iter()
                .filter(|e| e.head == node)
                .map(|e| net.value_at(q, e.tail))
                .fold(0.0f64, f64::max);
            if bound > q[r] {
                q[r] = bound;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Steady heat distribution on a thermal graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalSolution {
    pub temperatures: Vec<f64>,
    pub flows: Vec<f64>,
    pub dirichlet_energy: f64,
    pub dissipation_energy: f64,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Thermal model with `σ = φ̄(β, ρ̄)`.
pub fn reference_model(
    net: &Network,
    beta: f64,
    rho_bar: &[f64],
    a_bar: &[f64],
) -> Result<ThermalSolution> {
    let sigma = hd_phis(net, beta, rho_bar)?;
    let tg = ThermalGraph::new(net.clone(), sigma)?;
    solve_nonlinear_poisson(&tg, a_bar, DEFAULT_TOLERANCE)
}

/// Outcome of comparing predicted flows against effective capacities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityCheck {
    pub holds: bool,
    pub violations: Vec<usize>,
}

/// `f_opt ≤ μ_eff` entrywise.
pub fn assumption2_check(flows: &[f64], mu_eff: &[f64]) -> CapacityCheck {
    let violations: Vec<usize> = flows
        .iter()
        .zip(mu_eff)
        .enumerate()
        .filter(|(_, (f, m))| **f > **m + 1e-12)
        .map(|(k, _)| k)
        .collect();
    CapacityCheck {
        holds: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> ThermalGraph {
        ThermalGraph::new(
            Network::new(3, &[(0, 1), (1, 2)], 2).unwrap(),
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn dirichlet_laplacian_examples() {
        let single = ThermalGraph::new(Network::new(2, &[(0, 1)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(
            single.dirichlet_laplacian().unwrap(),
            DMatrix::from_element(1, 1, 1.0)
        );
        assert_eq!(
            path().dirichlet_laplacian().unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0])
        );
        let cut = ThermalGraph::new(Network::new(3, &[(0, 2)], 2).unwrap(), vec![1.0]).unwrap();
        assert_eq!(cut.dirichlet_laplacian(), Err(Error::Singular));
    }

    #[test]
    fn nonlinear_apply_examples() {
        let single = ThermalGraph::new(Network::new(2, &[(0, 1)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(single.nonlinear_laplacian_apply(&[0.0]), vec![0.0]);
        assert_eq!(single.nonlinear_laplacian_apply(&[2.0]), vec![2.0]);
        let backwards =
            ThermalGraph::new(Network::new(2, &[(1, 0)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(backwards.nonlinear_laplacian_apply(&[2.0]), vec![0.0]);
    }

    #[test]
    fn energy_examples() {
        let single = ThermalGraph::new(Network::new(2, &[(0, 1)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(single.dirichlet_energy(&[0.0], &[2.0]), 0.0);
        assert_eq!(single.dirichlet_energy(&[2.0], &[2.0]), -2.0);
    }

    #[test]
    fn source_checks() {
        // node 0 is only reachable from the sink
        let tg = ThermalGraph::new(Network::new(2, &[(1, 0)], 1).unwrap(), vec![1.0]).unwrap();
        assert_eq!(tg.check_sources(&[1.0]), Err(Error::Infeasible { node: 0 }));
        assert!(tg.check_sources(&[0.0]).is_ok());
        assert!(matches!(
            path().check_sources(&[-1.0, 0.0]),
            Err(Error::NegativeSource { .. })
        ));
    }

    #[test]
    fn assumption2_examples() {
        assert!(assumption2_check(&[0.0, 0.0], &[0.0, 0.0]).holds);
        let c = assumption2_check(&[1.0, 1.0], &[2.0, 0.5]);
        assert!(!c.holds);
        assert_eq!(c.violations, vec![1]);
    }

    #[test]
    fn laplacian_facts() {
        let tg = ThermalGraph::new(
            Network::new(4, &[(0, 1), (1, 3), (0, 2), (2, 3), (1, 2)], 3).unwrap(),
            vec![1.0, 2.0, 0.5, 1.5, 0.7],
        )
        .unwrap();
        let l = tg.full_laplacian();
        let ones = nalgebra::DVector::from_element(4, 1.0);
        assert!((&l * &ones).amax() < 1e-12);
        let mut ev: Vec<f64> = l.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-12 && ev[1] > 0.0);
        let ld = tg.dirichlet_laplacian().unwrap();
        let row_sums = &ld * nalgebra::DVector::from_element(3, 1.0);
        // sink-adjacent rows (nodes 1 and 2) are strictly positive, node 0 is zero
        assert!(row_sums[0].abs() < 1e-12 && row_sums[1] > 0.0 && row_sums[2] > 0.0);
        assert!(ld.symmetric_eigenvalues().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn reference_model_sigma() {
        let net = Network::new(2, &[(0, 1)], 1).unwrap();
        let s = reference_model(&net, 0.0, &[3.0], &[2.0]).unwrap();
        assert!((s.flows[0] - 2.0).abs() < 1e-12);
        assert!((s.temperatures[0] - 2.0).abs() < 1e-12);
    }
}
