//! The nonsymmetric weighting matrix `M◦ = (B◦B◦ᵀ)⁻¹ B◦ Φ B◦ᵀ` and
//! numerical probes of its claimed properties.

use crate::error::{Error, Result};
use crate::graph::Network;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// Builds `M◦` for per-edge coefficients `phi`.
pub fn m_circ(net: &Network, phi: &[f64]) -> Result<DMatrix<f64>> {
    let b = net.reduced_incidence();
    let gram = &b * b.transpose();
    let chol = gram.cholesky().ok_or(Error::Singular)?;
    let weighted = &b * DMatrix::from_diagonal(&DVector::from_column_slice(phi)) * b.transpose();
    Ok(chol.solve(&weighted))
}

/// `max |B◦ᵀM◦x - Φ B◦ᵀx|` over the probe vectors.
pub fn lemma2_residual(net: &Network, phi: &[f64], m: &DMatrix<f64>, probes: &[Vec<f64>]) -> f64 {
    let b = net.reduced_incidence();
    let mut worst = 0.0f64;
    for x in probes {
        let xv = DVector::from_column_slice(x);
        let lhs = b.transpose() * (m * &xv);
        let bx = b.transpose() * &xv;
        for k in 0..phi.len() {
            worst = worst.max((lhs[k] - phi[k] * bx[k]).abs());
        }
    }
    worst
}

/// Results of randomised probes of `M◦`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub min_real_eigenvalue: f64,
    /// Smallest eigenvalue of the symmetric part; negative means some
    /// `xᵀM◦x < 0` exists.
    pub symmetric_part_min_eigenvalue: f64,
    pub quadratic_probes: usize,
    /// Probes with `xᵀM◦x < -tol`.
    pub quadratic_failures: usize,
    pub min_quadratic_ratio: f64,
    pub skew_probes: usize,
    /// Probes with `|xᵀ(M◦ᵀ - M◦)y| > |xᵀM◦y| + tol`.
    pub skew_failures: usize,
    pub max_skew_excess: f64,
    /// `min_j 1ᵀM◦e_j`.
    pub min_column_sum: f64,
}

impl LemmaReport {
    pub fn eigenvalues_positive(&self) -> bool {
        self.min_real_eigenvalue > 0.0
    }

    pub fn quadratic_ok(&self) -> bool {
        self.quadratic_failures == 0
    }

    pub fn skew_ok(&self) -> bool {
        self.skew_failures == 0
    }
}

fn normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Probes eigenvalues, the quadratic form and the skew inequality.
pub fn lemma_checks<R: Rng>(m: &DMatrix<f64>, probes: usize, tol: f64, rng: &mut R) -> LemmaReport {
    let n = m.nrows();
    let min_real_eigenvalue = m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min);
    let sym = (m + m.transpose()) * 0.5;
    let symmetric_part_min_eigenvalue = sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let mt = m.transpose();
    let mut report = LemmaReport {
        min_real_eigenvalue,
        symmetric_part_min_eigenvalue,
        quadratic_probes: probes,
        quadratic_failures: 0,
        min_quadratic_ratio: f64::INFINITY,
        skew_probes: probes,
        skew_failures: 0,
        max_skew_excess: f64::NEG_INFINITY,
        min_column_sum: (0..n)
            .map(|j| m.column(j).sum())
            .fold(f64::INFINITY, f64::min),
    };
    for _ in 0..probes {
        let x = normal_vector(rng, n);
        let y = normal_vector(rng, n);
        let quad = x.dot(&(m * &x));
        report.min_quadratic_ratio = report.min_quadratic_ratio.min(quad / x.norm_squared());
        if quad < -tol {
            report.quadratic_failures += 1;
        }
        let skew = x.dot(&((&mt - m) * &y)).abs();
        let plain = x.dot(&(m * &y)).abs();
        let excess = skew - plain;
        report.max_skew_excess = report.max_skew_excess.max(excess);
        if excess > tol {
            report.skew_failures += 1;
        }
    }
    report
}
