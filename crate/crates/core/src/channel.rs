//! Exogenous arrivals and channel-state processes.
//!
//! Each live process owns its own ChaCha stream derived from the run seed, so
//! swapping one process leaves the sample path of the other unchanged.

use crate::error::{ConfigError, Error, Result};
use crate::graph::numerical_rank;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub const ARRIVAL_STREAM: u64 = 1;
pub const CHANNEL_STREAM: u64 = 2;
pub const NOISE_STREAM: u64 = 3;

/// Default truncation of Poisson draws.
pub const DEFAULT_POISSON_CAP: u64 = 1_000_000;

/// Independent RNG stream `stream` of a run seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Deterministic,
    Bernoulli,
    Poisson,
}

/// Arrival law per non-destination node (reduced indexing).
///
/// `rates` is the fixed count for deterministic arrivals, the success
/// probability for Bernoulli and the mean for Poisson.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSpec {
    pub kind: ArrivalKind,
    pub rates: Vec<f64>,
    pub poisson_cap: u64,
}

impl ArrivalSpec {
    pub fn new(kind: ArrivalKind, rates: Vec<f64>) -> Result<Self> {
        for (i, &r) in rates.iter().enumerate() {
            let field = format!("arrivals[{i}]");
            if !r.is_finite() || r < 0.0 {
                return Err(ConfigError::invalid(field, "rate must be finite and >= 0").into());
            }
            match kind {
                ArrivalKind::Deterministic if r.fract() != 0.0 => {
                    return Err(ConfigError::invalid(
                        field,
                        "deterministic arrivals must be whole packets",
                    )
                    .into())
                }
                ArrivalKind::Bernoulli if r > 1.0 => {
                    return Err(ConfigError::invalid(field, "probability above 1").into())
                }
                _ => {}
            }
        }
        Ok(ArrivalSpec {
            kind,
            rates,
            poisson_cap: DEFAULT_POISSON_CAP,
        })
    }

    pub fn deterministic(rates: Vec<f64>) -> Result<Self> {
        Self::new(ArrivalKind::Deterministic, rates)
    }

    /// Mean arrival vector.
    pub fn mean(&self) -> Vec<f64> {
        self.rates.clone()
    }

    pub fn start(&self, seed: u64) -> ArrivalProcess {
        let poisson = if self.kind == ArrivalKind::Poisson {
            self.rates
                .iter()
                .map(|&r| if r > 0.0 { Poisson::new(r).ok() } else { None })
                .collect()
        } else {
            Vec::new()
        };
        ArrivalProcess {
            spec: self.clone(),
            rng: rng_stream(seed, ARRIVAL_STREAM),
            poisson,
        }
    }
}

/// A running arrival process.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    spec: ArrivalSpec,
    rng: ChaCha8Rng,
    poisson: Vec<Option<Poisson<f64>>>,
}

impl ArrivalProcess {
    /// Arrivals for the next slot; whole, non-negative packet counts.
    pub fn sample(&mut self) -> Vec<f64> {
        match self.spec.kind {
            ArrivalKind::Deterministic => self.spec.rates.clone(),
            ArrivalKind::Bernoulli => self
                .spec
                .rates
                .iter()
                .map(|&p| if self.rng.random_bool(p) { 1.0 } else { 0.0 })
                .collect(),
            ArrivalKind::Poisson => {
                let cap = self.spec.poisson_cap as f64;
                self.poisson
                    .iter()
                    .map(|d| match d {
                        Some(d) => d.sample(&mut self.rng).min(cap),
                        None => 0.0,
                    })
                    .collect()
            }
        }
    }
}

/// Capacities and cost factors of every edge in one channel state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelMode {
    Constant,
    Iid {
        probabilities: Vec<f64>,
    },
    Markov {
        transition: Vec<Vec<f64>>,
        initial: usize,
    },
}

/// Finite-state channel law.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub states: Vec<ChannelState>,
    pub mode: ChannelMode,
}

fn check_state(s: &ChannelState, edges: usize, idx: usize) -> Result<()> {
    if s.mu.len() != edges || s.rho.len() != edges {
        return Err(ConfigError::invalid(
            format!("channel.states[{idx}]"),
            format!("expected {edges} entries for mu and rho"),
        )
        .into());
    }
    for (k, &m) in s.mu.iter().enumerate() {
        if !m.is_finite() || m < 0.0 {
            return Err(ConfigError::invalid(
                format!("channel.states[{idx}].mu[{k}]"),
                "capacity must be finite and >= 0",
            )
            .into());
        }
    }
    for (k, &r) in s.rho.iter().enumerate() {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(ConfigError::CostBelowOne {
                field: format!("channel.states[{idx}].rho[{k}]"),
                value: r,
            }
            .into());
        }
    }
    Ok(())
}

fn check_distribution(p: &[f64], field: &str) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(
            ConfigError::invalid(field, "probabilities must lie in [0,1] and sum to 1").into(),
        );
    }
    Ok(())
}

impl ChannelSpec {
    pub fn constant(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        Self::new(vec![ChannelState { mu, rho }], ChannelMode::Constant)
    }

    pub fn new(states: Vec<ChannelState>, mode: ChannelMode) -> Result<Self> {
        if states.is_empty() {
            return Err(ConfigError::invalid("channel.states", "no states").into());
        }
        let edges = states[0].mu.len();
        for (i, s) in states.iter().enumerate() {
            check_state(s, edges, i)?;
        }
        match &mode {
            ChannelMode::Constant if states.len() != 1 => {
                return Err(
                    ConfigError::invalid("channel.mode", "constant mode takes one state").into(),
                )
            }
            ChannelMode::Iid { probabilities } => {
                if probabilities.len() != states.len() {
                    return Err(ConfigError::invalid(
                        "channel.probabilities",
                        "one probability per state",
                    )
                    .into());
                }
                check_distribution(probabilities, "channel.probabilities")?;
            }
            ChannelMode::Markov {
                transition,
                initial,
            } => {
                if transition.len() != states.len() || *initial >= states.len() {
                    return Err(ConfigError::invalid(
                        "channel.transition",
                        "square matrix over states with a valid initial state",
                    )
                    .into());
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != states.len() {
                        return Err(ConfigError::invalid(
                            format!("channel.transition[{i}]"),
                            "row length differs from state count",
                        )
                        .into());
                    }
                    check_distribution(row, &format!("channel.transition[{i}]"))?;
                }
            }
            _ => {}
        }
        Ok(ChannelSpec { states, mode })
    }

    pub fn edge_count(&self) -> usize {
        self.states[0].mu.len()
    }

    /// Stationary state distribution.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        match &self.mode {
            ChannelMode::Constant => Ok(vec![1.0]),
            ChannelMode::Iid { probabilities } => Ok(probabilities.clone()),
            ChannelMode::Markov { transition, .. } => stationary_distribution(transition),
        }
    }

    /// Exact stationary expectations of capacity and cost factor.
    pub fn expected(&self) -> Result<ChannelState> {
        let pi = self.stationary()?;
        let m = self.edge_count();
        let mut mu = vec![0.0; m];
        let mut rho = vec![0.0; m];
        for (p, s) in pi.iter().zip(&self.states) {
            for k in 0..m {
                mu[k] += p * s.mu[k];
                rho[k] += p * s.rho[k];
            }
        }
        Ok(ChannelState { mu, rho })
    }

    pub fn start(&self, seed: u64) -> ChannelProcess {
        let current = match &self.mode {
            ChannelMode::Markov { initial, .. } => *initial,
            _ => 0,
        };
        ChannelProcess {
            spec: self.clone(),
            rng: rng_stream(seed, CHANNEL_STREAM),
            current,
            started: false,
        }
    }
}

/// Unique stationary distribution of a row-stochastic matrix.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = transition.len();
    let p = DMatrix::from_fn(n, n, |i, j| transition[i][j]);
    let a = p.transpose() - DMatrix::identity(n, n);
    if numerical_rank(&a) != n - 1 {
        return Err(Error::NotErgodic);
    }
    let mut stacked = DMatrix::zeros(n + 1, n);
    stacked.rows_mut(0, n).copy_from(&a);
    stacked.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let pi = stacked
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| Error::NotErgodic)?;
    Ok(pi.iter().map(|x| x.max(0.0)).collect())
}

/// A running channel process.
#[derive(Debug, Clone)]
pub struct ChannelProcess {
    spec: ChannelSpec,
    rng: ChaCha8Rng,
    current: usize,
    started: bool,
}

fn draw(rng: &mut ChaCha8Rng, probabilities: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl ChannelProcess {
    /// Advances one slot and returns the index of the new state.
    pub fn sample(&mut self) -> usize {
        match &self.spec.mode {
            ChannelMode::Constant => self.current = 0,
            ChannelMode::Iid { probabilities } => self.current = draw(&mut self.rng, probabilities),
            ChannelMode::Markov { transition, .. } => {
                if self.started {
                    self.current = draw(&mut self.rng, &transition[self.current]);
                }
            }
        }
        self.started = true;
        self.current
    }

    pub fn state(&self, index: usize) -> &ChannelState {
        &self.spec.states[index]
    }

    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }
}

/// Shannon capacity `bandwidth * log2(1 + power / noise)`, kept fractional.
pub fn shannon_capacity(power: f64, bandwidth: f64, noise: f64) -> Result<f64> {
    for (name, v) in [("power", power), ("bandwidth", bandwidth), ("noise", noise)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(ConfigError::invalid(name, "must be finite and > 0").into());
        }
    }
    Ok(bandwidth * (1.0 + power / noise).log2())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_arrivals_repeat() {
        let mut p = ArrivalSpec::deterministic(vec![1.0, 1.0]).unwrap().start(7);
        for _ in 0..10 {
            assert_eq!(p.sample(), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn bernoulli_zero_never_fires() {
        let spec = ArrivalSpec::new(ArrivalKind::Bernoulli, vec![0.0]).unwrap();
        let mut p = spec.start(1);
        assert!((0..1000).all(|_| p.sample()[0] == 0.0));
    }

    #[test]
    fn poisson_mean_matches_rate() {
        let spec = ArrivalSpec::new(ArrivalKind::Poisson, vec![2.0; 4]).unwrap();
        let mut p = spec.start(3);
        let n = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            for (s, x) in sums.iter_mut().zip(p.sample()) {
                assert!(x >= 0.0 && x.fract() == 0.0);
                *s += x;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 2.0).abs() < 0.02, "mean {}", s / n as f64);
        }
    }

    #[test]
    fn rejects_fractional_deterministic_rates() {
        assert!(ArrivalSpec::deterministic(vec![0.5]).is_err());
        assert!(ArrivalSpec::new(ArrivalKind::Bernoulli, vec![1.5]).is_err());
    }

    #[test]
    fn constant_channel() {
        let spec = ChannelSpec::constant(vec![3.0], vec![1.0]).unwrap();
        let mut c = spec.start(0);
        for _ in 0..5 {
            let s = c.sample();
            assert_eq!(c.state(s).mu, vec![3.0]);
        }
        assert_eq!(spec.expected().unwrap().mu, vec![3.0]);
    }

    fn two_state(mode: ChannelMode, lo: f64, hi: f64) -> ChannelSpec {
        ChannelSpec::new(
            vec![
                ChannelState {
                    mu: vec![lo],
                    rho: vec![1.0],
                },
                ChannelState {
                    mu: vec![hi],
                    rho: vec![1.0],
                },
            ],
            mode,
        )
        .unwrap()
    }

    #[test]
    fn iid_uniform_mean() {
        let spec = two_state(
            ChannelMode::Iid {
                probabilities: vec![0.5, 0.5],
            },
            2.0,
            18.0,
        );
        assert_eq!(spec.expected().unwrap().mu, vec![10.0]);
        let mut c = spec.start(11);
        let n = 100_000;
        let mut hits = 0usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = c.sample();
            hits += s;
            sum += c.state(s).mu[0];
        }
        assert!((sum / n as f64 - 10.0).abs() < 0.1);
        // frequency within three standard errors
        let se = (0.25f64 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn markov_stationary_mean() {
        let spec = two_state(
            ChannelMode::Markov {
                transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                initial: 0,
            },
            2.0,
            4.0,
        );
        let e = spec.expected().unwrap();
        assert!((e.mu[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn markov_identity_is_frozen_and_not_ergodic() {
        let spec = two_state(
            ChannelMode::Markov {
                transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                initial: 1,
            },
            2.0,
            4.0,
        );
        let mut c = spec.start(5);
        assert!((0..100).all(|_| c.sample() == 1));
        assert_eq!(spec.expected(), Err(Error::NotErgodic));
    }

    #[test]
    fn rejects_low_cost_factor() {
        assert!(ChannelSpec::constant(vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn shannon_values() {
        assert!((shannon_capacity(15.0, 5.0, 5.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((shannon_capacity(15.0, 5.0, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(shannon_capacity(15.0, 5.0, 1e12).unwrap() < 1e-9);
        assert!(shannon_capacity(0.0, 5.0, 1.0).is_err());
        assert!(shannon_capacity(1.0, -5.0, 1.0).is_err());
    }

    #[test]
    fn same_seed_same_path() {
        let spec = ArrivalSpec::new(ArrivalKind::Poisson, vec![1.5, 0.5]).unwrap();
        let (mut a, mut b) = (spec.start(42), spec.start(42));
        for _ in 0..100 {
            assert_eq!(a.sample(), b.sample());
        }
    }
}
