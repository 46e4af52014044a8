//! Scenario files: a JSON document naming nodes by label, resolved into a
//! network, traffic and channel processes, interference model and policy.

use crate::channel::{
    rng_stream, shannon_capacity, ArrivalKind, ArrivalSpec, ChannelMode, ChannelSpec, ChannelState,
    DEFAULT_POISSON_CAP, NOISE_STREAM,
};
use crate::error::{ConfigError, Result};
use crate::graph::Network;
use crate::policy::Policy;
use crate::scheduling::{ConflictGraph, Interference, Scheduler, DEFAULT_ENUMERATION_CAP};
use crate::sim::{RunConfig, TrendTest};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Fixtures shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "two_queue_downlink",
        include_str!("../fixtures/two_queue_downlink.json"),
    ),
    ("lossy_link", include_str!("../fixtures/lossy_link.json")),
    (
        "parallel_routes",
        include_str!("../fixtures/parallel_routes.json"),
    ),
    (
        "power_minimization",
        include_str!("../fixtures/power_minimization.json"),
    ),
];

/// A scalar for a constant channel, or one value per channel state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Scalar(f64),
    PerState(Vec<f64>),
}

impl Values {
    fn at(&self, state: usize) -> f64 {
        match self {
            Values::Scalar(x) => *x,
            Values::PerState(v) => v[state],
        }
    }

    fn states(&self) -> Option<usize> {
        match self {
            Values::Scalar(_) => None,
            Values::PerState(v) => Some(v.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub from: String,
    pub to: String,
    /// Capacity in packets per slot; required unless a power block derives it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Values>,
    /// Cost factor; defaults to `etx`, then to the power rule, then to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etx: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Constant,
    Iid,
    Markov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub mode: ChannelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial: usize,
}

/// Shannon capacities from a fixed transmit power and per-link noise drawn
/// uniformly once per run seed; the cost factor is `kappa * power / mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub power: f64,
    pub bandwidth: f64,
    pub noise_low: f64,
    pub noise_high: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    pub kind: ArrivalKind,
    /// Mean packets per slot by node label; unlisted nodes get none.
    pub rates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InterferenceConfig {
    Khop(usize),
    /// Pairs of edge labels `"tail->head"`.
    Conflicts(Vec<(String, String)>),
}

fn default_horizon() -> usize {
    100_000
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_guard() -> f64 {
    1e7
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Slots excluded from averages; 20% of the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_guard")]
    pub guard: f64,
    #[serde(default)]
    pub trend: TrendTest,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
    /// Fall back to greedy max-weight scheduling above the enumeration cap.
    #[serde(default)]
    pub greedy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_queue: Option<BTreeMap<String, f64>>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            horizon: default_horizon(),
            burn_in: None,
            seeds: default_seeds(),
            guard: default_guard(),
            trend: TrendTest::default(),
            enumeration_cap: default_cap(),
            greedy: false,
            initial_queue: None,
        }
    }
}

impl RunSettings {
    pub fn burn_in_slots(&self) -> usize {
        self.burn_in.unwrap_or(self.horizon / 5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// HD with the grid value as `beta`.
    Beta,
    /// VBP with the grid value as `v`.
    V,
    /// The scenario's policy, with the grid value as the constant capacity
    /// of the named edge (`"tail->head"`).
    Capacity(String),
}

/// A parameter grid swept over the scenario's replication seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(ConfigError::invalid("sweep.grid", "grid is empty").into());
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(
                ConfigError::invalid("sweep.grid", "grid must be strictly increasing").into(),
            );
        }
        for (i, &x) in self.grid.iter().enumerate() {
            let ok = match self.axis {
                SweepAxis::Beta => (0.0..=1.0).contains(&x),
                SweepAxis::V | SweepAxis::Capacity(_) => x >= 0.0 && x.is_finite(),
            };
            if !ok {
                return Err(
                    ConfigError::invalid(format!("sweep.grid[{i}]"), "value out of range").into(),
                );
            }
        }
        Ok(())
    }

    /// The scenario at one grid point.
    pub fn apply(&self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut out = cfg.clone();
        match &self.axis {
            SweepAxis::Beta => out.policy = Policy::hd(value),
            SweepAxis::V => out.policy = Policy::Vbp { v: value },
            SweepAxis::Capacity(edge) => out.set_capacity(edge, value)?,
        }
        Ok(out)
    }
}

/// Scenario as written in a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub nodes: Vec<String>,
    pub destination: String,
    pub edges: Vec<EdgeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerConfig>,
    pub arrivals: ArrivalConfig,
    pub interference: InterferenceConfig,
    pub policy: Policy,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Values chosen here where the source setup leaves them open, with the reason.
    #[serde(default)]
    pub assumed: BTreeMap<String, String>,
}

/// A scenario with labels resolved to indices and processes built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub network: Network,
    pub arrivals: ArrivalSpec,
    pub channel: ChannelSpec,
    pub interference: Interference,
    pub policy: Policy,
    pub run: RunSettings,
    pub initial_queue: Option<Vec<f64>>,
}

impl Scenario {
    pub fn scheduler(&self) -> Result<Scheduler> {
        let conflicts = ConflictGraph::build(&self.network, &self.interference)?;
        Scheduler::new(conflicts, self.run.enumeration_cap, self.run.greedy)
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            horizon: self.run.horizon,
            burn_in: self.run.burn_in_slots(),
            seed,
            guard: self.run.guard,
            trend: self.run.trend,
            record_trace: false,
            initial_queue: self.initial_queue.clone(),
        }
    }
}

fn positive(field: impl Into<String>, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::invalid(field, "must be finite and > 0").into())
    }
}

impl ScenarioConfig {
    /// Edge label `"tail->head"` for the edge at `index`.
    pub fn edge_label(&self, index: usize) -> String {
        let e = &self.edges[index];
        format!("{}->{}", e.from, e.to)
    }

    /// Sets a constant capacity on the edge with the given label.
    pub fn set_capacity(&mut self, edge: &str, mu: f64) -> Result<()> {
        let i = (0..self.edges.len())
            .find(|&i| self.edge_label(i) == edge)
            .ok_or_else(|| ConfigError::UnknownLabel {
                field: "edges".into(),
                label: edge.into(),
            })?;
        self.edges[i].mu = Some(Values::Scalar(mu));
        Ok(())
    }

    /// Resolves labels and builds processes. Power-derived capacities depend on `seed`.
    pub fn resolve(&self, seed: u64) -> Result<Scenario> {
        let mut index = HashMap::new();
        for (i, label) in self.nodes.iter().enumerate() {
            if index.insert(label.as_str(), i).is_some() {
                return Err(ConfigError::DuplicateLabel {
                    field: format!("nodes[{i}]"),
                    label: label.clone(),
                }
                .into());
            }
        }
        let lookup = |field: String, label: &str| -> Result<usize> {
            index.get(label).copied().ok_or_else(|| {
                ConfigError::UnknownLabel {
                    field,
                    label: label.to_string(),
                }
                .into()
            })
        };
        let destination = lookup("destination".into(), &self.destination)?;
        let mut pairs = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            pairs.push((
                lookup(format!("edges[{i}].from"), &e.from)?,
                lookup(format!("edges[{i}].to"), &e.to)?,
            ));
        }
        let network = Network::with_labels(self.nodes.clone(), &pairs, destination)?;
        let channel = self.resolve_channel(seed)?;

        let mut rates = vec![0.0; network.reduced_len()];
        for (label, &rate) in &self.arrivals.rates {
            let node = lookup(format!("arrivals.rates.{label}"), label)?;
            let Some(r) = network.reduced_index(node) else {
                return Err(ConfigError::invalid(
                    format!("arrivals.rates.{label}"),
                    "the destination takes no arrivals",
                )
                .into());
            };
            rates[r] = rate;
        }
        let mut arrivals = ArrivalSpec::new(self.arrivals.kind, rates)?;
        arrivals.poisson_cap = self.arrivals.poisson_cap.unwrap_or(DEFAULT_POISSON_CAP);

        let interference = match &self.interference {
            InterferenceConfig::Khop(k) => Interference::Khop(*k),
            InterferenceConfig::Conflicts(list) => {
                let mut out = Vec::with_capacity(list.len());
                for (i, (x, y)) in list.iter().enumerate() {
                    let find = |label: &str, side: usize| -> Result<usize> {
                        (0..self.edges.len())
                            .find(|&k| self.edge_label(k) == label)
                            .ok_or_else(|| {
                                ConfigError::UnknownLabel {
                                    field: format!("interference.conflicts[{i}][{side}]"),
                                    label: label.to_string(),
                                }
                                .into()
                            })
                    };
                    out.push((find(x, 0)?, find(y, 1)?));
                }
                Interference::Conflicts(out)
            }
        };
        self.policy
            .validate()
            .map_err(|e| crate::Error::from(ConfigError::invalid("policy", e.to_string())))?;
        if self.run.horizon == 0 {
            return Err(ConfigError::invalid("run.horizon", "must be positive").into());
        }
        if self.run.burn_in_slots() >= self.run.horizon {
            return Err(ConfigError::invalid("run.burn_in", "must be below the horizon").into());
        }
        if self.run.seeds.is_empty() {
            return Err(ConfigError::invalid("run.seeds", "at least one seed").into());
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        let initial_queue = match &self.run.initial_queue {
            None => None,
            Some(map) => {
                let mut q = vec![0.0; network.reduced_len()];
                for (label, &v) in map {
                    let field = format!("run.initial_queue.{label}");
                    let node = lookup(field.clone(), label)?;
                    let Some(r) = network.reduced_index(node) else {
                        return Err(
                            ConfigError::invalid(field, "the destination has no queue").into()
                        );
                    };
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(ConfigError::invalid(field, "must be finite and >= 0").into());
                    }
                    q[r] = v;
                }
                Some(q)
            }
        };
        Ok(Scenario {
            id: self.id.clone(),
            network,
            arrivals,
            channel,
            interference,
            policy: self.policy,
            run: self.run.clone(),
            initial_queue,
        })
    }

    fn resolve_channel(&self, seed: u64) -> Result<ChannelSpec> {
        let mut states = None;
        for (i, e) in self.edges.iter().enumerate() {
            for (name, v) in [("mu", &e.mu), ("rho", &e.rho)] {
                if let Some(n) = v.as_ref().and_then(Values::states) {
                    match states {
                        None => states = Some(n),
                        Some(s) if s != n => {
                            return Err(ConfigError::invalid(
                                format!("edges[{i}].{name}"),
                                format!("expected {s} per-state values, found {n}"),
                            )
                            .into())
                        }
                        _ => {}
                    }
                }
            }
        }
        let count = states.unwrap_or(1);
        if count == 0 {
            return Err(ConfigError::invalid("edges", "per-state lists are empty").into());
        }

        let derived = match &self.power {
            None => None,
            Some(p) => {
                positive("power.power", p.power)?;
                positive("power.bandwidth", p.bandwidth)?;
                positive("power.noise_low", p.noise_low)?;
                positive("power.kappa", p.kappa)?;
                if !(p.noise_high >= p.noise_low) {
                    return Err(ConfigError::invalid("power.noise_high", "below noise_low").into());
                }
                let mut rng = rng_stream(seed, NOISE_STREAM);
                let mut out = Vec::with_capacity(self.edges.len());
                for _ in &self.edges {
                    let noise = if p.noise_high > p.noise_low {
                        rng.random_range(p.noise_low..=p.noise_high)
                    } else {
                        p.noise_low
                    };
                    let mu = shannon_capacity(p.power, p.bandwidth, noise)?;
                    out.push((mu, p.kappa * p.power / mu));
                }
                Some(out)
            }
        };

        let mut built = vec![
            ChannelState {
                mu: Vec::with_capacity(self.edges.len()),
                rho: Vec::with_capacity(self.edges.len()),
            };
            count
        ];
        for (i, e) in self.edges.iter().enumerate() {
            for (s, state) in built.iter_mut().enumerate() {
                let mu = match (&e.mu, &derived) {
                    (Some(v), _) => v.at(s),
                    (None, Some(d)) => d[i].0,
                    (None, None) => {
                        return Err(ConfigError::invalid(
                            format!("edges[{i}].mu"),
                            "capacity missing and no power block",
                        )
                        .into())
                    }
                };
                let rho = match (&e.rho, e.etx, &derived) {
                    (Some(v), _, _) => v.at(s),
                    (None, Some(etx), _) => etx,
                    (None, None, Some(d)) => d[i].1,
                    (None, None, None) => 1.0,
                };
                let field = match (&e.rho, e.etx) {
                    (None, Some(_)) => format!("edges[{i}].etx"),
                    _ => format!("edges[{i}].rho"),
                };
                if !(rho >= 1.0) {
                    return Err(ConfigError::CostBelowOne { field, value: rho }.into());
                }
                if !(mu >= 0.0) || !mu.is_finite() {
                    return Err(ConfigError::invalid(
                        format!("edges[{i}].mu"),
                        "capacity must be finite and >= 0",
                    )
                    .into());
                }
                state.mu.push(mu);
                state.rho.push(rho);
            }
        }

        let mode = match &self.channel {
            None if count == 1 => ChannelMode::Constant,
            None => {
                return Err(ConfigError::invalid(
                    "channel",
                    "per-state edge values need a channel block",
                )
                .into())
            }
            Some(c) => match c.mode {
                ChannelKind::Constant => ChannelMode::Constant,
                ChannelKind::Iid => ChannelMode::Iid {
                    probabilities: c
                        .probabilities
                        .clone()
                        .unwrap_or_else(|| vec![1.0 / count as f64; count]),
                },
                ChannelKind::Markov => ChannelMode::Markov {
                    transition: c.transition.clone().ok_or_else(|| {
                        ConfigError::invalid("channel.transition", "required for markov mode")
                    })?,
                    initial: c.initial,
                },
            },
        };
        ChannelSpec::new(built, mode)
    }
}

/// Parses a scenario document; errors name the offending field path.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Malformed {
            path,
            reason: e.into_inner().to_string(),
        }
    })?;
    cfg.resolve(cfg.run.seeds[0])?;
    Ok(cfg)
}

/// Text of a bundled fixture.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_scenario(&text)
}

/// A bundled fixture name, or else a path.
pub fn load_named_or_path(spec: &str) -> Result<ScenarioConfig> {
    match bundled(spec) {
        Some(text) => parse_scenario(text),
        None => load_scenario(Path::new(spec)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn bundled_fixtures_load() {
        for (name, _) in BUNDLED {
            let cfg = load_named_or_path(name).unwrap();
            assert_eq!(cfg.id, *name);
        }
    }

    #[test]
    fn two_queue_downlink_shape() {
        let cfg = load_named_or_path("two_queue_downlink").unwrap();
        let sc = cfg.resolve(1).unwrap();
        assert_eq!(sc.network.node_count(), 3);
        assert_eq!(sc.network.edge_count(), 2);
        let conflicts = ConflictGraph::build(&sc.network, &sc.interference).unwrap();
        assert!(conflicts.conflicts(0, 1));
    }

    #[test]
    fn lossy_link_uses_etx_as_cost() {
        let cfg = load_named_or_path("lossy_link").unwrap();
        let sc = cfg.resolve(1).unwrap();
        assert_eq!(sc.network.node_count(), 4);
        assert_eq!(sc.interference, Interference::Khop(1));
        for (i, e) in cfg.edges.iter().enumerate() {
            assert_eq!(sc.channel.states[0].rho[i], e.etx.unwrap());
        }
    }

    #[test]
    fn power_scenario_draws_noise_from_the_seed() {
        let cfg = load_named_or_path("power_minimization").unwrap();
        let a = cfg.resolve(1).unwrap();
        let b = cfg.resolve(1).unwrap();
        let c = cfg.resolve(2).unwrap();
        assert_eq!(a.channel, b.channel);
        assert_ne!(a.channel, c.channel);
        for s in &a.channel.states {
            assert!(s
                .mu
                .iter()
                .all(|&m| (10.0 - 1e-9..=20.0 + 1e-9).contains(&m)));
            assert!(s.rho.iter().all(|&r| r >= 1.0));
        }
    }

    fn minimal(rho: &str) -> String {
        format!(
            r#"{{"id":"t","nodes":["a","d"],"destination":"d",
            "edges":[{{"from":"a","to":"d","mu":1,"rho":{rho}}}],
            "arrivals":{{"kind":"deterministic","rates":{{"a":1}}}},
            "interference":{{"khop":1}},"policy":"bp"}}"#
        )
    }

    #[test]
    fn cost_below_one_is_rejected() {
        let err = parse_scenario(&minimal("0.5")).unwrap_err();
        assert_eq!(
            err,
            Error::Config(ConfigError::CostBelowOne {
                field: "edges[0].rho".into(),
                value: 0.5
            })
        );
        assert!(parse_scenario(&minimal("1")).is_ok());
    }

    #[test]
    fn unknown_label_names_the_field() {
        let text = minimal("1").replace(r#""to":"d""#, r#""to":"x""#);
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.to_string(), "edges[0].to: unknown label `x`");
    }

    #[test]
    fn missing_destination_is_malformed() {
        let text = minimal("1").replace(r#""destination":"d","#, "");
        match parse_scenario(&text).unwrap_err() {
            Error::Config(ConfigError::Malformed { reason, .. }) => {
                assert!(reason.contains("destination"))
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let text = minimal("1").replace(r#""mu":1"#, r#""mu":"fast""#);
        match parse_scenario(&text).unwrap_err() {
            Error::Config(ConfigError::Malformed { path, .. }) => assert_eq!(path, "edges[0].mu"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn per_state_values_need_matching_lengths() {
        let text = minimal("[1, 2]")
            .replace(r#""mu":1"#, r#""mu":[1, 2, 3]"#)
            .replace(r#""policy""#, r#""channel":{"mode":"iid"},"policy""#);
        assert!(parse_scenario(&text).is_err());
        let ok = minimal("[1, 2]")
            .replace(r#""mu":1"#, r#""mu":[1, 3]"#)
            .replace(r#""policy""#, r#""channel":{"mode":"iid"},"policy""#);
        let cfg = parse_scenario(&ok).unwrap();
        let sc = cfg.resolve(1).unwrap();
        assert_eq!(sc.channel.expected().unwrap().mu, vec![2.0]);
    }
}
