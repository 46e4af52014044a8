//! Interference models, maximal schedule enumeration and max-weight selection.

use crate::error::{ConfigError, Error, Result};
use crate::graph::Network;
use serde::{Deserialize, Serialize};

/// Default bound on `|E|` for exhaustive enumeration of maximal schedules.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

/// Which link pairs may not be active in the same slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interference {
    /// Links conflict when they share a node or their closest endpoints are
    /// fewer than `K` hops apart.
    Khop(usize),
    /// Explicit conflicting edge pairs. Links with a common transmitter are
    /// always added.
    Conflicts(Vec<(usize, usize)>),
}

/// Symmetric, irreflexive conflict relation over edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictGraph {
    adj: Vec<Vec<bool>>,
}

impl ConflictGraph {
    pub fn build(net: &Network, model: &Interference) -> Result<Self> {
        let m = net.edge_count();
        let mut adj = vec![vec![false; m]; m];
        let edges = net.edges();
        match model {
            Interference::Khop(k) => {
                if *k == 0 {
                    return Err(ConfigError::invalid("interference.khop", "K must be >= 1").into());
                }
                let dist = net.hop_distances();
                for i in 0..m {
                    for j in (i + 1)..m {
                        let (a, b) = (edges[i], edges[j]);
                        let hop = [
                            (a.tail, b.tail),
                            (a.tail, b.head),
                            (a.head, b.tail),
                            (a.head, b.head),
                        ]
                        .iter()
                        .filter_map(|&(u, v)| dist[u][v])
                        .min();
                        if matches!(hop, Some(h) if h < *k) {
                            adj[i][j] = true;
                            adj[j][i] = true;
                        }
                    }
                }
            }
            Interference::Conflicts(pairs) => {
                for &(i, j) in pairs {
                    if i >= m || j >= m {
                        return Err(ConfigError::invalid(
                            "interference.conflicts",
                            format!("edge index out of range in ({i}, {j})"),
                        )
                        .into());
                    }
                    if i != j {
                        adj[i][j] = true;
                        adj[j][i] = true;
                    }
                }
                for i in 0..m {
                    for j in (i + 1)..m {
                        if edges[i].tail == edges[j].tail {
                            adj[i][j] = true;
                            adj[j][i] = true;
                        }
                    }
                }
            }
        }
        Ok(ConflictGraph { adj })
    }

    /// Conflict graph from an adjacency matrix, used for abstract tests.
    pub fn from_pairs(edges: usize, pairs: &[(usize, usize)]) -> Self {
        let mut adj = vec![vec![false; edges]; edges];
        for &(i, j) in pairs {
            if i != j {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
        ConflictGraph { adj }
    }

    pub fn edge_count(&self) -> usize {
        self.adj.len()
    }

    pub fn conflicts(&self, i: usize, j: usize) -> bool {
        self.adj[i][j]
    }

    /// No two active links conflict.
    pub fn is_independent(&self, active: &[bool]) -> bool {
        let on: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
        on.iter()
            .enumerate()
            .all(|(a, &i)| on[a + 1..].iter().all(|&j| !self.adj[i][j]))
    }

    /// Independent, and no inactive link can be added.
    pub fn is_maximal(&self, active: &[bool]) -> bool {
        self.is_independent(active)
            && (0..active.len())
                .filter(|&i| !active[i])
                .all(|i| (0..active.len()).any(|j| active[j] && self.adj[i][j]))
    }
}

/// The collection of all maximal schedules, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSet {
    schedules: Vec<Vec<bool>>,
}

impl ScheduleSet {
    /// Enumerates every maximal independent set of the conflict graph.
    ///
    /// Schedules are ordered lexicographically by their sorted edge lists.
    pub fn enumerate(conflicts: &ConflictGraph, cap: usize) -> Result<Self> {
        let m = conflicts.edge_count();
        if m > cap || m > 64 {
            return Err(Error::EnumerationCap {
                edges: m,
                cap: cap.min(64),
            });
        }
        // Bron-Kerbosch with pivoting on the complement graph: its maximal
        // cliques are the maximal independent sets of the conflict graph.
        let compat: Vec<u64> = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i && !conflicts.adj[i][j])
                    .fold(0u64, |acc, j| acc | (1 << j))
            })
            .collect();
        let mut found = Vec::new();
        let all = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
        bron_kerbosch(0, all, 0, &compat, &mut found);
        let mut lists: Vec<Vec<usize>> = found
            .into_iter()
            .map(|mask| (0..m).filter(|&i| mask >> i & 1 == 1).collect())
            .collect();
        lists.sort();
        let schedules = lists
            .into_iter()
            .map(|l| {
                let mut v = vec![false; m];
                for i in l {
                    v[i] = true;
                }
                v
            })
            .collect();
        Ok(ScheduleSet { schedules })
    }

    pub fn from_schedules(schedules: Vec<Vec<bool>>) -> Self {
        ScheduleSet { schedules }
    }

    pub fn len(&self) -> usize {
        self.schedules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedules.is_empty()
    }

    pub fn get(&self, index: usize) -> &[bool] {
        &self.schedules[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[bool]> {
        self.schedules.iter().map(|s| s.as_slice())
    }

    /// Index of `argmax πᵀw`; ties go to the lowest index.
    pub fn max_weight(&self, w: &[f64]) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.schedules.iter().enumerate() {
            let score = weight_of(s, w);
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((i, score)),
            }
        }
        best.map(|(i, _)| i).ok_or(Error::EmptyScheduleSet)
    }
}

fn weight_of(active: &[bool], w: &[f64]) -> f64 {
    active
        .iter()
        .zip(w)
        .filter(|(a, _)| **a)
        .map(|(_, x)| *x)
        .sum()
}

fn bron_kerbosch(r: u64, mut p: u64, mut x: u64, adj: &[u64], out: &mut Vec<u64>) {
    if p == 0 {
        if x == 0 {
            out.push(r);
        }
        return;
    }
    let pivot_pool = p | x;
    let pivot = (0..64)
        .filter(|&u| pivot_pool >> u & 1 == 1)
        .max_by_key(|&u| (adj[u] & p).count_ones())
        .unwrap_or(0);
    let mut candidates = p & !adj[pivot];
    while candidates != 0 {
        let v = candidates.trailing_zeros() as usize;
        let bit = 1u64 << v;
        candidates &= !bit;
        bron_kerbosch(r | bit, p & adj[v], x & adj[v], adj, out);
        p &= !bit;
        x |= bit;
    }
}

/// Greedy maximal schedule: scan links by descending weight, ties by index.
pub fn greedy_schedule(conflicts: &ConflictGraph, w: &[f64]) -> Vec<bool> {
    let m = conflicts.edge_count();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut active = vec![false; m];
    for i in order {
        if (0..m).all(|j| !active[j] || !conflicts.adj[i][j]) {
            active[i] = true;
        }
    }
    active
}

/// How a run picks its schedule each slot.
#[derive(Debug, Clone)]
pub enum Scheduler {
    Enumerated(ScheduleSet),
    Greedy(ConflictGraph),
}

impl Scheduler {
    /// Enumerates when `|E|` is within `cap`, greedy otherwise only if `allow_greedy`.
    pub fn new(conflicts: ConflictGraph, cap: usize, allow_greedy: bool) -> Result<Self> {
        match ScheduleSet::enumerate(&conflicts, cap) {
            Ok(set) => Ok(Scheduler::Enumerated(set)),
            Err(Error::EnumerationCap { .. }) if allow_greedy => Ok(Scheduler::Greedy(conflicts)),
            Err(e) => Err(e),
        }
    }

    /// Chosen activation and, when enumerated, its index in Π.
    pub fn select(&self, w: &[f64]) -> Result<(Vec<bool>, Option<usize>)> {
        match self {
            Scheduler::Enumerated(set) => {
                let i = set.max_weight(w)?;
                Ok((set.get(i).to_vec(), Some(i)))
            }
            Scheduler::Greedy(c) => Ok((greedy_schedule(c, w), None)),
        }
    }

    pub fn schedule_set(&self) -> Option<&ScheduleSet> {
        match self {
            Scheduler::Enumerated(s) => Some(s),
            Scheduler::Greedy(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_mis(c: &ConflictGraph) -> Vec<Vec<bool>> {
        let m = c.edge_count();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for mask in 0u32..(1 << m) {
            let v: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
            if c.is_maximal(&v) {
                out.push((0..m).filter(|&i| v[i]).collect());
            }
        }
        out.sort();
        out.into_iter()
            .map(|l| (0..m).map(|i| l.contains(&i)).collect())
            .collect()
    }

    #[test]
    fn downlink_edges_conflict() {
        // 0 -> 2 and 1 -> 2 share the destination
        let net = Network::new(3, &[(0, 2), (1, 2)], 2).unwrap();
        let c = ConflictGraph::build(&net, &Interference::Khop(1)).unwrap();
        assert!(c.conflicts(0, 1));
        let set = ScheduleSet::enumerate(&c, 24).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn disjoint_edges_do_not_conflict() {
        let net = Network::new(4, &[(0, 1), (2, 3)], 3).unwrap();
        let c = ConflictGraph::build(&net, &Interference::Khop(1)).unwrap();
        assert!(!c.conflicts(0, 1));
    }

    #[test]
    fn two_hop_path() {
        // 0 -> 1 -> 2 -> 3(dest): edges (0,1) and (2,3) are one hop apart
        let net = Network::new(4, &[(0, 1), (1, 2), (2, 3)], 3).unwrap();
        let one = ConflictGraph::build(&net, &Interference::Khop(1)).unwrap();
        assert!(!one.conflicts(0, 2));
        let two = ConflictGraph::build(&net, &Interference::Khop(2)).unwrap();
        assert!(two.conflicts(0, 2));
    }

    #[test]
    fn explicit_mode_adds_common_transmitter() {
        let net = Network::new(3, &[(0, 1), (0, 2), (1, 2)], 2).unwrap();
        let c = ConflictGraph::build(&net, &Interference::Conflicts(vec![])).unwrap();
        assert!(c.conflicts(0, 1));
        assert!(!c.conflicts(0, 2));
        assert!(!c.conflicts(1, 2));
    }

    #[test]
    fn small_enumerations() {
        let pair = ConflictGraph::from_pairs(2, &[(0, 1)]);
        let s = ScheduleSet::enumerate(&pair, 24).unwrap();
        assert_eq!(
            s.iter().collect::<Vec<_>>(),
            vec![&[true, false][..], &[false, true][..]]
        );

        let free = ConflictGraph::from_pairs(3, &[]);
        let s = ScheduleSet::enumerate(&free, 24).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(0), &[true, true, true]);

        let cycle = ConflictGraph::from_pairs(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let s = ScheduleSet::enumerate(&cycle, 24).unwrap();
        assert_eq!(
            s.iter().map(|x| x.to_vec()).collect::<Vec<_>>(),
            brute_force_mis(&cycle)
        );
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn empty_edge_set_has_one_empty_schedule() {
        let c = ConflictGraph::from_pairs(0, &[]);
        let s = ScheduleSet::enumerate(&c, 24).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.max_weight(&[]).unwrap(), 0);
    }

    #[test]
    fn cap_is_enforced() {
        let c = ConflictGraph::from_pairs(5, &[]);
        assert!(matches!(
            ScheduleSet::enumerate(&c, 4),
            Err(Error::EnumerationCap { edges: 5, cap: 4 })
        ));
        assert!(matches!(
            Scheduler::new(c, 4, true),
            Ok(Scheduler::Greedy(_))
        ));
    }

    #[test]
    fn max_weight_ties_and_choice() {
        let pair = ConflictGraph::from_pairs(2, &[(0, 1)]);
        let s = ScheduleSet::enumerate(&pair, 24).unwrap();
        assert_eq!(s.max_weight(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(s.max_weight(&[2.25, 1.0]).unwrap(), 0);
        assert_eq!(s.max_weight(&[1.0, 2.25]).unwrap(), 1);
        assert_eq!(
            ScheduleSet::from_schedules(vec![]).max_weight(&[]),
            Err(Error::EmptyScheduleSet)
        );
    }

    #[test]
    fn greedy_basics() {
        let single = ConflictGraph::from_pairs(1, &[]);
        assert_eq!(greedy_schedule(&single, &[0.0]), vec![true]);
        let c = ConflictGraph::from_pairs(3, &[(0, 2), (1, 2)]);
        assert_eq!(
            greedy_schedule(&c, &[5.0, 1.0, 3.0]),
            vec![true, true, false]
        );
    }
}
