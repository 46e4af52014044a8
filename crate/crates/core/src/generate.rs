//! Random networks for property checks and the validation driver.

use crate::graph::Network;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random connected graph on `n` nodes with node `n - 1` as destination.
///
/// A random spanning tree gets random orientations, then up to `n` extra
/// edges are added between unlinked pairs.
pub fn connected_network<R: Rng>(rng: &mut R, n: usize) -> Network {
    assert!(n >= 2);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let linked = |edges: &[(usize, usize)], a: usize, b: usize| {
        edges.iter().any(|&e| e == (a, b) || e == (b, a))
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for i in 1..n {
        let (u, v) = (order[i], order[rng.random_range(0..i)]);
        edges.push(if rng.random_bool(0.5) { (u, v) } else { (v, u) });
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && !linked(&edges, a, b) {
            edges.push((a, b));
        }
    }
    Network::new(n, &edges, n - 1).expect("generated graph is simple")
}

/// Random graph where every node has a directed path to the destination
/// (node `n - 1`), plus extra edges in arbitrary directions.
pub fn sink_reachable_network<R: Rng>(rng: &mut R, n: usize) -> Network {
    assert!(n >= 2);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut placed = vec![n - 1];
    let mut rest: Vec<usize> = (0..n - 1).collect();
    rest.shuffle(rng);
    for v in rest {
        let parent = placed[rng.random_range(0..placed.len())];
        edges.push((v, parent));
        placed.push(v);
    }
    for _ in 0..rng.random_range(0..=n + 2) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && !edges.contains(&(a, b)) {
            edges.push((a, b));
        }
    }
    Network::new(n, &edges, n - 1).expect("generated graph is simple")
}

/// Non-negative sources; each node is silent with probability `p_zero`.
pub fn sources<R: Rng>(rng: &mut R, net: &Network, p_zero: f64) -> Vec<f64> {
    (0..net.reduced_len())
        .map(|_| {
            if rng.random_bool(p_zero) {
                0.0
            } else {
                rng.random_range(0.1..3.0)
            }
        })
        .collect()
}

/// Uniform values in `(lo, hi]`, one per edge.
pub fn edge_values<R: Rng>(rng: &mut R, net: &Network, lo: f64, hi: f64) -> Vec<f64> {
    (0..net.edge_count())
        .map(|_| hi - rng.random_range(0.0..(hi - lo)))
        .collect()
}
