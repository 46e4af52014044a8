//! Directed connectivity graphs with a single destination.
//!
//! Node vectors in the rest of the crate are *reduced*: they skip the
//! destination, whose queue is identically zero. [`Network::reduced_index`]
//! maps a node to its slot in a reduced vector.

use crate::error::{ConfigError, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::{HashSet, VecDeque};

/// A directed link `tail -> head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

/// Simple directed graph with a designated destination node.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_count: usize,
    edges: Vec<Edge>,
    destination: usize,
    labels: Vec<String>,
    /// reduced row of each node, `None` for the destination
    reduced: Vec<Option<usize>>,
    /// node of each reduced row
    nodes_of_rows: Vec<usize>,
}

impl Network {
    /// Builds a network from `(tail, head)` pairs. Labels default to the node index.
    pub fn new(node_count: usize, edges: &[(usize, usize)], destination: usize) -> Result<Self> {
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        Self::with_labels(labels, edges, destination)
    }

    pub fn with_labels(
        labels: Vec<String>,
        edges: &[(usize, usize)],
        destination: usize,
    ) -> Result<Self> {
        let node_count = labels.len();
        if destination >= node_count {
            return Err(ConfigError::NodeOutOfRange(destination).into());
        }
        let mut seen = HashSet::new();
        let mut list = Vec::with_capacity(edges.len());
        for &(tail, head) in edges {
            for v in [tail, head] {
                if v >= node_count {
                    return Err(ConfigError::NodeOutOfRange(v).into());
                }
            }
            if tail == head {
                return Err(ConfigError::SelfLoop(tail).into());
            }
            if !seen.insert((tail, head)) {
                return Err(ConfigError::DuplicateEdge(tail, head).into());
            }
            list.push(Edge { tail, head });
        }
        let mut reduced = vec![None; node_count];
        let mut nodes_of_rows = Vec::with_capacity(node_count.saturating_sub(1));
        for (v, slot) in reduced.iter_mut().enumerate() {
            if v != destination {
                *slot = Some(nodes_of_rows.len());
                nodes_of_rows.push(v);
            }
        }
        Ok(Network {
            node_count,
            edges: list,
            destination,
            labels,
            reduced,
            nodes_of_rows,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Length of reduced node vectors, `|V| - 1`.
    pub fn reduced_len(&self) -> usize {
        self.nodes_of_rows.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Edge {
        self.edges[id]
    }

    pub fn destination(&self) -> usize {
        self.destination
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn edge_label(&self, id: usize) -> String {
        let e = self.edges[id];
        format!("{}->{}", self.labels[e.tail], self.labels[e.head])
    }

    pub fn edge_id(&self, tail: usize, head: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.tail == tail && e.head == head)
    }

    pub fn reduced_index(&self, node: usize) -> Option<usize> {
        self.reduced[node]
    }

    /// Node id of reduced row `row`.
    pub fn node_of_row(&self, row: usize) -> usize {
        self.nodes_of_rows[row]
    }

    pub fn head_is_destination(&self, id: usize) -> bool {
        self.edges[id].head == self.destination
    }

    /// Value of `node` in a reduced vector; the destination reads zero.
    #[inline]
    pub fn value_at(&self, reduced: &[f64], node: usize) -> f64 {
        match self.reduced[node] {
            Some(r) => reduced[r],
            None => 0.0,
        }
    }

    /// Node-edge incidence matrix: `+1` at the tail, `-1` at the head.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.node_count, self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            b[(e.tail, k)] = 1.0;
            b[(e.head, k)] = -1.0;
        }
        b
    }

    /// Incidence matrix with the destination row removed.
    pub fn reduced_incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.reduced_len(), self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            if let Some(r) = self.reduced[e.tail] {
                b[(r, k)] = 1.0;
            }
            if let Some(r) = self.reduced[e.head] {
                b[(r, k)] = -1.0;
            }
        }
        b
    }

    /// Net outflow `B◦ f` at every non-destination node.
    pub fn net_outflow(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.reduced_len()];
        for (e, &x) in self.edges.iter().zip(f) {
            if let Some(r) = self.reduced[e.tail] {
                out[r] += x;
            }
            if let Some(r) = self.reduced[e.head] {
                out[r] -= x;
            }
        }
        out
    }

    /// Edge differentials `B◦ᵀ q`, i.e. `q_tail - q_head` with the destination at zero.
    pub fn differentials(&self, q: &[f64]) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| self.value_at(q, e.tail) - self.value_at(q, e.head))
            .collect()
    }

    pub fn differentials_dv(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.differentials(q.as_slice()))
    }

    /// Undirected adjacency lists over all nodes.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            adj[e.tail].push(e.head);
            adj[e.head].push(e.tail);
        }
        adj
    }

    /// Hop distances between all node pairs in the undirected support graph.
    pub fn hop_distances(&self) -> Vec<Vec<Option<usize>>> {
        let adj = self.undirected_neighbors();
        (0..self.node_count)
            .map(|s| {
                let mut dist = vec![None; self.node_count];
                dist[s] = Some(0);
                let mut queue = VecDeque::from([s]);
                while let Some(u) = queue.pop_front() {
                    let du = dist[u].unwrap_or(0);
                    for &v in &adj[u] {
                        if dist[v].is_none() {
                            dist[v] = Some(du + 1);
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// True when every node has an undirected path to the destination.
    pub fn is_connected_to_destination(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.tail), find(&mut parent, e.head));
            if a != b {
                parent[a] = b;
            }
        }
        let root = find(&mut parent, self.destination);
        (0..self.node_count).all(|v| find(&mut parent, v) == root)
    }

    /// For every node, whether a directed path leads from it to the destination.
    pub fn reaches_destination(&self) -> Vec<bool> {
        let mut reach = vec![false; self.node_count];
        reach[self.destination] = true;
        let mut queue = VecDeque::from([self.destination]);
        while let Some(v) = queue.pop_front() {
            for e in &self.edges {
                if e.head == v && !reach[e.tail] {
                    reach[e.tail] = true;
                    queue.push_back(e.tail);
                }
            }
        }
        reach
    }

    /// For every node, the first edge of a shortest directed path to the destination.
    pub fn next_hop_to_destination(&self) -> Vec<Option<usize>> {
        let mut next = vec![None; self.node_count];
        let mut seen = vec![false; self.node_count];
        seen[self.destination] = true;
        let mut queue = VecDeque::from([self.destination]);
        while let Some(v) = queue.pop_front() {
            for (k, e) in self.edges.iter().enumerate() {
                if e.head == v && !seen[e.tail] {
                    seen[e.tail] = true;
                    next[e.tail] = Some(k);
                    queue.push_back(e.tail);
                }
            }
        }
        next
    }
}

/// Numerical rank of a dense matrix from its singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> Network {
        // 0 -> 1 -> 2 (destination)
        Network::new(3, &[(0, 1), (1, 2)], 2).unwrap()
    }

    #[test]
    fn incidence_of_single_edge() {
        let net = Network::new(2, &[(0, 1)], 1).unwrap();
        let b = net.incidence();
        assert_eq!(b.column(0).as_slice(), &[1.0, -1.0]);
        assert_eq!(
            net.reduced_incidence(),
            DMatrix::from_row_slice(1, 1, &[1.0])
        );
    }

    #[test]
    fn empty_edge_set() {
        let net = Network::new(3, &[], 0).unwrap();
        assert_eq!(net.incidence().shape(), (3, 0));
        assert_eq!(net.reduced_incidence().shape(), (2, 0));
    }

    #[test]
    fn path_incidence() {
        let net = path();
        let b = net.incidence();
        assert_eq!(b.column(0).as_slice(), &[1.0, -1.0, 0.0]);
        assert_eq!(b.column(1).as_slice(), &[0.0, 1.0, -1.0]);
        let r = net.reduced_incidence();
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 1.0]));
    }

    #[test]
    fn isolated_node_drops_rank() {
        let net = Network::new(3, &[(0, 2)], 2).unwrap();
        assert_eq!(numerical_rank(&net.reduced_incidence()), 1);
        assert!(!net.is_connected_to_destination());
    }

    #[test]
    fn outflow_on_path() {
        let net = path();
        assert_eq!(net.net_outflow(&[1.0, 1.0]), vec![1.0, 0.0]);
        assert_eq!(net.net_outflow(&[0.0, 0.0]), vec![0.0, 0.0]);
        let single = Network::new(2, &[(0, 1)], 1).unwrap();
        assert_eq!(single.net_outflow(&[3.0]), vec![3.0]);
    }

    #[test]
    fn rejects_non_simple_graphs() {
        assert!(Network::new(2, &[(0, 0)], 1).is_err());
        assert!(Network::new(2, &[(0, 1), (0, 1)], 1).is_err());
        assert!(Network::new(2, &[(0, 2)], 1).is_err());
        assert!(Network::new(2, &[(0, 1)], 5).is_err());
    }

    #[test]
    fn directed_reachability() {
        // 1 only has an incoming edge from the destination
        let net = Network::new(3, &[(0, 2), (2, 1)], 2).unwrap();
        assert_eq!(net.reaches_destination(), vec![true, false, true]);
        assert_eq!(net.next_hop_to_destination()[0], Some(0));
    }
}
