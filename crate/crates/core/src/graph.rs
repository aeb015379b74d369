//! Undirected weighted graph whose nodes carry geographic positions.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoNode {
    pub id: usize,
    pub x_km: f64,
    pub y_km: f64,
    pub lat: f64,
    pub lon: f64,
}

impl GeoNode {
    /// Node at planar position `(x_km, y_km)` with lat/lon left at zero.
    pub fn at(id: usize, x_km: f64, y_km: f64) -> Self {
        Self {
            id,
            x_km,
            y_km,
            lat: 0.0,
            lon: 0.0,
        }
    }

    pub fn distance_km(&self, other: &GeoNode) -> f64 {
        (self.x_km - other.x_km).hypot(self.y_km - other.y_km)
    }
}

/// Nodes of a grid, in id order.
pub fn nodes_of(grid: &GridSeries) -> Vec<GeoNode> {
    grid.cells
        .iter()
        .map(|c| GeoNode {
            id: c.id,
            x_km: c.x_km,
            y_km: c.y_km,
            lat: c.lat,
            lon: c.lon,
        })
        .collect()
}

/// `count` nodes on a horizontal line at 1 km spacing.
pub fn line_nodes(count: usize) -> Vec<GeoNode> {
    (0..count).map(|i| GeoNode::at(i, i as f64, 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGraph {
    pub label: String,
    pub nodes: Vec<GeoNode>,
    /// Sorted by `(i, j)` with `i < j`.
    pub edges: Vec<Edge>,
}

impl GeoGraph {
    /// Normalizes endpoint order, sorts edges and checks the invariants:
    /// no self-loops, no duplicates, valid endpoints, finite weights.
    pub fn new(label: impl Into<String>, nodes: Vec<GeoNode>, edges: Vec<Edge>) -> Result<Self> {
        for (k, node) in nodes.iter().enumerate() {
            if node.id != k {
                return Err(Error::InvalidParameter(format!(
                    "node ids must be contiguous from 0 (position {k} has id {})",
                    node.id
                )));
            }
        }
        let n = nodes.len();
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| Edge {
                i: e.i.min(e.j),
                j: e.i.max(e.j),
                weight: e.weight,
            })
            .collect();
        for e in &edges {
            if e.i == e.j {
                return Err(Error::InvalidParameter(format!("self-loop at node {}", e.i)));
            }
            if e.j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) references a node outside 0..{n}",
                    e.i, e.j
                )));
            }
            if !e.weight.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) has non-finite weight",
                    e.i, e.j
                )));
            }
        }
        edges.sort_by_key(|e| (e.i, e.j));
        if let Some(w) = edges.windows(2).find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::InvalidParameter(format!(
                "duplicate edge ({}, {})",
                w[0].i, w[0].j
            )));
        }
        Ok(Self {
            label: label.into(),
            nodes,
            edges,
        })
    }

    /// Unweighted graph from an endpoint list; nodes on a 1 km line.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let edges = pairs
            .iter()
            .map(|&(i, j)| Edge { i, j, weight: 1.0 })
            .collect();
        Self::new("", line_nodes(n), edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.i] += 1;
            deg[e.j] += 1;
        }
        deg
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    pub fn weight_range(&self) -> Option<(f64, f64)> {
        self.edges.iter().fold(None, |acc, e| match acc {
            None => Some((e.weight, e.weight)),
            Some((lo, hi)) => Some((lo.min(e.weight), hi.max(e.weight))),
        })
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    pub fn edge_length_km(&self, e: &Edge) -> f64 {
        self.nodes[e.i].distance_km(&self.nodes[e.j])
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::new(self.nodes.len(), self.edges.iter().map(|e| (e.i, e.j)))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Compressed adjacency lists of a simple undirected graph.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    pub fn new(n: usize, edges: impl Iterator<Item = (usize, usize)> + Clone) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for (i, j) in edges.clone() {
            offsets[i + 1] += 1;
            offsets[j + 1] += 1;
        }
        for k in 0..n {
            offsets[k + 1] += offsets[k];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0usize; offsets[n]];
        for (i, j) in edges {
            targets[fill[i]] = j;
            fill[i] += 1;
            targets[fill[j]] = i;
            fill[j] += 1;
        }
        for k in 0..n {
            targets[offsets[k]..offsets[k + 1]].sort_unstable();
        }
        Self { offsets, targets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Hop distances from `source`; `usize::MAX` marks unreachable nodes.
    /// `dist` and `queue` are scratch buffers reused across calls.
    pub fn bfs(&self, source: usize, dist: &mut Vec<usize>, queue: &mut VecDeque<usize>) {
        dist.clear();
        dist.resize(self.len(), usize::MAX);
        queue.clear();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let next = dist[v] + 1;
            for &w in self.neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = next;
                    queue.push_back(w);
                }
            }
        }
    }

    /// Component label per node, labels numbered in order of smallest member.
    pub fn component_labels(&self) -> (Vec<usize>, usize) {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut stack = Vec::new();
        let mut count = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in self.neighbors(v) {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }
}
