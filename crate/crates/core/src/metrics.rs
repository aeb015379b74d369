//! Topological metric suite: mean shortest path, mean clustering, diameter,
//! heterogeneity, and component structure.
//!
//! Paths are hop counts. On disconnected graphs the mean shortest path and
//! the diameter range over reachable pairs only. Nodes of degree < 2 have
//! local clustering 0 and are included in the mean.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, GeoGraph};
use crate::nullmodels::{er_analytics, ErAnalytics};

/// Integer aggregates of a BFS from every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathStats {
    /// Unordered reachable pairs.
    pub pairs: u64,
    pub total_hops: u64,
    pub max_hops: usize,
}

pub fn path_stats(adj: &Adjacency) -> PathStats {
    (0..adj.len())
        .into_par_iter()
        .map_init(
            || (Vec::new(), VecDeque::new()),
            |(dist, queue), s| {
                adj.bfs(s, dist, queue);
                let mut out = PathStats::default();
                for &d in &dist[s + 1..] {
                    if d != usize::MAX {
                        out.pairs += 1;
                        out.total_hops += d as u64;
                        out.max_hops = out.max_hops.max(d);
                    }
                }
                out
            },
        )
        .reduce(PathStats::default, |a, b| PathStats {
            pairs: a.pairs + b.pairs,
            total_hops: a.total_hops + b.total_hops,
            max_hops: a.max_hops.max(b.max_hops),
        })
}

pub fn mean_shortest_path(g: &GeoGraph) -> Result<f64> {
    let stats = path_stats(&g.adjacency());
    if stats.pairs == 0 {
        return Err(Error::UndefinedMetric("mean shortest path"));
    }
    Ok(stats.total_hops as f64 / stats.pairs as f64)
}

pub fn diameter(g: &GeoGraph) -> Result<usize> {
    if g.edges.is_empty() {
        return Err(Error::UndefinedMetric("diameter"));
    }
    Ok(path_stats(&g.adjacency()).max_hops)
}

pub fn local_clustering(adj: &Adjacency) -> Vec<f64> {
    (0..adj.len())
        .into_par_iter()
        .map_init(
            || vec![false; adj.len()],
            |mark, v| {
                let nbrs = adj.neighbors(v);
                let k = nbrs.len();
                if k < 2 {
                    return 0.0;
                }
                for &u in nbrs {
                    mark[u] = true;
                }
                let mut links = 0usize;
                for &u in nbrs {
                    links += adj.neighbors(u).iter().filter(|&&w| w > u && mark[w]).count();
                }
                for &u in nbrs {
                    mark[u] = false;
                }
                2.0 * links as f64 / (k * (k - 1)) as f64
            },
        )
        .collect()
}

/// Mean local clustering over all nodes (0 for an empty graph).
pub fn mean_clustering(g: &GeoGraph) -> f64 {
    let local = local_clustering(&g.adjacency());
    if local.is_empty() {
        return 0.0;
    }
    local.iter().sum::<f64>() / local.len() as f64
}

/// `<k^2> / <k>^2` of a degree sequence.
pub fn heterogeneity_of_degrees(degrees: &[usize]) -> Result<f64> {
    let sum: u64 = degrees.iter().map(|&k| k as u64).sum();
    if sum == 0 {
        return Err(Error::UndefinedMetric("heterogeneity"));
    }
    let sum_sq: u64 = degrees.iter().map(|&k| (k as u64) * (k as u64)).sum();
    // N * sum(k^2) / (sum k)^2, one rounding per factor
    let n = degrees.len() as f64;
    Ok(n * sum_sq as f64 / (sum as f64 * sum as f64))
}

pub fn heterogeneity(g: &GeoGraph) -> Result<f64> {
    heterogeneity_of_degrees(&g.degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub num_components: usize,
    pub giant_size: usize,
    pub singletons: usize,
}

pub fn components(g: &GeoGraph) -> ComponentSummary {
    let (labels, count) = g.adjacency().component_labels();
    let mut sizes = vec![0usize; count];
    for l in labels {
        sizes[l] += 1;
    }
    ComponentSummary {
        num_components: count,
        giant_size: sizes.iter().copied().max().unwrap_or(0),
        singletons: sizes.iter().filter(|&&s| s == 1).count(),
    }
}

/// One network's row of the metric table. Metrics that are undefined for
/// the graph (e.g. path lengths of an edgeless graph) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub n: usize,
    pub l_edges: usize,
    pub weight_min: Option<f64>,
    pub weight_max: Option<f64>,
    pub mean_shortest_path: Option<f64>,
    pub mean_clustering: f64,
    pub diameter: Option<usize>,
    pub kappa: Option<f64>,
    pub num_components: usize,
    pub giant_component_size: usize,
    pub singletons: usize,
    pub er: Option<ErAnalytics>,
}

pub fn full_report(g: &GeoGraph) -> MetricsReport {
    let adj = g.adjacency();
    let stats = path_stats(&adj);
    let comps = components(g);
    let range = g.weight_range();
    let local = local_clustering(&adj);
    let mean_c = if local.is_empty() {
        0.0
    } else {
        local.iter().sum::<f64>() / local.len() as f64
    };
    MetricsReport {
        label: g.label.clone(),
        n: g.node_count(),
        l_edges: g.edge_count(),
        weight_min: range.map(|r| r.0),
        weight_max: range.map(|r| r.1),
        mean_shortest_path: (stats.pairs > 0)
            .then(|| stats.total_hops as f64 / stats.pairs as f64),
        mean_clustering: mean_c,
        diameter: (!g.edges.is_empty()).then_some(stats.max_hops),
        kappa: heterogeneity(g).ok(),
        num_components: comps.num_components,
        giant_component_size: comps.giant_size,
        singletons: comps.singletons,
        er: er_analytics(g.node_count(), g.edge_count()).ok(),
    }
}

/// A row of the comparison table, in column order
/// `network,L,weight_min,weight_max,mean_l,mean_c,D,kappa,NC,GC,ST,l_rand,c_rand`.
/// Ensemble rows carry a fractional mean diameter and no component counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub network: String,
    pub l_edges: usize,
    pub weight_min: Option<f64>,
    pub weight_max: Option<f64>,
    pub mean_l: Option<f64>,
    pub mean_c: Option<f64>,
    pub diameter: Option<f64>,
    pub kappa: Option<f64>,
    pub nc: Option<usize>,
    pub gc: Option<usize>,
    pub st: Option<usize>,
    pub l_rand: Option<f64>,
    pub c_rand: Option<f64>,
}

pub const TABLE_HEADER: &str = "network,L,weight_min,weight_max,mean_l,mean_c,D,kappa,NC,GC,ST,l_rand,c_rand";

impl From<&MetricsReport> for TableRow {
    fn from(r: &MetricsReport) -> Self {
        TableRow {
            network: r.label.clone(),
            l_edges: r.l_edges,
            weight_min: r.weight_min,
            weight_max: r.weight_max,
            mean_l: r.mean_shortest_path,
            mean_c: Some(r.mean_clustering),
            diameter: r.diameter.map(|d| d as f64),
            kappa: r.kappa,
            nc: Some(r.num_components),
            gc: Some(r.giant_component_size),
            st: Some(r.singletons),
            l_rand: r.er.map(|e| e.l_rand),
            c_rand: r.er.map(|e| e.c_rand),
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TableRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.network,
            self.l_edges,
            opt(self.weight_min),
            opt(self.weight_max),
            opt(self.mean_l),
            opt(self.mean_c),
            opt(self.diameter),
            opt(self.kappa),
            opt(self.nc),
            opt(self.gc),
            opt(self.st),
            opt(self.l_rand),
            opt(self.c_rand),
        );
        s
    }
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(n: usize, pairs: &[(usize, usize)]) -> GeoGraph {
        GeoGraph::from_pairs(n, pairs).unwrap()
    }

    fn triangle() -> GeoGraph {
        g(3, &[(0, 1), (1, 2), (0, 2)])
    }

    fn star5() -> GeoGraph {
        g(5, &[(0, 1), (0, 2), (0, 3), (0, 4)])
    }

    #[test]
    fn shortest_path_examples() {
        assert_eq!(mean_shortest_path(&g(3, &[(0, 1), (1, 2)])).unwrap(), 4.0 / 3.0);
        assert_eq!(mean_shortest_path(&g(4, &[(0, 1), (2, 3)])).unwrap(), 1.0);
        assert!(matches!(mean_shortest_path(&g(3, &[])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(mean_clustering(&triangle()), 1.0);
        assert_eq!(mean_clustering(&star5()), 0.0);
        // pendant on node 2: local values {1, 1, 1/3, 0}
        let t = g(4, &[(0, 1), (1, 2), (0, 2), (2, 3)]);
        assert!((mean_clustering(&t) - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(diameter(&g(5, &[(0, 1), (1, 2), (2, 3), (3, 4)])).unwrap(), 4);
        let complete: Vec<_> = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).collect();
        assert_eq!(diameter(&g(6, &complete)).unwrap(), 1);
        assert!(diameter(&g(2, &[])).is_err());
    }

    #[test]
    fn heterogeneity_examples() {
        assert_eq!(heterogeneity(&triangle()).unwrap(), 1.0);
        assert_eq!(heterogeneity(&star5()).unwrap(), 25.0 / 16.0);
        assert_eq!(heterogeneity(&g(4, &[(0, 1), (2, 3)])).unwrap(), 1.0);
        assert!(heterogeneity(&g(4, &[])).is_err());
    }

    #[test]
    fn component_examples() {
        assert_eq!(
            components(&triangle()),
            ComponentSummary { num_components: 1, giant_size: 3, singletons: 0 }
        );
        assert_eq!(
            components(&g(4, &[])),
            ComponentSummary { num_components: 4, giant_size: 1, singletons: 4 }
        );
        let mixed = g(6, &[(0, 1), (1, 2), (0, 2), (4, 5)]);
        assert_eq!(
            components(&mixed),
            ComponentSummary { num_components: 3, giant_size: 3, singletons: 1 }
        );
    }

    #[test]
    fn triangle_report() {
        let r = full_report(&triangle().with_label("tri"));
        assert_eq!(r.mean_shortest_path, Some(1.0));
        assert_eq!(r.mean_clustering, 1.0);
        assert_eq!(r.diameter, Some(1));
        assert_eq!(r.kappa, Some(1.0));
        assert_eq!((r.num_components, r.giant_component_size, r.singletons), (1, 3, 0));
        assert_eq!(r.l_edges, 3);
        let row = TableRow::from(&r);
        assert_eq!(row.to_csv_line(), "tri,3,1,1,1,1,1,1,1,3,0,1.5849625007211563,1");
    }

    #[test]
    fn edgeless_report_has_absent_metrics() {
        let r = full_report(&g(3, &[]));
        assert_eq!(r.mean_shortest_path, None);
        assert_eq!(r.diameter, None);
        assert_eq!(r.kappa, None);
        assert_eq!(r.er, None);
        assert_eq!(r.weight_min, None);
    }

    fn arb_graph() -> impl Strategy<Value = GeoGraph> {
        (2usize..30).prop_flat_map(|n| {
            prop::collection::btree_set((0..n, 0..n), 0..80).prop_map(move |raw| {
                let pairs: std::collections::BTreeSet<(usize, usize)> = raw
                    .into_iter()
                    .filter(|(a, b)| a != b)
                    .map(|(a, b)| (a.min(b), a.max(b)))
                    .collect();
                g(n, &pairs.into_iter().collect::<Vec<_>>())
            })
        })
    }

    proptest! {
        #[test]
        fn adding_edge_never_lengthens(graph in arb_graph(), a in 0usize..30, b in 0usize..30) {
            let n = graph.node_count();
            let (a, b) = (a % n, b % n);
            prop_assume!(a != b && !graph.edge_set().contains(&(a.min(b), a.max(b))));
            let mut pairs: Vec<_> = graph.edges.iter().map(|e| (e.i, e.j)).collect();
            pairs.push((a, b));
            let bigger = g(n, &pairs);
            let (adj0, adj1) = (graph.adjacency(), bigger.adjacency());
            let (mut d0, mut d1, mut q) = (Vec::new(), Vec::new(), VecDeque::new());
            for s in 0..n {
                adj0.bfs(s, &mut d0, &mut q);
                adj1.bfs(s, &mut d1, &mut q);
                for t in 0..n {
                    prop_assert!(d1[t] <= d0[t]);
                }
            }
            let (c0, c1) = (components(&graph), components(&bigger));
            prop_assert!(c0.num_components - c1.num_components <= 1);
        }

        #[test]
        fn relabeling_invariance(graph in arb_graph(), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = graph.node_count();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pairs: Vec<_> = graph.edges.iter().map(|e| (perm[e.i], perm[e.j])).collect();
            let relabeled = g(n, &pairs);
            let (a, b) = (full_report(&graph), full_report(&relabeled));
            prop_assert_eq!(a.mean_shortest_path, b.mean_shortest_path);
            prop_assert_eq!(a.diameter, b.diameter);
            prop_assert_eq!(a.kappa, b.kappa);
            prop_assert_eq!(
                (a.num_components, a.giant_component_size, a.singletons),
                (b.num_components, b.giant_component_size, b.singletons)
            );
            prop_assert!((a.mean_clustering - b.mean_clustering).abs() < 1e-12);
        }

        #[test]
        fn report_invariants(graph in arb_graph()) {
            let r = full_report(&graph);
            if let (Some(l), Some(d)) = (r.mean_shortest_path, r.diameter) {
                prop_assert!(l <= d as f64);
            }
            if let Some(k) = r.kappa {
                prop_assert!(k >= 1.0 - 1e-12);
            }
            prop_assert!(r.giant_component_size + r.singletons <= r.n
                || r.giant_component_size == 1);
            prop_assert!(r.singletons <= r.num_components);
        }
    }
}
