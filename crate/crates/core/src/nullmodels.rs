//! Null models: configuration-model ensembles that keep a graph's degree
//! sequence, and the analytic Erdős–Rényi graph with the same node and
//! edge counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, GeoGraph, GeoNode};
use crate::metrics::{heterogeneity_of_degrees, local_clustering, path_stats, TableRow};
use crate::similarity::SimilarityMatrix;

pub const DEFAULT_SAMPLES: usize = 10_000;

/// Random stream for sample `index` of an ensemble seeded with `seed`.
/// Streams are independent of each other and of evaluation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A raw stub-matching pseudograph. Self-loops and multi-edges are kept;
/// `weights[k]` is the permuted weight drawn for the k-th simple edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationSample {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl ConfigurationSample {
    /// Degrees with multiplicity; a self-loop adds 2.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Distinct non-loop endpoint pairs, in order of first appearance.
    pub fn simple_pairs(&self) -> Vec<(usize, usize)> {
        let mut seen = std::collections::HashSet::new();
        self.edges
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .filter(|p| seen.insert(*p))
            .collect()
    }

    /// Drops self-loops and collapses multi-edges. Weights come from the
    /// head of the permutation; the surplus at the tail is discarded.
    pub fn simplify(&self, nodes: Vec<GeoNode>, weights: &CmWeights<'_>) -> Result<GeoGraph> {
        let edges = self
            .simple_pairs()
            .into_iter()
            .enumerate()
            .map(|(k, (i, j))| Edge {
                i,
                j,
                weight: match weights {
                    CmWeights::Permuted => self.weights[k],
                    CmWeights::Similarity(sim) => sim.get(i, j),
                },
            })
            .collect();
        GeoGraph::new("", nodes, edges)
    }
}

/// How edges of a configuration sample get their weights.
#[derive(Debug, Clone, Copy)]
pub enum CmWeights<'a> {
    /// A random permutation of the source graph's weights.
    Permuted,
    /// The similarity of the sampled endpoint pair.
    Similarity(&'a SimilarityMatrix),
}

fn validate_degrees(degrees: &[usize], weights: &[f64]) -> Result<()> {
    let total: usize = degrees.iter().sum();
    if !total.is_multiple_of(2) {
        return Err(Error::OddDegreeSum(total));
    }
    if weights.len() != total / 2 {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} edges",
            weights.len(),
            total / 2
        )));
    }
    Ok(())
}

fn sample_with_rng(degrees: &[usize], weights: &[f64], rng: &mut ChaCha8Rng) -> ConfigurationSample {
    let mut stubs: Vec<usize> = degrees
        .iter()
        .enumerate()
        .flat_map(|(v, &k)| std::iter::repeat_n(v, k))
        .collect();
    stubs.shuffle(rng);
    let edges = stubs.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let mut weights = weights.to_vec();
    weights.shuffle(rng);
    ConfigurationSample {
        n: degrees.len(),
        edges,
        weights,
    }
}

/// Uniform stub matching for `degrees`, with `weights` randomly permuted.
/// Identical to sample 0 of an ensemble with the same seed.
pub fn configuration_sample(degrees: &[usize], weights: &[f64], seed: u64) -> Result<ConfigurationSample> {
    ensemble_sample(degrees, weights, seed, 0)
}

/// Raw sample `index` of the ensemble seeded with `seed`, as drawn inside
/// [`ensemble_metrics`].
pub fn ensemble_sample(degrees: &[usize], weights: &[f64], seed: u64, index: u64) -> Result<ConfigurationSample> {
    validate_degrees(degrees, weights)?;
    Ok(sample_with_rng(degrees, weights, &mut sample_rng(seed, index)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub label: String,
    pub samples: usize,
    pub seed: u64,
    /// Edge count of the source graph.
    pub l_edges: usize,
    /// Mean over samples that have at least one reachable pair.
    pub mean_l: Option<f64>,
    pub mean_c: f64,
    /// Mean over samples with at least one edge.
    pub mean_diameter: Option<f64>,
    /// Computed from the source degree sequence.
    pub kappa: Option<f64>,
    pub weight_range: Option<(f64, f64)>,
    pub samples_with_paths: usize,
    /// Mean number of edges left after simplification.
    pub mean_simple_edges: f64,
}

impl EnsembleReport {
    pub fn table_row(&self) -> TableRow {
        TableRow {
            network: self.label.clone(),
            l_edges: self.l_edges,
            weight_min: self.weight_range.map(|r| r.0),
            weight_max: self.weight_range.map(|r| r.1),
            mean_l: self.mean_l,
            mean_c: Some(self.mean_c),
            diameter: self.mean_diameter,
            kappa: self.kappa,
            nc: None,
            gc: None,
            st: None,
            l_rand: None,
            c_rand: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SampleMetrics {
    mean_l: Option<f64>,
    mean_c: f64,
    diameter: Option<usize>,
    simple_edges: usize,
    weights: Option<(f64, f64)>,
}

/// Neumaier-compensated sum, evaluated in slice order.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Generates `samples` configuration samples of `g`, simplifies each, and
/// averages the metrics. Samples run in parallel; per-sample results are
/// collected in index order before averaging, so the report depends only on
/// `(g, samples, seed, weights)`.
pub fn ensemble_metrics(
    g: &GeoGraph,
    samples: usize,
    seed: u64,
    weights: CmWeights<'_>,
) -> Result<EnsembleReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let degrees = g.degrees();
    let source_weights = g.weights();
    validate_degrees(&degrees, &source_weights)?;
    let per_sample: Vec<SampleMetrics> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let raw = sample_with_rng(&degrees, &source_weights, &mut sample_rng(seed, k as u64));
            let simple = raw.simplify(g.nodes.clone(), &weights)?;
            let adj = simple.adjacency();
            let stats = path_stats(&adj);
            let local = local_clustering(&adj);
            Ok(SampleMetrics {
                mean_l: (stats.pairs > 0).then(|| stats.total_hops as f64 / stats.pairs as f64),
                mean_c: if local.is_empty() {
                    0.0
                } else {
                    local.iter().sum::<f64>() / local.len() as f64
                },
                diameter: (!simple.edges.is_empty()).then_some(stats.max_hops),
                simple_edges: simple.edge_count(),
                weights: simple.weight_range(),
            })
        })
        .collect::<Result<_>>()?;

    let mean_of = |vals: Vec<f64>| (!vals.is_empty()).then(|| compensated_sum(vals.iter().copied()) / vals.len() as f64);
    let ls: Vec<f64> = per_sample.iter().filter_map(|s| s.mean_l).collect();
    let samples_with_paths = ls.len();
    let ds: Vec<f64> = per_sample.iter().filter_map(|s| s.diameter.map(|d| d as f64)).collect();
    let weight_range = per_sample.iter().filter_map(|s| s.weights).fold(None, |acc, (lo, hi)| match acc {
        None => Some((lo, hi)),
        Some((a, b)) => Some((lo.min(a), hi.max(b))),
    });
    Ok(EnsembleReport {
        label: String::new(),
        samples,
        seed,
        l_edges: g.edge_count(),
        mean_l: mean_of(ls),
        mean_c: compensated_sum(per_sample.iter().map(|s| s.mean_c)) / samples as f64,
        mean_diameter: mean_of(ds),
        kappa: heterogeneity_of_degrees(&degrees).ok(),
        weight_range,
        samples_with_paths,
        mean_simple_edges: compensated_sum(per_sample.iter().map(|s| s.simple_edges as f64))
            / samples as f64,
    })
}

/// Analytic quantities of the Erdős–Rényi graph with `n` nodes and
/// `l_edges` edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErAnalytics {
    pub n: usize,
    pub l_edges: usize,
    /// Connection probability `2L / (N (N - 1))`.
    pub p: f64,
    /// `p (N - 1)`.
    pub mean_k: f64,
    /// Expected clustering, equal to `p`.
    pub c_rand: f64,
    /// `ln N / ln <k>`.
    pub l_rand: f64,
}

pub fn er_analytics(n: usize, l_edges: usize) -> Result<ErAnalytics> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 nodes, got {n}")));
    }
    if l_edges < 1 {
        return Err(Error::InvalidParameter("need at least one edge".into()));
    }
    let nf = n as f64;
    let p = 2.0 * l_edges as f64 / (nf * (nf - 1.0));
    let mean_k = p * (nf - 1.0);
    let log_k = mean_k.ln();
    if !(mean_k > 0.0) || log_k == 0.0 {
        return Err(Error::Domain(format!(
            "mean degree {mean_k} gives an undefined random path length"
        )));
    }
    Ok(ErAnalytics {
        n,
        l_edges,
        p,
        mean_k,
        c_rand: p,
        l_rand: nf.ln() / log_k,
    })
}

/// Shorter mean path and higher clustering than the random reference.
pub fn small_world_test(l: f64, c: f64, l_rand: f64, c_rand: f64) -> bool {
    l < l_rand && c > c_rand
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::line_nodes;

    #[test]
    fn sample_examples() {
        for seed in 0..20 {
            let s = configuration_sample(&[2, 2, 2], &[0.1, 0.2, 0.3], seed).unwrap();
            assert_eq!(s.degrees(), vec![2, 2, 2]);
        }
        let empty = configuration_sample(&[0, 0, 0], &[], 1).unwrap();
        assert!(empty.edges.is_empty());
        let loops = configuration_sample(&[4, 0, 0], &[1.0, 2.0], 9).unwrap();
        assert_eq!(loops.edges, vec![(0, 0), (0, 0)]);
        assert!(matches!(configuration_sample(&[1, 2], &[1.0], 0), Err(Error::OddDegreeSum(3))));
        assert!(configuration_sample(&[1, 1], &[], 0).is_err());
    }

    #[test]
    fn simplify_uses_permutation_head() {
        let s = ConfigurationSample {
            n: 3,
            edges: vec![(1, 0), (0, 1), (2, 2), (1, 2)],
            weights: vec![0.4, 0.3, 0.2, 0.1],
        };
        let g = s.simplify(line_nodes(3), &CmWeights::Permuted).unwrap();
        let got: Vec<_> = g.edges.iter().map(|e| (e.i, e.j, e.weight)).collect();
        assert_eq!(got, vec![(0, 1, 0.4), (1, 2, 0.3)]);
    }

    #[test]
    fn triangle_ensemble_matches_enumeration() {
        // 15 stub matchings of (2,2,2): 8 triangles (c = 1), 6 loop + double
        // edge (one simple edge, c = 0), 1 all-loops (edgeless, c = 0)
        let tri = GeoGraph::from_pairs(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let r = ensemble_metrics(&tri, 4000, 5, CmWeights::Permuted).unwrap();
        assert_eq!(r.mean_l, Some(1.0));
        assert_eq!(r.mean_diameter, Some(1.0));
        let exact = 8.0 / 15.0;
        let se = (exact * (1.0 - exact) / 4000.0f64).sqrt();
        assert!((r.mean_c - exact).abs() < 3.0 * se, "{} vs {exact}", r.mean_c);
        assert_eq!(r.kappa, Some(1.0));
    }

    #[test]
    fn ensemble_is_deterministic() {
        let g = GeoGraph::from_pairs(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]).unwrap();
        let a = ensemble_metrics(&g, 200, 11, CmWeights::Permuted).unwrap();
        let b = ensemble_metrics(&g, 200, 11, CmWeights::Permuted).unwrap();
        assert_eq!(a, b);
        let c = ensemble_metrics(&g, 200, 12, CmWeights::Permuted).unwrap();
        assert_ne!(a.mean_c, c.mean_c);
        assert!(ensemble_metrics(&g, 0, 1, CmWeights::Permuted).is_err());
    }

    #[test]
    fn er_examples() {
        let a = er_analytics(587, 1270).unwrap();
        assert_eq!(a.p, 2540.0 / 343_982.0);
        let full = er_analytics(10, 45).unwrap();
        assert_eq!((full.p, full.c_rand, full.mean_k), (1.0, 1.0, 9.0));
        assert!(er_analytics(1, 1).is_err());
        assert!(er_analytics(5, 0).is_err());
        // mean degree exactly 1: ln<k> = 0
        assert!(matches!(er_analytics(4, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn small_world_examples() {
        assert!(small_world_test(3.88, 0.159, 5.36, 0.005));
        assert!(!small_world_test(8.93, 0.536, 4.35, 0.007));
        assert!(!small_world_test(2.0, 0.1, 2.0, 0.1));
    }
}
