//! Network construction from a similarity matrix.
//!
//! Two edge-selection criteria are provided:
//!
//! * a global threshold, keeping pairs whose similarity exceeds `tau`, with
//!   `tau` chosen where the giant component's diameter peaks;
//! * the disparity-filter backbone, keeping edges whose weight is unlikely
//!   under a uniform split of each endpoint's strength over its links, with
//!   the significance level calibrated to hit a target edge count.
//!
//! Both criteria keep every node, so isolates show up as singletons.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Edge, GeoGraph};
use crate::similarity::SimilarityMatrix;

/// Above this many distinct weights the scan falls back to a uniform grid.
pub const EXACT_SCAN_MAX_CANDIDATES: usize = 2000;
/// Size of the uniform fallback grid.
pub const UNIFORM_SCAN_POINTS: usize = 200;
/// Bisection stops once the alpha bracket is narrower than this.
pub const ALPHA_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep `S_ij > tau`.
    #[default]
    Strict,
    /// Keep `S_ij >= tau`.
    Inclusive,
}

impl ThresholdMode {
    fn keeps(self, weight: f64, tau: f64) -> bool {
        match self {
            ThresholdMode::Strict => weight > tau,
            ThresholdMode::Inclusive => weight >= tau,
        }
    }
}

pub fn threshold_graph(sim: &SimilarityMatrix, tau: f64, mode: ThresholdMode) -> GeoGraph {
    let edges = sim
        .candidate_pairs()
        .filter(|&(_, _, w)| mode.keeps(w, tau))
        .map(|(i, j, weight)| Edge { i, j, weight })
        .collect();
    GeoGraph {
        label: String::new(),
        nodes: sim.nodes.clone(),
        edges,
    }
}

/// Node ids of the largest connected component; ties go to the component
/// holding the smallest node id.
pub fn giant_component(adj: &Adjacency) -> Vec<usize> {
    let (labels, count) = adj.component_labels();
    if count == 0 {
        return Vec::new();
    }
    let mut sizes = vec![0usize; count];
    for &l in &labels {
        sizes[l] += 1;
    }
    // labels are numbered by smallest member, so the first maximum wins ties
    let giant = (0..count).fold(0, |best, l| if sizes[l] > sizes[best] { l } else { best });
    (0..labels.len()).filter(|&v| labels[v] == giant).collect()
}

fn eccentricity(adj: &Adjacency, v: usize, dist: &mut Vec<usize>, queue: &mut VecDeque<usize>) -> usize {
    adj.bfs(v, dist, queue);
    dist.iter().filter(|&&d| d != usize::MAX).copied().max().unwrap_or(0)
}

/// Exact diameter of the component containing `start`, by iterative
/// fringe upper bounding: eccentricities are evaluated level by level from
/// the deepest BFS layer of `start` until the lower bound exceeds what any
/// shallower layer could still produce.
pub fn component_diameter(adj: &Adjacency, start: usize) -> usize {
    let mut dist = Vec::new();
    let mut scratch = Vec::new();
    let mut queue = VecDeque::new();
    adj.bfs(start, &mut dist, &mut queue);
    let ecc_start = dist.iter().filter(|&&d| d != usize::MAX).copied().max().unwrap_or(0);
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); ecc_start + 1];
    for (v, &d) in dist.iter().enumerate() {
        if d != usize::MAX {
            levels[d].push(v);
        }
    }
    let mut lower = ecc_start;
    let mut level = ecc_start;
    while level > 0 {
        let fringe = levels[level]
            .iter()
            .map(|&v| eccentricity(adj, v, &mut scratch, &mut queue))
            .max()
            .unwrap_or(0);
        lower = lower.max(fringe);
        if lower > 2 * (level - 1) {
            return lower;
        }
        level -= 1;
    }
    lower
}

/// Diameter of the giant component (0 for an edgeless graph).
pub fn giant_component_diameter(adj: &Adjacency) -> usize {
    let giant = giant_component(adj);
    if giant.len() < 2 {
        return 0;
    }
    // start from the highest-degree node; smallest id on ties
    let start = giant
        .iter()
        .copied()
        .fold(giant[0], |best, v| if adj.degree(v) > adj.degree(best) { v } else { best });
    component_diameter(adj, start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub taus: Vec<f64>,
    /// Giant-component diameter of the threshold graph at each `taus[k]`.
    pub diameters: Vec<usize>,
    pub chosen_tau: f64,
    pub chosen_diameter: usize,
    pub mode: ThresholdMode,
}

/// Candidate thresholds: every distinct candidate weight when there are at
/// most [`EXACT_SCAN_MAX_CANDIDATES`] of them, otherwise a uniform grid of
/// [`UNIFORM_SCAN_POINTS`] values over the weight range.
pub fn candidate_thresholds(sim: &SimilarityMatrix) -> Vec<f64> {
    let mut weights: Vec<f64> = sim.candidate_pairs().map(|(_, _, w)| w).collect();
    weights.sort_by(f64::total_cmp);
    weights.dedup();
    if weights.len() <= EXACT_SCAN_MAX_CANDIDATES {
        return weights;
    }
    let (lo, hi) = (weights[0], weights[weights.len() - 1]);
    let step = (hi - lo) / (UNIFORM_SCAN_POINTS - 1) as f64;
    (0..UNIFORM_SCAN_POINTS)
        .map(|k| if k + 1 == UNIFORM_SCAN_POINTS { hi } else { lo + k as f64 * step })
        .collect()
}

/// Evaluates the giant-component diameter at each threshold and picks the
/// maximum, breaking ties toward the smallest threshold.
pub fn scan_max_diameter_threshold(
    sim: &SimilarityMatrix,
    taus: &[f64],
    mode: ThresholdMode,
) -> Result<ThresholdScan> {
    if taus.is_empty() {
        return Err(Error::InvalidParameter("threshold scan needs at least one tau".into()));
    }
    if taus.iter().any(|t| !t.is_finite()) || taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(
            "scan thresholds must be finite and sorted ascending".into(),
        ));
    }
    let pairs: Vec<(usize, usize, f64)> = sim.candidate_pairs().collect();
    let n = sim.n();
    let diameters: Vec<usize> = taus
        .par_iter()
        .map(|&tau| {
            let kept = pairs
                .iter()
                .filter(|&&(_, _, w)| mode.keeps(w, tau))
                .map(|&(i, j, _)| (i, j));
            giant_component_diameter(&Adjacency::new(n, kept))
        })
        .collect();
    let best = (0..taus.len()).fold(0, |best, k| if diameters[k] > diameters[best] { k } else { best });
    Ok(ThresholdScan {
        taus: taus.to_vec(),
        chosen_tau: taus[best],
        chosen_diameter: diameters[best],
        diameters,
        mode,
    })
}

/// Probability that a link of node `i` carries weight `w_ij` or more when the
/// strength `s_i` is split uniformly at random over its `k_i` links:
/// `(1 - w_ij / s_i)^(k_i - 1)`.
pub fn disparity_pvalue(w_ij: f64, s_i: f64, k_i: usize) -> Result<f64> {
    if !(s_i > 0.0) || !s_i.is_finite() {
        return Err(Error::Domain(format!("strength must be positive, got {s_i}")));
    }
    if k_i < 1 {
        return Err(Error::Domain("degree must be at least 1".into()));
    }
    if !(0.0..=s_i).contains(&w_ij) {
        return Err(Error::Domain(format!("weight {w_ij} outside [0, {s_i}]")));
    }
    let exponent = i32::try_from(k_i - 1)
        .map_err(|_| Error::Domain(format!("degree {k_i} too large")))?;
    Ok((1.0 - w_ij / s_i).powi(exponent))
}

/// An edge of the backbone substrate with the smaller of its two endpoint
/// p-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub pvalue: f64,
}

/// Disparity p-values for every substrate edge. The substrate is the full
/// weighted graph over non-degenerate pairs with positive similarity.
pub fn backbone_pvalues(sim: &SimilarityMatrix) -> Vec<ScoredEdge> {
    let n = sim.n();
    let substrate: Vec<(usize, usize, f64)> =
        sim.candidate_pairs().filter(|&(_, _, w)| w > 0.0).collect();
    let mut strength = vec![0.0f64; n];
    let mut degree = vec![0usize; n];
    // accumulate in (i, j) order so strengths are reproducible
    for &(i, j, w) in &substrate {
        strength[i] += w;
        strength[j] += w;
        degree[i] += 1;
        degree[j] += 1;
    }
    substrate
        .into_iter()
        .map(|(i, j, weight)| {
            // w <= s holds because s includes w and every term is positive
            let pi = disparity_pvalue(weight, strength[i], degree[i]).unwrap_or(1.0);
            let pj = disparity_pvalue(weight, strength[j], degree[j]).unwrap_or(1.0);
            ScoredEdge {
                i,
                j,
                weight,
                pvalue: pi.min(pj),
            }
        })
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn backbone_from_scored(sim: &SimilarityMatrix, scored: &[ScoredEdge], alpha: f64) -> GeoGraph {
    let edges = scored
        .iter()
        .filter(|e| e.pvalue < alpha)
        .map(|e| Edge {
            i: e.i,
            j: e.j,
            weight: e.weight,
        })
        .collect();
    GeoGraph {
        label: String::new(),
        nodes: sim.nodes.clone(),
        edges,
    }
}

pub fn backbone_graph(sim: &SimilarityMatrix, alpha: f64) -> Result<GeoGraph> {
    check_alpha(alpha)?;
    Ok(backbone_from_scored(sim, &backbone_pvalues(sim), alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneCalibration {
    pub alpha: f64,
    pub target_edges: usize,
    pub achieved_edges: usize,
}

/// Bisects alpha over (0, 1), using that the backbone edge count never
/// decreases with alpha. Returns the evaluated alpha whose edge count is
/// closest to `target_edges`; equal distances prefer the smaller count.
pub fn calibrate_alpha(sim: &SimilarityMatrix, target_edges: usize) -> BackboneCalibration {
    let scored = backbone_pvalues(sim);
    let count = |alpha: f64| scored.iter().filter(|e| e.pvalue < alpha).count();
    let better = |a: (f64, usize), b: (f64, usize)| {
        let da = a.1.abs_diff(target_edges);
        let db = b.1.abs_diff(target_edges);
        da < db || (da == db && a.1 < b.1) || (da == db && a.1 == b.1 && a.0 < b.0)
    };

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(f64, usize)> = None;
    loop {
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        if best.is_none_or(|b| better((mid, c), b)) {
            best = Some((mid, c));
        }
        if c == target_edges || hi - lo < ALPHA_RESOLUTION {
            break;
        }
        if c < target_edges {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (alpha, achieved_edges) = best.expect("bisection evaluates at least once");
    BackboneCalibration {
        alpha,
        target_edges,
        achieved_edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedEdges {
    pub count: usize,
    /// `count / |E(g1)|`, or 0 when `g1` has no edges.
    pub fraction_of_g1: f64,
}

pub fn shared_edges(g1: &GeoGraph, g2: &GeoGraph) -> Result<SharedEdges> {
    if g1.node_count() != g2.node_count() {
        return Err(Error::NodeSetMismatch(g1.node_count(), g2.node_count()));
    }
    let other = g2.edge_set();
    let count = g1.edges.iter().filter(|e| other.contains(&(e.i, e.j))).count();
    let fraction_of_g1 = if g1.edges.is_empty() {
        0.0
    } else {
        count as f64 / g1.edge_count() as f64
    };
    Ok(SharedEdges {
        count,
        fraction_of_g1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::line_nodes;
    use crate::similarity::Measure;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(dense: Vec<Vec<f64>>) -> SimilarityMatrix {
        let n = dense.len();
        SimilarityMatrix::from_dense(Measure::Pearson, &dense, line_nodes(n), vec![false; n]).unwrap()
    }

    fn random_matrix(n: usize, seed: u64) -> SimilarityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let w: f64 = rng.random();
                dense[i][j] = w;
                dense[j][i] = w;
            }
        }
        matrix(dense)
    }

    fn pairs(g: &GeoGraph) -> Vec<(usize, usize)> {
        g.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    fn brute_diameter(adj: &Adjacency) -> usize {
        let giant = giant_component(adj);
        let mut dist = Vec::new();
        let mut queue = VecDeque::new();
        giant
            .iter()
            .map(|&v| eccentricity(adj, v, &mut dist, &mut queue))
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn threshold_examples() {
        let sim = matrix(vec![
            vec![0.0, 0.9, 0.5],
            vec![0.9, 0.0, 0.7],
            vec![0.5, 0.7, 0.0],
        ]);
        assert_eq!(pairs(&threshold_graph(&sim, 0.6, ThresholdMode::Strict)), vec![(0, 1), (1, 2)]);
        assert_eq!(threshold_graph(&sim, 0.0, ThresholdMode::Strict).edge_count(), 3);
        let empty = threshold_graph(&sim, 0.9, ThresholdMode::Strict);
        assert_eq!((empty.edge_count(), empty.node_count()), (0, 3));
        assert_eq!(threshold_graph(&sim, 0.9, ThresholdMode::Inclusive).edge_count(), 1);
    }

    #[test]
    fn threshold_skips_degenerate_pairs() {
        let dense = vec![vec![0.0, 0.9, 0.5], vec![0.9, 0.0, 0.7], vec![0.5, 0.7, 0.0]];
        let sim = SimilarityMatrix::from_dense(Measure::Pearson, &dense, line_nodes(3), vec![false, false, true])
            .unwrap();
        assert_eq!(pairs(&threshold_graph(&sim, -1.0, ThresholdMode::Strict)), vec![(0, 1)]);
    }

    #[test]
    fn scan_single_and_equal_weights() {
        let sim = matrix(vec![vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]]);
        let scan = scan_max_diameter_threshold(&sim, &[0.3], ThresholdMode::Strict).unwrap();
        assert_eq!(scan.chosen_tau, 0.3);
        let scan = scan_max_diameter_threshold(&sim, &[0.1, 0.2, 0.5], ThresholdMode::Strict).unwrap();
        assert_eq!(scan.diameters, vec![1, 1, 0]);
        assert_eq!(scan.chosen_tau, 0.1);
        assert!(scan_max_diameter_threshold(&sim, &[], ThresholdMode::Strict).is_err());
        assert!(scan_max_diameter_threshold(&sim, &[0.5, 0.1], ThresholdMode::Strict).is_err());
    }

    #[test]
    fn scan_finds_stretch_peak() {
        // A path 0-1-...-9 with weight 0.8 plus shortcuts 0.6 that collapse
        // the diameter at low tau; above 0.8 the graph shatters.
        let n = 10;
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n - 1 {
            dense[i][i + 1] = 0.8;
            dense[i + 1][i] = 0.8;
        }
        for i in 0..n {
            for j in i + 2..n {
                dense[i][j] = 0.6;
                dense[j][i] = 0.6;
            }
        }
        let sim = matrix(dense);
        let taus = candidate_thresholds(&sim);
        assert_eq!(taus, vec![0.6, 0.8]);
        let scan = scan_max_diameter_threshold(&sim, &[0.5, 0.6, 0.7, 0.8], ThresholdMode::Strict).unwrap();
        assert_eq!(scan.diameters, vec![1, 9, 9, 0]);
        assert_eq!(scan.chosen_tau, 0.6);
    }

    #[test]
    fn uniform_grid_for_many_weights() {
        let sim = random_matrix(70, 1);
        let taus = candidate_thresholds(&sim);
        assert_eq!(taus.len(), UNIFORM_SCAN_POINTS);
        let (lo, hi) = sim.weight_range().unwrap();
        assert_eq!((taus[0], taus[taus.len() - 1]), (lo, hi));
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(disparity_pvalue(0.3, 0.7, 1).unwrap(), 1.0);
        assert_eq!(disparity_pvalue(0.5, 1.0, 2).unwrap(), 0.5);
        assert_eq!(disparity_pvalue(2.0, 2.0, 3).unwrap(), 0.0);
        assert!(disparity_pvalue(1.0, 0.0, 2).is_err());
        assert!(disparity_pvalue(1.0, 0.5, 2).is_err());
        assert!(disparity_pvalue(-0.1, 0.5, 2).is_err());
        assert!(disparity_pvalue(0.1, 0.5, 0).is_err());
    }

    #[test]
    fn star_dominant_spoke() {
        let mut dense = vec![vec![0.0; 5]; 5];
        for (leaf, w) in [(1, 0.9), (2, 0.1), (3, 0.1), (4, 0.1)] {
            dense[0][leaf] = w;
            dense[leaf][0] = w;
        }
        let sim = matrix(dense);
        let scored = backbone_pvalues(&sim);
        // hub strength 1.2, degree 4; leaves have degree 1 (p = 1)
        let p_dominant = (1.0f64 - 0.9 / 1.2).powi(3);
        let p_small = (1.0f64 - 0.1 / 1.2).powi(3);
        assert!((scored[0].pvalue - p_dominant).abs() < 1e-12);
        assert!((scored[1].pvalue - p_small).abs() < 1e-12);
        let g = backbone_graph(&sim, 0.5).unwrap();
        assert_eq!(pairs(&g), vec![(0, 1)]);
        assert_eq!(g.node_count(), 5);
    }

    #[test]
    fn backbone_degree_one_pairs_never_survive() {
        let sim = matrix(vec![
            vec![0.0, 0.7, 0.0, 0.0],
            vec![0.7, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.4],
            vec![0.0, 0.0, 0.4, 0.0],
        ]);
        assert_eq!(backbone_graph(&sim, 1.0 - 1e-12).unwrap().edge_count(), 0);
        assert!(backbone_graph(&sim, 1.0).is_err());
        assert!(backbone_graph(&sim, 0.0).is_err());
    }

    #[test]
    fn calibration_edges() {
        let sim = random_matrix(12, 3);
        let zero = calibrate_alpha(&sim, 0);
        assert_eq!(zero.achieved_edges, 0);
        let all = backbone_pvalues(&sim).iter().filter(|e| e.pvalue < 1.0).count();
        let full = calibrate_alpha(&sim, all);
        assert_eq!(full.achieved_edges, all);
        let over = calibrate_alpha(&sim, all + 50);
        assert_eq!(over.achieved_edges, all);
        let mid = calibrate_alpha(&sim, 10);
        assert_eq!(backbone_graph(&sim, mid.alpha).unwrap().edge_count(), mid.achieved_edges);
    }

    #[test]
    fn shared_edge_counts() {
        let a = GeoGraph::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let b = GeoGraph::from_pairs(4, &[(0, 3), (0, 2)]).unwrap();
        assert_eq!(shared_edges(&a, &a).unwrap(), SharedEdges { count: 3, fraction_of_g1: 1.0 });
        assert_eq!(shared_edges(&a, &b).unwrap(), SharedEdges { count: 0, fraction_of_g1: 0.0 });
        let c = GeoGraph::from_pairs(5, &[]).unwrap();
        assert!(matches!(shared_edges(&a, &c), Err(Error::NodeSetMismatch(4, 5))));
        assert!((78.0f64 / 1270.0 - 0.0614).abs() < 5e-5);
    }

    proptest! {
        #[test]
        fn ifub_matches_brute_force(
            n in 2usize..25,
            raw in prop::collection::vec((0usize..25, 0usize..25), 0..60),
        ) {
            let edges: Vec<(usize, usize)> = raw
                .into_iter()
                .map(|(a, b)| (a % n, b % n))
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let adj = Adjacency::new(n, edges.iter().copied());
            prop_assert_eq!(giant_component_diameter(&adj), brute_diameter(&adj));
        }

        #[test]
        fn threshold_monotone(seed in 0u64..1000, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let sim = random_matrix(9, seed);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let low = threshold_graph(&sim, lo, ThresholdMode::Strict).edge_set();
            let high = threshold_graph(&sim, hi, ThresholdMode::Strict).edge_set();
            prop_assert!(high.is_subset(&low));
            for e in threshold_graph(&sim, hi, ThresholdMode::Strict).edges {
                prop_assert!(e.weight > hi);
            }
        }

        #[test]
        fn backbone_monotone(seed in 0u64..1000, a1 in 0.001f64..0.999, a2 in 0.001f64..0.999) {
            let sim = random_matrix(9, seed);
            let (lo, hi) = (a1.min(a2), a1.max(a2));
            let small = backbone_graph(&sim, lo).unwrap().edge_set();
            let large = backbone_graph(&sim, hi).unwrap().edge_set();
            prop_assert!(small.is_subset(&large));
        }

        #[test]
        fn pvalue_non_increasing(s in 0.1f64..10.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0, k in 1usize..40) {
            let (lo, hi) = (f1.min(f2) * s, f1.max(f2) * s);
            prop_assert!(disparity_pvalue(hi, s, k).unwrap() <= disparity_pvalue(lo, s, k).unwrap());
            prop_assert!(disparity_pvalue(lo, s, k + 1).unwrap() <= disparity_pvalue(lo, s, k).unwrap());
        }
    }
}
