//! Topological versus geographical distance.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::graph::GeoGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub i: usize,
    pub j: usize,
    pub topo_hops: usize,
    pub geo_km: f64,
}

/// Every reachable unordered pair with its hop and planar distance, sorted
/// by `(i, j)`.
pub fn distance_pairs(g: &GeoGraph) -> Result<Vec<DistancePair>> {
    if g.edges.is_empty() {
        return Err(Error::UndefinedMetric("distance pairs"));
    }
    let adj = g.adjacency();
    let rows: Vec<Vec<DistancePair>> = (0..g.node_count())
        .into_par_iter()
        .map_init(
            || (Vec::new(), VecDeque::new()),
            |(dist, queue), s| {
                adj.bfs(s, dist, queue);
                (s + 1..dist.len())
                    .filter(|&t| dist[t] != usize::MAX)
                    .map(|t| DistancePair {
                        i: s,
                        j: t,
                        topo_hops: dist[t],
                        geo_km: g.nodes[s].distance_km(&g.nodes[t]),
                    })
                    .collect()
            },
        )
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    /// Hop distance regressed on km distance.
    #[default]
    TopoOnGeo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Hops per km.
    pub slope: f64,
    /// Hops.
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-sided t-test of the slope with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub slope_std_error: f64,
    pub n_pairs: usize,
}

/// Ordinary least squares fit with slope significance.
pub fn regress(pairs: &[DistancePair], response: Response) -> Result<RegressionResult> {
    let (x, y): (Vec<f64>, Vec<f64>) = match response {
        Response::TopoOnGeo => pairs.iter().map(|p| (p.geo_km, p.topo_hops as f64)).unzip(),
    };
    ols(&x, &y)
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::LengthMismatch(n, y.len()));
    }
    if n < 3 {
        return Err(Error::InvalidParameter(format!("regression needs >= 3 pairs, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(Error::Domain("predictor has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let dof = nf - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let p_value = if se > 0.0 {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Domain(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    } else if slope == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        p_value,
        slope_std_error: se,
        n_pairs: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values at `hi` land in the last
    /// bin. With `lo == hi` everything lands in the first bin.
    pub fn equal_width(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|k| if k == bins { hi } else { lo + k as f64 * width })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let k = if hi > lo {
                (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV `bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLengthStats {
    pub mean_km: f64,
    pub max_km: f64,
    pub histogram: Histogram,
}

pub fn edge_length_stats(g: &GeoGraph, bins: usize) -> Result<EdgeLengthStats> {
    if g.edges.is_empty() {
        return Err(Error::UndefinedMetric("edge length statistics"));
    }
    let lengths: Vec<f64> = g.edges.iter().map(|e| g.edge_length_km(e)).collect();
    let max_km = lengths.iter().copied().fold(0.0, f64::max);
    let mean_km = lengths.iter().sum::<f64>() / lengths.len() as f64;
    Ok(EdgeLengthStats {
        mean_km: mean_km.min(max_km),
        max_km,
        histogram: Histogram::equal_width(&lengths, 0.0, max_km, bins)?,
    })
}

pub fn weight_histogram(g: &GeoGraph, bins: usize) -> Result<Histogram> {
    let (lo, hi) = g
        .weight_range()
        .ok_or(Error::UndefinedMetric("weight histogram"))?;
    Histogram::equal_width(&g.weights(), lo, hi, bins)
}
