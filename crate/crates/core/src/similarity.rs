//! Pairwise similarity between cell series: Pearson correlation and a
//! histogram plug-in estimate of mutual information.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{nodes_of, GeoNode};
use crate::grid::GridSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "PC")]
    Pearson,
    #[serde(rename = "MI")]
    MutualInformation,
}

impl Measure {
    /// Short prefix used in network labels (`pcGT`, `miBB`, ...).
    pub fn prefix(self) -> &'static str {
        match self {
            Measure::Pearson => "pc",
            Measure::MutualInformation => "mi",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Pearson => "PC",
            Measure::MutualInformation => "MI",
        })
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pc" | "pearson" => Ok(Measure::Pearson),
            "mi" | "mutual_information" => Ok(Measure::MutualInformation),
            other => Err(format!("unknown measure `{other}` (expected pc or mi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiNormalization {
    None,
    /// Divide by `log2(bins)`, mapping the estimate into [0, 1].
    #[default]
    MaxEntropy,
}

impl FromStr for MiNormalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(MiNormalization::None),
            "max_entropy" => Ok(MiNormalization::MaxEntropy),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

/// Histogram settings for the mutual information estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MiSettings {
    /// Bins per axis; `None` selects Sturges' rule from the series length.
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub normalization: MiNormalization,
}

impl MiSettings {
    pub fn resolved_bins(&self, series_len: usize) -> usize {
        self.bins.unwrap_or_else(|| sturges_bins(series_len))
    }
}

/// `ceil(log2(T)) + 1`.
pub fn sturges_bins(t: usize) -> usize {
    let t = t.max(1);
    let mut ceil_log2 = 0;
    while (1usize << ceil_log2) < t {
        ceil_log2 += 1;
    }
    (ceil_log2 + 1).max(2)
}

/// A similarity value plus a flag set when a constant series made the
/// measure undefined (the value is then 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSimilarity {
    pub value: f64,
    pub degenerate: bool,
}

impl PairSimilarity {
    const DEGENERATE: PairSimilarity = PairSimilarity {
        value: 0.0,
        degenerate: true,
    };

    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::SeriesTooShort(x.len()));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Deviations from the mean and their sum of squares.
fn centered(x: &[f64]) -> (Vec<f64>, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss = dev.iter().map(|d| d * d).sum::<f64>();
    (dev, ss)
}

// sqrt(sxx * syy) rather than sqrt(sxx) * sqrt(syy): a series against itself gives exactly 1
fn pearson_centered(dx: &[f64], sxx: f64, dy: &[f64], syy: f64) -> f64 {
    let cov: f64 = dx.iter().zip(dy).map(|(a, b)| a * b).sum();
    (cov / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<PairSimilarity> {
    check_lengths(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(PairSimilarity::DEGENERATE);
    }
    let (dx, nx) = centered(x);
    let (dy, ny) = centered(y);
    if nx == 0.0 || ny == 0.0 {
        return Ok(PairSimilarity::DEGENERATE);
    }
    Ok(PairSimilarity::ok(pearson_centered(&dx, nx, &dy, ny)))
}

/// Equal-width bin index per sample over `[min, max]`; the maximum lands in
/// the last bin. `None` for a zero-range series.
fn bin_codes(x: &[f64], bins: usize) -> Option<Vec<u32>> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return None;
    }
    let last = bins - 1;
    Some(
        x.iter()
            .map(|&v| (((v - lo) / range * bins as f64) as usize).min(last) as u32)
            .collect(),
    )
}

/// Plug-in estimate in bits from bin codes. `joint` is scratch of size
/// `bins * bins`.
fn mi_from_codes(cx: &[u32], cy: &[u32], bins: usize, joint: &mut Vec<u32>) -> f64 {
    joint.clear();
    joint.resize(bins * bins, 0);
    let mut mx = vec![0u32; bins];
    let mut my = vec![0u32; bins];
    for (&a, &b) in cx.iter().zip(cy) {
        joint[a as usize * bins + b as usize] += 1;
        mx[a as usize] += 1;
        my[b as usize] += 1;
    }
    let t = cx.len() as f64;
    // terms summed in sorted order so that MI(x, y) and MI(y, x) agree bit for bit
    let mut terms = Vec::new();
    for a in 0..bins {
        if mx[a] == 0 {
            continue;
        }
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / t;
            let ratio = (c as f64 * t) / (mx[a] as f64 * my[b] as f64);
            terms.push(pxy * ratio.log2());
        }
    }
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>().max(0.0)
}

fn normalize(mi_bits: f64, bins: usize, normalization: MiNormalization) -> f64 {
    match normalization {
        MiNormalization::None => mi_bits,
        MiNormalization::MaxEntropy => (mi_bits / (bins as f64).log2()).min(1.0),
    }
}

pub fn mutual_information(
    x: &[f64],
    y: &[f64],
    bins: usize,
    normalization: MiNormalization,
) -> Result<PairSimilarity> {
    check_lengths(x, y)?;
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("bins must be >= 2, got {bins}")));
    }
    let (Some(cx), Some(cy)) = (bin_codes(x, bins), bin_codes(y, bins)) else {
        return Ok(PairSimilarity::DEGENERATE);
    };
    let mut joint = Vec::new();
    let bits = mi_from_codes(&cx, &cy, bins, &mut joint);
    Ok(PairSimilarity::ok(normalize(bits, bins, normalization)))
}

/// Symmetric matrix of pairwise similarities with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub measure: Measure,
    /// Series length the matrix was computed from.
    pub series_len: usize,
    pub mi_bins: Option<usize>,
    pub mi_normalization: Option<MiNormalization>,
    pub nodes: Vec<GeoNode>,
    /// Per node: its series was constant, so all its pairs are degenerate.
    pub degenerate: Vec<bool>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a matrix from explicit values. Off-diagonal entries must be
    /// symmetric and finite; the diagonal is reset to 0.
    pub fn from_dense(
        measure: Measure,
        dense: &[Vec<f64>],
        nodes: Vec<GeoNode>,
        degenerate: Vec<bool>,
    ) -> Result<Self> {
        let n = dense.len();
        if nodes.len() != n || degenerate.len() != n || dense.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter(format!(
                "matrix must be {n}x{n} with {n} nodes and flags"
            )));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = dense[i][j];
                if !v.is_finite() || v != dense[j][i] {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({i}, {j}) is non-finite or asymmetric"
                    )));
                }
                values[i * n + j] = if degenerate[i] || degenerate[j] { 0.0 } else { v };
            }
        }
        Ok(Self {
            measure,
            series_len: 0,
            mi_bins: None,
            mi_normalization: None,
            nodes,
            degenerate,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn is_degenerate_pair(&self, i: usize, j: usize) -> bool {
        self.degenerate[i] || self.degenerate[j]
    }

    /// Every unordered pair `i < j` with its weight, degenerate pairs
    /// included.
    pub fn upper_triangle(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.get(i, j))))
    }

    /// Pairs that may become edges: `i < j`, neither endpoint degenerate.
    pub fn candidate_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper_triangle()
            .filter(|&(i, j, _)| !self.is_degenerate_pair(i, j))
    }

    /// Range of weights over candidate pairs.
    pub fn weight_range(&self) -> Option<(f64, f64)> {
        self.candidate_pairs().fold(None, |acc, (_, _, w)| match acc {
            None => Some((w, w)),
            Some((lo, hi)) => Some((lo.min(w), hi.max(w))),
        })
    }

    /// Reassembles a matrix from `(i, j, weight)` triples for `i < j`, as
    /// written by the CSV export.
    pub fn from_triples(
        measure: Measure,
        nodes: Vec<GeoNode>,
        degenerate: Vec<bool>,
        triples: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let n = nodes.len();
        if degenerate.len() != n {
            return Err(Error::InvalidParameter("degenerate flags length != n".into()));
        }
        let expected = n * n.saturating_sub(1) / 2;
        if triples.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "expected {expected} pairs for n = {n}, got {}",
                triples.len()
            )));
        }
        let mut values = vec![0.0; n * n];
        let mut seen = vec![false; n * n];
        for &(i, j, w) in triples {
            if i >= j || j >= n || seen[i * n + j] || !w.is_finite() {
                return Err(Error::InvalidParameter(format!("bad pair ({i}, {j}, {w})")));
            }
            seen[i * n + j] = true;
            values[i * n + j] = w;
            values[j * n + i] = w;
        }
        Ok(Self {
            measure,
            series_len: 0,
            mi_bins: None,
            mi_normalization: None,
            nodes,
            degenerate,
            values,
        })
    }
}

/// Computes the full similarity matrix of a grid. Rows are evaluated in
/// parallel; every entry is a pure function of its two series, so the
/// result does not depend on scheduling.
pub fn similarity_matrix(
    grid: &GridSeries,
    measure: Measure,
    mi: MiSettings,
) -> Result<SimilarityMatrix> {
    let n = grid.len();
    let t = grid.series_len();
    if t < 2 {
        return Err(Error::SeriesTooShort(t));
    }
    let degenerate: Vec<bool> = grid.cells.iter().map(|c| c.is_constant()).collect();
    let rows: Vec<Vec<f64>> = match measure {
        Measure::Pearson => {
            let centered: Vec<(Vec<f64>, f64)> =
                grid.cells.iter().map(|c| centered(&c.series)).collect();
            (0..n)
                .into_par_iter()
                .map(|i| {
                    (i + 1..n)
                        .map(|j| {
                            let (ci, cj) = (&centered[i], &centered[j]);
                            if degenerate[i] || degenerate[j] || ci.1 == 0.0 || cj.1 == 0.0 {
                                0.0
                            } else {
                                pearson_centered(&ci.0, ci.1, &cj.0, cj.1)
                            }
                        })
                        .collect()
                })
                .collect()
        }
        Measure::MutualInformation => {
            let bins = mi.resolved_bins(t);
            if bins < 2 {
                return Err(Error::InvalidParameter(format!("bins must be >= 2, got {bins}")));
            }
            let codes: Vec<Option<Vec<u32>>> =
                grid.cells.iter().map(|c| bin_codes(&c.series, bins)).collect();
            (0..n)
                .into_par_iter()
                .map_init(Vec::new, |joint, i| {
                    (i + 1..n)
                        .map(|j| match (&codes[i], &codes[j]) {
                            (Some(a), Some(b)) => {
                                normalize(mi_from_codes(a, b, bins, joint), bins, mi.normalization)
                            }
                            _ => 0.0,
                        })
                        .collect()
                })
                .collect()
        }
    };
    let mut values = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    let (mi_bins, mi_normalization) = match measure {
        Measure::Pearson => (None, None),
        Measure::MutualInformation => (Some(mi.resolved_bins(t)), Some(mi.normalization)),
    };
    Ok(SimilarityMatrix {
        measure,
        series_len: t,
        mi_bins,
        mi_normalization,
        nodes: nodes_of(grid),
        degenerate,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridCell, Units};
    use proptest::prelude::*;

    fn grid_of(series: Vec<Vec<f64>>) -> GridSeries {
        let cells = series
            .into_iter()
            .enumerate()
            .map(|(id, s)| GridCell {
                id,
                source_id: id,
                x_km: id as f64,
                y_km: 0.0,
                lat: 0.0,
                lon: 0.0,
                series: s,
            })
            .collect();
        GridSeries::new(cells, 10.0, Units::MmPerHour).unwrap()
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson(&x, &x).unwrap().value, 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value, -1.0);
        // (1,2,3,4,5) vs (2,1,4,3,6): cov sum 10, var sums 10 and 14.8
        let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 6.0]).unwrap();
        assert!((r.value - 10.0 / (10.0f64 * 14.8).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors_and_degenerate() {
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch(2, 1))));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::SeriesTooShort(1))));
        let p = pearson(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, PairSimilarity { value: 0.0, degenerate: true });
    }

    #[test]
    fn mi_examples() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let bits = mutual_information(&x, &x, 4, MiNormalization::None).unwrap();
        assert!((bits.value - 2.0).abs() < 1e-15);
        let norm = mutual_information(&x, &x, 4, MiNormalization::MaxEntropy).unwrap();
        assert!((norm.value - 1.0).abs() < 1e-15);
        let zero = mutual_information(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 1.0, 2.0], 2, MiNormalization::None)
            .unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn mi_product_histogram_is_zero() {
        // 3x2 grid of values, each combination once: joint = product of marginals
        let x = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let mi = mutual_information(&x, &y, 3, MiNormalization::None).unwrap();
        assert_eq!(mi.value, 0.0);
    }

    #[test]
    fn mi_errors() {
        assert!(matches!(
            mutual_information(&[1.0, 2.0], &[1.0, 2.0], 1, MiNormalization::None),
            Err(Error::InvalidParameter(_))
        ));
        let d = mutual_information(&[3.0, 3.0], &[1.0, 2.0], 4, MiNormalization::None).unwrap();
        assert!(d.degenerate);
    }

    #[test]
    fn sturges() {
        assert_eq!(sturges_bins(2), 2);
        assert_eq!(sturges_bins(8), 4);
        assert_eq!(sturges_bins(9), 5);
        assert_eq!(sturges_bins(4464), 14);
    }

    #[test]
    fn matrix_small_cases() {
        let g = grid_of(vec![vec![1.0, 3.0, 2.0], vec![1.0, 3.0, 2.0]]);
        let m = similarity_matrix(&g, Measure::Pearson, MiSettings::default()).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 0), 0.0);

        let single = grid_of(vec![vec![1.0, 2.0]]);
        let m = similarity_matrix(&single, Measure::Pearson, MiSettings::default()).unwrap();
        assert_eq!(m.n(), 1);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matrix_matches_pairwise_ops() {
        let g = grid_of(vec![
            vec![0.0, 1.5, 2.0, 7.0, 1.0, 0.0],
            vec![2.0, 1.0, 0.0, 3.0, 3.5, 0.5],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![5.0, 1.0, 2.0, 2.0, 0.0, 4.0],
        ]);
        let mi = MiSettings { bins: Some(3), normalization: MiNormalization::MaxEntropy };
        let pc = similarity_matrix(&g, Measure::Pearson, mi).unwrap();
        let mm = similarity_matrix(&g, Measure::MutualInformation, mi).unwrap();
        assert_eq!(pc.degenerate, vec![false, false, true, false]);
        assert_eq!(mm.mi_bins, Some(3));
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let (a, b) = (&g.cells[i].series, &g.cells[j].series);
                assert_eq!(pc.get(i, j), pearson(a, b).unwrap().value);
                assert_eq!(mm.get(i, j), mutual_information(a, b, 3, MiNormalization::MaxEntropy).unwrap().value);
                assert_eq!(pc.get(i, j), pc.get(j, i));
            }
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            x in prop::collection::vec(-10.0f64..10.0, 3..30),
            seed in prop::collection::vec(-10.0f64..10.0, 30),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let y = &seed[..x.len()];
            let base = pearson(&x, y).unwrap();
            prop_assume!(!base.degenerate);
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&scaled, y).unwrap().value - base.value).abs() < 1e-9);
            prop_assert!((pearson(&flipped, y).unwrap().value + base.value).abs() < 1e-9);
        }

        #[test]
        fn mi_symmetric_and_bounded(
            pairs in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 2..50),
            bins in 2usize..9,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let xy = mutual_information(&x, &y, bins, MiNormalization::None).unwrap();
            let yx = mutual_information(&y, &x, bins, MiNormalization::None).unwrap();
            prop_assert!((xy.value - yx.value).abs() < 1e-12);
            prop_assert!(xy.value >= 0.0);
            let normed = mutual_information(&x, &y, bins, MiNormalization::MaxEntropy).unwrap();
            prop_assert!((0.0..=1.0).contains(&normed.value));
        }
    }
}
