//! Synthetic rain grids with known regional structure.
//!
//! Cells are split into vertical bands ("regions"). Each region shares a
//! latent signal; on top of it every cell sees a spatially smoothed noise
//! field (nearby cells co-vary more) plus independent noise. The Gaussian
//! mixture is mapped to positive rain rates with a log-normal transform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GeoGraph;
use crate::grid::{GridCell, GridSeries, Units, DEFAULT_TIME_STEP_MINUTES};

const ORIGIN_LAT: f64 = -23.65;
const ORIGIN_LON: f64 = -46.60;
const KM_PER_DEG_LAT: f64 = 111.32;

fn default_coherence() -> f64 {
    0.8
}

fn default_smoothing() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub regions: usize,
    /// Share of each cell's variance carried by its region's latent signal,
    /// in [0, 1]. At 1 every cell of a region has the same series.
    pub intra_correlation: f64,
    pub length: usize,
    pub seed: u64,
    /// Share of the non-regional variance that is spatially smooth.
    #[serde(default = "default_coherence")]
    pub spatial_coherence: f64,
    /// Gaussian kernel width of the smooth field, in km.
    #[serde(default = "default_smoothing")]
    pub smoothing_km: f64,
}

impl SyntheticSpec {
    pub fn new(rows: usize, cols: usize, regions: usize, intra_correlation: f64, length: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            regions,
            intra_correlation,
            length,
            seed,
            spatial_coherence: default_coherence(),
            smoothing_km: default_smoothing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidParameter(format!(
                "synthetic grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.length < 8 {
            return Err(Error::InvalidParameter(format!(
                "synthetic series length must be >= 8, got {}",
                self.length
            )));
        }
        if self.regions == 0 || self.regions > self.cols {
            return Err(Error::InvalidParameter(format!(
                "regions must be in 1..={}, got {}",
                self.cols, self.regions
            )));
        }
        for (name, v) in [
            ("intra_correlation", self.intra_correlation),
            ("spatial_coherence", self.spatial_coherence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.smoothing_km > 0.0) {
            return Err(Error::InvalidParameter("smoothing_km must be positive".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Region of a cell id (row-major ids, bands along columns).
    pub fn region_of(&self, id: usize) -> usize {
        let col = id % self.cols;
        col * self.regions / self.cols
    }

    fn position(&self, id: usize) -> (f64, f64) {
        ((id % self.cols) as f64, (id / self.cols) as f64)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GridSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.cell_count();
    let t = spec.length;
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let latent: Vec<Vec<f64>> = (0..spec.regions)
        .map(|_| (0..t).map(|_| normal()).collect())
        .collect();
    let white: Vec<Vec<f64>> = (0..n).map(|_| (0..t).map(|_| normal()).collect()).collect();
    let independent: Vec<Vec<f64>> = (0..n).map(|_| (0..t).map(|_| normal()).collect()).collect();

    // kernel weights, normalized so every smoothed cell has unit variance
    let two_s2 = 2.0 * spec.smoothing_km * spec.smoothing_km;
    let kernel: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|c| {
            let (xc, yc) = spec.position(c);
            let raw: Vec<(usize, f64)> = (0..n)
                .filter_map(|k| {
                    let (xk, yk) = spec.position(k);
                    let d2 = (xc - xk).powi(2) + (yc - yk).powi(2);
                    let w = (-d2 / two_s2).exp();
                    (w > 1e-6).then_some((k, w))
                })
                .collect();
            let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            raw.into_iter().map(|(k, w)| (k, w / norm)).collect()
        })
        .collect();

    let a_region = spec.intra_correlation.sqrt();
    let a_local = (1.0 - spec.intra_correlation).sqrt();
    let a_smooth = spec.spatial_coherence.sqrt();
    let a_noise = (1.0 - spec.spatial_coherence).sqrt();

    let cells = (0..n)
        .map(|c| {
            let region = spec.region_of(c);
            let series = (0..t)
                .map(|s| {
                    let smooth: f64 = kernel[c].iter().map(|&(k, w)| w * white[k][s]).sum();
                    let local = a_smooth * smooth + a_noise * independent[c][s];
                    let x = a_region * latent[region][s] + a_local * local;
                    4.0 * (0.6 * x).exp()
                })
                .collect();
            let (x_km, y_km) = spec.position(c);
            let lat = ORIGIN_LAT + y_km / KM_PER_DEG_LAT;
            let lon = ORIGIN_LON + x_km / (KM_PER_DEG_LAT * ORIGIN_LAT.to_radians().cos());
            GridCell {
                id: c,
                source_id: c,
                x_km,
                y_km,
                lat,
                lon,
                series,
            }
        })
        .collect();
    GridSeries::new(cells, DEFAULT_TIME_STEP_MINUTES, Units::MmPerHour)
}

/// Fraction of edges whose endpoints share a region (0 for no edges).
pub fn within_region_fraction(g: &GeoGraph, spec: &SyntheticSpec) -> f64 {
    if g.edges.is_empty() {
        return 0.0;
    }
    let inside = g
        .edges
        .iter()
        .filter(|e| spec.region_of(e.i) == spec.region_of(e.j))
        .count();
    inside as f64 / g.edge_count() as f64
}
