//! End-to-end run: ingest, similarity, the four network constructions,
//! configuration-model ensembles, metrics, spatial analysis and exports.
//!
//! All artifacts are written to a staging directory next to the output
//! directory and moved into place only when every stage succeeded, so a
//! failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::export::{
    edges_csv, graph_geojson, nodes_csv, overlay_geojson, scatter_csv, write_json, write_similarity,
    write_text,
};
use crate::geoanalysis::{distance_pairs, edge_length_stats, regress, weight_histogram, Histogram, Response};
use crate::graph::GeoGraph;
use crate::grid::{apply_mask_and_filter, load_grid, write_grid_csv, GridFormat, GridSeries, RegionMask};
use crate::metrics::{full_report, table_csv, MetricsReport, TableRow};
use crate::netbuild::{
    backbone_graph, calibrate_alpha, candidate_thresholds, scan_max_diameter_threshold, shared_edges,
    threshold_graph, BackboneCalibration, SharedEdges, ThresholdMode, ThresholdScan,
};
use crate::nullmodels::{configuration_sample, ensemble_metrics, small_world_test, CmWeights, EnsembleReport};
use crate::similarity::{similarity_matrix, Measure, MiSettings, SimilarityMatrix};
use crate::synth::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Grid {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: String,
    },
    Synthetic(SyntheticSpec),
}

fn default_format() -> String {
    "csv".into()
}

/// Global-threshold choice for one measure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdChoice {
    /// Scan candidate thresholds and take the maximum-diameter one.
    #[default]
    Scan,
    Tau(f64),
}

/// Backbone choice for one measure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneChoice {
    /// Calibrate alpha to the edge count of the same measure's GT network.
    #[default]
    MatchGt,
    Alpha(f64),
    TargetEdges(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdSettings {
    #[serde(default)]
    pub pc: ThresholdChoice,
    #[serde(default)]
    pub mi: ThresholdChoice,
    #[serde(default)]
    pub mode: ThresholdMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BackboneSettings {
    #[serde(default)]
    pub pc: BackboneChoice,
    #[serde(default)]
    pub mi: BackboneChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmWeightSource {
    /// Permute the source network's weights onto sample edges.
    #[default]
    Permuted,
    /// Use the similarity of each sampled pair.
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullModelSettings {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: CmWeightSource,
}

fn default_samples() -> usize {
    crate::nullmodels::DEFAULT_SAMPLES
}

impl Default for NullModelSettings {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
            weights: CmWeightSource::default(),
        }
    }
}

fn default_min_rate() -> f64 {
    1.0
}

fn default_bins() -> usize {
    20
}

fn default_true() -> bool {
    true
}

/// Pipeline configuration, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputSource,
    /// GeoJSON polygon or id-list file; every cell is kept when absent.
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default = "default_min_rate")]
    pub min_rate_mm_h: f64,
    #[serde(default)]
    pub mi: MiSettings,
    #[serde(default)]
    pub threshold: ThresholdSettings,
    #[serde(default)]
    pub backbone: BackboneSettings,
    #[serde(default)]
    pub null_model: NullModelSettings,
    /// Bins of the weight and edge-length histograms.
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub write_intermediates: bool,
}

impl PipelineConfig {
    pub fn new(input: InputSource) -> Self {
        Self {
            input,
            mask: None,
            min_rate_mm_h: default_min_rate(),
            mi: MiSettings::default(),
            threshold: ThresholdSettings::default(),
            backbone: BackboneSettings::default(),
            null_model: NullModelSettings::default(),
            histogram_bins: default_bins(),
            out: None,
            write_intermediates: true,
        }
    }

    /// Loads a config; relative paths inside it resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        if let InputSource::Grid { path, .. } = &mut cfg.input {
            *path = resolve(path);
        }
        cfg.mask = cfg.mask.as_ref().map(resolve);
        cfg.out = cfg.out.as_ref().map(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_rate_mm_h >= 0.0) {
            return Err(Error::Config("min_rate_mm_h must be >= 0".into()));
        }
        if self.null_model.samples == 0 {
            return Err(Error::Config("null_model.samples must be >= 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be >= 1".into()));
        }
        if matches!(self.mi.bins, Some(b) if b < 2) {
            return Err(Error::Config("mi.bins must be >= 2".into()));
        }
        for choice in [self.backbone.pc, self.backbone.mi] {
            if let BackboneChoice::Alpha(a) = choice {
                if !(a > 0.0 && a < 1.0) {
                    return Err(Error::Config(format!("backbone alpha must lie in (0, 1), got {a}")));
                }
            }
        }
        for choice in [self.threshold.pc, self.threshold.mi] {
            if let ThresholdChoice::Tau(t) = choice {
                if !t.is_finite() {
                    return Err(Error::Config("threshold tau must be finite".into()));
                }
            }
        }
        if let InputSource::Synthetic(spec) = &self.input {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.out.is_none() {
            return Err(Error::Config("no output directory (set `out` or pass --out)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Every artifact of a run with its content hash, sorted by path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub files: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn contains(&self, path: &str) -> bool {
        self.files.iter().any(|f| f.path == path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub tau: f64,
    pub mode: ThresholdMode,
    pub scan: Option<ThresholdScan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSelection {
    pub alpha: f64,
    pub calibration: Option<BackboneCalibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub measure: Measure,
    pub gt: ThresholdSelection,
    pub bb: BackboneSelection,
    pub gt_edges: usize,
    pub bb_edges: usize,
    pub shared: SharedEdges,
}

/// In-memory results of a run, alongside the files on disk.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub grid: GridSeries,
    pub networks: Vec<GeoGraph>,
    pub reports: Vec<MetricsReport>,
    pub ensembles: Vec<EnsembleReport>,
    pub table: Vec<TableRow>,
    pub measures: Vec<MeasureSummary>,
}

impl PipelineOutcome {
    pub fn network(&self, label: &str) -> Option<&GeoGraph> {
        self.networks.iter().find(|g| g.label == label)
    }
}

pub const NETWORK_ORDER: [&str; 6] = ["pcGT", "pcBB", "pcCM", "miGT", "miBB", "miCM"];

pub fn ingest(config: &PipelineConfig) -> Result<GridSeries> {
    let raw = match &config.input {
        InputSource::Grid { path, format } => {
            let format: GridFormat = format.parse().map_err(Error::Config)?;
            load_grid(path, format)?
        }
        InputSource::Synthetic(spec) => generate_synthetic(spec)?,
    };
    let mask = match &config.mask {
        Some(path) => RegionMask::load(path)?,
        None => RegionMask::all(),
    };
    apply_mask_and_filter(&raw, &mask, config.min_rate_mm_h)
}

fn select_threshold(sim: &SimilarityMatrix, choice: ThresholdChoice, mode: ThresholdMode) -> Result<ThresholdSelection> {
    Ok(match choice {
        ThresholdChoice::Tau(tau) => ThresholdSelection { tau, mode, scan: None },
        ThresholdChoice::Scan => {
            let taus = candidate_thresholds(sim);
            if taus.is_empty() {
                return Err(Error::Domain("no non-degenerate pairs to threshold".into()));
            }
            let scan = scan_max_diameter_threshold(sim, &taus, mode)?;
            ThresholdSelection {
                tau: scan.chosen_tau,
                mode,
                scan: Some(scan),
            }
        }
    })
}

fn select_backbone(sim: &SimilarityMatrix, choice: BackboneChoice, gt_edges: usize) -> BackboneSelection {
    let calibrate = |target| {
        let cal = calibrate_alpha(sim, target);
        BackboneSelection {
            alpha: cal.alpha,
            calibration: Some(cal),
        }
    };
    match choice {
        BackboneChoice::Alpha(alpha) => BackboneSelection { alpha, calibration: None },
        BackboneChoice::TargetEdges(target) => calibrate(target),
        BackboneChoice::MatchGt => calibrate(gt_edges),
    }
}

/// Writes a JSON explanation in place of a statistic that is undefined for
/// the network (e.g. regression on an edgeless graph).
fn undefined(reason: &Error) -> serde_json::Value {
    json!({"undefined": reason.to_string()})
}

fn write_geo_artifacts(dir: &Path, g: &GeoGraph, bins: usize) -> Result<()> {
    let label = &g.label;
    let geo = dir.join("geo");
    let hist = weight_histogram(g, bins).unwrap_or(Histogram { edges: vec![], counts: vec![] });
    write_text(&geo.join(format!("{label}.weights_hist.csv")), &hist.to_csv())?;
    match edge_length_stats(g, bins) {
        Ok(stats) => {
            write_text(&geo.join(format!("{label}.edge_lengths_hist.csv")), &stats.histogram.to_csv())?;
            write_json(
                &geo.join(format!("{label}.edge_lengths.json")),
                &json!({"mean_km": stats.mean_km, "max_km": stats.max_km}),
            )?;
        }
        Err(e) => {
            write_text(&geo.join(format!("{label}.edge_lengths_hist.csv")), "bin_lo,bin_hi,count\n")?;
            write_json(&geo.join(format!("{label}.edge_lengths.json")), &undefined(&e))?;
        }
    }
    let pairs = distance_pairs(g).unwrap_or_default();
    write_text(&geo.join(format!("{label}.scatter.csv")), &scatter_csv(&pairs))?;
    let regression = match regress(&pairs, Response::TopoOnGeo) {
        Ok(r) => serde_json::to_value(r)?,
        Err(e) => undefined(&e),
    };
    write_json(
        &geo.join(format!("{label}.regression.json")),
        &json!({"x": "geo_km", "y": "topo_hops", "fit": regression}),
    )
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_manifest(root: &Path) -> Result<RunManifest> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(root).expect("walk stays under root");
                out.push(ManifestEntry {
                    path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                });
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(RunManifest { files })
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!(".{name}.partial"))
}

/// Replaces `out` with `staging`. An existing `out` is removed only when it
/// is empty or holds a previous run (has a manifest).
fn publish(staging: &Path, out: &Path) -> Result<()> {
    if out.exists() {
        let is_previous_run = out.join("manifest.json").is_file();
        let is_empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !(is_previous_run || is_empty) {
            return Err(Error::Config(format!(
                "{} exists and is not a previous pipeline output; refusing to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    fs::rename(staging, out).map_err(|e| Error::io(out, e))
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let out = config.out.clone().expect("validated");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let staging = staging_dir(&out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let result = run_stages(config, &staging).and_then(|outcome| {
        publish(&staging, &out)?;
        Ok(PipelineOutcome { out_dir: out.clone(), ..outcome })
    });
    if result.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn run_stages(config: &PipelineConfig, dir: &Path) -> Result<PipelineOutcome> {
    let grid = ingest(config).map_err(|e| e.in_stage("ingest"))?;
    let bins = config.histogram_bins;

    let similarity = |measure| similarity_matrix(&grid, measure, config.mi).map_err(|e| e.in_stage("similarity"));
    let sims = [similarity(Measure::Pearson)?, similarity(Measure::MutualInformation)?];

    if config.write_intermediates {
        let inter = dir.join("intermediates");
        let mut buf = Vec::new();
        write_grid_csv(&grid, &mut buf).map_err(|e| Error::io(&inter, e))?;
        write_text(&inter.join("grid_filtered.csv"), &String::from_utf8_lossy(&buf))?;
        write_json(&inter.join("degenerate_cells.json"), &grid.degenerate_cells())?;
        for sim in &sims {
            write_similarity(&inter, &format!("similarity_{}", sim.measure.prefix()), sim)?;
        }
    }
    write_text(&dir.join("nodes.csv"), &nodes_csv(&sims[0].nodes))?;

    let mut networks = Vec::new();
    let mut reports = Vec::new();
    let mut ensembles = Vec::new();
    let mut measures = Vec::new();
    let mut rows = Vec::new();

    for sim in &sims {
        let prefix = sim.measure.prefix();
        let (gt_choice, bb_choice) = match sim.measure {
            Measure::Pearson => (config.threshold.pc, config.backbone.pc),
            Measure::MutualInformation => (config.threshold.mi, config.backbone.mi),
        };

        let gt_sel = select_threshold(sim, gt_choice, config.threshold.mode).map_err(|e| e.in_stage("build"))?;
        let gt = threshold_graph(sim, gt_sel.tau, gt_sel.mode).with_label(format!("{prefix}GT"));
        let bb_sel = select_backbone(sim, bb_choice, gt.edge_count());
        let bb = backbone_graph(sim, bb_sel.alpha)
            .map_err(|e| e.in_stage("build"))?
            .with_label(format!("{prefix}BB"));
        write_json(&dir.join(format!("build/{prefix}_threshold.json")), &gt_sel)?;
        write_json(&dir.join(format!("build/{prefix}_backbone.json")), &bb_sel)?;

        let cm_weights = match config.null_model.weights {
            CmWeightSource::Permuted => CmWeights::Permuted,
            CmWeightSource::Similarity => CmWeights::Similarity(sim),
        };
        let mut ensemble = ensemble_metrics(&gt, config.null_model.samples, config.null_model.seed, cm_weights)
            .map_err(|e| e.in_stage("nullmodel"))?;
        ensemble.label = format!("{prefix}CM");
        // sample 0 of the ensemble stands in for the CM network in exports
        let cm = configuration_sample(&gt.degrees(), &gt.weights(), config.null_model.seed)
            .and_then(|s| s.simplify(gt.nodes.clone(), &cm_weights))
            .map_err(|e| e.in_stage("nullmodel"))?
            .with_label(format!("{prefix}CM"));

        let gt_report = full_report(&gt);
        let bb_report = full_report(&bb);
        rows.push(TableRow::from(&gt_report));
        rows.push(TableRow::from(&bb_report));
        rows.push(ensemble.table_row());

        let shared = shared_edges(&gt, &bb).map_err(|e| e.in_stage("metrics"))?;
        measures.push(MeasureSummary {
            measure: sim.measure,
            gt_edges: gt.edge_count(),
            bb_edges: bb.edge_count(),
            gt: gt_sel,
            bb: bb_sel,
            shared,
        });

        for g in [&gt, &bb, &cm] {
            write_text(&dir.join(format!("networks/{}.edges.csv", g.label)), &edges_csv(g))?;
            write_json(&dir.join(format!("networks/{}.geojson", g.label)), &graph_geojson(g))?;
            write_geo_artifacts(dir, g, bins).map_err(|e| e.in_stage("geo"))?;
        }
        write_json(
            &dir.join(format!("maps/{prefix}_overlay.geojson")),
            &overlay_geojson(&gt, &bb).map_err(|e| e.in_stage("geo"))?,
        )?;
        write_json(&dir.join(format!("metrics/{}.json", gt.label)), &gt_report)?;
        write_json(&dir.join(format!("metrics/{}.json", bb.label)), &bb_report)?;
        write_json(&dir.join(format!("metrics/{}.json", ensemble.label)), &ensemble)?;

        networks.extend([gt, bb, cm]);
        reports.extend([gt_report, bb_report]);
        ensembles.push(ensemble);
    }

    write_text(&dir.join("table.csv"), &table_csv(&rows))?;
    write_json(
        &dir.join("shared_edges.json"),
        &measures
            .iter()
            .map(|m| (m.measure.prefix().to_string(), m.shared))
            .collect::<std::collections::BTreeMap<_, _>>(),
    )?;
    let verdicts: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| match (r.mean_shortest_path, r.er) {
            (Some(l), Some(er)) => json!({
                "network": r.label,
                "mean_l": l,
                "mean_c": r.mean_clustering,
                "l_rand": er.l_rand,
                "c_rand": er.c_rand,
                "small_world": small_world_test(l, r.mean_clustering, er.l_rand, er.c_rand),
            }),
            _ => json!({"network": r.label, "small_world": null}),
        })
        .collect();
    write_json(&dir.join("small_world.json"), &verdicts)?;

    let manifest = collect_manifest(dir)?;
    write_json(&dir.join("manifest.json"), &manifest)?;

    Ok(PipelineOutcome {
        out_dir: dir.to_path_buf(),
        manifest,
        grid,
        networks,
        reports,
        ensembles,
        table: rows,
        measures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_forms() {
        let cfg: PipelineConfig = serde_json::from_str(
            r#"{
                "input": {"synthetic": {"rows": 4, "cols": 4, "regions": 2,
                          "intra_correlation": 0.5, "length": 32, "seed": 3}},
                "threshold": {"pc": {"tau": 0.86}, "mi": "scan", "mode": "inclusive"},
                "backbone": {"pc": {"alpha": 0.05}, "mi": {"target_edges": 12}},
                "null_model": {"samples": 10, "seed": 7, "weights": "similarity"},
                "out": "/tmp/x"
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.threshold.pc, ThresholdChoice::Tau(0.86));
        assert_eq!(cfg.threshold.mi, ThresholdChoice::Scan);
        assert_eq!(cfg.backbone.mi, BackboneChoice::TargetEdges(12));
        assert_eq!(cfg.null_model.weights, CmWeightSource::Similarity);
        assert_eq!(cfg.min_rate_mm_h, 1.0);
        cfg.validate().unwrap();

        let defaults: PipelineConfig =
            serde_json::from_str(r#"{"input": {"grid": {"path": "g.csv"}}}"#).unwrap();
        assert_eq!(defaults.null_model.samples, 10_000);
        assert_eq!(defaults.backbone.pc, BackboneChoice::MatchGt);
        assert!(defaults.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"input": {"grid": {"path": "g"}}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn bad_alpha_rejected() {
        let mut cfg = PipelineConfig::new(InputSource::Synthetic(SyntheticSpec::new(3, 3, 1, 0.5, 16, 0)));
        cfg.out = Some("/tmp/never".into());
        cfg.backbone.pc = BackboneChoice::Alpha(1.5);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
