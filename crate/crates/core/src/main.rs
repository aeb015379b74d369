use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use geonet::error::{Error, Result};
use geonet::export::{
    edges_csv, graph_geojson, nodes_csv, read_graph, read_nodes_csv, read_similarity, scatter_csv, write_json,
    write_similarity, write_text,
};
use geonet::geoanalysis::{distance_pairs, edge_length_stats, regress, weight_histogram, Response};
use geonet::grid::{apply_mask_and_filter, load_grid, write_grid_binary, write_grid_csv, GridFormat, RegionMask};
use geonet::metrics::full_report;
use geonet::netbuild::{
    backbone_graph, calibrate_alpha, candidate_thresholds, scan_max_diameter_threshold, threshold_graph, ThresholdMode,
};
use geonet::nullmodels::{ensemble_metrics, CmWeights, DEFAULT_SAMPLES};
use geonet::pipeline::{run_pipeline, PipelineConfig};
use geonet::similarity::{similarity_matrix, Measure, MiNormalization, MiSettings};
use geonet::synth::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "geonet", version, about = "Geographical similarity networks from gridded time series")]
struct Cli {
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a region mask and the rain-rate filter to a grid.
    Ingest(IngestArgs),
    /// Pairwise similarity matrix of a grid.
    Similarity(SimilarityArgs),
    /// Build a GT or BB network from a stored similarity matrix.
    Build(BuildArgs),
    /// Configuration-model ensemble metrics for a network.
    Nullmodel(NullmodelArgs),
    /// Topological metrics of a network.
    Metrics(GraphArgs),
    /// Spatial analysis of a network: histograms, scatter, regression.
    Geo(GeoArgs),
    /// Run every stage from a JSON config.
    #[command(long_about = CONFIG_HELP)]
    Pipeline(PipelineArgs),
    /// Write a synthetic multi-region grid.
    Synth(SynthArgs),
}

const CONFIG_HELP: &str = "Run every stage from a JSON config.

Config keys (defaults in brackets; relative paths resolve against the config file):
  input              {\"grid\": {\"path\": P, \"format\": \"csv\"|\"binary\" [csv]}}
                     or {\"synthetic\": {rows, cols, regions, intra_correlation, length, seed,
                     spatial_coherence [0.8], smoothing_km [1.0]}}
  mask               GeoJSON polygon or id-list file [all cells]
  min_rate_mm_h      samples at or below are zeroed [1.0]
  mi                 {\"bins\": n [Sturges], \"normalization\": \"none\"|\"max_entropy\" [max_entropy]}
  threshold          {\"pc\": \"scan\"|{\"tau\": x} [scan], \"mi\": same [scan],
                      \"mode\": \"strict\"|\"inclusive\" [strict]}
  backbone           {\"pc\": \"match_gt\"|{\"alpha\": a}|{\"target_edges\": n} [match_gt], \"mi\": same}
  null_model         {\"samples\": n [10000], \"seed\": s [0],
                      \"weights\": \"permuted\"|\"similarity\" [permuted]}
  histogram_bins     [20]
  out                output directory (or --out)
  write_intermediates  [true]";

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    /// GeoJSON polygon or id list; keeps every cell when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    min_rate: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    out_format: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Pc,
    Mi,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Pc => Measure::Pearson,
            MeasureArg::Mi => Measure::MutualInformation,
        }
    }
}

#[derive(Args)]
struct SimilarityArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, value_enum)]
    measure: MeasureArg,
    /// MI bin count; Sturges' rule when omitted.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, default_value = "max_entropy")]
    normalization: String,
    /// Output directory for `<pc|mi>.csv`, `<pc|mi>.json` and `nodes.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gt,
    Bb,
}

#[derive(Args)]
struct BuildArgs {
    /// Similarity triple CSV; its JSON sidecar sits next to it.
    #[arg(long)]
    similarity: PathBuf,
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Fixed GT threshold; the max-diameter scan runs when omitted.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    inclusive: bool,
    #[arg(long, conflicts_with = "target_edges")]
    alpha: Option<f64>,
    #[arg(long)]
    target_edges: Option<usize>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value = "network")]
    label: String,
    /// JSON output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NullmodelArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GeoArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value = "network")]
    label: String,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the null-model seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    no_intermediates: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 2)]
    regions: usize,
    #[arg(long, default_value_t = 0.6)]
    intra_correlation: f64,
    #[arg(long, default_value_t = 400)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn save_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let format: GridFormat = a.format.parse().map_err(Error::Config)?;
    let out_format: GridFormat = a.out_format.parse().map_err(Error::Config)?;
    let grid = load_grid(&a.input, format)?;
    let mask = match &a.mask {
        Some(p) => RegionMask::load(p)?,
        None => RegionMask::all(),
    };
    let filtered = apply_mask_and_filter(&grid, &mask, a.min_rate)?;
    let w = create(&a.out)?;
    match out_format {
        GridFormat::Csv => write_grid_csv(&filtered, w),
        GridFormat::Binary => write_grid_binary(&filtered, w),
    }
    .map_err(|e| Error::io(&a.out, e))?;
    eprintln!(
        "kept {} of {} cells, {} constant",
        filtered.len(),
        grid.len(),
        filtered.degenerate_cells().len()
    );
    Ok(())
}

fn similarity(a: SimilarityArgs) -> Result<()> {
    let format: GridFormat = a.format.parse().map_err(Error::Config)?;
    let normalization: MiNormalization = a.normalization.parse().map_err(Error::Config)?;
    let grid = load_grid(&a.grid, format)?;
    let measure = Measure::from(a.measure);
    let sim = similarity_matrix(&grid, measure, MiSettings { bins: a.bins, normalization })?;
    write_similarity(&a.out, measure.prefix(), &sim)?;
    write_text(&a.out.join("nodes.csv"), &nodes_csv(&sim.nodes))
}

fn build(a: BuildArgs) -> Result<()> {
    let sidecar = a.similarity.with_extension("json");
    let sim = read_similarity(&a.similarity, &sidecar, read_nodes_csv(&a.nodes)?)?;
    let prefix = sim.measure.prefix();
    let (graph, info) = match a.method {
        Method::Gt => {
            let mode = if a.inclusive { ThresholdMode::Inclusive } else { ThresholdMode::Strict };
            let (tau, scan) = match a.tau {
                Some(t) => (t, None),
                None => {
                    let scan = scan_max_diameter_threshold(&sim, &candidate_thresholds(&sim), mode)?;
                    (scan.chosen_tau, Some(scan))
                }
            };
            let label = a.label.unwrap_or_else(|| format!("{prefix}GT"));
            (threshold_graph(&sim, tau, mode).with_label(label), json!({"tau": tau, "mode": mode, "scan": scan}))
        }
        Method::Bb => {
            let (alpha, cal) = match (a.alpha, a.target_edges) {
                (Some(alpha), _) => (alpha, None),
                (None, Some(target)) => {
                    let cal = calibrate_alpha(&sim, target);
                    (cal.alpha, Some(cal))
                }
                (None, None) => return Err(Error::Config("backbone needs --alpha or --target-edges".into())),
            };
            let label = a.label.unwrap_or_else(|| format!("{prefix}BB"));
            (backbone_graph(&sim, alpha)?.with_label(label), json!({"alpha": alpha, "calibration": cal}))
        }
    };
    let stem = &graph.label;
    write_text(&a.out.join(format!("{stem}.edges.csv")), &edges_csv(&graph))?;
    write_json(&a.out.join(format!("{stem}.geojson")), &graph_geojson(&graph))?;
    write_json(&a.out.join(format!("{stem}.build.json")), &info)?;
    eprintln!("{stem}: {} edges", graph.edge_count());
    Ok(())
}

fn metrics(a: GraphArgs) -> Result<()> {
    let g = read_graph(&a.label, &a.nodes, &a.edges)?;
    save_json(a.out.as_deref(), &full_report(&g))
}

fn nullmodel(a: NullmodelArgs) -> Result<()> {
    let g = read_graph(&a.graph.label, &a.graph.nodes, &a.graph.edges)?;
    let report = ensemble_metrics(&g, a.samples, a.seed, CmWeights::Permuted)?;
    save_json(a.graph.out.as_deref(), &report)
}

fn geo(a: GeoArgs) -> Result<()> {
    let g = read_graph(&a.label, &a.nodes, &a.edges)?;
    let label = &g.label;
    write_text(&a.out.join(format!("{label}.weights_hist.csv")), &weight_histogram(&g, a.bins)?.to_csv())?;
    let lengths = edge_length_stats(&g, a.bins)?;
    write_text(&a.out.join(format!("{label}.edge_lengths_hist.csv")), &lengths.histogram.to_csv())?;
    write_json(
        &a.out.join(format!("{label}.edge_lengths.json")),
        &json!({"mean_km": lengths.mean_km, "max_km": lengths.max_km}),
    )?;
    let pairs = distance_pairs(&g)?;
    write_text(&a.out.join(format!("{label}.scatter.csv")), &scatter_csv(&pairs))?;
    let fit = regress(&pairs, Response::TopoOnGeo)?;
    write_json(&a.out.join(format!("{label}.regression.json")), &json!({"x": "geo_km", "y": "topo_hops", "fit": fit}))
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.null_model.seed = seed;
    }
    if let Some(samples) = a.samples {
        cfg.null_model.samples = samples;
    }
    if let Some(out) = a.out {
        cfg.out = Some(out);
    }
    if a.no_intermediates {
        cfg.write_intermediates = false;
    }
    let outcome = run_pipeline(&cfg)?;
    print!("{}", geonet::metrics::table_csv(&outcome.table));
    eprintln!("{} files written to {}", outcome.manifest.files.len() + 1, outcome.out_dir.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec::new(a.rows, a.cols, a.regions, a.intra_correlation, a.length, a.seed);
    let grid = generate_synthetic(&spec)?;
    write_grid_csv(&grid, create(&a.out)?).map_err(|e| Error::io(&a.out, e))
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Similarity(a) => similarity(a),
        Command::Build(a) => build(a),
        Command::Nullmodel(a) => nullmodel(a),
        Command::Metrics(a) => metrics(a),
        Command::Geo(a) => geo(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
