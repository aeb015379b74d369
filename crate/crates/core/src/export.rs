//! File formats: edge lists, node tables, GeoJSON, similarity triples with
//! a JSON sidecar, and scatter tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! reader here reproduces the written values bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geoanalysis::DistancePair;
use crate::graph::{Edge, GeoGraph, GeoNode};
use crate::similarity::{Measure, MiNormalization, SimilarityMatrix};

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn edges_csv(g: &GeoGraph) -> String {
    let mut out = String::from("i,j,weight\n");
    for e in &g.edges {
        let _ = writeln!(out, "{},{},{}", e.i, e.j, e.weight);
    }
    out
}

pub fn nodes_csv(nodes: &[GeoNode]) -> String {
    let mut out = String::from("id,x_km,y_km,lat,lon\n");
    for n in nodes {
        let _ = writeln!(out, "{},{},{},{},{}", n.id, n.x_km, n.y_km, n.lat, n.lon);
    }
    out
}

#[derive(Debug, Deserialize)]
struct EdgeRecord {
    i: usize,
    j: usize,
    weight: f64,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub fn read_nodes_csv(path: &Path) -> Result<Vec<GeoNode>> {
    let mut nodes = Vec::new();
    for record in csv_reader(path)?.deserialize() {
        nodes.push(record?);
    }
    if nodes.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no nodes", path.display())));
    }
    Ok(nodes)
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<Edge>> {
    let mut edges = Vec::new();
    for record in csv_reader(path)?.deserialize() {
        let r: EdgeRecord = record?;
        edges.push(Edge {
            i: r.i,
            j: r.j,
            weight: r.weight,
        });
    }
    Ok(edges)
}

pub fn read_graph(label: &str, nodes_path: &Path, edges_path: &Path) -> Result<GeoGraph> {
    GeoGraph::new(label, read_nodes_csv(nodes_path)?, read_edges_csv(edges_path)?)
}

fn node_feature(n: &GeoNode, label: &str) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [n.lon, n.lat]},
        "properties": {"id": n.id, "x_km": n.x_km, "y_km": n.y_km, "network": label},
    })
}

fn edge_feature(g: &GeoGraph, e: &Edge, label: &str, extra: Option<(&str, &str)>) -> Value {
    let (a, b) = (&g.nodes[e.i], &g.nodes[e.j]);
    let mut props = json!({
        "i": e.i,
        "j": e.j,
        "weight": e.weight,
        "length_km": a.distance_km(b),
        "network": label,
    });
    if let Some((k, v)) = extra {
        props[k] = json!(v);
    }
    json!({
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": [[a.lon, a.lat], [b.lon, b.lat]]},
        "properties": props,
    })
}

/// FeatureCollection with a Point per node and a LineString per edge.
pub fn graph_geojson(g: &GeoGraph) -> Value {
    let features: Vec<Value> = g
        .nodes
        .iter()
        .map(|n| node_feature(n, &g.label))
        .chain(g.edges.iter().map(|e| edge_feature(g, e, &g.label, None)))
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Overlay of two networks on the same nodes; each edge is tagged with
/// `membership` = the label of the graph holding it, or `shared`.
pub fn overlay_geojson(g1: &GeoGraph, g2: &GeoGraph) -> Result<Value> {
    if g1.node_count() != g2.node_count() {
        return Err(Error::NodeSetMismatch(g1.node_count(), g2.node_count()));
    }
    let (s1, s2) = (g1.edge_set(), g2.edge_set());
    let label = format!("{}+{}", g1.label, g2.label);
    let mut features: Vec<Value> = g1.nodes.iter().map(|n| node_feature(n, &label)).collect();
    for e in &g1.edges {
        let tag = if s2.contains(&(e.i, e.j)) { "shared" } else { g1.label.as_str() };
        features.push(edge_feature(g1, e, &g1.label, Some(("membership", tag))));
    }
    for e in g2.edges.iter().filter(|e| !s1.contains(&(e.i, e.j))) {
        features.push(edge_feature(g2, e, &g2.label, Some(("membership", g2.label.as_str()))));
    }
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

/// Metadata stored next to a similarity triple file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySidecar {
    pub measure: Measure,
    pub n: usize,
    pub t: usize,
    pub bins: Option<usize>,
    pub normalization: Option<MiNormalization>,
    pub degenerate_nodes: Vec<usize>,
}

pub fn similarity_csv(sim: &SimilarityMatrix) -> String {
    let mut out = String::from("i,j,weight\n");
    for (i, j, w) in sim.upper_triangle() {
        let _ = writeln!(out, "{i},{j},{w}");
    }
    out
}

pub fn similarity_sidecar(sim: &SimilarityMatrix) -> SimilaritySidecar {
    SimilaritySidecar {
        measure: sim.measure,
        n: sim.n(),
        t: sim.series_len,
        bins: sim.mi_bins,
        normalization: sim.mi_normalization,
        degenerate_nodes: (0..sim.n()).filter(|&i| sim.degenerate[i]).collect(),
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_similarity(dir: &Path, stem: &str, sim: &SimilarityMatrix) -> Result<()> {
    write_text(&dir.join(format!("{stem}.csv")), &similarity_csv(sim))?;
    write_json(&dir.join(format!("{stem}.json")), &similarity_sidecar(sim))
}

/// Reads a matrix back from its triple CSV and sidecar. Node positions are
/// not part of the format and must be supplied.
pub fn read_similarity(csv_path: &Path, sidecar_path: &Path, nodes: Vec<GeoNode>) -> Result<SimilarityMatrix> {
    let meta: SimilaritySidecar = read_json(sidecar_path)?;
    if meta.n != nodes.len() {
        return Err(Error::NodeSetMismatch(meta.n, nodes.len()));
    }
    let triples = read_edges_csv(csv_path)?
        .into_iter()
        .map(|e| (e.i, e.j, e.weight))
        .collect::<Vec<_>>();
    let mut degenerate = vec![false; meta.n];
    for &d in &meta.degenerate_nodes {
        if d >= meta.n {
            return Err(Error::InvalidParameter(format!("degenerate node {d} out of range")));
        }
        degenerate[d] = true;
    }
    let mut sim = SimilarityMatrix::from_triples(meta.measure, nodes, degenerate, &triples)?;
    sim.series_len = meta.t;
    sim.mi_bins = meta.bins;
    sim.mi_normalization = meta.normalization;
    Ok(sim)
}

pub fn scatter_csv(pairs: &[DistancePair]) -> String {
    let mut out = String::from("i,j,topo_hops,geo_km\n");
    for p in pairs {
        let _ = writeln!(out, "{},{},{},{}", p.i, p.j, p.topo_hops, p.geo_km);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::line_nodes;

    fn sample_graph() -> GeoGraph {
        let nodes = vec![
            GeoNode { id: 0, x_km: 0.0, y_km: 0.0, lat: -23.6, lon: -46.6 },
            GeoNode { id: 1, x_km: 1.0, y_km: 0.0, lat: -23.6, lon: -46.59 },
            GeoNode { id: 2, x_km: 0.0, y_km: 1.0, lat: -23.59, lon: -46.6 },
        ];
        GeoGraph::new(
            "pcGT",
            nodes,
            vec![Edge { i: 0, j: 1, weight: 0.1 + 0.2 }, Edge { i: 1, j: 2, weight: 0.9 }],
        )
        .unwrap()
    }

    #[test]
    fn graph_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = sample_graph();
        write_text(&dir.path().join("n.csv"), &nodes_csv(&g.nodes)).unwrap();
        write_text(&dir.path().join("e.csv"), &edges_csv(&g)).unwrap();
        let back = read_graph("pcGT", &dir.path().join("n.csv"), &dir.path().join("e.csv")).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn geojson_shape() {
        let g = sample_graph();
        let v = graph_geojson(&g);
        let features = v["features"].as_array().unwrap();
        assert_eq!(features.len(), 5);
        assert_eq!(features[0]["geometry"]["coordinates"], json!([-46.6, -23.6]));
        assert_eq!(features[3]["geometry"]["type"], "LineString");
        assert_eq!(features[4]["properties"]["weight"], json!(0.9));
        assert_eq!(features[4]["properties"]["network"], "pcGT");

        let other = GeoGraph::new("pcBB", g.nodes.clone(), vec![Edge { i: 1, j: 2, weight: 0.9 }, Edge { i: 0, j: 2, weight: 0.4 }]).unwrap();
        let o = overlay_geojson(&g, &other).unwrap();
        let tags: Vec<_> = o["features"].as_array().unwrap()[3..]
            .iter()
            .map(|f| f["properties"]["membership"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(tags, vec!["pcGT", "shared", "pcBB"]);
    }

    #[test]
    fn similarity_round_trip() {
        let dense = vec![
            vec![0.0, 0.25, 1.0 / 3.0],
            vec![0.25, 0.0, -0.7],
            vec![1.0 / 3.0, -0.7, 0.0],
        ];
        let sim = SimilarityMatrix::from_dense(Measure::Pearson, &dense, line_nodes(3), vec![false; 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_similarity(dir.path(), "pc", &sim).unwrap();
        let back = read_similarity(&dir.path().join("pc.csv"), &dir.path().join("pc.json"), line_nodes(3)).unwrap();
        assert_eq!(back, sim);
        assert!(read_similarity(&dir.path().join("pc.csv"), &dir.path().join("pc.json"), line_nodes(4)).is_err());
    }

    #[test]
    fn scatter_format() {
        let p = [DistancePair { i: 0, j: 2, topo_hops: 2, geo_km: 1.5 }];
        assert_eq!(scatter_csv(&p), "i,j,topo_hops,geo_km\n0,2,2,1.5\n");
    }
}
