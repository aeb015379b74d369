//! Gridded time-series ingest.
//!
//! Cells are the grid points of a cartesian radar scan. Every cell carries
//! a planar position in km (used for all distance computations), a lat/lon
//! pair (carried for export only) and a precipitation series of common
//! length `T >= 2`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Marshall-Palmer coefficients, Z = a R^b.
pub const MARSHALL_PALMER_A: f64 = 200.0;
pub const MARSHALL_PALMER_B: f64 = 1.6;

/// Time step assumed when the input format does not carry one.
pub const DEFAULT_TIME_STEP_MINUTES: f64 = 10.0;

const BINARY_MAGIC: &[u8; 8] = b"GEOGRID1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "dBZ")]
    Dbz,
    #[serde(rename = "mm_per_hour")]
    MmPerHour,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Dbz => "dBZ",
            Units::MmPerHour => "mm_per_hour",
        }
    }
}

impl FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "dBZ" | "dbz" | "DBZ" => Ok(Units::Dbz),
            "mm_per_hour" | "mm/h" | "mmh" => Ok(Units::MmPerHour),
            other => Err(format!("unknown units `{other}` (expected dBZ or mm_per_hour)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Csv,
    Binary,
}

impl FromStr for GridFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(GridFormat::Csv),
            "binary" | "bin" => Ok(GridFormat::Binary),
            other => Err(format!("unknown grid format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// Contiguous node id within its `GridSeries`.
    pub id: usize,
    /// Id of the cell in the file it was loaded from. Survives re-indexing
    /// so that id-list masks stay meaningful after selection.
    pub source_id: usize,
    pub x_km: f64,
    pub y_km: f64,
    pub lat: f64,
    pub lon: f64,
    pub series: Vec<f64>,
}

impl GridCell {
    /// A series with zero range makes correlation undefined.
    pub fn is_constant(&self) -> bool {
        match self.series.first() {
            Some(&first) => self.series.iter().all(|&v| v == first),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSeries {
    pub cells: Vec<GridCell>,
    pub time_step_minutes: f64,
    pub units: Units,
}

impl GridSeries {
    /// Validates the invariants and re-indexes ids from zero.
    pub fn new(mut cells: Vec<GridCell>, time_step_minutes: f64, units: Units) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyInput("grid has no cells".into()));
        }
        if !(time_step_minutes > 0.0 && time_step_minutes.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {time_step_minutes}"
            )));
        }
        let t = cells[0].series.len();
        if t < 2 {
            return Err(Error::SeriesTooShort(t));
        }
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        for (row, cell) in cells.iter_mut().enumerate() {
            if cell.series.len() != t {
                return Err(Error::RaggedSeries {
                    row,
                    expected: t,
                    found: cell.series.len(),
                });
            }
            let key = (cell.x_km.to_bits(), cell.y_km.to_bits());
            if let Some(&first_row) = seen.get(&key) {
                return Err(Error::DuplicateCoordinates {
                    row,
                    first_row,
                    x_km: cell.x_km,
                    y_km: cell.y_km,
                });
            }
            seen.insert(key, row);
            cell.id = row;
        }
        Ok(Self {
            cells,
            time_step_minutes,
            units,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.cells.first().map_or(0, |c| c.series.len())
    }

    /// Ids of cells whose series is constant (flagged, not removed).
    pub fn degenerate_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.is_constant())
            .map(|c| c.id)
            .collect()
    }
}

/// Inverts the Marshall-Palmer relation Z = a R^b for the rain rate R in mm/h.
pub fn dbz_to_rain_rate(dbz: f64, a: f64, b: f64) -> f64 {
    let z = 10f64.powf(dbz / 10.0);
    (z / a).powf(1.0 / b)
}

/// Region selection, either a lat/lon polygon or an explicit id list.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionMask {
    /// Closed ring of `(lat, lon)` vertices.
    Polygon(Vec<(f64, f64)>),
    /// Source cell ids to keep.
    CellIds(BTreeSet<usize>),
}

impl RegionMask {
    pub fn polygon(ring: Vec<(f64, f64)>) -> Result<Self> {
        if ring.len() < 4 {
            return Err(Error::InvalidMask(format!(
                "polygon ring needs at least 4 vertices (closed triangle), got {}",
                ring.len()
            )));
        }
        if ring.first() != ring.last() {
            return Err(Error::InvalidMask(
                "polygon ring is not closed (first vertex != last vertex)".into(),
            ));
        }
        if ring.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidMask("non-finite polygon vertex".into()));
        }
        Ok(RegionMask::Polygon(ring))
    }

    /// A square far larger than any lat/lon range, so every cell is inside.
    pub fn all() -> Self {
        let m = 1e9;
        RegionMask::Polygon(vec![(-m, -m), (-m, m), (m, m), (m, -m), (-m, -m)])
    }

    pub fn contains(&self, cell: &GridCell) -> bool {
        match self {
            RegionMask::Polygon(ring) => point_strictly_inside(ring, (cell.lat, cell.lon)),
            RegionMask::CellIds(ids) => ids.contains(&cell.source_id),
        }
    }

    /// Loads a GeoJSON Polygon (bare geometry, Feature, or a FeatureCollection
    /// holding one polygon feature), or a text file with one cell id per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(trimmed)?;
            Self::from_geojson(&value)
        } else {
            Self::from_id_list(&text)
        }
    }

    pub fn from_id_list(text: &str) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let id = line.parse::<usize>().map_err(|e| Error::Parse {
                row,
                field: "cell_id".into(),
                message: e.to_string(),
            })?;
            ids.insert(id);
        }
        if ids.is_empty() {
            return Err(Error::InvalidMask("id list is empty".into()));
        }
        Ok(RegionMask::CellIds(ids))
    }

    pub fn from_geojson(value: &serde_json::Value) -> Result<Self> {
        let geometry = match value.get("type").and_then(|t| t.as_str()) {
            Some("Polygon") => value,
            Some("Feature") => value
                .get("geometry")
                .ok_or_else(|| Error::InvalidMask("feature without geometry".into()))?,
            Some("FeatureCollection") => {
                let features = value
                    .get("features")
                    .and_then(|f| f.as_array())
                    .ok_or_else(|| Error::InvalidMask("collection without features".into()))?;
                if features.len() != 1 {
                    return Err(Error::InvalidMask(format!(
                        "expected exactly one polygon feature, found {}",
                        features.len()
                    )));
                }
                return Self::from_geojson(&features[0]);
            }
            other => {
                return Err(Error::InvalidMask(format!(
                    "unsupported GeoJSON type {other:?}"
                )))
            }
        };
        if geometry.get("type").and_then(|t| t.as_str()) != Some("Polygon") {
            return Err(Error::InvalidMask("geometry is not a Polygon".into()));
        }
        let rings = geometry
            .get("coordinates")
            .and_then(|c| c.as_array())
            .ok_or_else(|| Error::InvalidMask("polygon without coordinates".into()))?;
        if rings.len() != 1 {
            return Err(Error::InvalidMask(format!(
                "expected a single ring, found {}",
                rings.len()
            )));
        }
        let ring = rings[0]
            .as_array()
            .ok_or_else(|| Error::InvalidMask("ring is not an array".into()))?
            .iter()
            .map(|pos| {
                let pos = pos.as_array().filter(|p| p.len() >= 2);
                // GeoJSON positions are [lon, lat].
                match pos.map(|p| (p[0].as_f64(), p[1].as_f64())) {
                    Some((Some(lon), Some(lat))) => Ok((lat, lon)),
                    _ => Err(Error::InvalidMask("bad position in ring".into())),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::polygon(ring)
    }
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

/// Even-odd ray casting. Points on the boundary are outside.
pub fn point_strictly_inside(ring: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(p, a, b) {
            return false;
        }
        if (a.1 > p.1) != (b.1 > p.1) {
            let x_cross = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Keeps cells inside `mask`, converts dBZ to mm/h, and zeroes every sample
/// with rate <= `min_rate_mm_h`. Ids are re-indexed in original order.
pub fn apply_mask_and_filter(
    grid: &GridSeries,
    mask: &RegionMask,
    min_rate_mm_h: f64,
) -> Result<GridSeries> {
    let cells: Vec<GridCell> = grid
        .cells
        .iter()
        .filter(|c| mask.contains(c))
        .map(|c| {
            let series = c
                .series
                .iter()
                .map(|&v| {
                    let rate = match grid.units {
                        Units::Dbz => dbz_to_rain_rate(v, MARSHALL_PALMER_A, MARSHALL_PALMER_B),
                        Units::MmPerHour => v,
                    };
                    if rate > min_rate_mm_h {
                        rate
                    } else {
                        0.0
                    }
                })
                .collect();
            GridCell {
                series,
                ..c.clone()
            }
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptySelection);
    }
    GridSeries::new(cells, grid.time_step_minutes, Units::MmPerHour)
}

pub fn load_grid(path: &Path, format: GridFormat) -> Result<GridSeries> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        GridFormat::Csv => read_grid_csv(BufReader::new(file)),
        GridFormat::Binary => read_grid_binary(BufReader::new(file)),
    }
}

fn parse_field<T: FromStr>(row: usize, field: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| Error::Parse {
        row,
        field: field.to_string(),
        message: format!("`{raw}`: {e}"),
    })
}

fn parse_finite(row: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = parse_field(row, field, raw)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            field: field.to_string(),
            message: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

/// Reads the grid CSV format `id,x_km,y_km,lat,lon,units,t0,...,t{T-1}`.
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn read_grid_csv<R: BufRead>(reader: R) -> Result<GridSeries> {
    const FIXED: [&str; 6] = ["id", "x_km", "y_km", "lat", "lon", "units"];
    let mut lines = reader.lines();
    let header = loop {
        match lines.next() {
            None => return Err(Error::EmptyInput("grid file is empty".into())),
            Some(line) => {
                let line = line.map_err(|e| Error::io("<grid>", e))?;
                let line = line.trim_end_matches('\r').to_string();
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < FIXED.len() + 2 {
        return Err(Error::MalformedHeader(format!(
            "expected `{}` plus at least two time columns",
            FIXED.join(",")
        )));
    }
    for (k, name) in FIXED.iter().enumerate() {
        if columns[k] != *name {
            return Err(Error::MalformedHeader(format!(
                "column {k} is `{}`, expected `{name}`",
                columns[k]
            )));
        }
    }
    for (k, name) in columns[FIXED.len()..].iter().enumerate() {
        if *name != format!("t{k}") {
            return Err(Error::MalformedHeader(format!(
                "time column {k} is `{name}`, expected `t{k}`"
            )));
        }
    }
    let t = columns.len() - FIXED.len();

    let mut cells = Vec::new();
    let mut units: Option<Units> = None;
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (k, line) in lines.enumerate() {
        let row = k + 2;
        let line = line.map_err(|e| Error::io("<grid>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < FIXED.len() {
            return Err(Error::Parse {
                row,
                field: FIXED[fields.len()].into(),
                message: "missing field".into(),
            });
        }
        let found = fields.len() - FIXED.len();
        if found != t {
            return Err(Error::RaggedSeries {
                row,
                expected: t,
                found,
            });
        }
        let id: usize = parse_field(row, "id", fields[0])?;
        if id != cells.len() {
            return Err(Error::Parse {
                row,
                field: "id".into(),
                message: format!("ids must be contiguous from 0: expected {}, got {id}", cells.len()),
            });
        }
        let x_km = parse_finite(row, "x_km", fields[1])?;
        let y_km = parse_finite(row, "y_km", fields[2])?;
        let lat = parse_finite(row, "lat", fields[3])?;
        let lon = parse_finite(row, "lon", fields[4])?;
        let row_units: Units = parse_field(row, "units", fields[5])?;
        match units {
            None => units = Some(row_units),
            Some(u) if u != row_units => {
                return Err(Error::Parse {
                    row,
                    field: "units".into(),
                    message: format!("units `{}` differ from earlier rows (`{}`)", row_units.as_str(), u.as_str()),
                })
            }
            _ => {}
        }
        let key = (x_km.to_bits(), y_km.to_bits());
        if let Some(&first_row) = seen.get(&key) {
            return Err(Error::DuplicateCoordinates {
                row,
                first_row,
                x_km,
                y_km,
            });
        }
        seen.insert(key, row);
        let series = fields[FIXED.len()..]
            .iter()
            .enumerate()
            .map(|(j, raw)| parse_finite(row, &format!("t{j}"), raw))
            .collect::<Result<Vec<_>>>()?;
        cells.push(GridCell {
            id,
            source_id: id,
            x_km,
            y_km,
            lat,
            lon,
            series,
        });
    }
    let units = units.ok_or_else(|| Error::EmptyInput("grid file has no data rows".into()))?;
    GridSeries::new(cells, DEFAULT_TIME_STEP_MINUTES, units)
}

/// Writes the CSV format read by [`read_grid_csv`]. Floats use the shortest
/// round-trip representation, so a reload is bit-exact.
pub fn write_grid_csv<W: std::io::Write>(grid: &GridSeries, mut out: W) -> std::io::Result<()> {
    write!(out, "id,x_km,y_km,lat,lon,units")?;
    for k in 0..grid.series_len() {
        write!(out, ",t{k}")?;
    }
    writeln!(out)?;
    for c in &grid.cells {
        write!(
            out,
            "{},{},{},{},{},{}",
            c.id,
            c.x_km,
            c.y_km,
            c.lat,
            c.lon,
            grid.units.as_str()
        )?;
        for v in &c.series {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Binary layout, little-endian:
/// magic `GEOGRID1`, u32 N, u32 T, f64 time step (minutes), u8 units
/// (0 = dBZ, 1 = mm/h), then per cell: u64 id, f64 x_km, y_km, lat, lon,
/// and T f64 samples.
pub fn write_grid_binary<W: std::io::Write>(grid: &GridSeries, mut out: W) -> std::io::Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(grid.len() as u32).to_le_bytes())?;
    out.write_all(&(grid.series_len() as u32).to_le_bytes())?;
    out.write_all(&grid.time_step_minutes.to_le_bytes())?;
    out.write_all(&[match grid.units {
        Units::Dbz => 0u8,
        Units::MmPerHour => 1u8,
    }])?;
    for c in &grid.cells {
        out.write_all(&(c.id as u64).to_le_bytes())?;
        for v in [c.x_km, c.y_km, c.lat, c.lon] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &c.series {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_grid_binary<R: Read>(mut reader: R) -> Result<GridSeries> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<grid>", e))?;
    if bytes.is_empty() {
        return Err(Error::EmptyInput("grid file is empty".into()));
    }
    let mut cursor = ByteCursor { bytes: &bytes, pos: 0 };
    let magic = cursor.take(8, "magic")?;
    if magic != BINARY_MAGIC {
        return Err(Error::MalformedHeader("bad magic bytes".into()));
    }
    let n = cursor.u32("n")? as usize;
    let t = cursor.u32("t")? as usize;
    let time_step = cursor.f64("time_step_minutes")?;
    let units = match cursor.take(1, "units")?[0] {
        0 => Units::Dbz,
        1 => Units::MmPerHour,
        other => return Err(Error::MalformedHeader(format!("unknown units code {other}"))),
    };
    if n == 0 {
        return Err(Error::EmptyInput("grid has no cells".into()));
    }
    let mut cells = Vec::with_capacity(n);
    for row in 0..n {
        let id = cursor.u64("id").map_err(|e| at_row(e, row))? as usize;
        if id != row {
            return Err(Error::Parse {
                row,
                field: "id".into(),
                message: format!("ids must be contiguous from 0: expected {row}, got {id}"),
            });
        }
        let mut coords = [0.0; 4];
        for (slot, name) in coords.iter_mut().zip(["x_km", "y_km", "lat", "lon"]) {
            *slot = cursor.f64(name).map_err(|e| at_row(e, row))?;
        }
        let series = (0..t)
            .map(|j| cursor.f64("series").map_err(|e| at_row(e, row)).map(|v| (j, v)))
            .map(|r| {
                r.and_then(|(j, v)| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Parse {
                            row,
                            field: format!("t{j}"),
                            message: "non-finite value".into(),
                        })
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(GridCell {
            id,
            source_id: id,
            x_km: coords[0],
            y_km: coords[1],
            lat: coords[2],
            lon: coords[3],
            series,
        });
    }
    if cursor.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after {n} cells",
            bytes.len() - cursor.pos
        )));
    }
    GridSeries::new(cells, time_step, units)
}

fn at_row(err: Error, row: usize) -> Error {
    match err {
        Error::Parse { field, message, .. } => Error::Parse {
            row,
            field,
            message,
        },
        other => other,
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, len: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::Parse {
                row: 0,
                field: field.into(),
                message: "unexpected end of file".into(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}
