//! AIS ingestion: parse position reports, assemble per-vessel tracks, label
//! them by ordered transit through polygonal areas and resample onto a
//! fixed time grid.
//!
//! A trajectory is labeled with pattern `j` when one of its states lies in
//! the origin polygon and the first destination polygon entered strictly
//! afterwards is `destinations[j]`. Tracks do not need to *start* inside the
//! origin; only the first origin entry counts, later re-entries are ignored.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Default track-break threshold in seconds.
pub const DEFAULT_GAP_SEC: f64 = 1800.0;

/// First line of the canonical trajectory file.
pub const TRAJECTORY_FILE_HEADER: &str = "# seatrack-trajectories v1";

#[derive(Debug, Clone, PartialEq)]
pub struct AisRecord {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: f64,
    pub mmsi: u64,
    pub position: GeoPoint,
    pub ship_type: Option<String>,
}

/// Column mapping for delimiter-separated AIS tables.
///
/// The defaults match the Danish Maritime Authority CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    pub delimiter: u8,
    pub timestamp: String,
    pub mmsi: String,
    pub lat: String,
    pub lon: String,
    pub ship_type: Option<String>,
    /// chrono format string tried after plain epoch seconds.
    pub timestamp_format: Option<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            delimiter: b',',
            timestamp: "# Timestamp".into(),
            mmsi: "MMSI".into(),
            lat: "Latitude".into(),
            lon: "Longitude".into(),
            ship_type: Some("Ship type".into()),
            timestamp_format: Some("%d/%m/%Y %H:%M:%S".into()),
        }
    }
}

impl SchemaConfig {
    /// Parses `key=value` lines (blank lines and `#` comments skipped).
    /// Keys: `delimiter`, `timestamp`, `mmsi`, `lat`, `lon`, `ship_type`,
    /// `timestamp_format`. An empty `ship_type` disables the column.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = SchemaConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "delimiter" => {
                self.delimiter = match value {
                    "tab" | "\\t" => b'\t',
                    "comma" => b',',
                    "semicolon" => b';',
                    v if v.len() == 1 => v.as_bytes()[0],
                    v => return Err(Error::Schema(format!("bad delimiter {v:?}"))),
                }
            }
            "timestamp" => self.timestamp = value.into(),
            "mmsi" => self.mmsi = value.into(),
            "lat" => self.lat = value.into(),
            "lon" => self.lon = value.into(),
            "ship_type" => self.ship_type = (!value.is_empty()).then(|| value.into()),
            "timestamp_format" => {
                self.timestamp_format = (!value.is_empty()).then(|| value.into())
            }
            other => return Err(Error::Schema(format!("unknown schema key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let delim = match self.delimiter {
            b'\t' => "tab".to_string(),
            b => (b as char).to_string(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "delimiter={delim}");
        let _ = writeln!(s, "timestamp={}", self.timestamp);
        let _ = writeln!(s, "mmsi={}", self.mmsi);
        let _ = writeln!(s, "lat={}", self.lat);
        let _ = writeln!(s, "lon={}", self.lon);
        let _ = writeln!(s, "ship_type={}", self.ship_type.as_deref().unwrap_or(""));
        let _ = writeln!(
            s,
            "timestamp_format={}",
            self.timestamp_format.as_deref().unwrap_or("")
        );
        s
    }

    fn parse_timestamp(&self, raw: &str) -> Option<f64> {
        let raw = raw.trim();
        if let Ok(v) = raw.parse::<f64>() {
            return v.is_finite().then_some(v);
        }
        if let Some(fmt) = &self.timestamp_format {
            if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
                return Some(t.and_utc().timestamp() as f64);
            }
        }
        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
            if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
                return Some(t.and_utc().timestamp() as f64);
            }
        }
        DateTime::parse_from_rfc3339(raw)
            .ok()
            .map(|t| t.timestamp() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<AisRecord>,
    pub dropped: usize,
}

/// Reads a header-first delimiter-separated table into records. Rows with an
/// unparsable timestamp, MMSI or coordinate, or out-of-range coordinates, are
/// dropped and counted.
pub fn parse_records<R: Read>(input: R, schema: &SchemaConfig) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    let ts_col = find(&schema.timestamp)?;
    let mmsi_col = find(&schema.mmsi)?;
    let lat_col = find(&schema.lat)?;
    let lon_col = find(&schema.lon)?;
    let type_col = schema.ship_type.as_deref().map(find).transpose()?;

    let mut out = ParseOutcome::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                out.dropped += 1;
                continue;
            }
        };
        let parsed = (|| {
            let timestamp = schema.parse_timestamp(row.get(ts_col)?)?;
            let mmsi = row.get(mmsi_col)?.parse::<u64>().ok()?;
            let lat = row.get(lat_col)?.parse::<f64>().ok()?;
            let lon = row.get(lon_col)?.parse::<f64>().ok()?;
            let position = GeoPoint::new(lat, lon).ok()?;
            let ship_type = type_col
                .and_then(|c| row.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string);
            Some(AisRecord {
                timestamp,
                mmsi,
                position,
                ship_type,
            })
        })();
        match parsed {
            Some(r) => out.records.push(r),
            None => out.dropped += 1,
        }
    }
    Ok(out)
}

/// Temporally ordered vessel states with an optional motion-pattern label.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub mmsi: u64,
    pub times: Vec<f64>,
    pub states: Vec<GeoPoint>,
    pub label: Option<usize>,
}

impl Trajectory {
    pub fn new(
        id: u64,
        mmsi: u64,
        times: Vec<f64>,
        states: Vec<GeoPoint>,
        label: Option<usize>,
    ) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::InvalidInput(format!(
                "trajectory {id}: {} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::TooShort(format!(
                "trajectory {id} has {} points",
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!(
                "trajectory {id}: times not strictly increasing"
            )));
        }
        Ok(Trajectory {
            id,
            mmsi,
            times,
            states,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// Groups records by MMSI, orders them in time and splits at gaps longer
/// than `gap_threshold` seconds. Duplicate timestamps keep the first report.
/// Ids are assigned sequentially in (mmsi, start time) order.
pub fn assemble_trajectories(
    records: &[AisRecord],
    gap_threshold: f64,
    ship_type: Option<&str>,
) -> Vec<Trajectory> {
    assert!(gap_threshold > 0.0, "gap threshold must be positive");
    let mut by_vessel: BTreeMap<u64, Vec<&AisRecord>> = BTreeMap::new();
    for r in records {
        if let Some(filter) = ship_type {
            match &r.ship_type {
                Some(t) if t.eq_ignore_ascii_case(filter) => {}
                _ => continue,
            }
        }
        by_vessel.entry(r.mmsi).or_default().push(r);
    }

    let mut out = Vec::new();
    for (mmsi, mut recs) in by_vessel {
        // stable sort keeps input order among equal timestamps
        recs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut times: Vec<f64> = Vec::new();
        let mut states: Vec<GeoPoint> = Vec::new();
        let mut flush = |times: &mut Vec<f64>, states: &mut Vec<GeoPoint>| {
            if times.len() >= 2 {
                let id = out.len() as u64;
                out.push(Trajectory {
                    id,
                    mmsi,
                    times: std::mem::take(times),
                    states: std::mem::take(states),
                    label: None,
                });
            } else {
                times.clear();
                states.clear();
            }
        };
        for r in recs {
            if let Some(&last) = times.last() {
                if r.timestamp == last {
                    continue;
                }
                if r.timestamp - last > gap_threshold {
                    flush(&mut times, &mut states);
                }
            }
            times.push(r.timestamp);
            states.push(r.position);
        }
        flush(&mut times, &mut states);
    }
    out
}

/// A simple closed ring of vertices in (lon, lat) planar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub name: String,
    vertices: Vec<GeoPoint>,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    cross(a, b, p) == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

impl Polygon {
    /// Builds a polygon, dropping a repeated closing vertex. Rejects rings
    /// with fewer than three vertices or self-intersections.
    pub fn new(name: impl Into<String>, mut vertices: Vec<GeoPoint>) -> Result<Self> {
        let name = name.into();
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "polygon {name:?} needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let pts: Vec<(f64, f64)> = vertices.iter().map(|v| (v.lon, v.lat)).collect();
        let n = pts.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                    return Err(Error::InvalidInput(format!(
                        "polygon {name:?} is self-intersecting (edges {i} and {j})"
                    )));
                }
            }
        }
        Ok(Polygon { name, vertices })
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn centroid(&self) -> GeoPoint {
        let n = self.vertices.len() as f64;
        GeoPoint {
            lat: self.vertices.iter().map(|v| v.lat).sum::<f64>() / n,
            lon: self.vertices.iter().map(|v| v.lon).sum::<f64>() / n,
        }
    }
}

/// Even-odd ray casting in planar (lon, lat); points on the boundary are
/// inside.
pub fn point_in_polygon(p: GeoPoint, poly: &Polygon) -> bool {
    let pt = (p.lon, p.lat);
    let vs = &poly.vertices;
    let n = vs.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = (vs[i].lon, vs[i].lat);
        let b = (vs[j].lon, vs[j].lat);
        if on_segment(pt, a, b) {
            return true;
        }
        if (a.1 > pt.1) != (b.1 > pt.1) {
            let x = a.0 + (pt.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if pt.0 < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Origin area plus the ordered destinations defining the motion patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub origin: Polygon,
    pub destinations: Vec<Polygon>,
}

impl PatternSpec {
    pub fn new(origin: Polygon, destinations: Vec<Polygon>) -> Result<Self> {
        if destinations.is_empty() {
            return Err(Error::InvalidInput(
                "pattern spec needs at least one destination".into(),
            ));
        }
        let mut names = HashSet::new();
        for p in std::iter::once(&origin).chain(&destinations) {
            if !names.insert(p.name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate polygon name {:?}",
                    p.name
                )));
            }
        }
        Ok(PatternSpec {
            origin,
            destinations,
        })
    }

    pub fn pattern_count(&self) -> usize {
        self.destinations.len()
    }

    pub fn pattern_name(&self, j: usize) -> String {
        format!("({},{})", self.origin.name, self.destinations[j].name)
    }

    /// Parses the polygon text format: blocks separated by blank lines, each
    /// a name line followed by `lat lon` vertex lines. The first block is the
    /// origin, the remaining blocks are destinations in pattern order.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut polys: Vec<Polygon> = Vec::new();
        let mut current: Option<(String, Vec<GeoPoint>)> = None;
        let finish = |cur: &mut Option<(String, Vec<GeoPoint>)>, polys: &mut Vec<Polygon>| {
            if let Some((name, verts)) = cur.take() {
                polys.push(Polygon::new(name, verts)?);
            }
            Ok::<(), Error>(())
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                finish(&mut current, &mut polys)?;
                continue;
            }
            match &mut current {
                None => current = Some((line.to_string(), Vec::new())),
                Some((_, verts)) => {
                    let mut it = line.split_whitespace();
                    let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                        return Err(Error::parse(source, i + 1, "expected `lat lon`"));
                    };
                    let lat = a
                        .parse::<f64>()
                        .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
                    let lon = b
                        .parse::<f64>()
                        .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
                    let p = GeoPoint::new(lat, lon)
                        .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
                    verts.push(p);
                }
            }
        }
        finish(&mut current, &mut polys)?;
        if polys.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{source}: need an origin and at least one destination polygon, got {}",
                polys.len()
            )));
        }
        let origin = polys.remove(0);
        PatternSpec::new(origin, polys)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, p) in std::iter::once(&self.origin)
            .chain(&self.destinations)
            .enumerate()
        {
            if k > 0 {
                s.push('\n');
            }
            let _ = writeln!(s, "{}", p.name);
            for v in p.vertices() {
                let _ = writeln!(s, "{} {}", v.lat, v.lon);
            }
        }
        s
    }
}

/// Label index of the first destination entered after the first origin
/// entry, or `None` when the ordered transit never happens.
pub fn match_pattern(traj: &Trajectory, spec: &PatternSpec) -> Option<usize> {
    let start = traj
        .states
        .iter()
        .position(|p| point_in_polygon(*p, &spec.origin))?;
    let t_origin = traj.times[start];
    traj.states
        .iter()
        .zip(&traj.times)
        .skip(start + 1)
        .filter(|(_, t)| **t > t_origin)
        .find_map(|(p, _)| {
            spec.destinations
                .iter()
                .position(|d| point_in_polygon(*p, d))
        })
}

/// Linear interpolation onto the absolute grid `t = k * delta`.
pub fn resample(traj: &Trajectory, delta: f64) -> Result<Trajectory> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    let first = traj.times[0];
    let last = traj.times[traj.times.len() - 1];
    let mut k = (first / delta).ceil() as i64;
    if (k as f64) * delta < first {
        k += 1;
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut seg = 0usize;
    loop {
        let t = (k as f64) * delta;
        if t > last {
            break;
        }
        while traj.times[seg + 1] < t {
            seg += 1;
        }
        let (t0, t1) = (traj.times[seg], traj.times[seg + 1]);
        let (a, b) = (traj.states[seg], traj.states[seg + 1]);
        let state = if t == t0 {
            a
        } else if t == t1 {
            b
        } else {
            let w = (t - t0) / (t1 - t0);
            GeoPoint {
                lat: lerp(a.lat, b.lat, w),
                lon: lerp(a.lon, b.lon, w),
            }
        };
        times.push(t);
        states.push(state);
        k += 1;
    }
    if times.len() < 2 {
        return Err(Error::TooShort(format!(
            "trajectory {} spans {} s, fewer than 2 grid points at delta={delta} s",
            traj.id,
            last - first
        )));
    }
    Ok(Trajectory {
        id: traj.id,
        mmsi: traj.mmsi,
        times,
        states,
        label: traj.label,
    })
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    (a + w * (b - a)).clamp(a.min(b), a.max(b))
}

/// Writes the canonical `traj_id,mmsi,label_or_dash,timestamp,lat,lon` file.
pub fn write_trajectories<W: Write>(mut out: W, trajs: &[Trajectory]) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_FILE_HEADER}")?;
    writeln!(out, "# traj_id,mmsi,label,timestamp,lat,lon")?;
    for t in trajs {
        let label = t.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        for (time, s) in t.times.iter().zip(&t.states) {
            writeln!(out, "{},{},{},{},{},{}", t.id, t.mmsi, label, time, s.lat, s.lon)?;
        }
    }
    Ok(())
}

pub fn save_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_trajectories(&mut w, trajs).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the canonical trajectory file. Rows of a trajectory must be
/// contiguous and time ordered.
pub fn read_trajectories<R: BufRead>(input: R, source: &str) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut cur: Option<Trajectory> = None;
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(Error::parse(source, i + 1, format!("expected 6 fields, got {}", f.len())));
        }
        let perr = |m: String| Error::parse(source, i + 1, m);
        let id: u64 = f[0].parse().map_err(|e| perr(format!("traj_id: {e}")))?;
        let mmsi: u64 = f[1].parse().map_err(|e| perr(format!("mmsi: {e}")))?;
        let label = match f[2] {
            "-" => None,
            s => Some(s.parse::<usize>().map_err(|e| perr(format!("label: {e}")))?),
        };
        let t: f64 = f[3].parse().map_err(|e| perr(format!("timestamp: {e}")))?;
        let lat: f64 = f[4].parse().map_err(|e| perr(format!("lat: {e}")))?;
        let lon: f64 = f[5].parse().map_err(|e| perr(format!("lon: {e}")))?;
        let p = GeoPoint::new(lat, lon).map_err(|e| perr(e.to_string()))?;
        match &mut cur {
            Some(c) if c.id == id => {
                if c.mmsi != mmsi || c.label != label {
                    return Err(perr(format!("inconsistent mmsi/label within trajectory {id}")));
                }
                c.times.push(t);
                c.states.push(p);
            }
            _ => {
                if let Some(done) = cur.take() {
                    out.push(done);
                }
                if !seen.insert(id) {
                    return Err(perr(format!("trajectory {id} rows are not contiguous")));
                }
                cur = Some(Trajectory {
                    id,
                    mmsi,
                    times: vec![t],
                    states: vec![p],
                    label,
                });
            }
        }
    }
    out.extend(cur);
    out.into_iter()
        .map(|t| Trajectory::new(t.id, t.mmsi, t.times, t.states, t.label))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::InvalidInput(format!("{source}: {e}")))
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories(std::io::BufReader::new(file), &path.display().to_string())
}

/// Counts reported by [`prepare`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepareStats {
    pub records: usize,
    pub tracks: usize,
    /// Matched trajectories per pattern, in destination order.
    pub per_pattern: Vec<usize>,
    pub unmatched: usize,
    pub too_short: usize,
    pub kept: usize,
}

/// Assembles tracks, labels them against `patterns` (dropping tracks that
/// match no pattern) and resamples onto the `delta`-second grid. Labels are
/// assigned on the raw reports, before resampling. Output ids are 0..n.
pub fn prepare(
    records: &[AisRecord],
    gap_threshold: f64,
    ship_type: Option<&str>,
    patterns: Option<&PatternSpec>,
    delta: f64,
) -> Result<(Vec<Trajectory>, PrepareStats)> {
    let tracks = assemble_trajectories(records, gap_threshold, ship_type);
    let mut stats = PrepareStats {
        records: records.len(),
        tracks: tracks.len(),
        per_pattern: vec![0; patterns.map_or(0, |p| p.pattern_count())],
        ..Default::default()
    };
    let mut out = Vec::new();
    for mut t in tracks {
        if let Some(spec) = patterns {
            match match_pattern(&t, spec) {
                Some(j) => t.label = Some(j),
                None => {
                    stats.unmatched += 1;
                    continue;
                }
            }
        }
        match resample(&t, delta) {
            Ok(mut r) => {
                if let Some(j) = r.label {
                    stats.per_pattern[j] += 1;
                }
                r.id = out.len() as u64;
                out.push(r);
            }
            Err(Error::TooShort(_)) => stats.too_short += 1,
            Err(e) => return Err(e),
        }
    }
    stats.kept = out.len();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn rec(t: f64, mmsi: u64, lat: f64, lon: f64) -> AisRecord {
        AisRecord {
            timestamp: t,
            mmsi,
            position: gp(lat, lon),
            ship_type: Some("Tanker".into()),
        }
    }

    fn simple_schema() -> SchemaConfig {
        SchemaConfig::from_kv("timestamp=t\nmmsi=mmsi\nlat=lat\nlon=lon\nship_type=type\n").unwrap()
    }

    fn square(name: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        // (lat, lon) = (y, x)
        Polygon::new(name, vec![gp(y0, x0), gp(y0, x1), gp(y1, x1), gp(y1, x0)]).unwrap()
    }

    fn track(points: &[(f64, f64)]) -> Trajectory {
        let times = (0..points.len()).map(|i| i as f64 * 10.0).collect();
        let states = points.iter().map(|&(lat, lon)| gp(lat, lon)).collect();
        Trajectory::new(0, 1, times, states, None).unwrap()
    }

    #[test]
    fn parse_well_formed() {
        let csv = "t,mmsi,lat,lon,type\n0,1,55,12,Tanker\n10,1,55.1,12.1,Tanker\n20,2,55.2,12.2,Cargo\n";
        let out = parse_records(csv.as_bytes(), &simple_schema()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.dropped, 0);
        assert_eq!(out.records[2].ship_type.as_deref(), Some("Cargo"));
    }

    #[test]
    fn parse_drops_out_of_range_latitude() {
        let csv = "t,mmsi,lat,lon,type\n0,1,91,12,Tanker\n10,1,55,12,Tanker\n";
        let out = parse_records(csv.as_bytes(), &simple_schema()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn parse_drops_garbage() {
        let csv = "t,mmsi,lat,lon,type\nnever,1,55,12,x\n0,abc,55,12,x\n0,1,55,east,x\n";
        let out = parse_records(csv.as_bytes(), &simple_schema()).unwrap();
        assert_eq!(out.records.len(), 0);
        assert_eq!(out.dropped, 3);
    }

    #[test]
    fn parse_missing_column_is_schema_error() {
        let csv = "t,mmsi,lat,type\n0,1,55,Tanker\n";
        let err = parse_records(csv.as_bytes(), &simple_schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn parse_dma_timestamps() {
        let csv = "# Timestamp,Type of mobile,MMSI,Latitude,Longitude,Ship type\n\
                   01/01/2020 00:00:10,Class A,219000001,55.5,11.0,Tanker\n";
        let out = parse_records(csv.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].timestamp, 1_577_836_810.0);
    }

    #[test]
    fn schema_kv_round_trip() {
        let s = simple_schema();
        assert_eq!(SchemaConfig::from_kv(&s.to_kv()).unwrap(), s);
        assert!(SchemaConfig::from_kv("colour=red").is_err());
    }

    #[test]
    fn assemble_single_vessel() {
        let recs: Vec<_> = (0..5).map(|i| rec(i as f64 * 10.0, 7, 55.0, 12.0 + i as f64 * 0.01)).collect();
        let trajs = assemble_trajectories(&recs, 3600.0, None);
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), 5);
    }

    #[test]
    fn assemble_splits_on_gap() {
        let mut recs: Vec<_> = (0..3).map(|i| rec(i as f64 * 10.0, 7, 55.0, 12.0)).collect();
        recs.push(rec(20.0 + 7200.0, 7, 55.0, 12.1));
        recs.push(rec(30.0 + 7200.0, 7, 55.0, 12.2));
        let trajs = assemble_trajectories(&recs, 3600.0, None);
        let lens: Vec<_> = trajs.iter().map(|t| t.len()).collect();
        assert_eq!(lens, vec![3, 2]);
    }

    #[test]
    fn assemble_interleaved_vessels() {
        let recs: Vec<_> = (0..6)
            .map(|i| rec(i as f64 * 10.0, 100 + (i % 2) as u64, 55.0, 12.0 + i as f64 * 0.01))
            .collect();
        let trajs = assemble_trajectories(&recs, 3600.0, None);
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].mmsi, 100);
        assert_eq!(trajs[1].mmsi, 101);
        assert!(trajs.iter().all(|t| t.len() == 3));
    }

    #[test]
    fn assemble_collapses_duplicates_and_filters() {
        let mut recs = vec![rec(0.0, 1, 55.0, 12.0), rec(0.0, 1, 56.0, 13.0), rec(5.0, 1, 55.0, 12.1)];
        recs.push(AisRecord {
            ship_type: Some("Cargo".into()),
            ..rec(0.0, 2, 55.0, 12.0)
        });
        recs.push(AisRecord {
            ship_type: Some("Cargo".into()),
            ..rec(9.0, 2, 55.0, 12.0)
        });
        let trajs = assemble_trajectories(&recs, 100.0, Some("tanker"));
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].states[0], gp(55.0, 12.0));
        assert_eq!(trajs[0].len(), 2);
    }

    #[test]
    fn pip_basic_cases() {
        let sq = square("S", 0.0, 0.0, 1.0, 1.0);
        assert!(point_in_polygon(gp(0.5, 0.5), &sq));
        assert!(!point_in_polygon(gp(2.0, 2.0), &sq));
        // lon=0, lat=0.5 on the left edge
        assert!(point_in_polygon(gp(0.5, 0.0), &sq));
        assert!(point_in_polygon(gp(0.0, 0.0), &sq));
    }

    #[test]
    fn pip_concave() {
        let u = Polygon::new(
            "U",
            vec![gp(0.0, 0.0), gp(0.0, 3.0), gp(3.0, 3.0), gp(3.0, 2.0), gp(1.0, 2.0), gp(1.0, 1.0), gp(3.0, 1.0), gp(3.0, 0.0)],
        )
        .unwrap();
        assert!(!point_in_polygon(gp(2.0, 1.5), &u));
        assert!(point_in_polygon(gp(2.0, 0.5), &u));
        assert!(point_in_polygon(gp(0.5, 1.5), &u));
    }

    #[test]
    fn polygon_validation() {
        assert!(Polygon::new("x", vec![gp(0.0, 0.0), gp(1.0, 1.0)]).is_err());
        let bowtie = Polygon::new("b", vec![gp(0.0, 0.0), gp(1.0, 1.0), gp(0.0, 1.0), gp(1.0, 0.0)]);
        assert!(bowtie.is_err());
        let closed = Polygon::new("c", vec![gp(0.0, 0.0), gp(0.0, 1.0), gp(1.0, 1.0), gp(0.0, 0.0)]).unwrap();
        assert_eq!(closed.vertices().len(), 3);
    }

    fn spec() -> PatternSpec {
        PatternSpec::new(
            square("O", 0.0, 0.0, 1.0, 1.0),
            vec![square("A", 5.0, 5.0, 6.0, 6.0), square("B", 5.0, -6.0, 6.0, -5.0)],
        )
        .unwrap()
    }

    #[test]
    fn match_origin_then_a() {
        let t = track(&[(0.5, 0.5), (3.0, 3.0), (5.5, 5.5)]);
        assert_eq!(match_pattern(&t, &spec()), Some(0));
    }

    #[test]
    fn match_wrong_order_is_none() {
        let t = track(&[(5.5, 5.5), (3.0, 3.0), (0.5, 0.5)]);
        assert_eq!(match_pattern(&t, &spec()), None);
    }

    #[test]
    fn match_first_destination_after_origin() {
        // entry times: O at 0, B at 20, A at 40 -> B is first
        let t = track(&[(0.5, 0.5), (2.0, 0.0), (-5.5, 5.5), (2.0, 2.0), (5.5, 5.5)]);
        assert_eq!(match_pattern(&t, &spec()), Some(1));
    }

    #[test]
    fn match_ignores_prepended_outside_states() {
        let a = track(&[(0.5, 0.5), (5.5, 5.5)]);
        let b = track(&[(10.0, 10.0), (20.0, -20.0), (0.5, 0.5), (5.5, 5.5)]);
        assert_eq!(match_pattern(&a, &spec()), match_pattern(&b, &spec()));
    }

    #[test]
    fn polygon_file_round_trip_and_errors() {
        let s = spec();
        let parsed = PatternSpec::parse(&s.to_text(), "mem").unwrap();
        assert_eq!(parsed, s);
        assert!(PatternSpec::parse("O\n0 0\n1 1\n", "mem").is_err());
        assert!(PatternSpec::parse("O\n0 0\n0 1\n1 x\n\nA\n5 5\n5 6\n6 6\n", "mem").is_err());
        assert!(PatternSpec::parse("O\n0 0\n0 1\n1 1\n\nO\n5 5\n5 6\n6 6\n", "mem").is_err());
    }

    fn pair(t1: f64) -> Trajectory {
        Trajectory::new(3, 9, vec![0.0, t1], vec![gp(0.0, 0.0), gp(0.9, 0.9)], Some(1)).unwrap()
    }

    #[test]
    fn resample_preserves_knots() {
        let r = resample(&pair(900.0), 900.0).unwrap();
        assert_eq!(r.times, vec![0.0, 900.0]);
        assert_eq!(r.states, vec![gp(0.0, 0.0), gp(0.9, 0.9)]);
        assert_eq!(r.label, Some(1));
    }

    #[test]
    fn resample_midpoint() {
        let r = resample(&pair(900.0), 450.0).unwrap();
        assert_eq!(r.times, vec![0.0, 450.0, 900.0]);
        assert!((r.states[1].lat - 0.45).abs() < 1e-15);
        assert!((r.states[1].lon - 0.45).abs() < 1e-15);
    }

    #[test]
    fn resample_too_short() {
        assert!(matches!(resample(&pair(600.0), 900.0), Err(Error::TooShort(_))));
    }

    #[test]
    fn resample_uses_absolute_grid() {
        let t = Trajectory::new(0, 1, vec![100.0, 2000.0], vec![gp(0.0, 0.0), gp(1.0, 1.0)], None).unwrap();
        let r = resample(&t, 900.0).unwrap();
        assert_eq!(r.times, vec![900.0, 1800.0]);
    }

    #[test]
    fn trajectory_file_round_trip() {
        let trajs = vec![pair(900.0), Trajectory { id: 4, label: None, ..pair(50.5) }];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &trajs).unwrap();
        let back = read_trajectories(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, trajs);
    }

    #[test]
    fn trajectory_file_rejects_bad_rows() {
        assert!(read_trajectories("1,2,-,0,55\n".as_bytes(), "mem").is_err());
        assert!(read_trajectories("1,2,-,0,55,12\n".as_bytes(), "mem").is_err()); // single point
        let split = "1,2,-,0,55,12\n1,2,-,1,55,12\n2,2,-,0,55,12\n2,2,-,1,55,12\n1,2,-,2,55,12\n";
        assert!(read_trajectories(split.as_bytes(), "mem").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn resampled_states_stay_within_brackets(
                steps in proptest::collection::vec((1.0f64..400.0, -1.0f64..1.0, -1.0f64..1.0), 2..20),
                delta in 30.0f64..600.0,
            ) {
                let mut t = 1000.0;
                let mut lat = 55.0;
                let mut lon = 12.0;
                let mut times = vec![t];
                let mut states = vec![gp(lat, lon)];
                for (dt, dlat, dlon) in steps {
                    t += dt;
                    lat += dlat * 0.01;
                    lon += dlon * 0.01;
                    times.push(t);
                    states.push(gp(lat, lon));
                }
                let traj = Trajectory::new(0, 1, times, states, None).unwrap();
                if let Ok(r) = resample(&traj, delta) {
                    for (rt, rs) in r.times.iter().zip(&r.states) {
                        let k = (rt / delta).round();
                        prop_assert_eq!(*rt, k * delta);
                        let i = traj.times.iter().rposition(|x| x <= rt).unwrap();
                        let j = (i + 1).min(traj.len() - 1);
                        let (a, b) = (traj.states[i], traj.states[j]);
                        prop_assert!(rs.lat >= a.lat.min(b.lat) && rs.lat <= a.lat.max(b.lat));
                        prop_assert!(rs.lon >= a.lon.min(b.lon) && rs.lon <= a.lon.max(b.lon));
                    }
                }
            }

            #[test]
            fn assembled_times_strictly_increase(
                raw in proptest::collection::vec((0u64..4, 0u32..5000), 0..80),
            ) {
                let recs: Vec<_> = raw.iter().map(|&(m, t)| rec(t as f64, m, 55.0, 12.0)).collect();
                for tr in assemble_trajectories(&recs, 600.0, None) {
                    prop_assert!(tr.len() >= 2);
                    prop_assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
                    prop_assert!(tr.times.windows(2).all(|w| w[1] - w[0] <= 600.0));
                }
            }
        }
    }
}
