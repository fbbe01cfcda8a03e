//! Synthetic branching traffic: a shared corridor that splits into two arms
//! ending in separate destination areas. Each vessel follows one route at a
//! constant speed with a smooth cross-track offset, and reports its position
//! at irregular intervals like a real AIS transponder.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ais::{self, AisRecord, PatternSpec, Polygon, PrepareStats, Trajectory};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::nn::init::seeded_rng;

const SYNTH_STREAM: u64 = 0x5e7;
const LAT0: f64 = 55.5;
const LON0: f64 = 10.6;
/// 2024-03-01T00:00:00Z
const EPOCH0: i64 = 1_709_251_200;
const WINDOW_DAYS: i64 = 30;
const MMSI0: u64 = 219_000_000;
const STEP_NMI: f64 = 0.05;
const TURN_HALF_WIDTH_NMI: f64 = 5.0;

// (heading degrees, length nmi); the corridor zigzags and ends heading due
// east, and the arms mirror each other about that axis
const CORRIDOR: [(f64, f64); 3] = [(60.0, 15.0), (120.0, 15.0), (90.0, 10.0)];
const ARMS: [[(f64, f64); 4]; 2] = [
    [(45.0, 15.0), (15.0, 15.0), (60.0, 15.0), (20.0, 15.0)],
    [(135.0, 15.0), (165.0, 15.0), (120.0, 15.0), (160.0, 15.0)],
];
const ORIGIN_HALF_NMI: f64 = 3.0;
const DEST_HALF_NMI: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub per_route: usize,
    pub seed: u64,
    /// Uniform range of per-vessel speeds, knots.
    pub speed_kn: (f64, f64),
    /// Standard deviation of the per-vessel lateral offset from the route.
    pub cross_track_sd_nmi: f64,
    /// Standard deviation of independent per-report position noise.
    pub jitter_nmi: f64,
    /// Inclusive range of report spacing, whole seconds.
    pub report_interval_sec: (u32, u32),
    /// Crossing vessels that never transit the origin area.
    pub decoys: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_route: 60,
            seed: 0,
            speed_kn: (10.0, 14.0),
            cross_track_sd_nmi: 0.5,
            jitter_nmi: 0.05,
            report_interval_sec: (60, 180),
            decoys: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.per_route == 0 {
            return bad("per_route must be at least 1".into());
        }
        let (lo, hi) = self.speed_kn;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("invalid speed range {lo}..{hi}"));
        }
        if !(self.cross_track_sd_nmi >= 0.0 && self.jitter_nmi >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        let (a, b) = self.report_interval_sec;
        if a == 0 || b < a {
            return bad(format!("invalid report interval range {a}..{b}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub records: Vec<AisRecord>,
    pub patterns: PatternSpec,
    /// Route each vessel was generated on; `None` for decoys.
    pub truth: Vec<(u64, Option<usize>)>,
}

impl SynthDataset {
    /// Runs the standard ingest pipeline over the raw reports.
    pub fn prepare(&self, delta_sec: f64) -> Result<(Vec<Trajectory>, PrepareStats)> {
        ais::prepare(
            &self.records,
            ais::DEFAULT_GAP_SEC,
            None,
            Some(&self.patterns),
            delta_sec,
        )
    }
}

/// Local east/north offsets in nmi to geographic coordinates.
fn to_geo(e: f64, n: f64) -> GeoPoint {
    GeoPoint {
        lat: LAT0 + n / 60.0,
        lon: LON0 + e / (60.0 * LAT0.to_radians().cos()),
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Densely sampled centreline with smoothed heading changes.
struct Path {
    xy: Vec<(f64, f64)>,
    heading: Vec<f64>,
}

impl Path {
    fn build(start: (f64, f64), legs: &[(f64, f64)]) -> Path {
        let total: f64 = legs.iter().map(|l| l.1).sum();
        let mut bounds = Vec::new();
        let mut acc = 0.0;
        for l in &legs[..legs.len() - 1] {
            acc += l.1;
            bounds.push(acc);
        }
        let heading_at = |s: f64| -> f64 {
            let k = bounds.iter().filter(|b| s >= **b).count();
            let mut h = legs[k].0;
            for (i, b) in bounds.iter().enumerate() {
                let t = (s - (b - TURN_HALF_WIDTH_NMI)) / (2.0 * TURN_HALF_WIDTH_NMI);
                if (0.0..1.0).contains(&t) {
                    let from = legs[i].0;
                    let diff = (legs[i + 1].0 - from + 540.0) % 360.0 - 180.0;
                    h = from + diff * t;
                }
            }
            h
        };
        let n = (total / STEP_NMI).ceil() as usize;
        let mut xy = vec![start];
        let mut heading = vec![heading_at(0.0)];
        for i in 0..n {
            let mid = heading_at((i as f64 + 0.5) * STEP_NMI).to_radians();
            let (x, y) = xy[i];
            xy.push((x + STEP_NMI * mid.sin(), y + STEP_NMI * mid.cos()));
            heading.push(heading_at((i + 1) as f64 * STEP_NMI));
        }
        Path { xy, heading }
    }

    fn length(&self) -> f64 {
        (self.xy.len() - 1) as f64 * STEP_NMI
    }

    #[cfg(test)]
    fn end(&self) -> (f64, f64) {
        *self.xy.last().unwrap()
    }

    /// Position and heading (degrees) at arc length `s`.
    fn at(&self, s: f64) -> ((f64, f64), f64) {
        let u = (s / STEP_NMI).clamp(0.0, (self.xy.len() - 1) as f64);
        let i = (u.floor() as usize).min(self.xy.len() - 2);
        let f = u - i as f64;
        let (a, b) = (self.xy[i], self.xy[i + 1]);
        let h = self.heading[i] + f * ((self.heading[i + 1] - self.heading[i] + 540.0) % 360.0 - 180.0);
        ((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)), h)
    }
}

fn square(name: &str, c: (f64, f64), half: f64) -> Result<Polygon> {
    let v = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(dx, dy)| to_geo(c.0 + dx * half, c.1 + dy * half))
        .collect();
    Polygon::new(name, v)
}

fn route_paths() -> Vec<Path> {
    ARMS.iter()
        .map(|arm| {
            let legs: Vec<(f64, f64)> = CORRIDOR.iter().chain(arm.iter()).copied().collect();
            Path::build((0.0, 0.0), &legs)
        })
        .collect()
}

/// Origin square around the corridor start, one destination square just
/// before the end of each arm.
pub fn pattern_spec() -> Result<PatternSpec> {
    let origin = square("O", (0.0, 0.0), ORIGIN_HALF_NMI)?;
    let dests = route_paths()
        .iter()
        .zip(["A", "B"])
        .map(|(p, name)| {
            let (c, _) = p.at(p.length() - DEST_HALF_NMI);
            square(name, c, DEST_HALF_NMI)
        })
        .collect::<Result<Vec<_>>>()?;
    PatternSpec::new(origin, dests)
}

/// Branching two-route scenario. Deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, SYNTH_STREAM);
    let paths = route_paths();
    let decoy_path = Path::build((25.0, -25.0), &[(0.0, 50.0)]);
    let offset = Normal::new(0.0, cfg.cross_track_sd_nmi.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let jitter = Normal::new(0.0, cfg.jitter_nmi.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;

    // vessels alternate routes so both stay balanced for any count
    let mut plan: Vec<Option<usize>> = (0..2 * cfg.per_route).map(|i| Some(i % 2)).collect();
    plan.extend(std::iter::repeat_n(None, cfg.decoys));

    let mut records = Vec::new();
    let mut truth = Vec::with_capacity(plan.len());
    for (i, route) in plan.into_iter().enumerate() {
        let mmsi = MMSI0 + i as u64;
        truth.push((mmsi, route));
        let path = route.map_or(&decoy_path, |r| &paths[r]);
        let speed = rng.random_range(cfg.speed_kn.0..=cfg.speed_kn.1);
        let o0 = offset.sample(&mut rng);
        let o1 = 0.5 * offset.sample(&mut rng);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let start = EPOCH0 + rng.random_range(0..WINDOW_DAYS * 86_400);
        let duration = path.length() / speed * 3600.0;
        let mut t = 0.0;
        while t <= duration {
            let s = speed * t / 3600.0;
            let ((x, y), h) = path.at(s);
            let lateral = o0 + o1 * (std::f64::consts::TAU * s / 40.0 + phase).sin();
            let hr = h.to_radians();
            // starboard normal of the heading (sin h, cos h) is (cos h, -sin h)
            let e = x + lateral * hr.cos() + jitter.sample(&mut rng);
            let n = y - lateral * hr.sin() + jitter.sample(&mut rng);
            let g = to_geo(e, n);
            records.push(AisRecord {
                timestamp: (start as f64) + t,
                mmsi,
                position: GeoPoint {
                    lat: round6(g.lat),
                    lon: round6(g.lon),
                },
                ship_type: Some(if route.is_some() { "Cargo" } else { "Fishing" }.into()),
            });
            t += rng.random_range(cfg.report_interval_sec.0..=cfg.report_interval_sec.1) as f64;
        }
    }
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.mmsi.cmp(&b.mmsi)));
    Ok(SynthDataset {
        records,
        patterns: pattern_spec()?,
        truth,
    })
}

/// Column names written by [`write_dma_csv`], matching the default schema.
pub const DMA_HEADER: &str = "# Timestamp,Type of mobile,MMSI,Latitude,Longitude,Ship type";

/// Writes records as a Danish Maritime Authority style CSV.
pub fn write_dma_csv<W: Write>(out: W, records: &[AisRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DMA_HEADER.split(','))?;
    for r in records {
        let ts = chrono::DateTime::from_timestamp(r.timestamp.floor() as i64, 0)
            .ok_or_else(|| Error::InvalidInput(format!("timestamp {} out of range", r.timestamp)))?;
        w.write_record([
            ts.format("%d/%m/%Y %H:%M:%S").to_string(),
            "Class A".to_string(),
            r.mmsi.to_string(),
            format!("{:.6}", r.position.lat),
            format!("{:.6}", r.position.lon),
            r.ship_type.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
