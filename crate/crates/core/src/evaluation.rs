//! Great-circle error metrics and the report files built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{haversine_nmi, GeoPoint, Standardizer};
use crate::models::Trainable;
use crate::windowing::WindowSample;

pub const DEFAULT_BIN_NMI: f64 = 5.0;

/// Test-set errors of one model on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub fold: Option<usize>,
    /// MAE in nmi at every horizon step `1..=h`.
    pub mae_per_horizon: Vec<f64>,
    /// Error at the last horizon step, per sample.
    pub final_errors: Vec<f64>,
    /// Last observed position of each sample.
    pub anchors: Vec<GeoPoint>,
    pub cdf: Vec<(f64, f64)>,
    pub n_samples: usize,
}

/// `MAE_j = mean_i d(pred_ij, target_ij)` over samples.
pub fn mae_per_horizon(preds: &[Vec<GeoPoint>], targets: &[Vec<GeoPoint>]) -> Result<Vec<f64>> {
    let shape_err = |p: usize, t: usize| Error::ShapeMismatch {
        op: "mae_per_horizon",
        lhs: (p, preds.first().map_or(0, |r| r.len())),
        rhs: (t, targets.first().map_or(0, |r| r.len())),
    };
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(shape_err(preds.len(), targets.len()));
    }
    let h = preds[0].len();
    let mut sum = vec![0.0; h];
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != h || t.len() != h {
            return Err(shape_err(preds.len(), targets.len()));
        }
        for j in 0..h {
            sum[j] += haversine_nmi(p[j], t[j]);
        }
    }
    let n = preds.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Sorted `(error, k/N)` steps.
pub fn empirical_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("empirical CDF of no errors".into()));
    }
    let mut e = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    Ok(e.into_iter()
        .enumerate()
        .map(|(k, v)| (v, (k + 1) as f64 / n))
        .collect())
}

/// Fraction of errors `<= x` under a CDF from [`empirical_cdf`].
pub fn cdf_value(cdf: &[(f64, f64)], x: f64) -> f64 {
    let k = cdf.partition_point(|(e, _)| *e <= x);
    if k == 0 {
        0.0
    } else {
        cdf[k - 1].1
    }
}

fn to_points(st: &Standardizer, m: &crate::nn::Matrix) -> Vec<GeoPoint> {
    (0..m.rows())
        .map(|r| st.invert([m.get(r, 0), m.get(r, 1)]))
        .collect()
}

/// De-standardized forecasts for every sample, in sample order.
pub fn predict_geo(
    model: &dyn Trainable,
    samples: &[WindowSample],
    standardizer: &Standardizer,
) -> Result<Vec<Vec<GeoPoint>>> {
    let labeled = model.labeled();
    samples
        .par_iter()
        .map(|s| {
            let y = model.predict(&s.input, s.psi_for(labeled)?)?;
            Ok(to_points(standardizer, &y))
        })
        .collect()
}

pub fn evaluate(
    model: &dyn Trainable,
    samples: &[WindowSample],
    standardizer: &Standardizer,
    name: &str,
    fold: Option<usize>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("no test samples for {name}")));
    }
    let preds = predict_geo(model, samples, standardizer)?;
    let targets: Vec<Vec<GeoPoint>> = samples
        .iter()
        .map(|s| to_points(standardizer, &s.target))
        .collect();
    let mae = mae_per_horizon(&preds, &targets)?;
    let final_errors: Vec<f64> = preds
        .iter()
        .zip(&targets)
        .map(|(p, t)| haversine_nmi(*p.last().unwrap(), *t.last().unwrap()))
        .collect();
    let anchors = samples
        .iter()
        .map(|s| {
            let r = s.input.rows() - 1;
            standardizer.invert([s.input.get(r, 0), s.input.get(r, 1)])
        })
        .collect();
    Ok(EvalReport {
        model: name.to_string(),
        fold,
        mae_per_horizon: mae,
        cdf: empirical_cdf(&final_errors)?,
        final_errors,
        anchors,
        n_samples: samples.len(),
    })
}

/// One model configuration's results across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    /// Model name without the labeled tag, e.g. `EncDec-ATTN`.
    pub base: String,
    pub labeled: bool,
    pub folds: Vec<EvalReport>,
    /// Folds that failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl ReportEntry {
    /// Arithmetic mean of the per-fold MAE vectors.
    pub fn mean_mae(&self) -> Option<Vec<f64>> {
        let first = self.folds.first()?;
        let mut m = vec![0.0; first.mae_per_horizon.len()];
        for f in &self.folds {
            m.iter_mut()
                .zip(&f.mae_per_horizon)
                .for_each(|(a, b)| *a += b);
        }
        let k = self.folds.len() as f64;
        Some(m.into_iter().map(|v| v / k).collect())
    }

    pub fn pooled_final_errors(&self) -> Vec<f64> {
        self.folds
            .iter()
            .flat_map(|f| f.final_errors.iter().copied())
            .collect()
    }

    pub fn pooled_cdf(&self) -> Option<Vec<(f64, f64)>> {
        empirical_cdf(&self.pooled_final_errors()).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
    /// Minutes per horizon step.
    pub delta_min: f64,
    /// 1-based horizon steps shown in the table.
    pub columns: Vec<usize>,
    pub distance_origin: GeoPoint,
    pub bin_nmi: f64,
}

impl Report {
    /// Columns at one, two and three hours when the step size allows it,
    /// otherwise every third of the horizon.
    pub fn default_columns(h: usize, delta_min: f64) -> Vec<usize> {
        let per_hour = 60.0 / delta_min;
        let hourly: Vec<usize> = (1..=3)
            .map(|k| (k as f64 * per_hour).round() as usize)
            .filter(|j| *j >= 1 && *j <= h)
            .collect();
        if hourly.len() == 3 && per_hour.fract() == 0.0 {
            return hourly;
        }
        let mut c: Vec<usize> = (1..=3).map(|k| ((k * h) as f64 / 3.0).ceil() as usize).collect();
        c.dedup();
        c
    }

    fn column_label(&self, j: usize) -> String {
        let min = j as f64 * self.delta_min;
        if min % 60.0 == 0.0 {
            format!("{}h", min / 60.0)
        } else {
            format!("{min}min")
        }
    }

    fn find(&self, base: &str, labeled: bool) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.base == base && e.labeled == labeled)
    }
}

/// `(U - L) / U` as a whole percentage.
pub fn improvement_percent(unlabeled: f64, labeled: f64) -> i64 {
    ((unlabeled - labeled) / unlabeled * 100.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Kv,
    Cdf,
    Distance,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Table,
        ReportFormat::Kv,
        ReportFormat::Cdf,
        ReportFormat::Distance,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Table => "report.txt",
            ReportFormat::Kv => "report.kv",
            ReportFormat::Cdf => "cdf.dat",
            ReportFormat::Distance => "mae_vs_distance.dat",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" | "txt" => Ok(ReportFormat::Table),
            "kv" => Ok(ReportFormat::Kv),
            "cdf" => Ok(ReportFormat::Cdf),
            "distance" => Ok(ReportFormat::Distance),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn emit_report(report: &Report, format: ReportFormat) -> Result<Vec<u8>> {
    let mut out = String::new();
    match format {
        ReportFormat::Table => write_table(report, &mut out),
        ReportFormat::Kv => write_kv(report, &mut out),
        ReportFormat::Cdf => write_cdf(report, &mut out),
        ReportFormat::Distance => write_distance(report, &mut out),
    }
    Ok(out.into_bytes())
}

fn write_table(r: &Report, out: &mut String) {
    let mut bases: Vec<&str> = Vec::new();
    for e in &r.entries {
        if !bases.contains(&e.base.as_str()) {
            bases.push(&e.base);
        }
    }
    let cols: Vec<String> = r.columns.iter().map(|j| r.column_label(*j)).collect();
    let width = bases.iter().map(|b| b.len()).max().unwrap_or(5).max(5);
    let group = |title: &str| {
        let mut s = format!(" | {title:<9}");
        for c in &cols {
            let _ = write!(s, " {c:>8}");
        }
        s
    };
    let _ = writeln!(
        out,
        "MAE (nmi) at horizon, mean over folds\n\n{:<width$}{}{}{}",
        "model",
        group("unlabeled"),
        group("labeled"),
        group("improv.")
    );
    let rule = width + 3 * (12 + 9 * cols.len());
    let _ = writeln!(out, "{}", "-".repeat(rule));
    for base in bases {
        let u = r.find(base, false).and_then(|e| e.mean_mae());
        let l = r.find(base, true).and_then(|e| e.mean_mae());
        let cell = |m: &Option<Vec<f64>>, j: usize| match m {
            Some(v) => format!("{:>8.2}", v[j - 1]),
            None => format!("{:>8}", "-"),
        };
        let _ = write!(out, "{base:<width$} | {:<9}", "");
        for j in &r.columns {
            let _ = write!(out, " {}", cell(&u, *j));
        }
        let _ = write!(out, " | {:<9}", "");
        for j in &r.columns {
            let _ = write!(out, " {}", cell(&l, *j));
        }
        let _ = write!(out, " | {:<9}", "");
        for j in &r.columns {
            let s = match (&u, &l) {
                (Some(u), Some(l)) => format!("{}%", improvement_percent(u[j - 1], l[j - 1])),
                _ => "-".into(),
            };
            let _ = write!(out, " {s:>8}");
        }
        out.push('\n');
    }
    let failures: Vec<String> = r
        .entries
        .iter()
        .flat_map(|e| {
            e.failures.iter().map(move |(f, m)| {
                format!("{} ({}) fold {f}: {m}", e.base, labeled_tag(e.labeled))
            })
        })
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(out, "\nfailed folds:");
        for f in failures {
            let _ = writeln!(out, "  {f}");
        }
    }
}

fn labeled_tag(labeled: bool) -> &'static str {
    if labeled {
        "labeled"
    } else {
        "unlabeled"
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_kv(r: &Report, out: &mut String) {
    let _ = writeln!(out, "delta_min={}", r.delta_min);
    let cols: Vec<String> = r.columns.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(out, "columns={}", cols.join(","));
    for e in &r.entries {
        let tag = format!("model={} labeled={}", e.base, e.labeled);
        for f in &e.folds {
            let fold = f.fold.map_or("all".to_string(), |k| k.to_string());
            let _ = writeln!(
                out,
                "{tag} fold={fold} n={} mae={}",
                f.n_samples,
                join(&f.mae_per_horizon)
            );
        }
        if let Some(m) = e.mean_mae() {
            let _ = writeln!(out, "{tag} fold=mean folds={} mae={}", e.folds.len(), join(&m));
        }
        for (k, msg) in &e.failures {
            let _ = writeln!(out, "{tag} fold={k} error={}", msg.replace('\n', " "));
        }
    }
}

fn write_cdf(r: &Report, out: &mut String) {
    let _ = writeln!(out, "# final-horizon error (nmi), cumulative fraction");
    for e in &r.entries {
        if let Some(cdf) = e.pooled_cdf() {
            let _ = writeln!(out, "\n# model={} labeled={}", e.base, e.labeled);
            for (x, p) in cdf {
                let _ = writeln!(out, "{x} {p}");
            }
        }
    }
}

/// MAE at the final horizon binned by the great-circle distance of each
/// sample's last observed position from `distance_origin`.
pub fn mae_by_distance(
    anchors: &[GeoPoint],
    errors: &[f64],
    origin: GeoPoint,
    bin_nmi: f64,
) -> Vec<(f64, f64, usize)> {
    let mut bins: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (a, e) in anchors.iter().zip(errors) {
        let b = (haversine_nmi(origin, *a) / bin_nmi).floor() as i64;
        let s = bins.entry(b).or_insert((0.0, 0));
        s.0 += e;
        s.1 += 1;
    }
    bins.into_iter()
        .map(|(b, (s, n))| (b as f64 * bin_nmi, s / n as f64, n))
        .collect()
}

fn write_distance(r: &Report, out: &mut String) {
    let _ = writeln!(
        out,
        "# origin lat={} lon={} bin_nmi={}\n# bin start (nmi), final-horizon MAE (nmi), samples",
        r.distance_origin.lat, r.distance_origin.lon, r.bin_nmi
    );
    for e in &r.entries {
        let anchors: Vec<GeoPoint> = e.folds.iter().flat_map(|f| f.anchors.clone()).collect();
        let errors = e.pooled_final_errors();
        if anchors.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n# model={} labeled={}", e.base, e.labeled);
        for (d, m, n) in mae_by_distance(&anchors, &errors, r.distance_origin, r.bin_nmi) {
            let _ = writeln!(out, "{d} {m} {n}");
        }
    }
}
