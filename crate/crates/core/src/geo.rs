//! Geographic primitives: validated coordinates, great-circle distance and
//! the affine standardization applied to (lon, lat) states before training.

use crate::error::{Error, Result};

/// Mean Earth radius (6371.0088 km) expressed in nautical miles.
pub const EARTH_RADIUS_NMI: f64 = 6371.0088 / 1.852;

/// A position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !Self::is_valid(lat, lon) {
            return Err(Error::InvalidInput(format!(
                "coordinate out of range: lat={lat}, lon={lon}"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn is_valid(lat: f64, lon: f64) -> bool {
        lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon)
    }

    /// The model state vector, ordered (lon, lat).
    pub fn to_state(self) -> [f64; 2] {
        [self.lon, self.lat]
    }
}

/// Great-circle distance in nautical miles (haversine formula).
///
/// Both argument orders evaluate the exact same floating-point expression, so
/// the result is bitwise symmetric.
pub fn haversine_nmi(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let half_dphi = (p2 - p1).abs() * 0.5;
    let half_dlambda = (b.lon - a.lon).abs().to_radians() * 0.5;
    // cos(p1)*cos(p2) is commutative in IEEE arithmetic
    let h = half_dphi.sin().powi(2) + p1.cos() * p2.cos() * half_dlambda.sin().powi(2);
    2.0 * EARTH_RADIUS_NMI * h.sqrt().min(1.0).asin()
}

/// Per-coordinate affine map `(v - mean) / std` over (lon, lat).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardizer {
    pub fn new(mean: [f64; 2], std: [f64; 2]) -> Result<Self> {
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::DegenerateData(format!(
                "invalid standardizer mean={mean:?} std={std:?}"
            )));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn identity() -> Self {
        Standardizer {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }

    pub fn apply(&self, p: GeoPoint) -> [f64; 2] {
        let s = p.to_state();
        [
            (s[0] - self.mean[0]) / self.std[0],
            (s[1] - self.mean[1]) / self.std[1],
        ]
    }

    /// Maps a standardized state back to degrees. Model outputs can land
    /// outside the valid range, so latitude is clamped and longitude wrapped.
    pub fn invert(&self, v: [f64; 2]) -> GeoPoint {
        let lon = v[0] * self.std[0] + self.mean[0];
        let lat = v[1] * self.std[1] + self.mean[1];
        let lon = if (-180.0..=180.0).contains(&lon) {
            lon
        } else {
            (lon + 180.0).rem_euclid(360.0) - 180.0
        };
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon,
        }
    }
}

/// Fits mean and population standard deviation over (lon, lat).
pub fn fit_standardizer(points: &[GeoPoint]) -> Result<Standardizer> {
    if points.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 points to fit a standardizer, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        let s = p.to_state();
        mean[0] += s[0];
        mean[1] += s[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut var = [0.0; 2];
    for p in points {
        let s = p.to_state();
        var[0] += (s[0] - mean[0]).powi(2);
        var[1] += (s[1] - mean[1]).powi(2);
    }
    let std = [(var[0] / n).sqrt(), (var[1] / n).sqrt()];
    if std.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
        return Err(Error::DegenerateData(format!(
            "zero variance in coordinates (std lon={}, lat={})",
            std[0], std[1]
        )));
    }
    Standardizer::new(mean, std)
}
