//! Local flat-earth displacement arithmetic.
//!
//! Positions are longitude/latitude in radians; displacements are kilometres
//! east/north. A step between two reports is scaled by the cosine of the
//! mean latitude of its endpoints, and a track's displacement from its first
//! report is the running sum of its steps.

use crate::error::{Error, Result};
use crate::stats::wrap_angle;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, AddAssign, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    /// Spherical radius in km.
    pub radius_km: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel { radius_km: 6371.0 }
    }
}

impl EarthModel {
    pub fn new(radius_km: f64) -> Result<Self> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(Error::config(format!("earth radius must be positive, got {radius_km}")));
        }
        Ok(EarthModel { radius_km })
    }

    /// Kilometres per degree of latitude (≈ 111.19 km for the default radius).
    pub fn km_per_degree(&self) -> f64 {
        self.radius_km * PI / 180.0
    }
}

/// A reported or simulated position. Longitude is kept in (−π, π], latitude
/// strictly inside the poles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lon: f64,
    lat: f64,
}

impl GeoPoint {
    pub fn from_radians(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::InvalidCoordinate(format!("non-finite position ({lon}, {lat})")));
        }
        if lat.abs() >= FRAC_PI_2 {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {:.6}° at or beyond a pole",
                lat.to_degrees()
            )));
        }
        Ok(GeoPoint { lon: wrap_angle(lon), lat })
    }

    pub fn from_degrees(lon_deg: f64, lat_deg: f64) -> Result<Self> {
        Self::from_radians(lon_deg.to_radians(), lat_deg.to_radians())
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon.to_degrees()
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat.to_degrees()
    }

    /// Same latitude, longitude rotated by `dlon` radians.
    pub fn rotated(&self, dlon: f64) -> GeoPoint {
        GeoPoint { lon: wrap_angle(self.lon + dlon), lat: self.lat }
    }
}

/// Local displacement in km (east-positive, north-positive).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f64, dy: f64) -> Self {
        Displacement { dx, dy }
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn scale(&self, k: f64) -> Self {
        Displacement { dx: self.dx * k, dy: self.dy * k }
    }
}

impl Add for Displacement {
    type Output = Displacement;
    fn add(self, o: Displacement) -> Displacement {
        Displacement { dx: self.dx + o.dx, dy: self.dy + o.dy }
    }
}

impl AddAssign for Displacement {
    fn add_assign(&mut self, o: Displacement) {
        self.dx += o.dx;
        self.dy += o.dy;
    }
}

impl Sub for Displacement {
    type Output = Displacement;
    fn sub(self, o: Displacement) -> Displacement {
        Displacement { dx: self.dx - o.dx, dy: self.dy - o.dy }
    }
}

impl Neg for Displacement {
    type Output = Displacement;
    fn neg(self) -> Displacement {
        Displacement { dx: -self.dx, dy: -self.dy }
    }
}

/// Mid-latitude-scaled displacement from `a` to `b`; the longitude difference
/// is taken through the shorter arc.
pub fn step_displacement(a: GeoPoint, b: GeoPoint, earth: &EarthModel) -> Displacement {
    let dlon = wrap_angle(b.lon - a.lon);
    let mid = 0.5 * (a.lat + b.lat);
    Displacement {
        dx: earth.radius_km * dlon * mid.cos(),
        dy: earth.radius_km * (b.lat - a.lat),
    }
}

/// Running sums of [`step_displacement`]; element 0 is the origin.
pub fn cumulative_displacements(points: &[GeoPoint], earth: &EarthModel) -> Result<Vec<Displacement>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("cumulative_displacements needs at least one point"));
    }
    let mut out = Vec::with_capacity(points.len());
    let mut acc = Displacement::ZERO;
    out.push(acc);
    for w in points.windows(2) {
        acc += step_displacement(w[0], w[1], earth);
        out.push(acc);
    }
    Ok(out)
}

/// Inverse of [`step_displacement`]: the point reached from `p` by `d`.
///
/// The northward component fixes the destination latitude directly, which in
/// turn fixes the mid-latitude cosine, so the inversion is closed-form.
pub fn advance(p: GeoPoint, d: Displacement, earth: &EarthModel) -> Result<GeoPoint> {
    if !d.dx.is_finite() || !d.dy.is_finite() {
        return Err(Error::InvalidCoordinate(format!("non-finite displacement ({}, {})", d.dx, d.dy)));
    }
    if d.dx == 0.0 && d.dy == 0.0 {
        return Ok(p);
    }
    let lat = p.lat + d.dy / earth.radius_km;
    if lat.abs() >= FRAC_PI_2 {
        return Err(Error::OutOfDomain(format!(
            "advancing by ({:.3}, {:.3}) km crosses a pole",
            d.dx, d.dy
        )));
    }
    let c = (0.5 * (p.lat + lat)).cos();
    let dlon = d.dx / (earth.radius_km * c);
    if dlon.abs() >= PI {
        return Err(Error::OutOfDomain(format!(
            "eastward displacement {:.3} km exceeds half a parallel",
            d.dx
        )));
    }
    Ok(GeoPoint { lon: wrap_angle(p.lon + dlon), lat })
}
