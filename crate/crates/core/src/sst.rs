//! Gridded SST fields, interpolation, ensemble propagation and binned maps.
//!
//! Position ensembles are turned into SST uncertainty by sampling a monthly
//! climatology at every ensemble position: the spread of the sampled values
//! is the random SST uncertainty, and their mean minus the value at the
//! reported position is the (signed) SST offset. Diurnal variation is not
//! modelled.
//!
//! Raster format (text): a header line `GRIDv1 nlon nlat lon0 lat0 dlon dlat`
//! followed by `nlat` rows of `nlon` values, `NaN` for missing cells. Row `j`
//! holds latitude `lat0 + j·dlat`, column `i` longitude `lon0 + i·dlon`
//! (cell centres, degrees). The binary variant is `GRB1`, then nlon and nlat
//! as u64 and lon0, lat0, dlon, dlat and the values as f64, all little-endian.

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::tracks::Track;
use chrono::{DateTime, Datelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub lon0: f64,
    pub lat0: f64,
    pub dlon: f64,
    pub dlat: f64,
    pub nlon: usize,
    pub nlat: usize,
    /// Row-major by latitude; NaN marks a missing cell.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(lon0: f64, lat0: f64, dlon: f64, dlat: f64, nlon: usize, nlat: usize, values: Vec<f64>) -> Result<Self> {
        if !(dlon > 0.0 && dlat > 0.0) || !lon0.is_finite() || !lat0.is_finite() {
            return Err(Error::format(format!("grid spacing must be positive, got dlon={dlon}, dlat={dlat}")));
        }
        if nlon == 0 || nlat == 0 || values.len() != nlon * nlat {
            return Err(Error::format(format!("grid declares {nlon}×{nlat} cells but has {} values", values.len())));
        }
        Ok(GridField { lon0, lat0, dlon, dlat, nlon, nlat, values })
    }

    /// Field with every cell set by `f(lon, lat)` at the cell centre.
    pub fn from_fn(lon0: f64, lat0: f64, dlon: f64, dlat: f64, nlon: usize, nlat: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(nlon * nlat);
        for j in 0..nlat {
            for i in 0..nlon {
                values.push(f(lon0 + i as f64 * dlon, lat0 + j as f64 * dlat));
            }
        }
        Self::new(lon0, lat0, dlon, dlat, nlon, nlat, values)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nlon + i]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_nan()
    }

    /// Whether the columns span the full circle, so longitude wraps.
    pub fn wraps(&self) -> bool {
        (self.nlon as f64 * self.dlon - 360.0).abs() < 1e-9
    }

    /// Bilinear interpolation among the four surrounding cell centres; if any
    /// contributing corner is missing, the nearest valid corner is used.
    /// `None` outside the grid or when all corners are missing.
    pub fn sample(&self, p: GeoPoint) -> Option<f64> {
        let y = (p.lat_deg() - self.lat0) / self.dlat;
        if !(-0.5..=self.nlat as f64 - 0.5).contains(&y) {
            return None;
        }
        let y = y.clamp(0.0, (self.nlat - 1) as f64);
        let mut x = (p.lon_deg() - self.lon0) / self.dlon;
        let per = 360.0 / self.dlon;
        if self.wraps() {
            x = x.rem_euclid(per);
        } else if !(-0.5..=self.nlon as f64 - 0.5).contains(&x) {
            // the query may sit on the other side of the dateline
            let shifted = [x + per, x - per].into_iter().find(|v| (-0.5..=self.nlon as f64 - 0.5).contains(v));
            x = shifted?;
        }
        let (i0, i1, fx) = if self.wraps() {
            let i0 = x.floor() as usize % self.nlon;
            (i0, (i0 + 1) % self.nlon, x - x.floor())
        } else {
            let x = x.clamp(0.0, (self.nlon - 1) as f64);
            let i0 = (x.floor() as usize).min(self.nlon.saturating_sub(2));
            let i1 = (i0 + 1).min(self.nlon - 1);
            (i0, i1, if i1 == i0 { 0.0 } else { x - i0 as f64 })
        };
        let j0 = (y.floor() as usize).min(self.nlat.saturating_sub(2));
        let j1 = (j0 + 1).min(self.nlat - 1);
        let fy = if j1 == j0 { 0.0 } else { y - j0 as f64 };

        let corners = [(i0, j0, (1.0 - fx) * (1.0 - fy), fx, fy), (i1, j0, fx * (1.0 - fy), 1.0 - fx, fy), (i0, j1, (1.0 - fx) * fy, fx, 1.0 - fy), (i1, j1, fx * fy, 1.0 - fx, 1.0 - fy)];
        if corners.iter().all(|c| c.2 == 0.0 || !self.is_missing(c.0, c.1)) {
            let used: Vec<(f64, f64)> = corners.iter().filter(|c| c.2 != 0.0).map(|c| (c.2, self.get(c.0, c.1))).collect();
            // equal corners return their value exactly, whatever the weights sum to in floating point
            if used.iter().all(|u| u.1 == used[0].1) {
                return Some(used[0].1);
            }
            return Some(used.iter().map(|(w, v)| w * v).sum());
        }
        corners
            .iter()
            .filter(|c| !self.is_missing(c.0, c.1))
            .min_by(|a, b| a.3.hypot(a.4).total_cmp(&b.3.hypot(b.4)))
            .map(|c| self.get(c.0, c.1))
    }
}

/// Parse a text or binary raster, detected from the leading bytes.
pub fn load_grid<R: Read>(r: R) -> Result<GridField> {
    let mut r = BufReader::new(r);
    let head = r.fill_buf()?;
    if head.starts_with(b"GRB1") {
        read_binary(r)
    } else {
        read_text(r)
    }
}

fn read_text<R: BufRead>(r: R) -> Result<GridField> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::format("empty grid file"))??;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 7 || h[0] != "GRIDv1" {
        return Err(Error::format(format!("bad grid header {header:?}")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad grid dimension {s:?}")));
    let real = |s: &str| s.parse::<f64>().map_err(|_| Error::format(format!("bad grid header value {s:?}")));
    let (nlon, nlat) = (int(h[1])?, int(h[2])?);
    let (lon0, lat0, dlon, dlat) = (real(h[3])?, real(h[4])?, real(h[5])?, real(h[6])?);
    let mut values = Vec::with_capacity(nlon * nlat);
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| Error::Parse { line: k as u64 + 2, msg: format!("bad grid value {t:?}") })).collect::<Result<Vec<_>>>()?;
        if row.len() != nlon {
            return Err(Error::format(format!("grid row {} has {} values, header says {nlon}", rows + 1, row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != nlat {
        return Err(Error::format(format!("grid has {rows} rows, header says {nlat}")));
    }
    GridField::new(lon0, lat0, dlon, dlat, nlon, nlat, values)
}

fn read_binary<R: Read>(mut r: R) -> Result<GridField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    let mut b8 = [0u8; 8];
    let mut u = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut b8).map_err(|_| Error::format("truncated binary grid"))?;
        Ok(b8)
    };
    let nlon = u64::from_le_bytes(u(&mut r)?) as usize;
    let nlat = u64::from_le_bytes(u(&mut r)?) as usize;
    let mut hdr = [0.0; 4];
    for v in &mut hdr {
        *v = f64::from_le_bytes(u(&mut r)?);
    }
    let count = nlon.checked_mul(nlat).ok_or_else(|| Error::format("grid dimensions overflow"))?;
    let mut values = Vec::with_capacity(count.min(1 << 28));
    for _ in 0..count {
        values.push(f64::from_le_bytes(u(&mut r)?));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::format("trailing bytes after binary grid"));
    }
    GridField::new(hdr[0], hdr[1], hdr[2], hdr[3], nlon, nlat, values)
}

/// Text raster; values print in shortest round-trip form.
pub fn write_grid<W: Write>(mut w: W, f: &GridField) -> Result<()> {
    writeln!(w, "GRIDv1 {} {} {} {} {} {}", f.nlon, f.nlat, f.lon0, f.lat0, f.dlon, f.dlat)?;
    for row in f.values.chunks(f.nlon) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_grid_binary<W: Write>(mut w: W, f: &GridField) -> Result<()> {
    w.write_all(b"GRB1")?;
    w.write_all(&(f.nlon as u64).to_le_bytes())?;
    w.write_all(&(f.nlat as u64).to_le_bytes())?;
    for v in [f.lon0, f.lat0, f.dlon, f.dlat].iter().chain(&f.values) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// One field for the whole year, or twelve monthly fields (January first).
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub fields: Vec<GridField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridManifest {
    Monthly { months: Vec<String> },
    Single { field: String },
}

impl Climatology {
    pub fn single(f: GridField) -> Self {
        Climatology { fields: vec![f] }
    }

    pub fn monthly(fields: Vec<GridField>) -> Result<Self> {
        if fields.len() != 12 {
            return Err(Error::config(format!("a monthly climatology needs 12 fields, got {}", fields.len())));
        }
        Ok(Climatology { fields })
    }

    /// Field for a Unix time (calendar month in UTC).
    pub fn field_at(&self, time: i64) -> &GridField {
        if self.fields.len() == 1 {
            return &self.fields[0];
        }
        let m = DateTime::from_timestamp(time, 0).map_or(0, |d| d.month0() as usize);
        &self.fields[m]
    }

    /// Load from a JSON manifest, `{"months": [12 paths]}` or
    /// `{"field": path}`; relative paths resolve against the manifest.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let m: GridManifest = serde_json::from_reader(std::fs::File::open(path)?).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let load = |p: &str| -> Result<GridField> { load_grid(std::fs::File::open(dir.join(p))?) };
        match m {
            GridManifest::Single { field } => Ok(Climatology::single(load(&field)?)),
            GridManifest::Monthly { months } => Climatology::monthly(months.iter().map(|p| load(p)).collect::<Result<_>>()?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSst {
    /// Standard deviation of sampled SST across the ensemble, °C.
    pub random: f64,
    /// Ensemble mean minus the value at the reported position, °C.
    pub offset: f64,
    pub missing_fraction: f64,
    /// Set when at least 10% of the ensemble fell on missing cells.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SstUncertainty {
    pub track_id: String,
    pub reports: Vec<ReportSst>,
}

/// Sample the climatology at every ensemble position (`trajectories` is
/// draw × report).
pub fn propagate(trajectories: &[Vec<GeoPoint>], reported: &Track, clim: &Climatology) -> Result<SstUncertainty> {
    if trajectories.iter().any(|t| t.len() != reported.len()) {
        return Err(Error::data(format!("ensemble does not match the {} reports of {}", reported.len(), reported.id)));
    }
    let reports = (0..reported.len())
        .into_par_iter()
        .map(|i| {
            let f = clim.field_at(reported.reports[i].time);
            let vals: Vec<f64> = trajectories.iter().filter_map(|t| f.sample(t[i])).collect();
            let missing_fraction = if trajectories.is_empty() { 1.0 } else { 1.0 - vals.len() as f64 / trajectories.len() as f64 };
            let (random, mean) = if vals.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let m = crate::stats::mean(&vals);
                (crate::stats::variance_pop(&vals).sqrt(), m)
            };
            let offset = f.sample(reported.reports[i].pos).map_or(f64::NAN, |r| mean - r);
            ReportSst { random, offset, missing_fraction, flagged: missing_fraction >= 0.1 }
        })
        .collect();
    Ok(SstUncertainty { track_id: reported.id.clone(), reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// √(mean of squares), for uncertainties.
    Quadrature,
    /// Arithmetic mean, for signed offsets.
    Mean,
}

/// Bin per-report values onto a global grid of `res_deg` cells; empty cells
/// and NaN inputs are missing.
pub fn bin_map(values: &[(GeoPoint, f64)], res_deg: f64, mode: BinMode) -> Result<GridField> {
    if !(res_deg > 0.0) || (360.0 / res_deg).fract().abs() > 1e-9 || (180.0 / res_deg).fract().abs() > 1e-9 {
        return Err(Error::config(format!("bin resolution must divide 180°, got {res_deg}")));
    }
    let nlon = (360.0 / res_deg).round() as usize;
    let nlat = (180.0 / res_deg).round() as usize;
    let mut sum = vec![0.0; nlon * nlat];
    let mut count = vec![0usize; nlon * nlat];
    for (p, v) in values {
        if v.is_nan() {
            continue;
        }
        let i = (((p.lon_deg() + 180.0) / res_deg).floor() as usize).min(nlon - 1);
        let j = (((p.lat_deg() + 90.0) / res_deg).floor() as usize).min(nlat - 1);
        sum[j * nlon + i] += match mode {
            BinMode::Quadrature => v * v,
            BinMode::Mean => *v,
        };
        count[j * nlon + i] += 1;
    }
    let cells = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| match (n, mode) {
            (0, _) => f64::NAN,
            (_, BinMode::Quadrature) => (s / n as f64).sqrt(),
            (_, BinMode::Mean) => s / n as f64,
        })
        .collect();
    GridField::new(-180.0 + res_deg / 2.0, -90.0 + res_deg / 2.0, res_deg, res_deg, nlon, nlat, cells)
}
