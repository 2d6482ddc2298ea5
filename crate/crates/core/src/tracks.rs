//! Ship tracks: parsing, gap segmentation, empirical kinematics, celestial-fix
//! detection and track classification.
//!
//! Headings use the mathematical convention throughout the crate: east = 0,
//! counter-clockwise positive, in (−π, π].

use crate::error::{Error, Result};
use crate::geo::{step_displacement, Displacement, EarthModel, GeoPoint};
use crate::stats::{circular_mean, median, quantile_nearest_rank};
use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    /// Unix seconds (negative before 1970).
    pub time: i64,
    pub pos: GeoPoint,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    pub reports: Vec<TrackReport>,
    /// Median inter-report gap in hours.
    pub cadence_hours: f64,
}

impl Track {
    /// Build a track, checking ordering and length.
    pub fn new(id: impl Into<String>, reports: Vec<TrackReport>) -> Result<Self> {
        let id = id.into();
        if reports.len() < 3 {
            return Err(Error::data(format!("track {id} has {} reports, need at least 3", reports.len())));
        }
        for w in reports.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::data(format!(
                    "track {id}: timestamps not strictly increasing at {}",
                    format_time(w[1].time)
                )));
            }
        }
        let cadence_hours = median_gap_hours(&reports);
        Ok(Track { id, reports, cadence_hours })
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.reports.iter().map(|r| r.pos).collect()
    }

    pub fn duration_days(&self) -> f64 {
        (self.reports[self.len() - 1].time - self.reports[0].time) as f64 / SECONDS_PER_DAY as f64
    }

    /// Circular mean longitude of the reports, in degrees.
    pub fn mean_lon_deg(&self) -> f64 {
        let lons: Vec<f64> = self.reports.iter().map(|r| r.pos.lon()).collect();
        circular_mean(&lons).to_degrees()
    }

    /// Track-local civil day index of report `i`: UTC shifted by the mean
    /// longitude at 15° per hour.
    pub fn local_day(&self, i: usize) -> i64 {
        local_day(self.reports[i].time, self.mean_lon_deg())
    }

    /// Copy of the track with every longitude rotated by `dlon_deg`.
    pub fn rotated(&self, dlon_deg: f64) -> Track {
        let reports = self
            .reports
            .iter()
            .map(|r| TrackReport { pos: r.pos.rotated(dlon_deg.to_radians()), ..r.clone() })
            .collect();
        Track { id: self.id.clone(), reports, cadence_hours: self.cadence_hours }
    }
}

pub fn local_day(time: i64, lon_deg: f64) -> i64 {
    let local = time as f64 + lon_deg / 15.0 * 3600.0;
    (local / SECONDS_PER_DAY as f64).floor() as i64
}

fn median_gap_hours(reports: &[TrackReport]) -> f64 {
    let gaps: Vec<f64> = reports.windows(2).map(|w| (w[1].time - w[0].time) as f64 / 3600.0).collect();
    median(&gaps)
}

pub fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc).timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(n.and_utc().timestamp());
        }
    }
    None
}

pub fn format_time(t: i64) -> String {
    match DateTime::<Utc>::from_timestamp(t, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => t.to_string(),
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    id: String,
    timestamp_iso8601: String,
    lon_deg: f64,
    lat_deg: f64,
}

/// Parse the track CSV (`id,timestamp_iso8601,lon_deg,lat_deg`) into
/// time-sorted tracks ordered by id. Ids with fewer than three reports are
/// skipped; a repeated timestamp within one id is an error.
pub fn parse_tracks<R: Read>(input: R) -> Result<Vec<Track>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let expected = ["id", "timestamp_iso8601", "lon_deg", "lat_deg"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}, found {:?}", expected.join(","), headers),
        });
    }
    let mut groups: BTreeMap<String, Vec<TrackReport>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let time = parse_time(&row.timestamp_iso8601).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad timestamp {:?}", row.timestamp_iso8601),
        })?;
        if !(row.lon_deg > -180.0 - 1e-9 && row.lon_deg <= 180.0 && row.lat_deg > -90.0 && row.lat_deg < 90.0) {
            return Err(Error::Parse {
                line,
                msg: format!("position ({}, {}) out of range", row.lon_deg, row.lat_deg),
            });
        }
        let pos = GeoPoint::from_degrees(row.lon_deg, row.lat_deg)
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        groups.entry(row.id.clone()).or_default().push(TrackReport { time, pos, source_id: row.id });
    }
    let mut tracks = Vec::new();
    for (id, mut reports) in groups {
        reports.sort_by_key(|r| r.time);
        if let Some(w) = reports.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(Error::data(format!(
                "track {id}: duplicate timestamp {}",
                format_time(w[0].time)
            )));
        }
        if reports.len() >= 3 {
            tracks.push(Track::new(id, reports)?);
        }
    }
    Ok(tracks)
}

/// Write tracks in the CSV layout read by [`parse_tracks`].
pub fn write_tracks<W: Write>(out: W, tracks: &[Track]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "timestamp_iso8601", "lon_deg", "lat_deg"])
        .map_err(|e| Error::format(e.to_string()))?;
    for t in tracks {
        for r in &t.reports {
            w.write_record([
                t.id.clone(),
                format_time(r.time),
                format!("{:.6}", r.pos.lon_deg()),
                format!("{:.6}", r.pos.lat_deg()),
            ])
            .map_err(|e| Error::format(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Split wherever the gap exceeds `max_gap_hours`; segments shorter than
/// `min_reports` are dropped. An unsplit track keeps its id, pieces get `#k`.
pub fn segment_track(t: &Track, max_gap_hours: f64, min_reports: usize) -> Vec<Track> {
    let mut pieces: Vec<Vec<TrackReport>> = vec![vec![t.reports[0].clone()]];
    for w in t.reports.windows(2) {
        let gap = (w[1].time - w[0].time) as f64 / 3600.0;
        if gap > max_gap_hours {
            pieces.push(Vec::new());
        }
        pieces.last_mut().unwrap().push(w[1].clone());
    }
    if pieces.len() == 1 {
        return if t.len() >= min_reports.max(3) { vec![t.clone()] } else { Vec::new() };
    }
    pieces
        .into_iter()
        .enumerate()
        .filter(|(_, p)| p.len() >= min_reports.max(3))
        .filter_map(|(k, p)| Track::new(format!("{}#{}", t.id, k), p).ok())
        .collect()
}

/// Per-step empirical motion between consecutive reports. Index `i` describes
/// the step from report `i` to report `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    /// km/hr
    pub speed: Vec<f64>,
    /// radians, east = 0, counter-clockwise
    pub heading: Vec<f64>,
    pub steps: Vec<Displacement>,
    pub dt_hours: Vec<f64>,
}

impl Kinematics {
    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }
}

pub fn empirical_kinematics(t: &Track, earth: &EarthModel) -> Result<Kinematics> {
    if t.len() < 2 {
        return Err(Error::data(format!("track {} has fewer than 2 reports", t.id)));
    }
    let n = t.len() - 1;
    let mut k = Kinematics {
        speed: Vec::with_capacity(n),
        heading: Vec::with_capacity(n),
        steps: Vec::with_capacity(n),
        dt_hours: Vec::with_capacity(n),
    };
    for w in t.reports.windows(2) {
        let dt = (w[1].time - w[0].time) as f64 / 3600.0;
        if dt <= 0.0 {
            return Err(Error::data(format!("track {}: zero time step at {}", t.id, format_time(w[1].time))));
        }
        let d = step_displacement(w[0].pos, w[1].pos, earth);
        let dist = d.norm();
        k.speed.push(dist / dt);
        k.heading.push(if dist == 0.0 { 0.0 } else { d.dy.atan2(d.dx) });
        k.steps.push(d);
        k.dt_hours.push(dt);
    }
    Ok(k)
}

/// Celestial-fix time steps and the jump observed at each.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixSchedule {
    /// Sorted report indices.
    pub fix_indices: Vec<usize>,
    /// Reported minus predicted displacement at each fix, km.
    pub jumps: Vec<Displacement>,
}

impl FixSchedule {
    pub fn len(&self) -> usize {
        self.fix_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fix_indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.fix_indices.binary_search(&i).is_ok()
    }
}

/// Prediction residual for report `t` (≥ 2) using step `reference` as the
/// velocity estimate: reported step minus velocity × elapsed time.
fn residual(k: &Kinematics, t: usize, reference: usize) -> Displacement {
    let s_in = t - 1;
    let v = k.steps[reference].scale(k.dt_hours[s_in] / k.dt_hours[reference]);
    k.steps[s_in] - v
}

/// Plain predictor residuals (previous step as reference) for reports 2..n.
pub fn prediction_residuals(k: &Kinematics) -> Vec<Displacement> {
    (2..=k.len()).map(|t| residual(k, t, t - 2)).collect()
}

/// Residuals for reports 2..n where the reference step skips back past any
/// steps that were themselves flagged, so a jump is not echoed into later
/// reports. `flag` decides whether a residual is a jump.
fn sequential_residuals(k: &Kinematics, mut flag: impl FnMut(usize, Displacement) -> bool) -> Vec<(usize, Displacement, bool)> {
    let mut flagged = vec![false; k.len()];
    let mut out = Vec::with_capacity(k.len().saturating_sub(1));
    for t in 2..=k.len() {
        let mut reference = t - 2;
        while flagged[reference] && reference >= 1 {
            reference -= 1;
        }
        let r = residual(k, t, reference);
        let is_jump = flag(t, r);
        flagged[t - 1] = is_jump;
        out.push((t, r, is_jump));
    }
    out
}

/// Detect celestial corrections: reports whose position departs from the
/// dead-reckoning prediction by at least `threshold_km` in either component;
/// within each track-local day only the largest jump is kept.
pub fn detect_fixes(t: &Track, k: &Kinematics, threshold_km: f64) -> Result<FixSchedule> {
    if t.len() < 3 {
        return Err(Error::data(format!("track {} too short for fix detection", t.id)));
    }
    let lon = t.mean_lon_deg();
    let candidates = sequential_residuals(k, |_, r| r.dx.abs() >= threshold_km || r.dy.abs() >= threshold_km);
    let mut best: BTreeMap<i64, (usize, Displacement)> = BTreeMap::new();
    for (i, r, is_jump) in candidates {
        if !is_jump {
            continue;
        }
        let day = local_day(t.reports[i].time, lon);
        match best.get(&day) {
            Some((_, b)) if b.norm() >= r.norm() => {}
            _ => {
                best.insert(day, (i, r));
            }
        }
    }
    let mut picked: Vec<(usize, Displacement)> = best.into_values().collect();
    picked.sort_by_key(|(i, _)| *i);
    Ok(FixSchedule {
        fix_indices: picked.iter().map(|(i, _)| *i).collect(),
        jumps: picked.iter().map(|(_, r)| *r).collect(),
    })
}

/// Schedule for known fix indices (e.g. an injection log), with jumps
/// measured by the same predictor as [`detect_fixes`].
pub fn schedule_at(k: &Kinematics, indices: &[usize]) -> FixSchedule {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let res = sequential_residuals(k, |t, _| sorted.binary_search(&t).is_ok());
    let mut jumps = Vec::with_capacity(sorted.len());
    let mut kept = Vec::with_capacity(sorted.len());
    for &i in &sorted {
        if i >= 2 && i <= k.len() {
            kept.push(i);
            jumps.push(res[i - 2].1);
        } else if i == 1 && !k.is_empty() {
            // no reference step before the first: the whole step is the jump proxy
            kept.push(i);
            jumps.push(k.steps[0]);
        }
    }
    FixSchedule { fix_indices: kept, jumps }
}

/// q-quantile (nearest rank) of absolute latitudinal prediction residuals
/// pooled over all tracks.
pub fn threshold_from_quantile(tracks: &[Track], earth: &EarthModel, q: f64) -> Result<f64> {
    let mut pool = Vec::new();
    for t in tracks {
        if t.len() < 3 {
            continue;
        }
        let k = empirical_kinematics(t, earth)?;
        pool.extend(prediction_residuals(&k).iter().map(|r| r.dy.abs()));
    }
    quantile_nearest_rank(&pool, q).ok_or_else(|| Error::data("no prediction residuals to take a quantile of"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackLabel {
    Hq2,
    Lq4,
    StaticJump,
    Other,
}

impl TrackLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackLabel::Hq2 => "HQ2",
            TrackLabel::Lq4 => "LQ4",
            TrackLabel::StaticJump => "STATIC_JUMP",
            TrackLabel::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEvidence {
    pub median_speed_kmh: f64,
    /// Median step length among moving steps.
    pub median_jump_km: f64,
    pub static_fraction: f64,
    pub cadence_hours: f64,
    pub fixes_per_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackClass {
    pub label: TrackLabel,
    pub evidence: ClassEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub static_speed_kmh: f64,
    pub static_fraction: f64,
    pub static_jump_km: f64,
    pub hq2_max_cadence_hours: f64,
    pub hq2_fix_rate: (f64, f64),
    pub lq4_cadence_hours: (f64, f64),
    pub lq4_max_fix_rate: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            static_speed_kmh: 0.5,
            static_fraction: 0.5,
            static_jump_km: 40.0,
            hq2_max_cadence_hours: 2.5,
            hq2_fix_rate: (0.3, 1.5),
            lq4_cadence_hours: (2.5, 5.0),
            lq4_max_fix_rate: 0.1,
        }
    }
}

pub fn classify_track(t: &Track, k: &Kinematics, fs: &FixSchedule, cfg: &ClassifyConfig) -> TrackClass {
    let n = k.len().max(1) as f64;
    let static_steps = k.speed.iter().filter(|&&s| s < cfg.static_speed_kmh).count();
    let moving: Vec<f64> = k
        .speed
        .iter()
        .zip(&k.steps)
        .filter(|(s, _)| **s >= cfg.static_speed_kmh)
        .map(|(_, d)| d.norm())
        .collect();
    let days = t.duration_days().max(1e-9);
    let evidence = ClassEvidence {
        median_speed_kmh: median(&k.speed),
        median_jump_km: if moving.is_empty() { 0.0 } else { median(&moving) },
        static_fraction: static_steps as f64 / n,
        cadence_hours: t.cadence_hours,
        fixes_per_day: fs.len() as f64 / days,
    };
    let label = if evidence.static_fraction >= cfg.static_fraction && evidence.median_jump_km > cfg.static_jump_km {
        TrackLabel::StaticJump
    } else if evidence.cadence_hours <= cfg.hq2_max_cadence_hours
        && evidence.fixes_per_day >= cfg.hq2_fix_rate.0
        && evidence.fixes_per_day <= cfg.hq2_fix_rate.1
    {
        TrackLabel::Hq2
    } else if evidence.cadence_hours > cfg.lq4_cadence_hours.0
        && evidence.cadence_hours <= cfg.lq4_cadence_hours.1
        && evidence.fixes_per_day < cfg.lq4_max_fix_rate
    {
        TrackLabel::Lq4
    } else {
        TrackLabel::Other
    };
    TrackClass { label, evidence }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub track_id: String,
    pub report_index: usize,
    pub jx_km: f64,
    pub jy_km: f64,
}

/// Flatten schedules into the JSON export records.
pub fn fix_records(schedules: &[(String, FixSchedule)]) -> Vec<FixRecord> {
    schedules
        .iter()
        .flat_map(|(id, fs)| {
            fs.fix_indices.iter().zip(&fs.jumps).map(move |(&i, j)| FixRecord {
                track_id: id.clone(),
                report_index: i,
                jx_km: j.dx,
                jy_km: j.dy,
            })
        })
        .collect()
}

/// Group export records back into per-track schedules.
pub fn schedules_from_records(records: &[FixRecord]) -> BTreeMap<String, FixSchedule> {
    let mut out: BTreeMap<String, Vec<&FixRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.track_id.clone()).or_default().push(r);
    }
    out.into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by_key(|r| r.report_index);
            let fs = FixSchedule {
                fix_indices: rs.iter().map(|r| r.report_index).collect(),
                jumps: rs.iter().map(|r| Displacement::new(r.jx_km, r.jy_km)).collect(),
            };
            (id, fs)
        })
        .collect()
}
