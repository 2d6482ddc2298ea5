//! Synthetic fleets drawn from the generative navigation model.
//!
//! HQ2 tracks follow the state-space model exactly: latent speed and heading
//! evolve by the AR(1) and random-walk transitions, reports between fixes are
//! dead-reckoned from noisy speed and heading (with a heading bias per fix
//! interval), and a fix resets the reported displacement to the truth plus
//! celestial noise. Fixes fall on the first report after track-local
//! midnight with a configurable nightly probability.

use crate::error::{Error, Result};
use crate::geo::{advance, Displacement, EarthModel, GeoPoint};
use crate::rng::substream;
use crate::stats::sample_truncnorm_lower;
use crate::tracks::{local_day, Track, TrackLabel, TrackReport};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Generative parameters shared by every HQ2 track of a fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTruth {
    /// Fleet mean of the per-track mean speed, km/hr.
    pub mu_s: f64,
    /// Across-track standard deviation of the per-track mean speed.
    pub mu_s_spread: f64,
    pub alpha_s: f64,
    pub sigma_s: f64,
    pub sigma_theta: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_s: f64,
    pub tau_theta: f64,
    /// Standard deviation of the per-interval heading bias.
    pub beta_sd: f64,
    /// Log-scale spread of per-track τ values around the values above.
    pub tau_log_sd: f64,
}

impl Default for SynthTruth {
    fn default() -> Self {
        SynthTruth {
            mu_s: 10.4,
            mu_s_spread: 1.5,
            alpha_s: 0.9,
            sigma_s: 0.5,
            sigma_theta: 0.04,
            tau_x: 33.1,
            tau_y: 24.4,
            tau_s: 0.192,
            tau_theta: 0.23,
            beta_sd: 0.02,
            tau_log_sd: 0.0,
        }
    }
}

impl SynthTruth {
    /// Every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        self.sigma_s = 0.0;
        self.sigma_theta = 0.0;
        self.tau_x = 0.0;
        self.tau_y = 0.0;
        self.tau_s = 0.0;
        self.tau_theta = 0.0;
        self.beta_sd = 0.0;
        self.tau_log_sd = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub n_hq2: usize,
    pub n_lq4: usize,
    pub n_static: usize,
    /// Steps per HQ2 track (reports = steps + 1).
    pub steps: usize,
    pub dt_hours: f64,
    /// Probability that a night carries a celestial fix.
    pub fix_rate: f64,
    /// Round reported coordinates to this many degrees (0 disables).
    pub round_deg: f64,
    /// Latitude band for track starts, degrees.
    pub max_start_lat: f64,
    /// Unix time of the earliest start.
    pub epoch: i64,
    pub truth: SynthTruth,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_hq2: 20,
            n_lq4: 0,
            n_static: 0,
            steps: 300,
            dt_hours: 2.0,
            fix_rate: 0.87,
            round_deg: 0.0,
            max_start_lat: 25.0,
            epoch: -2_682_288_000,
            truth: SynthTruth::default(),
        }
    }
}

/// Ground truth for one injected celestial fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub track_id: String,
    pub report_index: usize,
    /// Fix position minus the dead-reckoned position it replaced, km.
    pub jx_km: f64,
    pub jy_km: f64,
}

/// What a synthetic track was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTruth {
    pub track_id: String,
    pub label: TrackLabel,
    pub mu_s: f64,
    pub alpha_s: f64,
    pub sigma_s: f64,
    pub sigma_theta: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_s: f64,
    pub tau_theta: f64,
    pub beta: Vec<f64>,
    pub fix_indices: Vec<usize>,
    /// Latent speed and heading per step.
    pub s: Vec<f64>,
    pub theta: Vec<f64>,
    /// True position at every report, degrees.
    pub true_lon: Vec<f64>,
    pub true_lat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTrack {
    pub track: Track,
    pub truth: TrackTruth,
    pub injections: Vec<Injection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthFleet {
    pub tracks: Vec<SynthTrack>,
}

impl SynthFleet {
    pub fn tracks(&self) -> Vec<Track> {
        self.tracks.iter().map(|t| t.track.clone()).collect()
    }

    pub fn injections(&self) -> Vec<Injection> {
        self.tracks.iter().flat_map(|t| t.injections.iter().cloned()).collect()
    }
}

fn gauss<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * rng.sample::<f64, _>(StandardNormal)
    }
}

fn rounded(p: GeoPoint, step: f64) -> Result<GeoPoint> {
    if step <= 0.0 {
        return Ok(p);
    }
    let r = |v: f64| (v / step).round() * step;
    let mut lon = r(p.lon_deg());
    if lon <= -180.0 {
        lon += 360.0;
    }
    GeoPoint::from_degrees(lon, r(p.lat_deg()))
}

fn start_point<R: Rng>(rng: &mut R, cfg: &FleetConfig) -> Result<(GeoPoint, f64, i64)> {
    let lon = rng.random_range(-179.0..179.0);
    let lat = rng.random_range(-cfg.max_start_lat..cfg.max_start_lat);
    // mostly zonal routes keep long voyages away from the poles
    let base = if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI };
    let heading = base + rng.random_range(-0.6..0.6);
    let start = cfg.epoch + rng.random_range(0..365 * 86_400i64);
    Ok((GeoPoint::from_degrees(lon, lat)?, heading, start))
}

/// One HQ2 track drawn from the generative model.
pub fn hq2_track(id: &str, cfg: &FleetConfig, seed: u64, earth: &EarthModel) -> Result<SynthTrack> {
    let mut rng = substream(seed, &["synth-hq2", id]);
    let tr = &cfg.truth;
    let n = cfg.steps;
    if n < 2 || cfg.dt_hours <= 0.0 {
        return Err(Error::config("synthetic tracks need at least 2 steps and a positive cadence"));
    }
    let (origin, heading0, t0) = start_point(&mut rng, cfg)?;
    let tau_mult = |rng: &mut crate::rng::StreamRng| (gauss(rng, tr.tau_log_sd)).exp();
    let mu_s = (tr.mu_s + gauss(&mut rng, tr.mu_s_spread)).max(3.0);
    let (tau_x, tau_y) = (tr.tau_x * tau_mult(&mut rng), tr.tau_y * tau_mult(&mut rng));
    let (tau_s, tau_theta) = (tr.tau_s * tau_mult(&mut rng), tr.tau_theta * tau_mult(&mut rng));

    // latent speed and heading per step
    let mut s = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let stat_sd = tr.sigma_s / (1.0 - tr.alpha_s * tr.alpha_s).sqrt();
    s.push(sample_truncnorm_lower(&mut rng, mu_s, stat_sd, 0.0));
    theta.push(heading0);
    for j in 1..n {
        let mean = mu_s + tr.alpha_s * (s[j - 1] - mu_s);
        s.push(sample_truncnorm_lower(&mut rng, mean, tr.sigma_s, 0.0));
        theta.push(theta[j - 1] + gauss(&mut rng, tr.sigma_theta));
    }

    let times: Vec<i64> = (0..=n).map(|t| t0 + (t as f64 * cfg.dt_hours * 3600.0).round() as i64).collect();
    let lon_ref = origin.lon_deg();
    let mut fixes = Vec::new();
    for t in 1..=n {
        if local_day(times[t], lon_ref) != local_day(times[t - 1], lon_ref) && rng.random_bool(cfg.fix_rate) {
            fixes.push(t);
        }
    }
    let n_beta = fixes.len().saturating_sub(1);
    let beta: Vec<f64> = (0..n_beta).map(|_| gauss(&mut rng, tr.beta_sd)).collect();
    let beta_for = |report: usize| -> f64 {
        if n_beta == 0 {
            return 0.0;
        }
        let after = fixes.partition_point(|&f| f <= report);
        beta[after.saturating_sub(1).min(n_beta - 1)]
    };

    // true (p) and reported (q) displacement from the origin
    let mut p = vec![Displacement::ZERO];
    let mut q = vec![Displacement::ZERO];
    let mut reported = vec![origin];
    let mut injections = Vec::new();
    let mut truth_lat = origin.lat();
    for j in 0..n {
        let t = j + 1;
        let dt = cfg.dt_hours;
        let step = Displacement::new(dt * s[j] * theta[j].cos(), dt * s[j] * theta[j].sin());
        let p_t = p[j] + step;
        truth_lat += step.dy / earth.radius_km;
        let s_hat = (s[j] + gauss(&mut rng, tau_s * s[j])).max(0.0);
        let th_hat = theta[j] + beta_for(t) + gauss(&mut rng, tau_theta);
        let dr = q[j] + Displacement::new(dt * s_hat * th_hat.cos(), dt * s_hat * th_hat.sin());
        let q_t = if fixes.binary_search(&t).is_ok() {
            let fix = p_t + Displacement::new(gauss(&mut rng, tau_x * truth_lat.cos()), gauss(&mut rng, tau_y));
            let jump = fix - dr;
            injections.push(Injection { track_id: id.to_string(), report_index: t, jx_km: jump.dx, jy_km: jump.dy });
            fix
        } else {
            dr
        };
        reported.push(advance(reported[j], q_t - q[j], earth)?);
        p.push(p_t);
        q.push(q_t);
    }

    let mut reports = Vec::with_capacity(n + 1);
    let mut true_lon = Vec::with_capacity(n + 1);
    let mut true_lat = Vec::with_capacity(n + 1);
    for t in 0..=n {
        let tp = advance(reported[t], p[t] - q[t], earth)?;
        true_lon.push(tp.lon_deg());
        true_lat.push(tp.lat_deg());
        reports.push(TrackReport { time: times[t], pos: rounded(reported[t], cfg.round_deg)?, source_id: format!("{id}/{t}") });
    }
    let track = Track::new(id, reports)?;
    let truth = TrackTruth {
        track_id: id.to_string(),
        label: TrackLabel::Hq2,
        mu_s,
        alpha_s: tr.alpha_s,
        sigma_s: tr.sigma_s,
        sigma_theta: tr.sigma_theta,
        tau_x,
        tau_y,
        tau_s,
        tau_theta,
        beta,
        fix_indices: fixes,
        s,
        theta,
        true_lon,
        true_lat,
    };
    Ok(SynthTrack { track, truth, injections })
}

/// A smooth 4-hourly track: daily noon positions from a gently turning
/// voyage, with reports linearly interpolated between them.
pub fn lq4_track(id: &str, cfg: &FleetConfig, seed: u64, earth: &EarthModel) -> Result<SynthTrack> {
    let mut rng = substream(seed, &["synth-lq4", id]);
    let (origin, mut heading, t0) = start_point(&mut rng, cfg)?;
    let days = ((cfg.steps as f64 * cfg.dt_hours) / 24.0).ceil().max(2.0) as usize;
    let speed = (cfg.truth.mu_s + gauss(&mut rng, cfg.truth.mu_s_spread)).max(3.0);
    let mut anchors = vec![origin];
    for _ in 0..days {
        heading += gauss(&mut rng, 0.02);
        let d = Displacement::new(24.0 * speed * heading.cos(), 24.0 * speed * heading.sin());
        anchors.push(advance(*anchors.last().expect("non-empty"), d, earth)?);
    }
    let mut reports = Vec::new();
    for (a, w) in anchors.windows(2).enumerate() {
        let dlon = crate::stats::wrap_angle(w[1].lon() - w[0].lon());
        for k in 0..6 {
            let f = k as f64 / 6.0;
            let p = GeoPoint::from_radians(w[0].lon() + f * dlon, w[0].lat() + f * (w[1].lat() - w[0].lat()))?;
            let i = a * 6 + k;
            reports.push(TrackReport { time: t0 + i as i64 * 4 * 3600, pos: rounded(p, cfg.round_deg)?, source_id: format!("{id}/{i}") });
        }
    }
    let i = days * 6;
    reports.push(TrackReport { time: t0 + i as i64 * 4 * 3600, pos: rounded(anchors[days], cfg.round_deg)?, source_id: format!("{id}/{i}") });
    let track = Track::new(id, reports)?;
    let truth = TrackTruth {
        track_id: id.to_string(),
        label: TrackLabel::Lq4,
        mu_s: speed,
        alpha_s: 0.0,
        sigma_s: 0.0,
        sigma_theta: 0.0,
        tau_x: 0.0,
        tau_y: 0.0,
        tau_s: 0.0,
        tau_theta: 0.0,
        beta: Vec::new(),
        fix_indices: Vec::new(),
        s: Vec::new(),
        theta: Vec::new(),
        true_lon: track.reports.iter().map(|r| r.pos.lon_deg()).collect(),
        true_lat: track.reports.iter().map(|r| r.pos.lat_deg()).collect(),
    };
    Ok(SynthTrack { track, truth, injections: Vec::new() })
}

/// Stationary runs of 2-hourly reports separated by single large jumps.
pub fn static_jump_track(id: &str, cfg: &FleetConfig, seed: u64, earth: &EarthModel) -> Result<SynthTrack> {
    let mut rng = substream(seed, &["synth-static", id]);
    let (origin, heading, t0) = start_point(&mut rng, cfg)?;
    let jump = Normal::new(84.6, 10.0).map_err(|e| Error::config(e.to_string()))?;
    let mut pos = origin;
    let mut reports = Vec::new();
    let n = cfg.steps.max(24);
    for i in 0..=n {
        if i > 0 && i % 12 == 0 {
            let len: f64 = jump.sample(&mut rng);
            let h = heading + gauss(&mut rng, 0.1);
            pos = advance(pos, Displacement::new(len * h.cos(), len * h.sin()), earth)?;
        }
        reports.push(TrackReport {
            time: t0 + (i as f64 * cfg.dt_hours * 3600.0) as i64,
            pos: rounded(pos, cfg.round_deg)?,
            source_id: format!("{id}/{i}"),
        });
    }
    let track = Track::new(id, reports)?;
    let truth = TrackTruth {
        track_id: id.to_string(),
        label: TrackLabel::StaticJump,
        mu_s: 0.0,
        alpha_s: 0.0,
        sigma_s: 0.0,
        sigma_theta: 0.0,
        tau_x: 0.0,
        tau_y: 0.0,
        tau_s: 0.0,
        tau_theta: 0.0,
        beta: Vec::new(),
        fix_indices: Vec::new(),
        s: Vec::new(),
        theta: Vec::new(),
        true_lon: track.reports.iter().map(|r| r.pos.lon_deg()).collect(),
        true_lat: track.reports.iter().map(|r| r.pos.lat_deg()).collect(),
    };
    Ok(SynthTrack { track, truth, injections: Vec::new() })
}

/// A mixed fleet; track ids are `hq2-000`, `lq4-000`, `static-000`, ...
pub fn fleet(cfg: &FleetConfig, seed: u64, earth: &EarthModel) -> Result<SynthFleet> {
    let mut tracks = Vec::with_capacity(cfg.n_hq2 + cfg.n_lq4 + cfg.n_static);
    for i in 0..cfg.n_hq2 {
        tracks.push(hq2_track(&format!("hq2-{i:03}"), cfg, seed, earth)?);
    }
    for i in 0..cfg.n_lq4 {
        tracks.push(lq4_track(&format!("lq4-{i:03}"), cfg, seed, earth)?);
    }
    for i in 0..cfg.n_static {
        tracks.push(static_jump_track(&format!("static-{i:03}"), cfg, seed, earth)?);
    }
    Ok(SynthFleet { tracks })
}
