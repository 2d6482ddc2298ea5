//! Forward navigation Monte Carlo for smooth (interpolated) tracks.
//!
//! The reported kinematics of a smooth track are read as the observed speed
//! and heading of dead reckoning. Each trajectory draws its own τ_s, τ_θ, τ_x,
//! τ_y from the pooled lognormal hyperparameters, perturbs every step by
//! inverting `ŝ = s(1 + e_s)`, `θ̂ = θ + e_θ`, and accumulates the resulting
//! position error. Track-local midnights carry a celestial fix with
//! probability `p_fix`; between consecutive anchors (start, realized fixes,
//! end) the accumulated error is corrected linearly in step count so that it
//! is zero at the start and end and equals a fresh celestial draw at each fix.
//! The result is a discrete Brownian bridge between anchors.
//!
//! Every trajectory uses its own random stream and consumes the same numbers
//! whatever `p_fix` is, so scenarios share common random numbers.

use crate::error::{Error, Result};
use crate::geo::{advance, step_displacement, Displacement, EarthModel, GeoPoint};
use crate::hier::{Family, Hyperparameters};
use crate::rng::substream;
use crate::ssm::{report_uncertainty, PositionUncertainty};
use crate::tracks::{empirical_kinematics, Track};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Probability that a track-local midnight carries a celestial fix.
    pub p_fix: f64,
    pub n_ensemble: usize,
    pub hyper: Option<Hyperparameters>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEnsemble {
    pub track_id: String,
    pub p_fix: f64,
    pub seed: u64,
    /// Trajectory × report positions.
    pub trajectories: Vec<Vec<GeoPoint>>,
    /// Realized fix report indices per trajectory.
    pub fix_draws: Vec<Vec<usize>>,
}

impl ForwardEnsemble {
    pub fn n_ensemble(&self) -> usize {
        self.trajectories.len()
    }
}

/// Report indices that start a new track-local day, excluding the last report.
pub fn midnight_indices(track: &Track) -> Vec<usize> {
    let lon = track.mean_lon_deg();
    let days: Vec<i64> = track.reports.iter().map(|r| crate::tracks::local_day(r.time, lon)).collect();
    (1..track.len().saturating_sub(1)).filter(|&i| days[i] != days[i - 1]).collect()
}

pub fn simulate_lq4(track: &Track, cfg: &ScenarioConfig, earth: &EarthModel) -> Result<ForwardEnsemble> {
    let hyper = cfg.hyper.ok_or_else(|| Error::config("forward simulation needs pooled hyperparameters"))?;
    if !(0.0..=1.0).contains(&cfg.p_fix) {
        return Err(Error::config(format!("p_fix must lie in [0, 1], got {}", cfg.p_fix)));
    }
    if cfg.n_ensemble == 0 {
        return Err(Error::config("n_ensemble must be positive"));
    }
    let k = empirical_kinematics(track, earth)?;
    let midnights = midnight_indices(track);
    let reported: Vec<GeoPoint> = track.points();
    let n = track.len();

    let out: Vec<(Vec<GeoPoint>, Vec<usize>)> = (0..cfg.n_ensemble)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(cfg.seed, &["forward", &track.id, &r.to_string()]);
            let tau_s = hyper.draw(Family::TauS, &mut rng);
            let tau_th = hyper.draw(Family::TauTheta, &mut rng);
            let tau_x = hyper.draw(Family::TauX, &mut rng);
            let tau_y = hyper.draw(Family::TauY, &mut rng);

            // accumulated dead-reckoning error relative to the reported track
            let mut err = vec![Displacement::ZERO; n];
            for t in 0..n - 1 {
                let es = loop {
                    // 1 + e_s must stay positive for the inversion
                    let e = tau_s * rng.sample::<f64, _>(StandardNormal);
                    if 1.0 + e > 0.05 {
                        break e;
                    }
                };
                let et = tau_th * rng.sample::<f64, _>(StandardNormal);
                let s = k.speed[t] / (1.0 + es);
                let th = k.heading[t] - et;
                let d = Displacement::new(s * k.dt_hours[t] * th.cos(), s * k.dt_hours[t] * th.sin());
                err[t + 1] = err[t] + (d - k.steps[t]);
            }

            let mut anchors = vec![(0usize, Displacement::ZERO)];
            let mut fixes = Vec::new();
            for &i in &midnights {
                let u: f64 = rng.random();
                let cx = tau_x * reported[i].lat().cos() * rng.sample::<f64, _>(StandardNormal);
                let cy = tau_y * rng.sample::<f64, _>(StandardNormal);
                if u < cfg.p_fix {
                    anchors.push((i, Displacement::new(cx, cy)));
                    fixes.push(i);
                }
            }
            anchors.push((n - 1, Displacement::ZERO));

            let mut bridged = vec![Displacement::ZERO; n];
            for w in anchors.windows(2) {
                let ((a, ta), (b, tb)) = (w[0], w[1]);
                let (ra, rb) = (err[a] - ta, err[b] - tb);
                for (i, slot) in bridged.iter_mut().enumerate().take(b + 1).skip(a) {
                    let f = (i - a) as f64 / (b - a) as f64;
                    *slot = err[i] - ra - (rb - ra).scale(f);
                }
                bridged[a] = ta;
                bridged[b] = tb;
            }
            let traj = reported.iter().zip(&bridged).map(|(p, e)| advance(*p, *e, earth)).collect::<Result<Vec<_>>>()?;
            Ok((traj, fixes))
        })
        .collect::<Result<Vec<_>>>()?;

    let (trajectories, fix_draws) = out.into_iter().unzip();
    Ok(ForwardEnsemble { track_id: track.id.clone(), p_fix: cfg.p_fix, seed: cfg.seed, trajectories, fix_draws })
}

/// Random, systematic and overall uncertainty across the ensemble; the
/// systematic part is the offset of the ensemble mean from the report.
pub fn lq4_uncertainty(e: &ForwardEnsemble, track: &Track, earth: &EarthModel) -> Result<PositionUncertainty> {
    if e.trajectories.is_empty() {
        return Err(Error::EmptyInput("forward ensemble"));
    }
    if e.trajectories.iter().any(|t| t.len() != track.len()) {
        return Err(Error::data(format!("ensemble for {} does not match the track length {}", e.track_id, track.len())));
    }
    let reports = (0..track.len())
        .map(|i| {
            let draws: Vec<GeoPoint> = e.trajectories.iter().map(|t| t[i]).collect();
            report_uncertainty(track.reports[i].pos, &draws, earth)
        })
        .collect();
    Ok(PositionUncertainty { track_id: track.id.clone(), reports })
}

/// Track-averaged random uncertainty, √(std_x² + std_y²) in km.
pub fn mean_random_km(u: &PositionUncertainty) -> f64 {
    u.reports.iter().map(|r| r.std_x_km.hypot(r.std_y_km)).sum::<f64>() / u.reports.len() as f64
}

/// Largest distance of any trajectory's first or last point from the report.
pub fn anchor_error_km(e: &ForwardEnsemble, track: &Track, earth: &EarthModel) -> f64 {
    let (first, last) = (track.reports[0].pos, track.reports[track.len() - 1].pos);
    e.trajectories
        .iter()
        .flat_map(|t| [step_displacement(first, t[0], earth).norm(), step_displacement(last, t[t.len() - 1], earth).norm()])
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub track_id: String,
    pub p_fix: f64,
    pub seed: u64,
    pub n_ensemble: usize,
    pub n_reports: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

const MAGIC: &[u8; 4] = b"FEN1";

/// Binary dump: magic, u32 header length, JSON header, then trajectory ×
/// report × (lon, lat) degrees as little-endian f64.
pub fn write_ensemble<W: Write>(mut w: W, e: &ForwardEnsemble, config_hash: Option<&str>) -> Result<()> {
    let n_reports = e.trajectories.first().map_or(0, Vec::len);
    let header = EnsembleHeader {
        track_id: e.track_id.clone(),
        p_fix: e.p_fix,
        seed: e.seed,
        n_ensemble: e.n_ensemble(),
        n_reports,
        config_hash: config_hash.map(str::to_string),
    };
    let h = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(h.len() as u32).to_le_bytes())?;
    w.write_all(&h)?;
    for t in &e.trajectories {
        for p in t {
            w.write_all(&p.lon_deg().to_le_bytes())?;
            w.write_all(&p.lat_deg().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`write_ensemble`]; fix draws are not stored.
pub fn read_ensemble<R: Read>(mut r: R) -> Result<(EnsembleHeader, Vec<Vec<GeoPoint>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a forward ensemble file"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut h = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut h)?;
    let header: EnsembleHeader = serde_json::from_slice(&h)?;
    let mut buf = [0u8; 8];
    let mut next = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let mut trajectories = Vec::with_capacity(header.n_ensemble);
    for _ in 0..header.n_ensemble {
        let mut t = Vec::with_capacity(header.n_reports);
        for _ in 0..header.n_reports {
            let lon = next(&mut r)?;
            let lat = next(&mut r)?;
            t.push(GeoPoint::from_degrees(lon, lat)?);
        }
        trajectories.push(t);
    }
    Ok((header, trajectories))
}
