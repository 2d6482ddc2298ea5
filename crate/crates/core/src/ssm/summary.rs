use super::model::SsmModel;
use super::{SsmPriors, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geo::{advance, step_displacement, Displacement, EarthModel, GeoPoint};
use crate::mcmc::PosteriorSamples;
use crate::rng::substream;
use crate::tracks::{empirical_kinematics, FixSchedule, Track, TrackReport};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Position uncertainty at one report. `std` is the posterior standard
/// deviation, `bias` the absolute offset of the posterior mean from the
/// reported position, `rmse` the root mean squared offset of the draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportUncertainty {
    pub std_x_km: f64,
    pub std_y_km: f64,
    pub bias_x_km: f64,
    pub bias_y_km: f64,
    pub rmse_x_km: f64,
    pub rmse_y_km: f64,
    pub std_x_deg: f64,
    pub std_y_deg: f64,
    pub bias_x_deg: f64,
    pub bias_y_deg: f64,
    pub rmse_x_deg: f64,
    pub rmse_y_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionUncertainty {
    pub track_id: String,
    pub reports: Vec<ReportUncertainty>,
}

fn position_columns(s: &PosteriorSamples, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let find = |p: &str, t: usize| s.index_of(&format!("{p}[{t}]")).ok_or_else(|| Error::data(format!("samples have no {p}[{t}] column")));
    let lon = (0..n).map(|t| find("lon", t)).collect::<Result<Vec<_>>>()?;
    let lat = (0..n).map(|t| find("lat", t)).collect::<Result<Vec<_>>>()?;
    Ok((lon, lat))
}

/// Random, systematic and overall position uncertainty per report.
pub fn position_uncertainty(s: &PosteriorSamples, track: &Track, earth: &EarthModel) -> Result<PositionUncertainty> {
    let (lon_c, lat_c) = position_columns(s, track.len())?;
    if s.n_draws() == 0 {
        return Err(Error::EmptyInput("posterior samples"));
    }
    let mut reports = Vec::with_capacity(track.len());
    for t in 0..track.len() {
        let draws = (0..s.n_draws())
            .map(|i| {
                let r = s.row(i);
                GeoPoint::from_degrees(r[lon_c[t]], r[lat_c[t]])
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(report_uncertainty(track.reports[t].pos, &draws, earth));
    }
    Ok(PositionUncertainty { track_id: track.id.clone(), reports })
}

/// Position draws per trajectory (draw × report) from samples with `lon[t]`
/// and `lat[t]` columns.
pub fn trajectories(s: &PosteriorSamples, n_reports: usize) -> Result<Vec<Vec<GeoPoint>>> {
    let (lon_c, lat_c) = position_columns(s, n_reports)?;
    (0..s.n_draws())
        .map(|i| {
            let r = s.row(i);
            (0..n_reports).map(|t| GeoPoint::from_degrees(r[lon_c[t]], r[lat_c[t]])).collect()
        })
        .collect()
}

/// Uncertainty of position draws around one reported position. Moments use
/// the population (1/n) normalization, so rmse² = std² + bias² exactly.
pub fn report_uncertainty(reported: GeoPoint, draws: &[GeoPoint], earth: &EarthModel) -> ReportUncertainty {
    let n = draws.len() as f64;
    let kpd = earth.km_per_degree();
    let offsets: Vec<Displacement> = draws.iter().map(|p| step_displacement(reported, *p, earth)).collect();
    let mx = offsets.iter().map(|d| d.dx).sum::<f64>() / n;
    let my = offsets.iter().map(|d| d.dy).sum::<f64>() / n;
    let vx = offsets.iter().map(|d| (d.dx - mx).powi(2)).sum::<f64>() / n;
    let vy = offsets.iter().map(|d| (d.dy - my).powi(2)).sum::<f64>() / n;
    let kx = kpd * reported.lat().cos();
    let (std_x_km, std_y_km) = (vx.sqrt(), vy.sqrt());
    let (bias_x_km, bias_y_km) = (mx.abs(), my.abs());
    // from the decomposition, so the identity holds to rounding
    let (rmse_x_km, rmse_y_km) = (std_x_km.hypot(bias_x_km), std_y_km.hypot(bias_y_km));
    ReportUncertainty {
        std_x_km,
        std_y_km,
        bias_x_km,
        bias_y_km,
        rmse_x_km,
        rmse_y_km,
        std_x_deg: std_x_km / kx,
        std_y_deg: std_y_km / kpd,
        bias_x_deg: bias_x_km / kx,
        bias_y_deg: bias_y_km / kpd,
        rmse_x_deg: rmse_x_km / kx,
        rmse_y_deg: rmse_y_km / kpd,
    }
}

/// Replicate tracks from the posterior predictive distribution.
///
/// Each replicate takes one posterior draw at random, then regenerates the
/// observables: empirical speed and heading between fixes, accumulated by
/// dead reckoning, and celestial noise around the true displacement at fixes.
pub fn posterior_predictive(
    s: &PosteriorSamples,
    track: &Track,
    fs: &FixSchedule,
    n_replicates: usize,
    seed: u64,
    earth: &EarthModel,
) -> Result<Vec<Track>> {
    if s.n_draws() == 0 {
        return Err(Error::EmptyInput("posterior samples"));
    }
    let k = empirical_kinematics(track, earth)?;
    let model = SsmModel::new(track, &k, fs, SsmPriors::default(), earth)?;
    let n = model.n_steps();
    let col = |name: String| s.index_of(&name).ok_or_else(|| Error::data(format!("samples have no {name} column")));
    let params = PARAM_NAMES.iter().map(|p| col(p.to_string())).collect::<Result<Vec<_>>>()?;
    let beta = (0..model.n_beta()).map(|b| col(format!("beta[{b}]"))).collect::<Result<Vec<_>>>()?;
    let speed = (0..n).map(|j| col(format!("s[{j}]"))).collect::<Result<Vec<_>>>()?;
    let heading = (0..n).map(|j| col(format!("theta[{j}]"))).collect::<Result<Vec<_>>>()?;
    let cos_psi: Vec<f64> = track.reports.iter().map(|r| r.pos.lat().cos()).collect();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = substream(seed, &["posterior-predictive", &track.id]);

    let mut out = Vec::with_capacity(n_replicates);
    for r in 0..n_replicates {
        let row = s.row(rng.random_range(0..s.n_draws()));
        let tau = |i: usize| row[params[i]];
        let (tau_x, tau_y, tau_s, tau_th) = (tau(4), tau(5), tau(6), tau(7));
        let mut p = Displacement::ZERO;
        let mut q = Displacement::ZERO;
        let mut pos = track.reports[0].pos;
        let mut reports = vec![TrackReport { time: track.reports[0].time, pos, source_id: track.reports[0].source_id.clone() }];
        for j in 0..n {
            let t = j + 1;
            let (sj, thj) = (row[speed[j]], row[heading[j]]);
            let dt = k.dt_hours[j];
            p += Displacement::new(dt * sj * thj.cos(), dt * sj * thj.sin());
            let q_new = if fs.contains(t) {
                p + Displacement::new(tau_x * cos_psi[t] * std.sample(&mut rng), tau_y * std.sample(&mut rng))
            } else {
                let b = model.beta_index(j).map_or(0.0, |b| row[beta[b]]);
                let s_hat = sj + tau_s * sj * std.sample(&mut rng);
                let th_hat = thj + b + tau_th * std.sample(&mut rng);
                q + Displacement::new(dt * s_hat * th_hat.cos(), dt * s_hat * th_hat.sin())
            };
            pos = advance(pos, q_new - q, earth)?;
            q = q_new;
            reports.push(TrackReport { time: track.reports[t].time, pos, source_id: track.reports[t].source_id.clone() });
        }
        out.push(Track::new(format!("{}~rep{r}", track.id), reports)?);
    }
    Ok(out)
}
