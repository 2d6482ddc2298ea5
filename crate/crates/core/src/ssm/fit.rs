use super::model::{SsmModel, N_PARAMS};
use super::{SsmPriors, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::geo::{advance, cumulative_displacements, EarthModel};
use crate::mcmc::{self, Diagnostics, ParameterSpace, PosteriorSamples, SamplerConfig, Support};
use crate::stats::{circular_mean, half_normal_median, median, wrap_angle};
use crate::tracks::{empirical_kinematics, FixSchedule, Track};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub sampler: SamplerConfig,
    /// Width of latent-state update windows, in steps.
    pub window: usize,
    /// Offset between overlapping windows.
    pub window_stride: usize,
    /// Width of segments redrawn jointly by forward filtering, backward
    /// sampling (0 disables).
    pub segment: usize,
    pub segment_stride: usize,
    pub priors: SsmPriors,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            sampler: SamplerConfig { chains: 4, warmup: 1500, draws: 250, thin: 6, seed: 1, init_jitter: 0.05 },
            window: 10,
            window_stride: 5,
            segment: 24,
            segment_stride: 12,
            priors: SsmPriors::default(),
        }
    }
}

/// A fitted track: draws over parameters, latent speeds and headings, and
/// the implied true position at every report (`lon[t]`, `lat[t]`, degrees).
#[derive(Debug, Clone)]
pub struct TrackFit {
    pub track_id: String,
    pub fix_indices: Vec<usize>,
    pub samples: PosteriorSamples,
    pub diagnostics: Option<Diagnostics>,
}

impl TrackFit {
    /// Largest split-R̂ over the scalar parameters.
    pub fn max_param_rhat(&self) -> Option<f64> {
        let d = self.diagnostics.as_ref()?;
        Some(d.rhat[..N_PARAMS].iter().copied().fold(1.0, f64::max))
    }
}

fn space_for(model: &SsmModel, cfg: &FitConfig) -> Result<ParameterSpace> {
    let mut space = ParameterSpace::new();
    let param_support = [
        (Support::Positive, 0.05),
        (Support::Interval(0.0, 1.0), 0.3),
        (Support::Positive, 0.2),
        (Support::Positive, 0.2),
        (Support::Positive, 0.2),
        (Support::Positive, 0.2),
        (Support::Positive, 0.2),
        (Support::Positive, 0.2),
    ];
    for (name, (sup, scale)) in PARAM_NAMES.iter().zip(param_support) {
        space.add_scalar(name, sup, scale)?;
    }
    for k in 0..model.n_beta() {
        space.add_scalar(&format!("beta[{k}]"), Support::Circular, 0.05)?;
    }
    let n = model.n_steps();
    let w = cfg.window.max(1);
    let stride = cfg.window_stride.max(1);
    for (prefix, sup) in [("s", Support::Positive), ("theta", Support::Unbounded)] {
        let names: Vec<String> = (0..n).map(|j| format!("{prefix}[{j}]")).collect();
        let offset = space.dim();
        for a in (0..n).step_by(w) {
            let b = (a + w).min(n);
            let coords: Vec<(&str, Support, f64)> = names[a..b].iter().map(|nm| (nm.as_str(), sup, 0.05)).collect();
            space.add_block(&format!("{prefix}[{a}..{b}]"), &coords)?;
        }
        // windows straddling the partition boundaries
        let mut a = stride;
        while stride < w && a < n {
            if !a.is_multiple_of(w) {
                let b = (a + w).min(n);
                let idx: Vec<usize> = (a..b).map(|j| offset + j).collect();
                space.add_overlay(&format!("{prefix}[{a}..{b}]*"), &idx)?;
            }
            a += stride;
        }
    }
    Ok(space)
}

fn interpolate_masked(values: &[f64], keep: &[bool]) -> Vec<f64> {
    let known: Vec<usize> = (0..values.len()).filter(|&j| keep[j]).collect();
    if known.is_empty() {
        return values.to_vec();
    }
    (0..values.len())
        .map(|j| {
            if keep[j] {
                return values[j];
            }
            let r = known.partition_point(|&i| i < j);
            match (r.checked_sub(1).map(|l| known[l]), known.get(r)) {
                (Some(l), Some(&h)) => values[l] + (values[h] - values[l]) * (j - l) as f64 / (h - l) as f64,
                (Some(l), None) => values[l],
                (None, Some(&h)) => values[h],
                (None, None) => values[j],
            }
        })
        .collect()
}

fn median_filter(values: &[f64], half: usize) -> Vec<f64> {
    if half == 0 {
        return values.to_vec();
    }
    (0..values.len())
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(values.len());
            median(&values[lo..hi])
        })
        .collect()
}

/// Split the variance of a noisy random walk `y` into innovation and
/// observation parts from the lag-0 and lag-1 autocovariances of its
/// differences.
fn moment_split(y: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    if d.len() < 3 {
        return (1e-2, 1e-2);
    }
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let g0 = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64;
    let g1 = d.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (d.len() - 1) as f64;
    let floor = (g0 * 0.02).max(1e-12);
    let obs = (-g1).clamp(floor, g0 / 2.0);
    let innov = (g0 - 2.0 * obs).max(floor);
    (innov, obs)
}

/// Posterior mean of a random walk observed with white noise.
fn rts_smooth(y: &[f64], q: f64, r: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    let mut p = vec![0.0; n];
    let (mut mt, mut pt) = (y[0], r);
    m[0] = mt;
    p[0] = pt;
    for t in 1..n {
        pt += q;
        let k = pt / (pt + r);
        mt += k * (y[t] - mt);
        pt *= 1.0 - k;
        m[t] = mt;
        p[t] = pt;
    }
    let mut out = m.clone();
    for t in (0..n - 1).rev() {
        let j = p[t] / (p[t] + q);
        out[t] = m[t] + j * (out[t + 1] - m[t]);
    }
    out
}

/// Initial point from smoothed empirical kinematics with fix steps masked.
///
/// Speed and heading series are split into innovation and observation noise
/// by moments and smoothed accordingly; the noise scales seed the
/// corresponding parameters.
pub fn initial_state(model: &SsmModel, speed: &[f64], heading: &[f64]) -> Vec<f64> {
    let n = model.n_steps();
    let keep: Vec<bool> = (0..n).map(|j| model.observes_step(j)).collect();
    let s_obs = median_filter(&interpolate_masked(speed, &keep), 0);
    // unwrap through observed steps only; fix-step headings are meaningless
    let mut unwrapped = heading.to_vec();
    let mut last: Option<f64> = None;
    for j in 0..n {
        if keep[j] {
            if let Some(prev) = last {
                unwrapped[j] = prev + wrap_angle(heading[j] - prev);
            }
            last = Some(unwrapped[j]);
        }
    }
    let th_obs = interpolate_masked(&unwrapped, &keep);
    let (qs, rs) = moment_split(&s_obs);
    let (qt, rt) = moment_split(&th_obs);
    let s = rts_smooth(&s_obs, qs, rs);
    let th = rts_smooth(&th_obs, qt, rt);

    let pr = model.priors();
    let mean_s = s.iter().sum::<f64>() / n as f64;
    let mut x = vec![
        mean_s.max(0.1),
        0.8,
        qs.sqrt().clamp(0.05, 3.0 * pr.sigma_s_scale),
        qt.sqrt().clamp(0.005, 3.0 * pr.sigma_theta_scale),
        half_normal_median(pr.tau_x_scale),
        half_normal_median(pr.tau_y_scale),
        (rs.sqrt() / mean_s.max(0.1)).clamp(0.01, 3.0 * pr.tau_s_scale),
        rt.sqrt().clamp(0.005, 3.0 * pr.tau_theta_scale),
    ];
    for k in 0..model.n_beta() {
        let res: Vec<f64> = (0..n)
            .filter(|&j| keep[j] && model.beta_index(j) == Some(k))
            .map(|j| wrap_angle(heading[j] - th[j]))
            .collect();
        x.push(if res.is_empty() { 0.0 } else { circular_mean(&res) });
    }
    x.extend(s.iter().map(|v| v.max(0.1)));
    x.extend_from_slice(&th);
    x
}

/// Fit the state-space model to one track.
pub fn fit_track(track: &Track, fs: &FixSchedule, cfg: &FitConfig, earth: &EarthModel) -> Result<TrackFit> {
    fit_track_from(track, fs, cfg, earth, None)
}

/// As [`fit_track`], optionally starting every chain from `init` (laid out
/// as parameters, biases, speeds, headings) instead of the empirical start.
pub fn fit_track_from(track: &Track, fs: &FixSchedule, cfg: &FitConfig, earth: &EarthModel, init: Option<&[f64]>) -> Result<TrackFit> {
    let wrap = |e: Error| match e {
        Error::Classification(_) => e,
        other => Error::Fit { track: track.id.clone(), source: Box::new(other) },
    };
    let k = empirical_kinematics(track, earth).map_err(wrap)?;
    let model = SsmModel::new(track, &k, fs, cfg.priors.clone(), earth).map_err(wrap)?.with_segments(cfg.segment, cfg.segment_stride);
    let space = space_for(&model, cfg).map_err(wrap)?;
    let init = match init {
        Some(x) => x.to_vec(),
        None => initial_state(&model, &k.speed, &k.heading),
    };
    let raw = mcmc::sample(&model, &space, &init, &cfg.sampler).map_err(wrap)?;
    let diagnostics = mcmc::diagnostics(&raw).ok();
    let samples = with_positions(&model, track, raw, earth).map_err(wrap)?;
    Ok(TrackFit { track_id: track.id.clone(), fix_indices: fs.fix_indices.clone(), samples, diagnostics })
}

/// Append `lon[t]`/`lat[t]` columns: the reported position shifted by the
/// difference between true and reported displacement.
fn with_positions(model: &SsmModel, track: &Track, raw: PosteriorSamples, earth: &EarthModel) -> Result<PosteriorSamples> {
    let q = cumulative_displacements(&track.points(), earth)?;
    let t_len = track.len();
    let mut names = raw.names.clone();
    for t in 0..t_len {
        names.push(format!("lon[{t}]"));
    }
    for t in 0..t_len {
        names.push(format!("lat[{t}]"));
    }
    let mut out = PosteriorSamples::new(names);
    out.meta = raw.meta.clone();
    let mut row = Vec::with_capacity(out.n_cols());
    for i in 0..raw.n_draws() {
        let x = raw.row(i);
        let p = model.displacements(x);
        row.clear();
        row.extend_from_slice(x);
        let mut lats = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let pos = advance(track.reports[t].pos, p[t] - q[t], earth)?;
            row.push(pos.lon_deg());
            lats.push(pos.lat_deg());
        }
        row.extend_from_slice(&lats);
        out.push(raw.chains[i], &row);
    }
    Ok(out)
}
