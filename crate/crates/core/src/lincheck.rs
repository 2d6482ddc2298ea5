//! Linearized jump-variance estimator.
//!
//! Linearizing dead reckoning around the reported motion gives, for the jump
//! `J` observed at a fix,
//!
//! ```text
//! Var(Jx) = τ_s²·Δx² + τ_θ²·Δy² + 2(τ_x cos ψ)²
//! Var(Jy) = τ_s²·Δy² + τ_θ²·Δx² + 2τ_y²
//! ```
//!
//! where Δx², Δy² are sums of squared reported step components since the
//! previous fix. Jumps are binned on (√Δx², √Δy²); within a bin of `n` jumps
//! the sample variance satisfies `(n−1)·V̂ / Var ~ χ²(n−1)`, which gives the
//! likelihood. Priors are flat on log τ over [1e−3, 1e3]. Because the
//! linearization drops second-order terms, τ_s and τ_θ come out smaller than
//! under the full state-space model.

use crate::error::{Error, Result};
use crate::geo::EarthModel;
use crate::mcmc::{self, ParameterSpace, PosteriorSamples, SamplerConfig, Support};
use crate::stats;
use crate::tracks::{empirical_kinematics, FixSchedule, Track};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub track_id: String,
    #[serde(rename = "jx_km")]
    pub jx: f64,
    #[serde(rename = "jy_km")]
    pub jy: f64,
    #[serde(rename = "dx2_km2")]
    pub dx2: f64,
    #[serde(rename = "dy2_km2")]
    pub dy2: f64,
    pub coslat: f64,
}

/// One record per fix after the first. Δx², Δy² sum the reported steps that
/// start at or after the previous fix and end before the current one.
pub fn segment_stats(track: &Track, fs: &FixSchedule, earth: &EarthModel) -> Result<Vec<JumpRecord>> {
    if fs.len() < 2 {
        return Ok(Vec::new());
    }
    let k = empirical_kinematics(track, earth)?;
    let mut out = Vec::with_capacity(fs.len() - 1);
    for w in 0..fs.len() - 1 {
        let (a, b) = (fs.fix_indices[w], fs.fix_indices[w + 1]);
        let steps = &k.steps[a..b.saturating_sub(1).max(a)];
        let j = fs.jumps[w + 1];
        out.push(JumpRecord {
            track_id: track.id.clone(),
            jx: j.dx,
            jy: j.dy,
            dx2: steps.iter().map(|d| d.dx * d.dx).sum(),
            dy2: steps.iter().map(|d| d.dy * d.dy).sum(),
            coslat: track.reports[b].pos.lat().cos(),
        });
    }
    Ok(out)
}

pub fn write_records<W: Write>(w: W, records: &[JumpRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r).map_err(|e| Error::format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<JumpRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.deserialize::<JumpRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i as u64 + 2, msg: e.to_string() })?;
        if !(rec.dx2 >= 0.0 && rec.dy2 >= 0.0) || ![rec.jx, rec.jy, rec.dx2, rec.dy2, rec.coslat].iter().all(|v| v.is_finite()) {
            return Err(Error::Parse { line: i as u64 + 2, msg: "jump record must be finite with non-negative Δ²".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

/// How a bin's Δx², Δy² and cos ψ are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representative {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpBin {
    /// Cell index along √Δx² and √Δy².
    pub ix: usize,
    pub iy: usize,
    pub n: usize,
    /// Unbiased sample variances; NaN when n < 2.
    pub var_x: f64,
    pub var_y: f64,
    pub mean_dx2: f64,
    pub mean_dy2: f64,
    pub mean_coslat: f64,
    pub median_dx2: f64,
    pub median_dy2: f64,
    pub median_coslat: f64,
}

impl JumpBin {
    fn regressors(&self, rep: Representative) -> (f64, f64, f64) {
        match rep {
            Representative::Mean => (self.mean_dx2, self.mean_dy2, self.mean_coslat),
            Representative::Median => (self.median_dx2, self.median_dy2, self.median_coslat),
        }
    }
}

/// Every occupied cell, including singletons; only cells with n ≥ 2 enter
/// the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpBins {
    pub bin_km: f64,
    pub bins: Vec<JumpBin>,
}

impl JumpBins {
    pub fn retained(&self) -> impl Iterator<Item = &JumpBin> {
        self.bins.iter().filter(|b| b.n >= 2)
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.n).sum()
    }
}

pub fn bin_jumps(records: &[JumpRecord], bin_km: f64) -> Result<JumpBins> {
    if !(bin_km > 0.0 && bin_km.is_finite()) {
        return Err(Error::config(format!("bin size must be positive, got {bin_km}")));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<&JumpRecord>> = BTreeMap::new();
    for r in records {
        let key = ((r.dx2.sqrt() / bin_km).floor() as usize, (r.dy2.sqrt() / bin_km).floor() as usize);
        cells.entry(key).or_default().push(r);
    }
    let bins = cells
        .into_iter()
        .map(|((ix, iy), rs)| {
            let col = |f: fn(&JumpRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (jx, jy, dx2, dy2, c) = (col(|r| r.jx), col(|r| r.jy), col(|r| r.dx2), col(|r| r.dy2), col(|r| r.coslat));
            let var = |v: &[f64]| if v.len() < 2 { f64::NAN } else { stats::variance(v) };
            JumpBin {
                ix,
                iy,
                n: rs.len(),
                var_x: var(&jx),
                var_y: var(&jy),
                mean_dx2: stats::mean(&dx2),
                mean_dy2: stats::mean(&dy2),
                mean_coslat: stats::mean(&c),
                median_dx2: stats::median(&dx2),
                median_dy2: stats::median(&dy2),
                median_coslat: stats::median(&c),
            }
        })
        .collect();
    Ok(JumpBins { bin_km, bins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinConfig {
    pub bin_km: f64,
    pub representative: Representative,
    pub sampler: SamplerConfig,
}

impl Default for LinConfig {
    fn default() -> Self {
        LinConfig {
            bin_km: 20.0,
            representative: Representative::Mean,
            sampler: SamplerConfig { chains: 4, warmup: 40_000, draws: 40_000, thin: 20, seed: 1, init_jitter: 0.1 },
        }
    }
}

pub const NAMES: [&str; 4] = ["tau_x", "tau_y", "tau_s", "tau_theta"];
const TAU_MIN: f64 = 1e-3;
const TAU_MAX: f64 = 1e3;

/// Var(Jx), Var(Jy) for x = [τ_x, τ_y, τ_s, τ_θ].
pub fn jump_variances(x: &[f64], dx2: f64, dy2: f64, coslat: f64) -> (f64, f64) {
    let (tx, ty, ts, tt) = (x[0], x[1], x[2], x[3]);
    let vx = ts * ts * dx2 + tt * tt * dy2 + 2.0 * (tx * coslat).powi(2);
    let vy = ts * ts * dy2 + tt * tt * dx2 + 2.0 * ty * ty;
    (vx, vy)
}

pub fn fit_linearized(bins: &JumpBins, cfg: &LinConfig) -> Result<PosteriorSamples> {
    let used: Vec<(f64, f64, f64, f64, f64, f64)> = bins
        .retained()
        .map(|b| {
            let (dx2, dy2, c) = b.regressors(cfg.representative);
            ((b.n - 1) as f64, b.var_x, b.var_y, dx2, dy2, c)
        })
        .collect();
    if used.len() < 3 {
        return Err(Error::data(format!("linearized fit needs at least 3 bins with n ≥ 2, got {}", used.len())));
    }
    if used.iter().all(|u| u.1 == 0.0 && u.2 == 0.0) {
        return Err(Error::data("every bin has zero jump variance"));
    }
    let density = |x: &[f64]| {
        // flat on log τ
        let mut lp = -x.iter().map(|t| t.ln()).sum::<f64>();
        for &(k, v_x, v_y, dx2, dy2, c) in &used {
            let (vx, vy) = jump_variances(x, dx2, dy2, c);
            lp += -0.5 * k * vx.ln() - k * v_x / (2.0 * vx);
            lp += -0.5 * k * vy.ln() - k * v_y / (2.0 * vy);
        }
        lp
    };
    let mut space = ParameterSpace::new();
    let sup = Support::Interval(TAU_MIN, TAU_MAX);
    space.add_block("tau", &[(NAMES[0], sup, 0.05), (NAMES[1], sup, 0.05), (NAMES[2], sup, 0.1), (NAMES[3], sup, 0.1)])?;
    // start from the smallest-Δ bins, where celestial noise dominates
    let small: Vec<&(f64, f64, f64, f64, f64, f64)> = used.iter().filter(|u| u.3 + u.4 <= (bins.bin_km * 2.0).powi(2)).collect();
    let pick = if small.is_empty() { used.iter().collect() } else { small };
    let vx = stats::median(&pick.iter().map(|u| u.1).collect::<Vec<_>>());
    let vy = stats::median(&pick.iter().map(|u| u.2).collect::<Vec<_>>());
    let c = stats::mean(&pick.iter().map(|u| u.5).collect::<Vec<_>>()).max(0.1);
    let clamp = |v: f64| v.clamp(2.0 * TAU_MIN, 0.5 * TAU_MAX);
    let init = [clamp((vx / 2.0).sqrt() / c), clamp((vy / 2.0).sqrt()), 0.1, 0.1];
    mcmc::sample(&density, &space, &init, &cfg.sampler)
}
