//! Second-stage pooling of per-track scale parameters.
//!
//! For each of τ_x, τ_y, τ_s, τ_θ the per-track posterior draws are treated as
//! exchangeable data under a lognormal-lognormal hierarchy:
//!
//! ```text
//! log τ^(j,i) ~ N(log μ^(j), η_j²)        i = 1..n_j
//! log μ^(j)   ~ N(log μ, γ²)              j = 1..J
//! log μ ~ N(log m₀, 1),  γ, η_j ~ half-normal(1)
//! ```
//!
//! The draws enter only through their per-track count, mean and sum of
//! squares, and log μ^(j) is integrated out analytically, so the sampler moves
//! over (log μ, γ, η_1..η_J). Track-level medians are then drawn from their
//! exact Gaussian conditionals. The four families are pooled independently.
//!
//! A single-stage model that puts the hierarchy directly on the SSM scale
//! parameters is not fitted; per-track autocorrelation of the input draws is
//! ignored, as in the two-stage scheme it approximates.

use crate::error::{Error, Result};
use crate::mcmc::{self, Diagnostics, ParameterSpace, PosteriorSamples, SamplerConfig, Support};
use crate::rng::substream;
use crate::stats::{self, normal_ln_pdf};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// The four pooled scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TauX,
    TauY,
    TauS,
    TauTheta,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::TauX, Family::TauY, Family::TauS, Family::TauTheta];

    /// Column name in SSM posterior samples.
    pub fn name(self) -> &'static str {
        match self {
            Family::TauX => "tau_x",
            Family::TauY => "tau_y",
            Family::TauS => "tau_s",
            Family::TauTheta => "tau_theta",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Posterior draws of the four scales for one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackDraws {
    pub track_id: String,
    /// Indexed by [`Family::index`] order: τ_x, τ_y, τ_s, τ_θ.
    pub draws: [Vec<f64>; 4],
}

impl TrackDraws {
    pub fn from_samples(track_id: &str, s: &PosteriorSamples) -> Result<Self> {
        let col = |f: Family| s.column(f.name()).ok_or_else(|| Error::data(format!("track {track_id}: samples lack column {}", f.name())));
        Ok(TrackDraws { track_id: track_id.to_string(), draws: [col(Family::TauX)?, col(Family::TauY)?, col(Family::TauS)?, col(Family::TauTheta)?] })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PooledInput {
    pub tracks: Vec<TrackDraws>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierConfig {
    /// Hyperprior medians of μ for τ_x (km), τ_y (km), τ_s, τ_θ (rad).
    pub prior_median: [f64; 4],
    /// Hyperprior sd of log μ.
    pub prior_log_sd: f64,
    pub gamma_scale: f64,
    pub eta_scale: f64,
    pub max_draws_per_track: usize,
    pub min_draws_per_track: usize,
    /// Lower bound on the within-track sd of log draws, so constant inputs
    /// stay well posed.
    pub min_log_sd: f64,
    pub sampler: SamplerConfig,
}

impl Default for HierConfig {
    fn default() -> Self {
        HierConfig {
            prior_median: [30.0, 25.0, 0.2, 0.2],
            prior_log_sd: 1.0,
            gamma_scale: 1.0,
            eta_scale: 1.0,
            max_draws_per_track: 500,
            min_draws_per_track: 100,
            min_log_sd: 1e-6,
            sampler: SamplerConfig { chains: 4, warmup: 2000, draws: 2000, thin: 1, seed: 1, init_jitter: 0.1 },
        }
    }
}

/// Quantile summary in the layout of a population table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p| stats::quantile_sorted(&v, p);
        Summary { q05: q(0.05), q25: q(0.25), q50: q(0.5), q75: q(0.75), q95: q(0.95), mean: stats::mean(xs), std: stats::std_dev(xs) }
    }
}

/// Pooled posterior of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyPosterior {
    pub family: Family,
    /// Population median μ in natural units.
    pub mu: Vec<f64>,
    /// Spread γ of log track medians.
    pub gamma: Vec<f64>,
    pub track_ids: Vec<String>,
    /// Per track, draws of μ^(j) in natural units (aligned with `mu`).
    pub track_mu: Vec<Vec<f64>>,
    pub track_eta: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPosterior {
    pub families: Vec<FamilyPosterior>,
}

impl PopulationPosterior {
    pub fn family(&self, f: Family) -> &FamilyPosterior {
        self.families.iter().find(|p| p.family == f).expect("all four families are fitted")
    }

    pub fn summary(&self) -> PopulationSummary {
        let families = self
            .families
            .iter()
            .map(|p| {
                let idx = |n: &str| p.diagnostics.names.iter().position(|x| x == n);
                let (rm, rg) = (idx("log_mu").map(|i| p.diagnostics.rhat[i]), idx("gamma").map(|i| p.diagnostics.rhat[i]));
                FamilySummary {
                    family: p.family,
                    mu: Summary::of(&p.mu),
                    gamma: Summary::of(&p.gamma),
                    rhat_mu: rm.unwrap_or(f64::NAN),
                    rhat_gamma: rg.unwrap_or(f64::NAN),
                    max_rhat: p.diagnostics.max_rhat(),
                    tracks: p
                        .track_ids
                        .iter()
                        .zip(&p.track_mu)
                        .zip(&p.track_eta)
                        .map(|((id, m), e)| TrackSummary { track_id: id.clone(), mu: Summary::of(m), eta_median: stats::median(e) })
                        .collect(),
                }
            })
            .collect();
        PopulationSummary { families }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: String,
    pub mu: Summary,
    pub eta_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: Family,
    pub mu: Summary,
    pub gamma: Summary,
    pub rhat_mu: f64,
    pub rhat_gamma: f64,
    /// Largest split-R̂ over log μ, γ and every η_j.
    pub max_rhat: f64,
    pub tracks: Vec<TrackSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub families: Vec<FamilySummary>,
}

/// Posterior means of μ and γ, the inputs of forward simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub mu_tau_x: f64,
    pub gamma_tau_x: f64,
    pub mu_tau_y: f64,
    pub gamma_tau_y: f64,
    pub mu_tau_s: f64,
    pub gamma_tau_s: f64,
    pub mu_tau_theta: f64,
    pub gamma_tau_theta: f64,
}

impl Hyperparameters {
    /// (μ, γ) of a family.
    pub fn get(&self, f: Family) -> (f64, f64) {
        match f {
            Family::TauX => (self.mu_tau_x, self.gamma_tau_x),
            Family::TauY => (self.mu_tau_y, self.gamma_tau_y),
            Family::TauS => (self.mu_tau_s, self.gamma_tau_s),
            Family::TauTheta => (self.mu_tau_theta, self.gamma_tau_theta),
        }
    }

    /// Draw a track-level τ: log τ ~ N(log μ, γ²).
    pub fn draw<R: Rng + ?Sized>(&self, f: Family, rng: &mut R) -> f64 {
        let (mu, gamma) = self.get(f);
        if mu <= 0.0 {
            return 0.0;
        }
        (mu.ln() + gamma * rng.sample::<f64, _>(StandardNormal)).exp()
    }
}

pub fn empirical_hyperparameters(p: &PopulationPosterior) -> Hyperparameters {
    let m = |f: Family| {
        let fp = p.family(f);
        (stats::mean(&fp.mu), stats::mean(&fp.gamma))
    };
    let (mu_tau_x, gamma_tau_x) = m(Family::TauX);
    let (mu_tau_y, gamma_tau_y) = m(Family::TauY);
    let (mu_tau_s, gamma_tau_s) = m(Family::TauS);
    let (mu_tau_theta, gamma_tau_theta) = m(Family::TauTheta);
    Hyperparameters { mu_tau_x, gamma_tau_x, mu_tau_y, gamma_tau_y, mu_tau_s, gamma_tau_s, mu_tau_theta, gamma_tau_theta }
}

/// Per-track sufficient statistics of log draws.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LogStats {
    n: f64,
    mean: f64,
    ss: f64,
}

fn log_stats(draws: &[f64], max_draws: usize, min_log_sd: f64) -> LogStats {
    let k = draws.len().min(max_draws.max(1));
    // evenly spaced over the whole input, first draw kept
    let logs: Vec<f64> = (0..k).map(|i| draws[i * draws.len() / k].ln()).collect();
    let n = logs.len() as f64;
    let mean = stats::mean(&logs);
    let ss = logs.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
    LogStats { n, mean, ss: ss.max((n - 1.0) * min_log_sd * min_log_sd) }
}

fn half_normal_ln_pdf(x: f64, scale: f64) -> f64 {
    normal_ln_pdf(x, 0.0, scale) + std::f64::consts::LN_2
}

struct Marginal<'a> {
    stats: &'a [LogStats],
    prior_log_median: f64,
    cfg: &'a HierConfig,
}

impl Marginal<'_> {
    /// x = [log μ, γ, η_1..η_J].
    fn ln_density(&self, x: &[f64]) -> f64 {
        let (m, g) = (x[0], x[1]);
        let mut lp = normal_ln_pdf(m, self.prior_log_median, self.cfg.prior_log_sd) + half_normal_ln_pdf(g, self.cfg.gamma_scale);
        for (s, &eta) in self.stats.iter().zip(&x[2..]) {
            lp += half_normal_ln_pdf(eta, self.cfg.eta_scale);
            // within-track scatter
            lp += -(s.n - 1.0) * eta.ln() - s.ss / (2.0 * eta * eta);
            // track mean with μ^(j) integrated out
            lp += normal_ln_pdf(s.mean, m, (g * g + eta * eta / s.n).sqrt());
        }
        lp
    }
}

/// Pool all four families; they run concurrently.
pub fn pool(input: &PooledInput, cfg: &HierConfig) -> Result<PopulationPosterior> {
    if input.tracks.len() < 3 {
        return Err(Error::data(format!("pooling needs at least 3 tracks, got {}", input.tracks.len())));
    }
    let mut tracks: Vec<&TrackDraws> = input.tracks.iter().collect();
    tracks.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    for t in &tracks {
        for f in Family::ALL {
            let d = &t.draws[f.index()];
            if d.len() < cfg.min_draws_per_track {
                return Err(Error::data(format!("track {}: {} draws of {}, need at least {}", t.track_id, d.len(), f.name(), cfg.min_draws_per_track)));
            }
            if let Some(v) = d.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::data(format!("track {}: non-positive {} draw {v}", t.track_id, f.name())));
            }
        }
    }
    if cfg.prior_median.iter().any(|m| !(*m > 0.0)) || !(cfg.prior_log_sd > 0.0 && cfg.gamma_scale > 0.0 && cfg.eta_scale > 0.0) {
        return Err(Error::config("hyperprior medians and scales must be positive"));
    }
    let families = Family::ALL.par_iter().map(|&f| pool_family(&tracks, f, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(PopulationPosterior { families })
}

fn pool_family(tracks: &[&TrackDraws], f: Family, cfg: &HierConfig) -> Result<FamilyPosterior> {
    let st: Vec<LogStats> = tracks.iter().map(|t| log_stats(&t.draws[f.index()], cfg.max_draws_per_track, cfg.min_log_sd)).collect();
    let target = Marginal { stats: &st, prior_log_median: cfg.prior_median[f.index()].ln(), cfg };

    let mut space = ParameterSpace::new();
    space.add_block("population", &[("log_mu", Support::Unbounded, 0.1), ("gamma", Support::Positive, 0.1)])?;
    for j in 0..st.len() {
        space.add_scalar(&format!("eta[{j}]"), Support::Positive, 0.05)?;
    }
    let means: Vec<f64> = st.iter().map(|s| s.mean).collect();
    let mut init = vec![stats::mean(&means), stats::std_dev(&means).max(1e-3)];
    init.extend(st.iter().map(|s| (s.ss / (s.n - 1.0).max(1.0)).sqrt()));

    let mut scfg = cfg.sampler.clone();
    scfg.seed = crate::rng::derive_seed(cfg.sampler.seed, &["hier", f.name()]);
    let density = |x: &[f64]| target.ln_density(x);
    let samples = mcmc::sample(&density, &space, &init, &scfg)?;
    let diagnostics = mcmc::diagnostics(&samples)?;

    // conditional draws of the track-level log medians
    let mut rng = substream(cfg.sampler.seed, &["hier", f.name(), "track_mu"]);
    let nd = samples.n_draws();
    let mut mu = Vec::with_capacity(nd);
    let mut gamma = Vec::with_capacity(nd);
    let mut track_mu = vec![Vec::with_capacity(nd); st.len()];
    let mut track_eta = vec![Vec::with_capacity(nd); st.len()];
    for i in 0..nd {
        let r = samples.row(i);
        let (m, g) = (r[0], r[1]);
        mu.push(m.exp());
        gamma.push(g);
        for (j, s) in st.iter().enumerate() {
            let eta = r[2 + j];
            let prec = 1.0 / (g * g) + s.n / (eta * eta);
            let mean = (m / (g * g) + s.n * s.mean / (eta * eta)) / prec;
            let z: f64 = rng.sample(StandardNormal);
            track_mu[j].push((mean + z / prec.sqrt()).exp());
            track_eta[j].push(eta);
        }
    }
    Ok(FamilyPosterior { family: f, mu, gamma, track_ids: tracks.iter().map(|t| t.track_id.clone()).collect(), track_mu, track_eta, diagnostics })
}
