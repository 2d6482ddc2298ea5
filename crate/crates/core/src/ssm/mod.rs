//! Per-track state-space model for 2-hourly tracks.
//!
//! True speed follows a centred AR(1) with innovations truncated so speed
//! stays non-negative; true heading is a random walk. True displacement is the
//! accumulation of `dt · s · (cos θ, sin θ)`. Between fixes the empirical
//! speed and heading observe the latent state with relative speed error
//! `τ_s` and heading error `τ_θ` plus a per-interval heading bias `β_k`. At
//! fixes the reported displacement observes the true displacement with
//! celestial errors `τ_x cos ψ` and `τ_y`.
//!
//! Latent arrays are indexed by step: entry `j` describes the step from
//! report `j` to report `j + 1`, so a track with `T` reports has `T − 1`
//! latent speeds and headings.

mod fit;
mod model;
mod summary;

pub use fit::{fit_track, fit_track_from, initial_state, FitConfig, TrackFit};
pub use model::SsmModel;
pub use summary::{posterior_predictive, position_uncertainty, report_uncertainty, trajectories, PositionUncertainty, ReportUncertainty};

use crate::error::Result;
use crate::geo::EarthModel;
use crate::tracks::{FixSchedule, Kinematics, Track};
use serde::{Deserialize, Serialize};

/// Names of the scalar parameters, in coordinate order.
pub const PARAM_NAMES: [&str; 8] = ["mu_s", "alpha_s", "sigma_s", "sigma_theta", "tau_x", "tau_y", "tau_s", "tau_theta"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    pub mu_s: f64,
    pub alpha_s: f64,
    pub sigma_s: f64,
    pub sigma_theta: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_s: f64,
    pub tau_theta: f64,
    /// One heading bias per interval between consecutive fixes.
    pub beta: Vec<f64>,
}

impl SsmParams {
    pub fn scalars(&self) -> [f64; 8] {
        [self.mu_s, self.alpha_s, self.sigma_s, self.sigma_theta, self.tau_x, self.tau_y, self.tau_s, self.tau_theta]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmLatents {
    pub s: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Prior scales. Scale parameters are half-normal; `mu_s` is normal around
/// the track's mean empirical speed, truncated at zero; `alpha_s` is uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmPriors {
    pub mu_s_sd: f64,
    pub sigma_s_scale: f64,
    pub sigma_theta_scale: f64,
    pub tau_x_scale: f64,
    pub tau_y_scale: f64,
    pub tau_s_scale: f64,
    pub tau_theta_scale: f64,
}

impl Default for SsmPriors {
    fn default() -> Self {
        SsmPriors {
            mu_s_sd: 10.0,
            sigma_s_scale: 2.0,
            sigma_theta_scale: 0.3,
            tau_x_scale: 50.0,
            tau_y_scale: 50.0,
            tau_s_scale: 0.5,
            tau_theta_scale: 0.5,
        }
    }
}

/// Log posterior density (up to a constant) of a parameter and latent state.
///
/// Returns −∞ for any support violation.
pub fn log_posterior(
    params: &SsmParams,
    latents: &SsmLatents,
    track: &Track,
    k: &Kinematics,
    fs: &FixSchedule,
    priors: &SsmPriors,
    earth: &EarthModel,
) -> Result<f64> {
    let model = SsmModel::new(track, k, fs, priors.clone(), earth)?;
    if params.beta.len() != model.n_beta() || latents.s.len() != model.n_steps() || latents.theta.len() != model.n_steps() {
        return Err(crate::Error::data("parameter or latent lengths do not match the track"));
    }
    let mut x = params.scalars().to_vec();
    x.extend_from_slice(&params.beta);
    x.extend_from_slice(&latents.s);
    x.extend_from_slice(&latents.theta);
    Ok(model.log_density_checked(&x))
}
