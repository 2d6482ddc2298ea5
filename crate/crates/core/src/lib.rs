//! Navigation-error inference for historical ship tracks.
//!
//! The crate turns timestamped longitude/latitude reports into estimates of
//! dead-reckoning and celestial-fix uncertainty, pools those estimates across
//! tracks, simulates position ensembles for smooth (interpolated) tracks, and
//! propagates position ensembles through gridded SST fields.
//!
//! Module map:
//!
//! * [`geo`]: local flat-earth displacement arithmetic.
//! * [`tracks`]: parsing, segmentation, kinematics, fix detection, classification.
//! * [`mcmc`]: blocked adaptive random-walk Metropolis with transforms and diagnostics.
//! * [`ssm`]: the per-track state-space model, its fit, uncertainty summaries and
//!   posterior predictive replicates.
//! * [`hier`]: second-stage lognormal pooling of per-track scale parameters.
//! * [`forward`]: bridge-conditioned forward simulation for jump-free tracks.
//! * [`sst`]: grid fields, interpolation, propagation and binned maps.
//! * [`lincheck`]: the linearized jump-variance estimator.
//! * [`synth`]: synthetic fleets drawn from the generative navigation model.

pub mod error;
pub mod forward;
pub mod geo;
pub mod hier;
pub mod lincheck;
pub mod mcmc;
pub mod rng;
pub mod ssm;
pub mod sst;
pub mod stats;
pub mod synth;
pub mod tracks;

pub use error::{Error, Result};
pub use geo::{Displacement, EarthModel, GeoPoint};
pub use tracks::{FixSchedule, Kinematics, Track, TrackClass, TrackLabel, TrackReport};
