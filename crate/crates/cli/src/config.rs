use navsst::hier::HierConfig;
use navsst::lincheck::LinConfig;
use navsst::ssm::FitConfig;
use navsst::synth::FleetConfig;
use navsst::tracks::ClassifyConfig;
use navsst::{EarthModel, Error, Result, TrackLabel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Everything that determines the outputs of a run. Serialized field order
/// is fixed, so the hash of the JSON form identifies a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Track CSV read by `ingest`.
    pub tracks: Option<PathBuf>,
    /// SST grid file or climatology manifest read by `sst`.
    pub grids: Option<PathBuf>,
    pub earth: EarthModel,
    pub ingest: IngestConfig,
    pub synth: FleetConfig,
    pub fit: FitStage,
    pub pool: HierConfig,
    pub simulate: SimulateStage,
    pub sst: SstStage,
    pub lincheck: LincheckStage,
    pub ppc: PpcStage,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            tracks: None,
            grids: None,
            earth: EarthModel::default(),
            ingest: IngestConfig::default(),
            synth: FleetConfig::default(),
            fit: FitStage::default(),
            pool: HierConfig::default(),
            simulate: SimulateStage::default(),
            sst: SstStage::default(),
            lincheck: LincheckStage::default(),
            ppc: PpcStage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub max_gap_hours: f64,
    pub min_reports: usize,
    pub threshold_km: f64,
    /// When set, the threshold is this quantile of absolute latitudinal
    /// prediction residuals over the ingested tracks instead.
    pub threshold_quantile: Option<f64>,
    pub classify: ClassifyConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { max_gap_hours: 12.0, min_reports: 10, threshold_km: 7.0, threshold_quantile: None, classify: ClassifyConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitStage {
    pub labels: Vec<TrackLabel>,
    #[serde(flatten)]
    pub model: FitConfig,
}

impl Default for FitStage {
    fn default() -> Self {
        FitStage { labels: vec![TrackLabel::Hq2], model: FitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateStage {
    pub labels: Vec<TrackLabel>,
    pub p_fix: Vec<f64>,
    pub n_ensemble: usize,
}

impl Default for SimulateStage {
    fn default() -> Self {
        SimulateStage { labels: vec![TrackLabel::Lq4], p_fix: vec![0.0, 0.5, 1.0], n_ensemble: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SstStage {
    pub res_deg: f64,
    /// Scenario whose smooth-track ensembles are propagated; the last
    /// simulated scenario when unset.
    pub p_fix: Option<f64>,
    /// Posterior draws per fitted track used as trajectories.
    pub max_trajectories: usize,
}

impl Default for SstStage {
    fn default() -> Self {
        SstStage { res_deg: 2.0, p_fix: None, max_trajectories: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LincheckStage {
    pub labels: Vec<TrackLabel>,
    #[serde(flatten)]
    pub model: LinConfig,
}

impl Default for LincheckStage {
    fn default() -> Self {
        LincheckStage { labels: vec![TrackLabel::Hq2], model: LinConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpcStage {
    pub n_replicates: usize,
}

impl Default for PpcStage {
    fn default() -> Self {
        PpcStage { n_replicates: 100 }
    }
}

impl RunConfig {
    /// Load a JSON config; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.tracks, &mut cfg.grids].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
