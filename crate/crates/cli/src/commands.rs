use crate::artifact::{read_input, read_json, read_stamped, write_json, write_stamped};
use crate::config::RunConfig;
use navsst::forward::{lq4_uncertainty, read_ensemble, simulate_lq4, write_ensemble, ScenarioConfig};
use navsst::hier::{empirical_hyperparameters, pool, Hyperparameters, PooledInput, PopulationSummary, Summary, TrackDraws};
use navsst::lincheck::{bin_jumps, fit_linearized, read_records, segment_stats, write_records, JumpRecord, NAMES};
use navsst::mcmc::{diagnostics, read_binary, write_binary, write_csv, PosteriorSamples};
use navsst::rng::derive_seed;
use navsst::ssm::{fit_track, posterior_predictive, trajectories, PARAM_NAMES};
use navsst::sst::{bin_map, load_grid, propagate, write_grid, BinMode, Climatology, SstUncertainty};
use navsst::synth::{fleet, Injection, TrackTruth};
use navsst::tracks::{
    classify_track, detect_fixes, empirical_kinematics, fix_records, parse_tracks, schedule_at, schedules_from_records, segment_track, threshold_from_quantile, write_tracks, ClassEvidence, FixRecord,
};
use navsst::{stats, Error, FixSchedule, GeoPoint, Result, Track, TrackLabel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Ctx { hash: cfg.hash(), cfg, out }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn seed(&self, labels: &[&str]) -> u64 {
        derive_seed(self.cfg.seed, labels)
    }
}

const LABELS: [TrackLabel; 4] = [TrackLabel::Hq2, TrackLabel::Lq4, TrackLabel::StaticJump, TrackLabel::Other];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quartiles {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p| stats::quantile_sorted(&v, p);
        Some(Quartiles { q25: q(0.25), q50: q(0.5), q75: q(0.75) })
    }
}

/// Speed and fix-jump quartiles of one class, pooled over steps and fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub speed_kmh: Option<Quartiles>,
    pub jump_km: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub index: usize,
    pub track_id: String,
    pub label: TrackLabel,
    pub n_reports: usize,
    pub n_fixes: usize,
    pub evidence: ClassEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub n_tracks: usize,
    pub n_reports: usize,
    pub threshold_km: f64,
    pub classes: BTreeMap<String, usize>,
    pub table1: BTreeMap<String, ClassRow>,
    pub tracks: Vec<TrackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixesFile {
    pub threshold_km: f64,
    pub records: Vec<FixRecord>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    tracks: Vec<TrackTruth>,
    injections: Vec<Injection>,
}

pub fn synth(ctx: &Ctx) -> Result<String> {
    let f = fleet(&ctx.cfg.synth, ctx.seed(&["synth"]), &ctx.cfg.earth)?;
    let mut buf = Vec::new();
    write_tracks(&mut buf, &f.tracks())?;
    write_stamped(&ctx.path("synth/tracks.csv"), &ctx.hash, &buf)?;
    let truth = TruthFile { injections: f.injections(), tracks: f.tracks.into_iter().map(|t| t.truth).collect() };
    write_json(&ctx.path("synth/truth.json"), &ctx.hash, &truth)?;
    Ok(format!("synth: {} tracks, {} injected fixes", truth.tracks.len(), truth.injections.len()))
}

fn parse_bytes(bytes: &[u8]) -> Result<Vec<Track>> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    parse_tracks(bytes)
}

pub fn ingest(ctx: &Ctx) -> Result<String> {
    let c = &ctx.cfg.ingest;
    let raw = match &ctx.cfg.tracks {
        Some(p) => read_input(p)?,
        None => read_stamped(&ctx.path("synth/tracks.csv"), &ctx.hash)?,
    };
    let mut pieces: Vec<Track> = parse_bytes(&raw)?.iter().flat_map(|t| segment_track(t, c.max_gap_hours, c.min_reports)).collect();
    pieces.sort_by(|a, b| a.id.cmp(&b.id));
    // work on the tracks exactly as downstream stages will read them back
    let mut buf = Vec::new();
    write_tracks(&mut buf, &pieces)?;
    let tracks = parse_bytes(&buf)?;

    let earth = &ctx.cfg.earth;
    let threshold_km = match c.threshold_quantile {
        Some(q) if !tracks.is_empty() => threshold_from_quantile(&tracks, earth, q)?,
        _ => c.threshold_km,
    };
    let analysed = tracks
        .par_iter()
        .map(|t| {
            let k = empirical_kinematics(t, earth)?;
            let fs = detect_fixes(t, &k, threshold_km)?;
            let class = classify_track(t, &k, &fs, &c.classify);
            Ok((k.speed, fs, class))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut classes: BTreeMap<String, usize> = LABELS.iter().map(|l| (l.as_str().to_string(), 0)).collect();
    let mut speeds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut jumps: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(tracks.len());
    let mut schedules = Vec::with_capacity(tracks.len());
    for (i, (t, (speed, fs, class))) in tracks.iter().zip(analysed).enumerate() {
        let key = class.label.as_str().to_string();
        *classes.entry(key.clone()).or_default() += 1;
        speeds.entry(key.clone()).or_default().extend(speed);
        jumps.entry(key).or_default().extend(fs.jumps.iter().map(|j| j.norm()));
        entries.push(TrackEntry { index: i, track_id: t.id.clone(), label: class.label, n_reports: t.len(), n_fixes: fs.len(), evidence: class.evidence });
        schedules.push((t.id.clone(), fs));
    }
    let table1 = classes
        .keys()
        .map(|k| {
            let row = ClassRow {
                speed_kmh: speeds.get(k).and_then(|v| Quartiles::of(v)),
                jump_km: jumps.get(k).and_then(|v| Quartiles::of(v)),
            };
            (k.clone(), row)
        })
        .collect();
    let inventory = Inventory { n_tracks: tracks.len(), n_reports: tracks.iter().map(Track::len).sum(), threshold_km, classes, table1, tracks: entries };

    write_stamped(&ctx.path("ingest/tracks.csv"), &ctx.hash, &buf)?;
    write_json(&ctx.path("ingest/fixes.json"), &ctx.hash, &FixesFile { threshold_km, records: fix_records(&schedules) })?;
    write_json(&ctx.path("ingest/inventory.json"), &ctx.hash, &inventory)?;
    let counts: Vec<String> = inventory.classes.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("ingest: {} tracks ({})", inventory.n_tracks, counts.join(", ")))
}

/// Ingested tracks with their labels and fix schedules, in inventory order.
struct Ingested {
    tracks: Vec<Track>,
    entries: Vec<TrackEntry>,
    schedules: Vec<FixSchedule>,
}

impl Ingested {
    fn load(ctx: &Ctx) -> Result<Self> {
        let inventory: Inventory = read_json(&ctx.path("ingest/inventory.json"), &ctx.hash)?;
        let fixes: FixesFile = read_json(&ctx.path("ingest/fixes.json"), &ctx.hash)?;
        let bytes = read_stamped(&ctx.path("ingest/tracks.csv"), &ctx.hash)?;
        let mut by_id: BTreeMap<String, Track> = parse_bytes(&bytes)?.into_iter().map(|t| (t.id.clone(), t)).collect();
        let mut sched = schedules_from_records(&fixes.records);
        let mut tracks = Vec::with_capacity(inventory.tracks.len());
        let mut schedules = Vec::with_capacity(inventory.tracks.len());
        for e in &inventory.tracks {
            let t = by_id.remove(&e.track_id).ok_or_else(|| Error::data(format!("inventory lists {} but ingest/tracks.csv does not contain it", e.track_id)))?;
            tracks.push(t);
            schedules.push(sched.remove(&e.track_id).unwrap_or_default());
        }
        Ok(Ingested { tracks, entries: inventory.tracks, schedules })
    }

    fn with_labels(&self, labels: &[TrackLabel]) -> Vec<usize> {
        (0..self.tracks.len()).filter(|&i| labels.contains(&self.entries[i].label)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub index: usize,
    pub track_id: String,
    /// Posterior dump relative to the output directory, when the fit succeeded.
    pub file: Option<String>,
    pub error: Option<String>,
    pub n_fixes: usize,
    pub max_rhat: Option<f64>,
    pub medians: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub tracks: Vec<FitEntry>,
}

pub fn fit(ctx: &Ctx) -> Result<String> {
    let ing = Ingested::load(ctx)?;
    let chosen = ing.with_labels(&ctx.cfg.fit.labels);
    let results: Vec<(FitEntry, Option<Error>)> = chosen
        .par_iter()
        .map(|&i| {
            let t = &ing.tracks[i];
            let mut cfg = ctx.cfg.fit.model.clone();
            cfg.sampler.seed = ctx.seed(&["fit", &t.id]);
            let mut entry = FitEntry { index: i, track_id: t.id.clone(), file: None, error: None, n_fixes: ing.schedules[i].len(), max_rhat: None, medians: BTreeMap::new() };
            match fit_track(t, &ing.schedules[i], &cfg, &ctx.cfg.earth) {
                Ok(f) => {
                    let file = format!("fit/{i:04}.post");
                    let mut buf = Vec::new();
                    if let Err(e) = write_binary(&f.samples, &mut buf).and_then(|_| write_stamped(&ctx.path(&file), &ctx.hash, &buf)) {
                        return (entry, Some(e));
                    }
                    entry.file = Some(file);
                    entry.max_rhat = f.max_param_rhat();
                    for p in PARAM_NAMES {
                        if let Some(c) = f.samples.column(p) {
                            entry.medians.insert(p.to_string(), stats::median(&c));
                        }
                    }
                    (entry, None)
                }
                Err(e) => {
                    entry.error = Some(e.to_string());
                    (entry, Some(e))
                }
            }
        })
        .collect();
    let (tracks, errors): (Vec<FitEntry>, Vec<Option<Error>>) = results.into_iter().unzip();
    let n_ok = errors.iter().filter(|e| e.is_none()).count();
    let failed = errors.len() - n_ok;
    write_json(&ctx.path("fit/summary.json"), &ctx.hash, &FitSummary { tracks })?;
    if n_ok == 0 {
        if let Some(e) = errors.into_iter().flatten().next() {
            return Err(e);
        }
    }
    Ok(format!("fit: {n_ok} tracks fitted, {failed} failed"))
}

fn load_posterior(ctx: &Ctx, file: &str) -> Result<PosteriorSamples> {
    read_binary(read_stamped(&ctx.path(file), &ctx.hash)?.as_slice())
}

fn fitted(ctx: &Ctx) -> Result<Vec<FitEntry>> {
    let s: FitSummary = read_json(&ctx.path("fit/summary.json"), &ctx.hash)?;
    Ok(s.tracks.into_iter().filter(|e| e.file.is_some()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolOutput {
    pub n_tracks: usize,
    pub hyperparameters: Hyperparameters,
    pub population: PopulationSummary,
}

pub fn pool_cmd(ctx: &Ctx) -> Result<String> {
    let entries = fitted(ctx)?;
    let tracks = entries
        .iter()
        .map(|e| TrackDraws::from_samples(&e.track_id, &load_posterior(ctx, e.file.as_deref().expect("fitted"))?))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = ctx.cfg.pool.clone();
    cfg.sampler.seed = ctx.seed(&["pool"]);
    let post = pool(&PooledInput { tracks }, &cfg)?;
    let out = PoolOutput { n_tracks: entries.len(), hyperparameters: empirical_hyperparameters(&post), population: post.summary() };
    write_json(&ctx.path("pool.json"), &ctx.hash, &out)?;
    let mus: Vec<String> = out.population.families.iter().map(|f| format!("{} {:.4}", f.family.name(), f.mu.q50)).collect();
    Ok(format!("pool: {} tracks, median μ: {}", out.n_tracks, mus.join(", ")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEntry {
    pub index: usize,
    pub track_id: String,
    pub file: String,
    pub mean_random_km: f64,
    pub mean_systematic_km: f64,
    pub mean_overall_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub p_fix: f64,
    pub tracks: Vec<SimEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenarios: Vec<Scenario>,
}

pub fn simulate(ctx: &Ctx) -> Result<String> {
    let c = &ctx.cfg.simulate;
    if c.p_fix.is_empty() {
        return Err(Error::config("simulate.p_fix lists no scenarios"));
    }
    let pooled: PoolOutput = read_json(&ctx.path("pool.json"), &ctx.hash)?;
    let ing = Ingested::load(ctx)?;
    let chosen = ing.with_labels(&c.labels);
    let earth = &ctx.cfg.earth;
    let mut scenarios = Vec::with_capacity(c.p_fix.len());
    for &p in &c.p_fix {
        let scfg = ScenarioConfig { p_fix: p, n_ensemble: c.n_ensemble, hyper: Some(pooled.hyperparameters), seed: ctx.seed(&["simulate"]) };
        let mut tracks = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            let t = &ing.tracks[i];
            let ens = simulate_lq4(t, &scfg, earth)?;
            let u = lq4_uncertainty(&ens, t, earth)?;
            let file = format!("simulate/p{p:.3}/{i:04}.fen");
            let mut buf = Vec::new();
            write_ensemble(&mut buf, &ens, Some(&ctx.hash))?;
            write_bytes(&ctx.path(&file), &buf)?;
            let mean = |f: &dyn Fn(&navsst::ssm::ReportUncertainty) -> f64| u.reports.iter().map(f).sum::<f64>() / u.reports.len() as f64;
            tracks.push(SimEntry {
                index: i,
                track_id: t.id.clone(),
                file,
                mean_random_km: mean(&|r| r.std_x_km.hypot(r.std_y_km)),
                mean_systematic_km: mean(&|r| r.bias_x_km.hypot(r.bias_y_km)),
                mean_overall_km: mean(&|r| r.rmse_x_km.hypot(r.rmse_y_km)),
            });
        }
        scenarios.push(Scenario { p_fix: p, tracks });
    }
    write_json(&ctx.path("simulate/summary.json"), &ctx.hash, &SimSummary { scenarios })?;
    Ok(format!("simulate: {} tracks × {} scenarios", chosen.len(), c.p_fix.len()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn load_ensemble(ctx: &Ctx, file: &str) -> Result<Vec<Vec<GeoPoint>>> {
    let path = ctx.path(file);
    let bytes = std::fs::read(&path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let (header, traj) = read_ensemble(bytes.as_slice())?;
    match header.config_hash.as_deref() {
        Some(h) if h == ctx.hash => Ok(traj),
        other => Err(Error::config(format!("{} was produced under config {}, but the current config is {}", path.display(), other.unwrap_or("(none)"), ctx.hash))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SstEntry {
    pub track_id: String,
    pub source: String,
    pub n_reports: usize,
    pub mean_random: f64,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SstSummary {
    pub p_fix: Option<f64>,
    pub n_tracks: usize,
    pub n_reports: usize,
    pub n_flagged: usize,
    pub mean_random: f64,
    pub max_random: f64,
    pub mean_abs_offset: f64,
    pub tracks: Vec<SstEntry>,
}

fn climatology(path: &Path) -> Result<Climatology> {
    if path.extension().is_some_and(|e| e == "json") {
        return Climatology::from_manifest(path);
    }
    let f = std::fs::File::open(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(Climatology::single(load_grid(f)?))
}

pub fn sst(ctx: &Ctx) -> Result<String> {
    let c = &ctx.cfg.sst;
    let grid_path = ctx.cfg.grids.as_ref().ok_or_else(|| Error::config("no SST grid configured (set \"grids\")"))?;
    let clim = climatology(grid_path)?;
    let ing = Ingested::load(ctx)?;

    // (inventory index, source, trajectories)
    let mut jobs: Vec<(usize, &str, Option<String>)> = Vec::new();
    let mut chosen_p = None;
    if ctx.path("fit/summary.json").exists() {
        for e in fitted(ctx)? {
            jobs.push((e.index, "fit", e.file));
        }
    }
    if ctx.path("simulate/summary.json").exists() {
        let s: SimSummary = read_json(&ctx.path("simulate/summary.json"), &ctx.hash)?;
        let sc = match c.p_fix {
            Some(p) => s.scenarios.iter().find(|x| (x.p_fix - p).abs() < 1e-12).ok_or_else(|| Error::config(format!("no simulated scenario with p_fix {p}")))?,
            None => s.scenarios.last().ok_or_else(|| Error::data("simulate/summary.json has no scenarios"))?,
        };
        chosen_p = Some(sc.p_fix);
        for e in &sc.tracks {
            jobs.push((e.index, "simulate", Some(e.file.clone())));
        }
    }
    if jobs.is_empty() {
        return Err(Error::data("sst needs position ensembles: run fit or simulate first"));
    }
    jobs.sort_by_key(|j| j.0);

    let results: Vec<SstUncertainty> = jobs
        .par_iter()
        .map(|(i, source, file)| {
            let t = &ing.tracks[*i];
            let file = file.as_deref().expect("ensemble file");
            let traj = if *source == "fit" { trajectories(&load_posterior(ctx, file)?.thinned(c.max_trajectories), t.len())? } else { load_ensemble(ctx, file)? };
            propagate(&traj, t, &clim)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut random_pts = Vec::new();
    let mut offset_pts = Vec::new();
    let mut csv = String::from("track_id,report_index,lon_deg,lat_deg,random_c,offset_c,missing_fraction,flagged\n");
    let mut entries = Vec::new();
    for ((i, source, _), u) in jobs.iter().zip(&results) {
        let t = &ing.tracks[*i];
        for (k, (r, rep)) in u.reports.iter().zip(&t.reports).enumerate() {
            random_pts.push((rep.pos, r.random));
            offset_pts.push((rep.pos, r.offset));
            csv.push_str(&format!("{},{k},{:.6},{:.6},{},{},{},{}\n", t.id, rep.pos.lon_deg(), rep.pos.lat_deg(), r.random, r.offset, r.missing_fraction, r.flagged));
        }
        let valid: Vec<f64> = u.reports.iter().map(|r| r.random).filter(|v| v.is_finite()).collect();
        entries.push(SstEntry {
            track_id: t.id.clone(),
            source: source.to_string(),
            n_reports: u.reports.len(),
            mean_random: if valid.is_empty() { 0.0 } else { stats::mean(&valid) },
            n_flagged: u.reports.iter().filter(|r| r.flagged).count(),
        });
    }
    let randoms: Vec<f64> = random_pts.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
    let offsets: Vec<f64> = offset_pts.iter().map(|p| p.1.abs()).filter(|v| v.is_finite()).collect();
    let summary = SstSummary {
        p_fix: chosen_p,
        n_tracks: entries.len(),
        n_reports: random_pts.len(),
        n_flagged: entries.iter().map(|e| e.n_flagged).sum(),
        mean_random: if randoms.is_empty() { 0.0 } else { stats::mean(&randoms) },
        max_random: randoms.iter().copied().fold(0.0, f64::max),
        mean_abs_offset: if offsets.is_empty() { 0.0 } else { stats::mean(&offsets) },
        tracks: entries,
    };
    for (name, pts, mode) in [("sst/random.grid", &random_pts, BinMode::Quadrature), ("sst/offset.grid", &offset_pts, BinMode::Mean)] {
        let mut buf = Vec::new();
        write_grid(&mut buf, &bin_map(pts, c.res_deg, mode)?)?;
        write_stamped(&ctx.path(name), &ctx.hash, &buf)?;
    }
    write_stamped(&ctx.path("sst/reports.csv"), &ctx.hash, csv.as_bytes())?;
    write_json(&ctx.path("sst/summary.json"), &ctx.hash, &summary)?;
    Ok(format!("sst: {} tracks, {} reports, mean random {:.4} °C", summary.n_tracks, summary.n_reports, summary.mean_random))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LincheckSummary {
    pub source: String,
    pub n_records: usize,
    pub n_bins: usize,
    pub n_retained: usize,
    pub bin_km: f64,
    pub params: BTreeMap<String, Summary>,
    pub max_rhat: f64,
}

pub fn lincheck(ctx: &Ctx, records: Option<&Path>) -> Result<String> {
    let c = &ctx.cfg.lincheck;
    let (source, recs): (String, Vec<JumpRecord>) = match records {
        Some(p) => (p.display().to_string(), read_records(read_input(p)?.as_slice())?),
        None => {
            let ing = Ingested::load(ctx)?;
            let mut recs = Vec::new();
            for i in ing.with_labels(&c.labels) {
                recs.extend(segment_stats(&ing.tracks[i], &ing.schedules[i], &ctx.cfg.earth)?);
            }
            ("ingest".to_string(), recs)
        }
    };
    let bins = bin_jumps(&recs, c.model.bin_km)?;
    let mut cfg = c.model.clone();
    cfg.sampler.seed = ctx.seed(&["lincheck"]);
    let s = fit_linearized(&bins, &cfg)?;
    let params = NAMES.iter().map(|n| (n.to_string(), Summary::of(&s.column(n).expect("fitted column")))).collect();
    let max_rhat = diagnostics(&s).map(|d| d.max_rhat()).unwrap_or(f64::NAN);
    let summary = LincheckSummary { source, n_records: recs.len(), n_bins: bins.bins.len(), n_retained: bins.retained().count(), bin_km: bins.bin_km, params, max_rhat };

    let mut buf = Vec::new();
    write_records(&mut buf, &recs)?;
    write_stamped(&ctx.path("lincheck/jumps.csv"), &ctx.hash, &buf)?;
    let mut buf = Vec::new();
    write_csv(&s, &mut buf)?;
    write_stamped(&ctx.path("lincheck/posterior.csv"), &ctx.hash, &buf)?;
    write_json(&ctx.path("lincheck/summary.json"), &ctx.hash, &summary)?;
    let med: Vec<String> = NAMES.iter().map(|n| format!("{n} {:.4}", summary.params[*n].q50)).collect();
    Ok(format!("lincheck: {} jumps in {} bins, median {}", summary.n_records, summary.n_retained, med.join(", ")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcEntry {
    pub track_id: String,
    pub file: String,
    pub n_fixes: usize,
    /// Mean fix-jump length of the observed track, km.
    pub observed_mean_jump_km: Option<f64>,
    pub replicate_mean_jump_km: Option<Summary>,
    /// Fraction of replicates whose mean jump is at least the observed one.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcSummary {
    pub n_replicates: usize,
    pub tracks: Vec<PpcEntry>,
}

fn mean_jump(fs: &FixSchedule) -> Option<f64> {
    (!fs.is_empty()).then(|| fs.jumps.iter().map(|j| j.norm()).sum::<f64>() / fs.len() as f64)
}

pub fn ppc(ctx: &Ctx) -> Result<String> {
    let n = ctx.cfg.ppc.n_replicates;
    if n == 0 {
        return Err(Error::config("ppc.n_replicates must be positive"));
    }
    let ing = Ingested::load(ctx)?;
    let entries = fitted(ctx)?;
    let seed = ctx.seed(&["ppc"]);
    let earth = &ctx.cfg.earth;
    let tracks = entries
        .par_iter()
        .map(|e| {
            let (t, fs) = (&ing.tracks[e.index], &ing.schedules[e.index]);
            let s = load_posterior(ctx, e.file.as_deref().expect("fitted"))?;
            let reps = posterior_predictive(&s, t, fs, n, seed, earth)?;
            let rep_jumps = reps
                .iter()
                .map(|r| Ok(mean_jump(&schedule_at(&empirical_kinematics(r, earth)?, &fs.fix_indices))))
                .collect::<Result<Vec<Option<f64>>>>()?
                .into_iter()
                .flatten()
                .collect::<Vec<f64>>();
            let observed = mean_jump(fs);
            let file = format!("ppc/{:04}.csv", e.index);
            let mut buf = Vec::new();
            write_tracks(&mut buf, &reps)?;
            write_stamped(&ctx.path(&file), &ctx.hash, &buf)?;
            let (summary, p_value) = match observed {
                Some(o) if !rep_jumps.is_empty() => (Some(Summary::of(&rep_jumps)), Some(rep_jumps.iter().filter(|&&r| r >= o).count() as f64 / rep_jumps.len() as f64)),
                _ => (None, None),
            };
            Ok(PpcEntry { track_id: t.id.clone(), file, n_fixes: fs.len(), observed_mean_jump_km: observed, replicate_mean_jump_km: summary, p_value })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = PpcSummary { n_replicates: n, tracks };
    write_json(&ctx.path("ppc/summary.json"), &ctx.hash, &summary)?;
    Ok(format!("ppc: {} tracks × {n} replicates", summary.tracks.len()))
}
