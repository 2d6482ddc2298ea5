use navsst::geo::{advance, step_displacement, Displacement, EarthModel, GeoPoint};
use navsst::mcmc::{PosteriorSamples, SamplerConfig, Target};
use navsst::rng::substream;
use navsst::ssm::{self, FitConfig, SsmLatents, SsmModel, SsmParams, SsmPriors};
use navsst::synth::{hq2_track, FleetConfig, SynthTrack, SynthTruth};
use navsst::tracks::{empirical_kinematics, schedule_at, FixSchedule, Track};
use rand::Rng;
use rand_distr::StandardNormal;

fn earth() -> EarthModel {
    EarthModel::default()
}

fn synth(steps: usize, truth: SynthTruth, seed: u64) -> SynthTrack {
    let cfg = FleetConfig { steps, truth, ..Default::default() };
    hq2_track("t", &cfg, seed, &earth()).unwrap()
}

fn setup(st: &SynthTrack) -> (SsmModel, FixSchedule, Vec<f64>) {
    let e = earth();
    let k = empirical_kinematics(&st.track, &e).unwrap();
    let fs = schedule_at(&k, &st.truth.fix_indices);
    let model = SsmModel::new(&st.track, &k, &fs, SsmPriors::default(), &e).unwrap();
    let tr = &st.truth;
    let mut x = vec![tr.mu_s, tr.alpha_s, tr.sigma_s.max(0.1), tr.sigma_theta.max(0.01), tr.tau_x, tr.tau_y, tr.tau_s, tr.tau_theta];
    x.extend_from_slice(&tr.beta);
    x.extend_from_slice(&tr.s);
    x.extend_from_slice(&tr.theta);
    (model, fs, x)
}

#[test]
fn incremental_updates_match_full_evaluation() {
    let st = synth(80, SynthTruth::default(), 1);
    let (model, _, mut x) = setup(&st);
    let mut cache = model.init_cache(&x);
    let mut lp = model.log_density(&x);
    let mut rng = substream(2, &["diff"]);
    let n = model.n_steps();
    let blocks: Vec<Vec<usize>> = {
        let mut b: Vec<Vec<usize>> = (0..8).map(|i| vec![i]).collect();
        b.extend((0..model.n_beta()).map(|k| vec![model.beta_offset() + k]));
        for off in [model.speed_offset(), model.heading_offset()] {
            for a in (0..n).step_by(5) {
                b.push((a..(a + 10).min(n)).map(|j| off + j).collect());
            }
        }
        b
    };
    for round in 0..2000 {
        let block = &blocks[rng.random_range(0..blocks.len())];
        let old: Vec<f64> = block.iter().map(|&i| x[i]).collect();
        for &i in block {
            let e: f64 = rng.sample(StandardNormal);
            let beta = (model.beta_offset()..model.speed_offset()).contains(&i);
            x[i] = if i == 1 {
                (x[i] + 0.02 * e).clamp(0.01, 0.99)
            } else if i < model.heading_offset() && !beta {
                x[i] * (0.05 * e).exp()
            } else {
                x[i] + 0.05 * e
            };
        }
        let diff = model.log_density_diff(&x, block, &old, &cache, lp);
        let full = model.log_density(&x) - lp;
        assert!((diff - full).abs() < 1e-7 * (1.0 + full.abs()), "round {round} block {block:?}: {diff} vs {full}");
        if rng.random_bool(0.5) {
            lp += diff;
            model.commit(&x, block, &mut cache);
        } else {
            for (k, &i) in block.iter().enumerate() {
                x[i] = old[k];
            }
        }
    }
}

#[test]
fn heading_wrap_leaves_posterior_unchanged() {
    let st = synth(60, SynthTruth::default(), 3);
    let e = earth();
    let k = empirical_kinematics(&st.track, &e).unwrap();
    let fs = schedule_at(&k, &st.truth.fix_indices);
    let tr = &st.truth;
    let params = SsmParams {
        mu_s: tr.mu_s,
        alpha_s: tr.alpha_s,
        sigma_s: tr.sigma_s,
        sigma_theta: tr.sigma_theta,
        tau_x: tr.tau_x,
        tau_y: tr.tau_y,
        tau_s: tr.tau_s,
        tau_theta: tr.tau_theta,
        beta: tr.beta.clone(),
    };
    let lat = SsmLatents { s: tr.s.clone(), theta: tr.theta.clone() };
    let pr = SsmPriors::default();
    let base = ssm::log_posterior(&params, &lat, &st.track, &k, &fs, &pr, &e).unwrap();
    let mut k2 = k.clone();
    for h in k2.heading.iter_mut() {
        *h += 2.0 * std::f64::consts::PI;
    }
    let shifted = ssm::log_posterior(&params, &lat, &st.track, &k2, &fs, &pr, &e).unwrap();
    assert!(base.is_finite());
    assert!((base - shifted).abs() < 1e-9 * base.abs(), "{base} vs {shifted}");

    let mut bad = lat.clone();
    bad.s[3] = -1.0;
    assert_eq!(ssm::log_posterior(&params, &bad, &st.track, &k, &fs, &pr, &e).unwrap(), f64::NEG_INFINITY);
    let mut bad = params.clone();
    bad.alpha_s = 1.5;
    assert_eq!(ssm::log_posterior(&bad, &lat, &st.track, &k, &fs, &pr, &e).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn exact_latents_dominate_perturbations() {
    let truth = SynthTruth { tau_x: 0.01, tau_y: 0.01, tau_s: 1e-3, tau_theta: 1e-3, beta_sd: 0.0, ..Default::default() };
    let st = synth(50, truth, 4);
    let (model, _, x) = setup(&st);
    let base = model.log_density(&x);
    let mut rng = substream(5, &["perturb"]);
    for _ in 0..50 {
        let mut y = x.clone();
        let j = rng.random_range(model.speed_offset()..model.dim());
        y[j] += if rng.random_bool(0.5) { 0.01 } else { -0.01 };
        assert!(model.log_density(&y) < base);
    }
}

#[test]
fn fix_term_at_one_sigma() {
    // three reports 60 km apart along a parallel, fix at the last one
    let e = earth();
    let p0 = GeoPoint::from_degrees(0.0, 40.0).unwrap();
    let p1 = advance(p0, Displacement::new(60.0, 0.0), &e).unwrap();
    let p2 = advance(p1, Displacement::new(60.0, 0.0), &e).unwrap();
    let reps = [p0, p1, p2]
        .iter()
        .enumerate()
        .map(|(i, p)| navsst::TrackReport { time: 7200 * i as i64, pos: *p, source_id: String::new() })
        .collect();
    let track = Track::new("f", reps).unwrap();
    let k = empirical_kinematics(&track, &e).unwrap();
    let fs = schedule_at(&k, &[2]);
    let model = SsmModel::new(&track, &k, &fs, SsmPriors::default(), &e).unwrap();
    let q2 = navsst::geo::cumulative_displacements(&track.points(), &e).unwrap()[2];
    let cos_psi = p2.lat().cos();
    let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
    // x layout: params, s0, s1, theta0, theta1; heading 0 keeps p_2 on the x axis
    let point = |tau_x: f64, shift: f64| {
        let s1 = (q2.dx - 60.0 - shift) / 2.0;
        let x = vec![30.0, 0.5, 1.0, 0.1, tau_x, 20.0, 0.2, 0.2, 30.0, s1, 0.0, 0.0];
        let trans = navsst::stats::truncnorm_lower_ln_pdf(s1, 30.0, 1.0, 0.0);
        let prior_tau_x = navsst::stats::normal_ln_pdf(tau_x, 0.0, 50.0);
        model.log_density(&x) - trans - prior_tau_x
    };
    let tau_x = 30.0;
    // residual of exactly one τ_x cosψ costs one half
    let d = point(tau_x, tau_x * cos_psi) - point(tau_x, 0.0);
    assert!((d + 0.5).abs() < 1e-9, "{d}");
    // and the normalizing constant is −log(τ_x cosψ √(2π))
    let d = point(2.0 * tau_x, 0.0) - point(tau_x, 0.0);
    assert!((d + 2f64.ln()).abs() < 1e-9, "{d}");
    let one_sigma = -0.5 - (tau_x * cos_psi).ln() - 0.5 * two_pi_ln;
    let rest = point(tau_x, 0.0) - (-(tau_x * cos_psi).ln() - 0.5 * two_pi_ln);
    assert!((point(tau_x, tau_x * cos_psi) - rest - one_sigma).abs() < 1e-9);
}

#[test]
fn truncated_speed_transition_density() {
    // μ_s = 10, α_s = 0.5, s_{t−1} = 10, σ_s = 1: density of s_t = 10 is φ(0)/(1 − Φ(−10))
    let v = navsst::stats::truncnorm_lower_ln_pdf(10.0, 10.0 + 0.5 * (10.0 - 10.0), 1.0, 0.0).exp();
    assert!((v - 0.398_942_280_401_432_7).abs() < 1e-12);
}

fn positions_samples(track: &Track, draws: &[Vec<GeoPoint>]) -> PosteriorSamples {
    let n = track.len();
    let mut names: Vec<String> = (0..n).map(|t| format!("lon[{t}]")).collect();
    names.extend((0..n).map(|t| format!("lat[{t}]")));
    let mut s = PosteriorSamples::new(names);
    for (i, d) in draws.iter().enumerate() {
        let mut row: Vec<f64> = d.iter().map(|p| p.lon_deg()).collect();
        row.extend(d.iter().map(|p| p.lat_deg()));
        s.push((i % 2) as u32, &row);
    }
    s
}

#[test]
fn uncertainty_of_degenerate_and_offset_draws() {
    let e = earth();
    let st = synth(30, SynthTruth::default(), 6);
    let pts = st.track.points();
    let same = positions_samples(&st.track, &vec![pts.clone(); 20]);
    let u = ssm::position_uncertainty(&same, &st.track, &e).unwrap();
    for r in &u.reports {
        assert!(r.std_x_km < 1e-9 && r.std_y_km < 1e-9 && r.bias_x_km < 1e-6 && r.bias_y_km < 1e-6);
    }
    let shifted: Vec<GeoPoint> = pts.iter().map(|p| advance(*p, Displacement::new(18.0, 0.0), &e).unwrap()).collect();
    let u = ssm::position_uncertainty(&positions_samples(&st.track, &vec![shifted; 20]), &st.track, &e).unwrap();
    for (t, r) in u.reports.iter().enumerate() {
        assert!((r.bias_x_km - 18.0).abs() < 1e-6, "{}", r.bias_x_km);
        assert!(r.std_x_km < 1e-6);
        let expected_deg = 18.0 / (e.km_per_degree() * pts[t].lat().cos());
        assert!((r.bias_x_deg - expected_deg).abs() < 1e-9);
    }
}

#[test]
fn uncertainty_of_gaussian_draws_and_identity() {
    let e = earth();
    let st = synth(30, SynthTruth::default(), 7);
    let pts = st.track.points();
    let mut rng = substream(8, &["gauss-draws"]);
    let draws: Vec<Vec<GeoPoint>> = (0..4000)
        .map(|_| {
            pts.iter()
                .map(|p| {
                    let d = Displacement::new(20.0 * rng.sample::<f64, _>(StandardNormal), 20.0 * rng.sample::<f64, _>(StandardNormal));
                    advance(*p, d, &e).unwrap()
                })
                .collect()
        })
        .collect();
    let u = ssm::position_uncertainty(&positions_samples(&st.track, &draws), &st.track, &e).unwrap();
    for r in &u.reports {
        assert!((r.std_x_km - 20.0).abs() < 1.2 && (r.std_y_km - 20.0).abs() < 1.2, "{r:?}");
        assert!(r.bias_x_km < 1.5 && r.bias_y_km < 1.5);
        assert!((r.rmse_x_km.powi(2) - r.std_x_km.powi(2) - r.bias_x_km.powi(2)).abs() < 1e-9 * r.rmse_x_km.powi(2).max(1.0));
        assert!((r.rmse_y_km.powi(2) - r.std_y_km.powi(2) - r.bias_y_km.powi(2)).abs() < 1e-9 * r.rmse_y_km.powi(2).max(1.0));
    }
}

fn single_draw_samples(st: &SynthTrack, model: &SsmModel, x: &[f64]) -> PosteriorSamples {
    let mut names: Vec<String> = ssm::PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend((0..model.n_beta()).map(|k| format!("beta[{k}]")));
    names.extend((0..model.n_steps()).map(|j| format!("s[{j}]")));
    names.extend((0..model.n_steps()).map(|j| format!("theta[{j}]")));
    let mut s = PosteriorSamples::new(names);
    s.push(0, x);
    let _ = st;
    s
}

/// Exact variance of one dead-reckoned step `dt·ŝ·(cos θ̂, sin θ̂)` with
/// ŝ ~ N(s, (τ_s s)²) and θ̂ ~ N(μ, τ_θ²).
fn step_variance(dt: f64, s: f64, mu: f64, tau_s: f64, tau_th: f64) -> (f64, f64) {
    let es2 = s * s * (1.0 + tau_s * tau_s);
    let damp = (-tau_th * tau_th / 2.0).exp();
    let damp4 = (-2.0 * tau_th * tau_th).exp();
    let ec2 = 0.5 * (1.0 + (2.0 * mu).cos() * damp4);
    let es2n = 0.5 * (1.0 - (2.0 * mu).cos() * damp4);
    let vx = es2 * ec2 - (s * mu.cos() * damp).powi(2);
    let vy = es2 * es2n - (s * mu.sin() * damp).powi(2);
    (dt * dt * vx, dt * dt * vy)
}

#[test]
fn replicates_match_generative_noise() {
    let e = earth();
    let st = synth(120, SynthTruth::default(), 9);
    let (model, fs, x) = setup(&st);
    let samples = single_draw_samples(&st, &model, &x);
    let reps = ssm::posterior_predictive(&samples, &st.track, &fs, 1000, 10, &e).unwrap();
    assert_eq!(reps.len(), 1000);
    assert!(reps.iter().all(|r| r.reports.iter().zip(&st.track.reports).all(|(a, b)| a.time == b.time)));
    let p = model.displacements(&x);
    let tr = &st.truth;
    let q_reps: Vec<Vec<Displacement>> = reps.iter().map(|r| navsst::geo::cumulative_displacements(&r.points(), &e).unwrap()).collect();
    let mut var = (0.0, 0.0);
    for t in 1..st.track.len() {
        let j = t - 1;
        if fs.contains(t) {
            let lat = st.track.reports[t].pos.lat();
            var = ((tr.tau_x * lat.cos()).powi(2), tr.tau_y.powi(2));
        } else {
            let b = model.beta_index(j).map_or(0.0, |k| tr.beta[k]);
            let (vx, vy) = step_variance(2.0, tr.s[j], tr.theta[j] + b, tr.tau_s, tr.tau_theta);
            var = (var.0 + vx, var.1 + vy);
        }
        if t < fs.fix_indices[0] {
            continue;
        }
        let xs: Vec<f64> = q_reps.iter().map(|q| q[t].dx - p[t].dx).collect();
        let ys: Vec<f64> = q_reps.iter().map(|q| q[t].dy - p[t].dy).collect();
        let (sx, sy) = (navsst::stats::std_dev(&xs), navsst::stats::std_dev(&ys));
        // position-dependent metric distortion stays well below the tolerance
        assert!((sx / var.0.sqrt() - 1.0).abs() < 0.15, "report {t}: x {sx} vs {}", var.0.sqrt());
        assert!((sy / var.1.sqrt() - 1.0).abs() < 0.15, "report {t}: y {sy} vs {}", var.1.sqrt());
    }
    let _ = step_displacement;
}

#[test]
fn zero_noise_parameters_replicate_the_mean_trajectory() {
    let e = earth();
    let st = synth(40, SynthTruth { beta_sd: 0.0, ..Default::default() }, 11);
    let (model, fs, mut x) = setup(&st);
    for i in 4..8 {
        x[i] = 1e-300;
    }
    for k in 0..model.n_beta() {
        x[8 + k] = 0.0;
    }
    let samples = single_draw_samples(&st, &model, &x);
    let reps = ssm::posterior_predictive(&samples, &st.track, &fs, 3, 12, &e).unwrap();
    let p = model.displacements(&x);
    for r in reps {
        let q = navsst::geo::cumulative_displacements(&r.points(), &e).unwrap();
        for t in 0..q.len() {
            assert!((q[t] - p[t]).norm() < 1e-6, "{t}");
        }
    }
}

fn quick_fit() -> FitConfig {
    FitConfig { sampler: SamplerConfig { chains: 2, warmup: 600, draws: 200, thin: 3, seed: 21, init_jitter: 0.05 }, ..Default::default() }
}

#[test]
fn low_noise_fit_tracks_the_truth() {
    let e = earth();
    let truth = SynthTruth { sigma_s: 0.1, sigma_theta: 0.005, tau_x: 0.2, tau_y: 0.2, tau_s: 0.003, tau_theta: 0.002, beta_sd: 0.0, ..Default::default() };
    let st = synth(300, truth, 13);
    let k = empirical_kinematics(&st.track, &e).unwrap();
    let fs = schedule_at(&k, &st.truth.fix_indices);
    let cfg = FitConfig { sampler: SamplerConfig { chains: 2, warmup: 4000, draws: 300, thin: 5, seed: 21, init_jitter: 0.05 }, ..Default::default() };
    let fit = ssm::fit_track(&st.track, &fs, &cfg, &e).unwrap();
    let s = &fit.samples;
    for t in 0..st.track.len() {
        let lon = navsst::stats::mean(&s.column(&format!("lon[{t}]")).unwrap());
        let lat = navsst::stats::mean(&s.column(&format!("lat[{t}]")).unwrap());
        let truth = GeoPoint::from_degrees(st.truth.true_lon[t], st.truth.true_lat[t]).unwrap();
        let err = step_displacement(truth, GeoPoint::from_degrees(lon, lat).unwrap(), &e).norm();
        assert!(err < 1.0, "report {t}: {err} km");
    }
    // truncation: no negative latent speed in any draw
    for j in 0..k.len() {
        assert!(s.column(&format!("s[{j}]")).unwrap().iter().all(|v| *v > 0.0));
    }
}

#[test]
fn zero_fixes_is_a_classification_error() {
    let e = earth();
    let st = synth(40, SynthTruth::default(), 14);
    let r = ssm::fit_track(&st.track, &FixSchedule::default(), &quick_fit(), &e);
    assert!(matches!(r, Err(navsst::Error::Classification(_))));
}



#[test]
fn segment_moves_preserve_the_posterior() {
    let e = earth();
    let st = synth(40, SynthTruth::default(), 31);
    let k = empirical_kinematics(&st.track, &e).unwrap();
    let fs = schedule_at(&k, &st.truth.fix_indices);
    assert!(fs.len() >= 2);
    let sampler = SamplerConfig { chains: 4, warmup: 4000, draws: 4000, thin: 2, seed: 8, init_jitter: 0.05 };
    let with = FitConfig { sampler: sampler.clone(), ..Default::default() };
    let without = FitConfig { sampler, segment: 0, ..Default::default() };
    let a = ssm::fit_track(&st.track, &fs, &with, &e).unwrap();
    let b = ssm::fit_track(&st.track, &fs, &without, &e).unwrap();
    let (da, db) = (navsst::mcmc::diagnostics(&a.samples).unwrap(), navsst::mcmc::diagnostics(&b.samples).unwrap());
    for name in ["mu_s", "sigma_theta", "tau_x", "tau_theta", "beta[0]", "s[12]", "theta[12]", "lon[20]", "lat[20]"] {
        let stats = |s: &PosteriorSamples, d: &navsst::mcmc::Diagnostics| {
            let col = s.column(name).unwrap();
            let ess = d.ess[d.names.iter().position(|n| n == name).unwrap()];
            (navsst::stats::mean(&col), navsst::stats::std_dev(&col) / ess.sqrt())
        };
        let (ma, sa) = stats(&a.samples, &da);
        let (mb, sb) = stats(&b.samples, &db);
        assert!((ma - mb).abs() < 4.5 * sa.hypot(sb), "{name}: {ma} vs {mb} (mcse {sa}, {sb})");
    }
}

#[test]
fn generative_recovery_of_the_four_scales() {
    let e = earth();
    let st = synth(300, SynthTruth::default(), 4);
    let k = empirical_kinematics(&st.track, &e).unwrap();
    let fs = schedule_at(&k, &st.truth.fix_indices);
    let fit = ssm::fit_track(&st.track, &fs, &FitConfig::default(), &e).unwrap();
    let tr = &st.truth;
    for (name, truth) in [("tau_x", tr.tau_x), ("tau_y", tr.tau_y), ("tau_s", tr.tau_s), ("tau_theta", tr.tau_theta)] {
        let col = fit.samples.column(name).unwrap();
        let (lo, hi) = (navsst::stats::quantile(&col, 0.05), navsst::stats::quantile(&col, 0.95));
        // single-track tolerance: the 90% interval widened by 40% either way
        assert!(0.6 * lo <= truth && truth <= 1.4 * hi, "{name}: 90% interval [{lo}, {hi}] misses {truth}");
    }
}

#[test]
fn later_fix_pulls_earlier_positions() {
    let e = earth();
    let truth = SynthTruth { tau_x: 5.0, tau_y: 5.0, ..Default::default() };
    let st = synth(100, truth, 17);
    let f = st.truth.fix_indices[st.truth.fix_indices.len() / 2];
    // shift every report from the fix onward 30 km east: the fix jump grows by 30 km
    let mut shifted = st.track.clone();
    for r in &mut shifted.reports[f..] {
        r.pos = advance(r.pos, Displacement::new(30.0, 0.0), &e).unwrap();
    }
    let cfg = FitConfig { sampler: SamplerConfig { chains: 2, warmup: 1500, draws: 300, thin: 3, seed: 5, init_jitter: 0.05 }, ..Default::default() };
    let mean_lon = |track: &Track| {
        let k = empirical_kinematics(track, &e).unwrap();
        let fs = schedule_at(&k, &st.truth.fix_indices);
        let fit = ssm::fit_track(track, &fs, &cfg, &e).unwrap();
        let lon = navsst::stats::mean(&fit.samples.column(&format!("lon[{}]", f - 1)).unwrap());
        let lat = navsst::stats::mean(&fit.samples.column(&format!("lat[{}]", f - 1)).unwrap());
        GeoPoint::from_degrees(lon, lat).unwrap()
    };
    let moved = step_displacement(mean_lon(&st.track), mean_lon(&shifted), &e);
    assert!(moved.dx >= 5.0, "posterior mean at report {} moved {:?}", f - 1, moved);
}
