use navsst::geo::{advance, Displacement, EarthModel, GeoPoint};
use navsst::lincheck::{bin_jumps, fit_linearized, jump_variances, read_records, segment_stats, write_records, JumpRecord, LinConfig, NAMES};
use navsst::mcmc::{diagnostics, PosteriorSamples, SamplerConfig};
use navsst::rng::substream;
use navsst::stats;
use navsst::synth::{fleet, FleetConfig, SynthTruth};
use navsst::tracks::{empirical_kinematics, schedule_at, Track, TrackReport};
use navsst::Error;
use rand::Rng;
use rand_distr::StandardNormal;

fn rec(jx: f64, jy: f64, dx2: f64, dy2: f64) -> JumpRecord {
    JumpRecord { track_id: "t".into(), jx, jy, dx2, dy2, coslat: 1.0 }
}

fn median(s: &PosteriorSamples, name: &str) -> f64 {
    stats::median(&s.column(name).unwrap())
}

fn quick(seed: u64) -> LinConfig {
    LinConfig { sampler: SamplerConfig { chains: 2, warmup: 1500, draws: 1500, thin: 1, seed, init_jitter: 0.1 }, ..Default::default() }
}

/// Records drawn from the linearized model itself on a grid of Δ values.
fn linear_records(seed: u64, tau: [f64; 4], per_cell: usize) -> Vec<JumpRecord> {
    let mut rng = substream(seed, &["linear"]);
    let mut out = Vec::new();
    for ix in 0..6 {
        for iy in 0..3 {
            let (dx2, dy2) = ((20.0 * ix as f64 + 10.0).powi(2), (20.0 * iy as f64 + 10.0).powi(2));
            let (vx, vy) = jump_variances(&tau, dx2, dy2, 0.8);
            for _ in 0..per_cell {
                let jx = vx.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let jy = vy.sqrt() * rng.sample::<f64, _>(StandardNormal);
                out.push(JumpRecord { coslat: 0.8, ..rec(jx, jy, dx2, dy2) });
            }
        }
    }
    out
}

#[test]
fn straight_segment_accumulates_squared_steps() {
    let e = EarthModel::default();
    let mut p = GeoPoint::from_degrees(-30.0, 0.0).unwrap();
    let mut reports = Vec::new();
    for i in 0..20 {
        reports.push(TrackReport { time: i * 7200, pos: p, source_id: i.to_string() });
        p = advance(p, Displacement::new(20.0, 0.0), &e).unwrap();
    }
    let t = Track::new("straight", reports).unwrap();
    let k = empirical_kinematics(&t, &e).unwrap();
    // fixes 11 steps apart: the 10 steps before the last one count
    let fs = schedule_at(&k, &[3, 14, 15]);
    let r = segment_stats(&t, &fs, &e).unwrap();
    assert_eq!(r.len(), 2);
    assert!((r[0].dx2 - 4000.0).abs() < 1e-6, "{}", r[0].dx2);
    assert!(r[0].dy2 < 1e-9);
    assert!(r[0].jx.abs() < 1e-9 && r[0].jy.abs() < 1e-9);
    // consecutive fixes: nothing accumulates
    assert_eq!((r[1].dx2, r[1].dy2), (0.0, 0.0));
    assert!((r[0].coslat - 1.0).abs() < 1e-12);
}

#[test]
fn identical_records_share_one_zero_variance_bin() {
    let b = bin_jumps(&vec![rec(3.0, -2.0, 900.0, 100.0); 7], 20.0).unwrap();
    assert_eq!(b.bins.len(), 1);
    assert_eq!((b.bins[0].n, b.bins[0].var_x, b.bins[0].var_y), (7, 0.0, 0.0));
}

#[test]
fn two_point_variance() {
    let b = bin_jumps(&[rec(10.0, 0.0, 1.0, 1.0), rec(-10.0, 0.0, 4.0, 4.0)], 20.0).unwrap();
    assert_eq!(b.bins.len(), 1);
    assert!((b.bins[0].var_x - 200.0).abs() < 1e-12);
    assert!((b.bins[0].mean_dx2 - 2.5).abs() < 1e-12);
}

#[test]
fn binning_conserves_every_record() {
    let e = EarthModel::default();
    let f = fleet(&FleetConfig { n_hq2: 40, ..Default::default() }, 3, &e).unwrap();
    let mut records = Vec::new();
    for st in &f.tracks {
        let k = empirical_kinematics(&st.track, &e).unwrap();
        records.extend(segment_stats(&st.track, &schedule_at(&k, &st.truth.fix_indices), &e).unwrap());
    }
    for bin_km in [5.0, 20.0, 100.0] {
        let b = bin_jumps(&records, bin_km).unwrap();
        assert_eq!(b.total(), records.len());
        assert!(b.retained().all(|x| x.n >= 2 && x.var_x.is_finite()));
    }
}

#[test]
fn pure_celestial_jumps_recover_tau_y() {
    let tau = [33.1, 24.5, 0.0, 0.0];
    let s = fit_linearized(&bin_jumps(&linear_records(11, tau, 150), 20.0).unwrap(), &quick(2)).unwrap();
    assert!((median(&s, "tau_y") / 24.5 - 1.0).abs() < 0.05, "{}", median(&s, "tau_y"));
    assert!((median(&s, "tau_x") / 33.1 - 1.0).abs() < 0.05, "{}", median(&s, "tau_x"));
    assert!(median(&s, "tau_s") < 0.02 && median(&s, "tau_theta") < 0.02);
}

#[test]
fn linear_model_fixture_recovers_all_scales() {
    let tau = [33.1, 24.4, 0.192, 0.23];
    let s = fit_linearized(&bin_jumps(&linear_records(5, tau, 300), 20.0).unwrap(), &quick(4)).unwrap();
    for (name, t) in NAMES.iter().zip(tau) {
        let q = s.column(name).unwrap();
        assert!(stats::quantile(&q, 0.01) < t && t < stats::quantile(&q, 0.99), "{name}: truth {t}, median {}", stats::median(&q));
    }
    assert!(diagnostics(&s).unwrap().max_rhat() < 1.05);
}

#[test]
fn doubling_jumps_doubles_celestial_scales_only() {
    let recs = linear_records(8, [30.0, 20.0, 0.2, 0.25], 200);
    let scaled: Vec<JumpRecord> = recs.iter().map(|r| JumpRecord { jx: 2.0 * r.jx, jy: 2.0 * r.jy, dx2: 4.0 * r.dx2, dy2: 4.0 * r.dy2, ..r.clone() }).collect();
    let a = fit_linearized(&bin_jumps(&recs, 20.0).unwrap(), &quick(6)).unwrap();
    let b = fit_linearized(&bin_jumps(&scaled, 40.0).unwrap(), &quick(6)).unwrap();
    for (name, factor) in NAMES.iter().zip([2.0, 2.0, 1.0, 1.0]) {
        let (ma, mb) = (median(&a, name), median(&b, name));
        assert!((mb / (factor * ma) - 1.0).abs() < 0.03, "{name}: {ma} -> {mb}");
    }
}

#[test]
fn fit_is_deterministic() {
    let bins = bin_jumps(&linear_records(2, [30.0, 20.0, 0.2, 0.2], 40), 20.0).unwrap();
    assert_eq!(fit_linearized(&bins, &quick(9)).unwrap(), fit_linearized(&bins, &quick(9)).unwrap());
}

#[test]
fn generative_jumps_match_linearized_variance() {
    // no process noise and no heading biases: only measurement and celestial errors
    let e = EarthModel::default();
    let truth = SynthTruth { sigma_s: 0.0, sigma_theta: 0.0, beta_sd: 0.0, ..Default::default() };
    let tau = [truth.tau_x, truth.tau_y, truth.tau_s, truth.tau_theta];
    let f = fleet(&FleetConfig { n_hq2: 200, truth, ..Default::default() }, 1, &e).unwrap();
    let (mut jx2, mut jy2, mut vx, mut vy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for st in &f.tracks {
        let k = empirical_kinematics(&st.track, &e).unwrap();
        for r in segment_stats(&st.track, &schedule_at(&k, &st.truth.fix_indices), &e).unwrap() {
            let (px, py) = jump_variances(&tau, r.dx2, r.dy2, r.coslat);
            jx2 += r.jx * r.jx;
            jy2 += r.jy * r.jy;
            vx += px;
            vy += py;
            n += 1.0;
        }
    }
    assert!(n > 3000.0);
    assert!((jx2 / vx - 1.0).abs() < 0.10, "E[Jx²] {} vs {}", jx2 / n, vx / n);
    assert!((jy2 / vy - 1.0).abs() < 0.10, "E[Jy²] {} vs {}", jy2 / n, vy / n);
}

#[test]
fn records_round_trip_through_csv() {
    let recs = vec![rec(1.5, -2.25, 400.0, 0.0), JumpRecord { track_id: "b,2".into(), coslat: 0.5, ..rec(-0.125, 3.0, 1e4, 25.0) }];
    let mut buf = Vec::new();
    write_records(&mut buf, &recs).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("track_id,jx_km,jy_km,dx2_km2,dy2_km2,coslat\n"));
    assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
}

#[test]
fn malformed_inputs_are_rejected() {
    let bad = "track_id,jx_km,jy_km,dx2_km2,dy2_km2,coslat\na,1,2,3,4,1\nb,1,2,-3,4,1\n";
    assert!(matches!(read_records(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
    assert!(matches!(read_records("track_id,jx_km\na,x\n".as_bytes()), Err(Error::Parse { .. })));
    assert!(matches!(bin_jumps(&[], 0.0), Err(Error::Config(_))));
    let few = bin_jumps(&[rec(1.0, 1.0, 0.0, 0.0), rec(2.0, 1.0, 0.0, 0.0), rec(1.0, 1.0, 900.0, 0.0)], 20.0).unwrap();
    assert!(matches!(fit_linearized(&few, &quick(1)), Err(Error::Data(_))));
    let flat: Vec<JumpRecord> = (0..3).flat_map(|i| vec![rec(1.0, 1.0, (40.0 * i as f64).powi(2), 0.0); 3]).collect();
    assert!(matches!(fit_linearized(&bin_jumps(&flat, 20.0).unwrap(), &quick(1)), Err(Error::Data(_))));
}
