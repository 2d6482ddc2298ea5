use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn navsst(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navsst")).current_dir(dir).args(args).output().expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = navsst(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Strip the stamp line from a text artifact.
fn body(p: &Path) -> String {
    let s = fs::read_to_string(p).unwrap();
    assert!(s.starts_with("#navsst config_hash="), "{} is not stamped", p.display());
    s.split_once('\n').unwrap().1.to_string()
}

fn uniform_grid(dir: &Path) {
    let mut s = String::from("GRIDv1 36 18 -175 -85 10 10\n");
    for _ in 0..18 {
        s.push_str(&vec!["18.5"; 36].join(" "));
        s.push('\n');
    }
    fs::write(dir.join("uniform.grid"), s).unwrap();
}

fn smoke_config() -> Value {
    json!({
        "seed": 11,
        "grids": "uniform.grid",
        "synth": {"n_hq2": 16, "n_lq4": 4, "steps": 120},
        "fit": {"sampler": {"chains": 2, "warmup": 300, "draws": 100, "thin": 2}},
        "pool": {"sampler": {"chains": 2, "warmup": 500, "draws": 500}},
        "simulate": {"p_fix": [0.0, 1.0], "n_ensemble": 40},
        "lincheck": {"sampler": {"chains": 2, "warmup": 500, "draws": 500}},
        "ppc": {"n_replicates": 5}
    })
}

const STAGES: [&str; 8] = ["synth", "ingest", "fit", "pool", "simulate", "sst", "lincheck", "ppc"];

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_on_twenty_tracks_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    uniform_grid(dir);
    write_config(dir, "run.json", &smoke_config());
    for stage in STAGES {
        run_ok(dir, &["--config", "run.json", "--out-dir", "a", stage]);
    }

    let inv = read_json(&dir.join("a/ingest/inventory.json"));
    assert_eq!(inv["n_tracks"], 20);
    let pool = read_json(&dir.join("a/pool.json"));
    let fams = pool["population"]["families"].as_array().unwrap();
    let names: Vec<&str> = fams.iter().map(|f| f["family"].as_str().unwrap()).collect();
    assert_eq!(names, ["tau_x", "tau_y", "tau_s", "tau_theta"]);
    for f in fams {
        for q in ["q05", "q50", "q95"] {
            assert!(f["mu"][q].as_f64().unwrap() > 0.0);
        }
    }
    let hash = pool["config_hash"].as_str().unwrap().to_string();

    // uniform SST: every occupied cell of the uncertainty map is zero
    let grid = body(&dir.join("a/sst/random.grid"));
    let values: Vec<f64> = grid.lines().skip(1).flat_map(|l| l.split_whitespace().map(|v| v.parse::<f64>().unwrap())).collect();
    let occupied: Vec<f64> = values.into_iter().filter(|v| !v.is_nan()).collect();
    assert!(!occupied.is_empty());
    assert!(occupied.iter().all(|&v| v == 0.0), "{occupied:?}");

    // every artifact carries the config hash
    for f in files(&dir.join("a")) {
        let bytes = fs::read(&f).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains(&hash), "{} lacks the config hash", f.display());
    }

    // rerun on one worker: byte-identical outputs
    for stage in STAGES {
        run_ok(dir, &["--config", "run.json", "--out-dir", "b", "--jobs", "1", stage]);
    }
    let (fa, fb) = (files(&dir.join("a")), files(&dir.join("b")));
    assert_eq!(fa.len(), fb.len());
    for (a, b) in fa.iter().zip(&fb) {
        assert_eq!(a.strip_prefix(dir.join("a")).unwrap(), b.strip_prefix(dir.join("b")).unwrap());
        assert!(fs::read(a).unwrap() == fs::read(b).unwrap(), "{} differs", a.display());
    }

    // artifacts from another config are rejected
    let out = navsst(dir, &["--config", "run.json", "--seed", "12", "--out-dir", "a", "pool"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn empty_input_gives_an_empty_inventory() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("empty.csv"), "").unwrap();
    write_config(dir, "c.json", &json!({"tracks": "empty.csv"}));
    run_ok(dir, &["--config", "c.json", "--out-dir", "o", "ingest"]);
    let inv = read_json(&dir.join("o/ingest/inventory.json"));
    assert_eq!(inv["n_tracks"], 0);
    assert!(inv["classes"].as_object().unwrap().values().all(|v| v == 0));

    fs::write(dir.join("header.csv"), "id,timestamp_iso8601,lon_deg,lat_deg\n").unwrap();
    write_config(dir, "h.json", &json!({"tracks": "header.csv"}));
    run_ok(dir, &["--config", "h.json", "--out-dir", "o", "ingest"]);
    assert_eq!(read_json(&dir.join("o/ingest/inventory.json"))["n_tracks"], 0);
}

#[test]
fn mixed_fleet_class_counts_and_speed_table() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "c.json", &json!({"synth": {"n_hq2": 5, "n_lq4": 3, "n_static": 2, "steps": 150}}));
    run_ok(dir, &["--config", "c.json", "--out-dir", "o", "synth"]);
    let msg = run_ok(dir, &["--config", "c.json", "--out-dir", "o", "ingest"]);
    assert!(msg.contains("HQ2 5"), "{msg}");
    let inv = read_json(&dir.join("o/ingest/inventory.json"));
    assert_eq!(inv["classes"], json!({"HQ2": 5, "LQ4": 3, "STATIC_JUMP": 2, "OTHER": 0}));
    for t in inv["tracks"].as_array().unwrap() {
        let id = t["track_id"].as_str().unwrap();
        let expected = if id.starts_with("hq2") { "HQ2" } else if id.starts_with("lq4") { "LQ4" } else { "STATIC_JUMP" };
        assert_eq!(t["label"], expected, "{id}");
    }
    let s = &inv["table1"]["HQ2"]["speed_kmh"];
    let (q25, q50, q75) = (s["q25"].as_f64().unwrap(), s["q50"].as_f64().unwrap(), s["q75"].as_f64().unwrap());
    assert!(q25 <= q50 && q50 <= q75);
    assert!((6.0..=15.0).contains(&q50), "{q50}");
}

#[test]
fn noiseless_synth_reports_the_skeleton() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let zero = json!({"sigma_s": 0.0, "sigma_theta": 0.0, "tau_x": 0.0, "tau_y": 0.0, "tau_s": 0.0, "tau_theta": 0.0, "beta_sd": 0.0});
    write_config(dir, "c.json", &json!({"synth": {"n_hq2": 3, "steps": 60, "round_deg": 0.0, "truth": zero}}));
    run_ok(dir, &["--config", "c.json", "--out-dir", "o", "synth"]);
    let truth = read_json(&dir.join("o/synth/truth.json"));
    let csv = body(&dir.join("o/synth/tracks.csv"));
    let mut rows = csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    for t in truth["tracks"].as_array().unwrap() {
        let (lon, lat) = (t["true_lon"].as_array().unwrap(), t["true_lat"].as_array().unwrap());
        for i in 0..lon.len() {
            let r = rows.next().unwrap();
            assert_eq!(r[0], t["track_id"].as_str().unwrap());
            assert!((r[2].parse::<f64>().unwrap() - lon[i].as_f64().unwrap()).abs() < 1e-6);
            assert!((r[3].parse::<f64>().unwrap() - lat[i].as_f64().unwrap()).abs() < 1e-6);
        }
    }
    assert!(rows.next().is_none());
}

#[test]
fn lincheck_accepts_external_jump_records() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("track_id,jx_km,jy_km,dx2_km2,dy2_km2,coslat\n");
    for b in 0..5 {
        for k in 0..20 {
            let z = ((k * 7919 + b * 104_729) % 997) as f64 / 997.0 - 0.5;
            let d = (20.0 * b as f64 + 5.0).powi(2);
            csv.push_str(&format!("t{b},{},{},{d},{},0.9\n", 60.0 * z, -50.0 * z, d / 4.0));
        }
    }
    fs::write(dir.join("jumps.csv"), csv).unwrap();
    write_config(dir, "c.json", &json!({"lincheck": {"sampler": {"chains": 2, "warmup": 300, "draws": 300}}}));
    run_ok(dir, &["--config", "c.json", "--out-dir", "o", "lincheck", "--records", "jumps.csv"]);
    let s = read_json(&dir.join("o/lincheck/summary.json"));
    assert_eq!(s["n_records"], 100);
    for n in ["tau_x", "tau_y", "tau_s", "tau_theta"] {
        assert!(s["params"][n]["q50"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let code = |args: &[&str]| navsst(dir, args).status.code();

    fs::write(dir.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&["--config", "bad.json", "ingest"]), Some(2));
    write_config(dir, "unknown.json", &json!({"seeds": 3}));
    assert_eq!(code(&["--config", "unknown.json", "ingest"]), Some(2));
    assert_eq!(code(&["--jobs", "0", "ingest"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));

    fs::write(dir.join("broken.csv"), "id,timestamp_iso8601,lon_deg,lat_deg\na,yesterday,1,2\n").unwrap();
    write_config(dir, "broken.json", &json!({"tracks": "broken.csv"}));
    assert_eq!(code(&["--config", "broken.json", "--out-dir", "o", "ingest"]), Some(3));
    // no upstream artifacts
    assert_eq!(code(&["--out-dir", "nowhere", "pool"]), Some(3));
    // a simulated scenario list that is empty
    write_config(dir, "nosc.json", &json!({"simulate": {"p_fix": []}}));
    assert_eq!(code(&["--config", "nosc.json", "--out-dir", "o", "simulate"]), Some(2));

    // too few tracks to pool is a data error, a sampler failure would be 4
    write_config(dir, "few.json", &json!({"synth": {"n_hq2": 1, "steps": 60}, "fit": {"sampler": {"chains": 2, "warmup": 50, "draws": 20}}}));
    for stage in ["synth", "ingest", "fit"] {
        run_ok(dir, &["--config", "few.json", "--out-dir", "f", stage]);
    }
    assert_eq!(code(&["--config", "few.json", "--out-dir", "f", "pool"]), Some(3));
}
