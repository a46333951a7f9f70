use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use exosim_core::trace::{parse_csv, write_csv, TraceMetadata};

fn exosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exosim"))
        .args(args)
        .env_remove("EXOSIM_CONFIG")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = exosim(&[
            "simulate",
            "--subjects",
            "S1",
            "--trials",
            "3",
            "--seed",
            "7",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names = files(a.path());
    assert_eq!(names.len(), 6);
    for n in &names {
        assert_eq!(
            fs::read(a.path().join(n)).unwrap(),
            fs::read(b.path().join(n)).unwrap(),
            "{n}"
        );
    }
    let t1 = fs::read(a.path().join("S1_trial1.csv")).unwrap();
    let t2 = fs::read(a.path().join("S1_trial2.csv")).unwrap();
    assert_ne!(t1, t2);
}

#[test]
fn simulate_all_subjects_with_preset_alias() {
    let d = tempfile::tempdir().unwrap();
    let o = exosim(&[
        "simulate",
        "--subjects",
        "S1..S5",
        "--config",
        "extension",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csvs: Vec<_> = files(d.path())
        .into_iter()
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(
        csvs,
        [
            "S1_trial1.csv",
            "S2_trial1.csv",
            "S3_trial1.csv",
            "S4_trial1.csv",
            "S5_trial1.csv"
        ]
    );
}

#[test]
fn unknown_subject_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("run");
    let o = exosim(&[
        "simulate",
        "--subjects",
        "S1,S7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("S7"));
    assert!(!out.exists());
}

#[test]
fn bad_override_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    let o = exosim(&[
        "simulate",
        "--set",
        "trial.sample_rate_hz=-5",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = exosim(&["simulate", "--magnet", "weak"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn outputs_carry_provenance_and_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let o = exosim(&[
        "simulate",
        "--subjects",
        "S2",
        "--seed",
        "3",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(d.path().join("S2_trial1.csv")).unwrap();
    let meta_text = fs::read_to_string(d.path().join("S2_trial1.meta.toml")).unwrap();
    let meta = TraceMetadata::from_toml(&meta_text).unwrap();
    let hash = meta.config_hash.clone().unwrap();
    let header = format!(
        "# exosim {}\n# seed: 3\n# config_hash: {hash}\n",
        env!("CARGO_PKG_VERSION")
    );
    assert!(csv.starts_with(&header));
    assert!(meta_text.starts_with(&header));
    assert_eq!(meta.seed, Some(3));
    assert_eq!(meta.subject.as_deref(), Some("S2"));

    let parsed = parse_csv(&csv).unwrap();
    assert!(parsed.warnings.is_empty());
    assert_eq!(parsed.points.len(), 1001);
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&write_csv(&parsed.points, None)), body(&csv));
}

#[test]
fn env_config_and_flags_override() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.toml");
    fs::write(
        &cfg,
        "[trial]\nnoise_sigma_n = 0.0\n\n[network]\npreset = \"pinch\"\n",
    )
    .unwrap();
    let out = d.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_exosim"))
        .args([
            "simulate",
            "--subjects",
            "S1",
            "--out",
            out.to_str().unwrap(),
        ])
        .env("EXOSIM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let meta =
        TraceMetadata::from_toml(&fs::read_to_string(out.join("S1_trial1.meta.toml")).unwrap())
            .unwrap();
    assert_eq!(meta.noise_sigma_n, Some(0.0));
    assert_eq!(meta.tendon_config.as_deref(), Some("pinch"));

    let o = Command::new(env!("CARGO_BIN_EXE_exosim"))
        .args([
            "simulate",
            "--subjects",
            "S1",
            "--noise-sigma",
            "0.25",
            "--tendon-config",
            "extension",
            "--out",
            out.to_str().unwrap(),
        ])
        .env("EXOSIM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    let meta =
        TraceMetadata::from_toml(&fs::read_to_string(out.join("S1_trial1.meta.toml")).unwrap())
            .unwrap();
    assert_eq!(meta.noise_sigma_n, Some(0.25));
    assert_eq!(meta.tendon_config.as_deref(), Some("extension"));
}

#[test]
fn analyze_affine_csv_gives_unit_r() {
    let d = tempfile::tempdir().unwrap();
    let mut csv = String::from("t_s,actuator_mm,force_N\n");
    for i in 0..=100 {
        let pos = 50.0 - 0.5 * i as f64;
        let force = (0.8 * (50.0 - pos) - 4.0).max(0.0);
        csv.push_str(&format!("{:.6},{pos:.6},{force:.6}\n", i as f64 * 0.1));
    }
    let input = d.path().join("bench.csv");
    fs::write(&input, csv).unwrap();
    let out = d.path().join("an");
    let o = exosim(&[
        "analyze",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: toml::Table =
        toml::from_str(&fs::read_to_string(out.join("bench.report.toml")).unwrap()).unwrap();
    let r = report["report"]["correlation"].as_float().unwrap();
    assert!((r - 1.0).abs() < 1e-12, "{r}");
    let plot = fs::read_to_string(out.join("bench.plot.csv")).unwrap();
    assert!(plot.lines().any(|l| l == "position_frac,force_frac,fitted"));
}

#[test]
fn analyze_reports_malformed_rows() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("log.csv");
    fs::write(
        &input,
        "t_s,actuator_mm,force_N\n0,50,0\n0.1,49.5,4\n0.2,oops,5\n0.3,48.5,6\n0.4,48,8\n",
    )
    .unwrap();
    let out = d.path().join("an");
    let o = exosim(&[
        "analyze",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let report: toml::Table =
        toml::from_str(&fs::read_to_string(out.join("log.report.toml")).unwrap()).unwrap();
    let warnings = report["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].as_str().unwrap().starts_with("line 4"));
}

#[test]
fn analyze_continues_past_unreadable_files() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("a.csv"), "time,pos\n1,2\n").unwrap();
    fs::write(
        d.path().join("b.csv"),
        "t_s,actuator_mm,force_N\n0,50,0\n0.1,49,5\n0.2,48,9\n",
    )
    .unwrap();
    let out = d.path().join("an");
    let o = exosim(&[
        "analyze",
        d.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("a.csv"));
    assert!(out.join("b.report.toml").exists());
    assert!(!out.join("a.report.toml").exists());
}

#[test]
fn analyze_simulator_output_counts() {
    let d = tempfile::tempdir().unwrap();
    let sim = d.path().join("sim");
    assert!(exosim(&["simulate", "--out", sim.to_str().unwrap()])
        .status
        .success());
    let o = exosim(&[
        "analyze",
        sim.to_str().unwrap(),
        "--out",
        d.path().join("an").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(
        text.contains("functional extension: 4/5 subjects; breakaway: 2/5 subjects"),
        "{text}"
    );
    let summary = fs::read_to_string(d.path().join("an/summary.txt")).unwrap();
    assert!(summary.starts_with("# exosim"));
}

#[test]
fn calibrate_writes_loadable_config() {
    let d = tempfile::tempdir().unwrap();
    let o = exosim(&["calibrate", "--out", d.path().to_str().unwrap()]);
    assert!(o.status.success());
    let path = d.path().join("calibrated.toml");
    let cfg = exosim::config::ConfigFile::from_path(Some(&path), &[]).unwrap();
    let s2 = cfg.subjects.iter().find(|s| s.id == "S2").unwrap();
    // 27.5 N band midpoint over 48 mm of effective travel
    assert!((s2.stiffness_n_per_mm.unwrap() - 27.5 / 48.0).abs() < 1e-12);
    let resolved = cfg.resolve().unwrap();
    assert!((resolved.index_excursion().unwrap() - 57.0).abs() <= 0.01);

    // the calibrated file drives the same simulation as the defaults
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert!(exosim(&["simulate", "--out", a.to_str().unwrap()])
        .status
        .success());
    assert!(exosim(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    let body = |p: &Path| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    for id in ["S1", "S4"] {
        let f = format!("{id}_trial1.csv");
        assert_eq!(body(&a.join(&f)), body(&b.join(&f)));
    }
}

#[test]
fn calibrate_rejects_degenerate_targets() {
    let d = tempfile::tempdir().unwrap();
    let o = exosim(&[
        "calibrate",
        "--set",
        "hand.excursion_target_mm=0",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = exosim(&[
        "calibrate",
        "--set",
        "hand.excursion_target_mm=500",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("depth bracket [0, 30] mm"),
        "{}",
        stderr(&o)
    );
    assert!(!d.path().join("calibrated.toml").exists());
}

#[test]
fn reproduce_magnet_choice_changes_s4_breakaway() {
    let times = ["standard", "strong"].map(|m| {
        let d = tempfile::tempdir().unwrap();
        let o = exosim(&[
            "reproduce",
            "--magnet",
            m,
            "--out",
            d.path().to_str().unwrap(),
        ]);
        let meta = TraceMetadata::from_toml(
            &fs::read_to_string(d.path().join("seed-0/traces/S4_trial1.meta.toml")).unwrap(),
        )
        .unwrap();
        (o.status.code(), meta.breakaway_time_s.unwrap())
    });
    // a 34 N magnet cannot show S4 or S5 above 35 N
    assert_eq!(times[0].0, Some(2));
    assert_eq!(times[1].0, Some(0));
    assert!(times[0].1 < times[1].1);
}

#[test]
fn reproduce_seed_range() {
    let d = tempfile::tempdir().unwrap();
    let o = exosim(&[
        "reproduce",
        "--seed",
        "1..3",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    let names = files(d.path());
    assert_eq!(
        names,
        ["config.toml", "manifest.toml", "seed-1", "seed-2", "seed-3"]
    );
    let manifest: toml::Table =
        toml::from_str(&fs::read_to_string(d.path().join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["passed"].as_bool(), Some(true));
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 3);
}
