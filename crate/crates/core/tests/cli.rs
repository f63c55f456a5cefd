mod common;

use std::path::Path;
use std::process::{Command, Output};

use jackup::pipeline::{read_segments, Report};
use jackup::synth::GroundTruthFile;

fn jackup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jackup"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stats_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stats on stdout")
}

#[test]
fn decode_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.nmea");
    std::fs::write(&input, "").unwrap();
    let out_csv = dir.path().join("out.csv");
    let out = jackup(&["decode", s(&input), "--out", s(&out_csv)]);
    assert_eq!(out.status.code(), Some(0));
    let stats = stats_json(&out);
    assert_eq!(stats["lines"], 0);
    assert_eq!(stats["records"], 0);
    assert_eq!(stats["checksum_failures"], 0);
    let csv = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only");
}

#[test]
fn decode_counts_a_bad_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.nmea");
    std::fs::write(
        &input,
        "1530403200\t!AIVDM,1,1,,A,133sVfPP00PD>hRMDH@jNOvN20S8,0*7E\n",
    )
    .unwrap();
    let out_csv = dir.path().join("out.csv");
    let out = jackup(&["decode", s(&input), "--out", s(&out_csv)]);
    assert_eq!(out.status.code(), Some(0));
    let stats = stats_json(&out);
    assert_eq!(stats["checksum_failures"], 1);
    assert_eq!(stats["records"], 0);

    let strict = jackup(&["decode", s(&input), "--out", s(&out_csv), "--strict"]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn decode_corpus_matches_reference_count() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(common::data("aivdm_real.nmea")).unwrap();
    let stamped: String = text.lines().map(|l| format!("1530403200\t{l}\n")).collect();
    let input = dir.path().join("corpus.nmea");
    std::fs::write(&input, stamped).unwrap();
    let out_csv = dir.path().join("out.csv");
    let out = jackup(&["decode", s(&input), "--out", s(&out_csv)]);
    assert_eq!(out.status.code(), Some(0));

    let mut rdr = csv::Reader::from_path(common::data("aivdm_real_reference.csv")).unwrap();
    let expected = rdr
        .deserialize::<common::Reference>()
        .map(Result::unwrap)
        .filter(|r| matches!((r.lat, r.lon), (Some(la), Some(lo)) if la.abs() <= 90.0 && lo.abs() <= 180.0))
        .count();
    let (records, _) =
        jackup::ingest::read_interchange(std::fs::File::open(&out_csv).unwrap()).unwrap();
    assert_eq!(records.len(), expected);
}

#[test]
fn decode_missing_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = jackup(&[
        "decode",
        "/nonexistent/feed.nmea",
        "--out",
        s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn small_script(dir: &Path) -> std::path::PathBuf {
    let script = dir.join("script.json");
    std::fs::write(
        &script,
        r#"{ "n_sites": 6, "batch_size": 3, "dwell_h": { "min": 8.0, "max": 20.0 },
             "port_call_h": { "min": 6.0, "max": 12.0 },
             "gaps": { "fraction": 0.02, "min_len": 6, "max_len": 60 } }"#,
    )
    .unwrap();
    script
}

#[test]
fn synth_then_analyze_recovers_the_sites() {
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("camp");
    let out = jackup(&[
        "synth",
        "--config",
        s(&small_script(dir.path())),
        "--seed",
        "3",
        "--out-dir",
        s(&camp),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = jackup(&["analyze", "--config", s(&camp.join("farm.json"))]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report: Report =
        serde_json::from_slice(&std::fs::read(camp.join("report/report.json")).unwrap()).unwrap();
    let truth: GroundTruthFile =
        serde_json::from_slice(&std::fs::read(camp.join("ground_truth.json")).unwrap()).unwrap();
    let farm = report.farm_stats.as_ref().unwrap();
    assert_eq!(farm.n_identified, 6);
    assert_eq!(farm.coverage_pct, 100);
    assert_eq!(report.harbor.port_calls.len(), truth.port_calls.len());
    for site in &truth.sites {
        let found = report
            .installations
            .iter()
            .find(|i| jackup::geo::haversine(i.center, site.center) < 20.0)
            .expect("site recovered");
        assert!((found.total_h * 3600.0 - site.dwell_s).abs() <= 20.0);
    }
    for name in jackup::pipeline::BUNDLE_FILES {
        assert!(camp.join("report").join(name).is_file(), "{name}");
    }
    let hash = std::fs::read_to_string(camp.join("report/report.sha256")).unwrap();
    assert_eq!(hash.trim(), report.hash());

    // stats recomputed from the exported segments agree with the report
    let out = jackup(&[
        "stats",
        "--segments",
        s(&camp.join("report/segments.csv")),
        "--config",
        s(&camp.join("farm.json")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let st: jackup::pipeline::SegmentStats = serde_json::from_slice(&out.stdout).unwrap();
    let recomputed = st.farm_stats.unwrap();
    assert_eq!(recomputed.n_identified, farm.n_identified);
    assert!((recomputed.avg_h - farm.avg_h).abs() < 1e-9);
    assert!((st.harbor_total_h - report.harbor.total_h).abs() < 1e-9);
    let share = st.time_share.unwrap();
    assert_eq!(share.transit_pct, report.time_share.transit_pct);
    let rows =
        read_segments(std::fs::File::open(camp.join("report/segments.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.bracket_h + 1e-12 >= r.duration_h));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("camp");
    jackup(&[
        "synth",
        "--config",
        s(&small_script(dir.path())),
        "--out-dir",
        s(&camp),
    ]);
    let elsewhere = dir.path().join("elsewhere");
    let out = jackup(&[
        "analyze",
        "--config",
        s(&camp.join("farm.json")),
        "--out-dir",
        s(&elsewhere),
        "--extra-clusters",
        "12",
        "--seed",
        "9",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Report =
        serde_json::from_slice(&std::fs::read(elsewhere.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.clustering.k, 6 + 12);
    assert_eq!(report.provenance.seeds[0], 9);
    assert!(!camp.join("report").exists());
}

#[test]
fn zero_turbines_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("camp");
    jackup(&[
        "synth",
        "--config",
        s(&small_script(dir.path())),
        "--out-dir",
        s(&camp),
    ]);
    let cfg_path = camp.join("farm.json");
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&cfg_path).unwrap()).unwrap();
    cfg["n_turbines"] = 0.into();
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = jackup(&["analyze", "--config", s(&cfg_path)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_turbines"));
    assert!(!camp.join("report").exists(), "no partial report");
}

#[test]
fn infeasible_script_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("tight.json");
    std::fs::write(
        &script,
        r#"{ "n_sites": 4, "site_spacing_m": 150.0, "layout_jitter_m": 0.0 }"#,
    )
    .unwrap();
    let out = jackup(&[
        "synth",
        "--config",
        s(&script),
        "--out-dir",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
