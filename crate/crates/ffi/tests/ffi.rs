use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use jackup::ingest::write_interchange;
use jackup::nmea::{decode_reader, DecoderConfig};
use jackup::pipeline::FarmConfig;
use jackup::synth::{generate_campaign, CampaignScript, HoursRange};
use jackup_ffi::*;

const EPOCH: &str = "1530403200";

fn blank() -> JackupPosition {
    JackupPosition {
        timestamp_ms: 0,
        mmsi: 0,
        lat: 0.0,
        lon: 0.0,
        sog: 0.0,
        cog: 0.0,
        nav_status: 0,
    }
}

fn last_error() -> String {
    let p = jackup_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { jackup_string_free(p) };
    s
}

fn corpus() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/aivdm_real.nmea");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| format!("{EPOCH}\t{l}\n"))
        .collect()
}

#[test]
fn decoder_handle_matches_the_library_decoder() {
    let text = corpus();
    let (expected, expected_stats) =
        decode_reader(text.as_bytes(), DecoderConfig::default()).unwrap();

    let d = jackup_decoder_new(false);
    let mut got = Vec::new();
    for line in text.lines() {
        let line = CString::new(line).unwrap();
        let (mut out, mut produced) = (blank(), false);
        let status = unsafe { jackup_decoder_push(d, line.as_ptr(), &mut out, &mut produced) };
        assert_eq!(status, JackupStatus::Ok);
        if produced {
            got.push(out);
        }
    }
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { jackup_decoder_stats_json(d, &mut json) },
        JackupStatus::Ok
    );
    let live: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(live["records"], expected_stats.records);
    assert_eq!(
        unsafe { jackup_decoder_finish(d, &mut json) },
        JackupStatus::Ok
    );
    let stats: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();

    assert!(!expected.is_empty());
    assert_eq!(got.len(), expected.len());
    assert_eq!(stats, serde_json::to_value(&expected_stats).unwrap());
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.timestamp_ms, e.timestamp.timestamp_millis());
        assert_eq!(g.mmsi, e.mmsi.0);
        assert_eq!((g.lat, g.lon), (e.lat, e.lon));
        match e.sog {
            Some(v) => assert_eq!(g.sog, v),
            None => assert!(g.sog.is_nan()),
        }
        match e.cog {
            Some(v) => assert_eq!(g.cog, v),
            None => assert!(g.cog.is_nan()),
        }
        assert_eq!(g.nav_status, e.nav_status.map_or(-1, i16::from));
    }
}

#[test]
fn strict_decoder_reports_checksum_and_framing() {
    let d = jackup_decoder_new(true);
    let (mut out, mut produced) = (blank(), true);
    let bad_sum = CString::new(format!(
        "{EPOCH}\t!AIVDM,1,1,,A,133sVfPP00PD>hRMDH@jNOvN20S8,0*7E"
    ))
    .unwrap();
    let status = unsafe { jackup_decoder_push(d, bad_sum.as_ptr(), &mut out, &mut produced) };
    assert_eq!(status, JackupStatus::Checksum);
    assert!(!produced);
    assert!(last_error().contains("checksum"));

    let no_star = CString::new("!AIVDM,1,1,,A,133sVfPP00PD>hRMDH@jNOvN20S8,0").unwrap();
    let status = unsafe { jackup_decoder_push(d, no_star.as_ptr(), &mut out, &mut produced) };
    assert_eq!(status, JackupStatus::Framing);
    unsafe { jackup_decoder_free(d) };
}

#[test]
fn null_and_invalid_arguments_are_rejected() {
    let (mut out, mut produced) = (blank(), false);
    let line = CString::new("x").unwrap();
    let s = unsafe { jackup_decoder_push(ptr::null_mut(), line.as_ptr(), &mut out, &mut produced) };
    assert_eq!(s, JackupStatus::NullArgument);

    let d = jackup_decoder_new(false);
    let bytes = [0xffu8, 0xfe, 0];
    let s = unsafe { jackup_decoder_push(d, bytes.as_ptr().cast(), &mut out, &mut produced) };
    assert_eq!(s, JackupStatus::InvalidUtf8);
    unsafe {
        jackup_decoder_free(d);
        jackup_decoder_free(ptr::null_mut());
        jackup_string_free(ptr::null_mut());
    }
}

#[test]
fn haversine_matches_a_meridian_arc() {
    // one degree along a meridian is R * pi / 180
    let expected = 6_371_000.0 * std::f64::consts::PI / 180.0;
    let d = jackup_haversine_m(55.0, 7.5, 56.0, 7.5);
    assert!((d - expected).abs() < 1e-6, "{d} vs {expected}");
    assert_eq!(jackup_haversine_m(55.0, 7.5, 55.0, 7.5), 0.0);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(jackup_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn campaign_config(dir: &Path) -> PathBuf {
    let script = CampaignScript {
        seed: 5,
        n_sites: 4,
        batch_size: 2,
        dwell_h: HoursRange {
            min: 6.0,
            max: 12.0,
        },
        port_call_h: HoursRange { min: 4.0, max: 8.0 },
        ..CampaignScript::default()
    };
    let (traj, truth) = generate_campaign(&script).unwrap();
    let csv = dir.join("campaign.csv");
    write_interchange(&traj.records, std::fs::File::create(&csv).unwrap()).unwrap();
    let mut cfg = FarmConfig::for_campaign(&script, &truth, PathBuf::from("campaign.csv"));
    cfg.out_dir = PathBuf::from("from_config");
    let path = dir.join("farm.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn analyze_writes_the_bundle_and_returns_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = CString::new(campaign_config(dir.path()).to_str().unwrap()).unwrap();
    let out_dir = dir.path().join("via_ffi");
    let out = CString::new(out_dir.to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    let status = unsafe { jackup_analyze(config.as_ptr(), out.as_ptr(), &mut json) };
    assert_eq!(status, JackupStatus::Ok, "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["installations"].as_array().unwrap().len(), 4);
    let on_disk: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);

    let mut json = ptr::null_mut();
    let status = unsafe { jackup_analyze(config.as_ptr(), ptr::null(), &mut json) };
    assert_eq!(status, JackupStatus::Ok, "{}", last_error());
    unsafe { jackup_string_free(json) };
    assert!(dir.path().join("from_config/report.json").exists());
}

#[test]
fn analyze_maps_errors_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut json = ptr::null_mut();
    let missing = CString::new(dir.path().join("absent.json").to_str().unwrap()).unwrap();
    let status = unsafe { jackup_analyze(missing.as_ptr(), ptr::null(), &mut json) };
    assert_eq!(status, JackupStatus::Io);
    assert!(json.is_null());

    let path = campaign_config(dir.path());
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    cfg["n_turbines"] = 0.into();
    std::fs::write(&path, cfg.to_string()).unwrap();
    let config = CString::new(path.to_str().unwrap()).unwrap();
    let status = unsafe { jackup_analyze(config.as_ptr(), ptr::null(), &mut json) };
    assert_eq!(status, JackupStatus::Config);
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api_and_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("jackup.h")).unwrap();
    for name in [
        "jackup_decoder_new",
        "jackup_decoder_push",
        "jackup_decoder_stats_json",
        "jackup_decoder_free",
        "jackup_decoder_finish",
        "jackup_analyze",
        "jackup_string_free",
        "jackup_haversine_m",
        "jackup_last_error",
        "JACKUP_STATUS_CHECKSUM = 4",
        "typedef struct JackupDecoder JackupDecoder",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"jackup.h\"\nint main(void) { JackupDecoder *d = jackup_decoder_new(false); \
         jackup_decoder_free(d); return jackup_haversine_m(0, 0, 0, 0) != 0.0; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(e) => eprintln!("no C compiler available ({e}); syntax check skipped"),
    }
}
