#![allow(dead_code)]

use std::path::PathBuf;

use jackup::nmea::{assemble, decode_position_report, Decoded, RawSentence};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// One row of the pyais reference table.
#[derive(Debug, serde::Deserialize)]
pub struct Reference {
    pub line: usize,
    pub fragments: usize,
    pub msg_type: u8,
    pub mmsi: u32,
    pub nav_status: Option<u8>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub sog: Option<f64>,
    pub cog: Option<f64>,
}

pub struct Conformance {
    /// Sentences whose message matched the reference in every field.
    pub sentences_matched: usize,
    pub messages_matched: usize,
    pub messages: usize,
    pub mismatches: Vec<String>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Compares one reassembled message with its reference row. Coordinates
/// are compared after rounding to the reference's six decimals, speed and
/// course after rounding to its one decimal.
fn compare(r: &Reference, fragments: &[RawSentence]) -> Result<(), String> {
    let bits = assemble(fragments).map_err(|e| format!("assembly: {e}"))?;
    let msg_type = bits.uint(0, 6) as u8;
    let mmsi = bits.uint(8, 30) as u32;
    if (msg_type, mmsi) != (r.msg_type, r.mmsi) {
        return Err(format!(
            "type/mmsi {msg_type}/{mmsi} vs {}/{}",
            r.msg_type, r.mmsi
        ));
    }
    let decoded = decode_position_report(&bits).map_err(|e| format!("decode: {e}"))?;
    let (Some(lat), Some(lon)) = (r.lat, r.lon) else {
        return match decoded {
            Decoded::Skip { msg_type: t } if t == r.msg_type => Ok(()),
            other => Err(format!("expected a skipped type, got {other:?}")),
        };
    };
    let sog = r.sog.expect("position rows carry speed");
    let cog = r.cog.expect("position rows carry course");
    let unavailable = !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon);
    match decoded {
        Decoded::Unavailable {
            msg_type: t,
            mmsi: m,
        } if unavailable => {
            if (t, m) == (r.msg_type, r.mmsi) {
                Ok(())
            } else {
                Err("unavailable report with wrong header".into())
            }
        }
        Decoded::Position(p) if !unavailable => {
            let mut diffs = Vec::new();
            if p.nav_status != r.nav_status {
                diffs.push(format!(
                    "nav_status {:?} vs {:?}",
                    p.nav_status, r.nav_status
                ));
            }
            if round6(p.lat) != lat || round6(p.lon) != lon {
                diffs.push(format!("position {} {} vs {lat} {lon}", p.lat, p.lon));
            }
            // the reference reports 102.3 kn and 360.0° for "not available"
            let our_sog = p.sog.map_or(102.3, round1);
            let our_cog = p.cog.map_or(360.0, round1);
            if our_sog != sog || (our_cog != cog && !(p.cog.is_none() && cog >= 360.0)) {
                diffs.push(format!("sog/cog {our_sog}/{our_cog} vs {sog}/{cog}"));
            }
            if diffs.is_empty() {
                Ok(())
            } else {
                Err(diffs.join("; "))
            }
        }
        other => Err(format!("availability differs: {other:?} vs {lat} {lon}")),
    }
}

/// Decodes the real-sentence corpus and checks it against the reference.
pub fn conformance() -> Conformance {
    let text = std::fs::read_to_string(data("aivdm_real.nmea")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut rdr = csv::Reader::from_path(data("aivdm_real_reference.csv")).unwrap();
    let refs: Vec<Reference> = rdr.deserialize().map(Result::unwrap).collect();
    let mut out = Conformance {
        sentences_matched: 0,
        messages_matched: 0,
        messages: refs.len(),
        mismatches: Vec::new(),
    };
    for r in &refs {
        let fragments: Result<Vec<RawSentence>, _> = lines[r.line - 1..r.line - 1 + r.fragments]
            .iter()
            .map(|l| RawSentence::parse(l))
            .collect();
        let result = fragments
            .map_err(|e| format!("parse: {e}"))
            .and_then(|f| compare(r, &f));
        match result {
            Ok(()) => {
                out.messages_matched += 1;
                out.sentences_matched += r.fragments;
            }
            Err(e) => out.mismatches.push(format!("line {}: {e}", r.line)),
        }
    }
    out
}
