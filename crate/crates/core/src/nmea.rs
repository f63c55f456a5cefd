//! AIVDM sentence decoding for AIS position reports (ITU-R M.1371 message
//! types 1, 2, 3, 18 and 19).
//!
//! The decoder is a streaming state machine: single-fragment sentences are
//! decoded as they arrive, multipart messages are buffered per
//! `(channel, message id)` until every fragment has been seen or the buffer
//! expires.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Mmsi, PositionRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NmeaError {
    #[error("framing: {0}")]
    Framing(String),
    #[error("checksum mismatch: stated {stated:02X}, computed {computed:02X}")]
    Checksum { stated: u8, computed: u8 },
    #[error("invalid payload character {ch:?} at position {position}")]
    BadCharacter { ch: char, position: usize },
    #[error("malformed field: {0}")]
    Field(String),
    #[error("incomplete message: expected {expected} fragments, have {present}")]
    Incomplete { expected: u8, present: usize },
    #[error("duplicate fragment {index}")]
    DuplicateFragment { index: u8 },
    #[error("fragments disagree on {0}")]
    Mismatch(&'static str),
    #[error("message type {msg_type} truncated: need {needed} bits, have {got}")]
    Truncated {
        msg_type: u8,
        needed: usize,
        got: usize,
    },
}

type Result<T> = std::result::Result<T, NmeaError>;

/// XOR of every byte in `body`.
pub fn checksum(body: &[u8]) -> u8 {
    body.iter().fold(0, |acc, b| acc ^ b)
}

/// Splits `!body*HH` and returns `(body, stated checksum)`.
fn split_checksum(sentence: &str) -> Result<(&str, u8)> {
    let s = sentence.trim_end_matches(['\r', '\n']);
    if s.matches('!').count() != 1 || !s.starts_with('!') {
        return Err(NmeaError::Framing(
            "expected exactly one leading '!'".into(),
        ));
    }
    let star = match s.match_indices('*').map(|(i, _)| i).collect::<Vec<_>>()[..] {
        [i] => i,
        [] => return Err(NmeaError::Framing("missing '*' checksum separator".into())),
        _ => return Err(NmeaError::Framing("more than one '*'".into())),
    };
    let hex = &s[star + 1..];
    if hex.len() != 2 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(NmeaError::Framing(format!(
            "checksum suffix {hex:?} is not two hex digits"
        )));
    }
    let stated = u8::from_str_radix(hex, 16).expect("validated hex");
    Ok((&s[1..star], stated))
}

/// True iff the XOR of the characters between `!` and `*` equals the stated
/// value. Broken framing is an error, not a `false`.
pub fn validate_checksum(sentence: &str) -> Result<bool> {
    let (body, stated) = split_checksum(sentence)?;
    Ok(checksum(body.as_bytes()) == stated)
}

/// Six-bit value of one payload character.
pub fn dearmor(ch: u8, position: usize) -> Result<u8> {
    match ch {
        48..=87 => Ok(ch - 48),
        96..=119 => Ok(ch - 56),
        _ => Err(NmeaError::BadCharacter {
            ch: ch as char,
            position,
        }),
    }
}

/// Inverse of [`dearmor`]. `value` must be below 64.
pub fn armor(value: u8) -> char {
    debug_assert!(value < 64);
    let v = value + 48;
    (if v > 87 { v + 8 } else { v }) as char
}

/// One parsed `!xxVDM` / `!xxVDO` sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub talker: String,
    pub fragment_count: u8,
    pub fragment_index: u8,
    pub message_id: Option<u8>,
    pub channel: Option<char>,
    pub payload: String,
    pub fill_bits: u8,
    pub checksum: u8,
}

impl RawSentence {
    /// Parses and checksums a sentence. A checksum mismatch is reported as
    /// [`NmeaError::Checksum`], distinct from framing errors.
    pub fn parse(sentence: &str) -> Result<Self> {
        let (body, stated) = split_checksum(sentence)?;
        let computed = checksum(body.as_bytes());
        if computed != stated {
            return Err(NmeaError::Checksum { stated, computed });
        }
        let fields: Vec<&str> = body.split(',').collect();
        if fields.len() != 7 {
            return Err(NmeaError::Framing(format!(
                "expected 7 fields, found {}",
                fields.len()
            )));
        }
        let talker = fields[0];
        if talker.len() != 5 || !(talker.ends_with("VDM") || talker.ends_with("VDO")) {
            return Err(NmeaError::Framing(format!(
                "not an AIVDM sentence: {talker}"
            )));
        }
        let small = |name: &str, s: &str| -> Result<u8> {
            s.parse::<u8>()
                .map_err(|_| NmeaError::Field(format!("{name} {s:?}")))
        };
        let fragment_count = small("fragment count", fields[1])?;
        let fragment_index = small("fragment index", fields[2])?;
        if fragment_count == 0 || fragment_index == 0 || fragment_index > fragment_count {
            return Err(NmeaError::Field(format!(
                "fragment {fragment_index} of {fragment_count}"
            )));
        }
        let message_id = match fields[3] {
            "" => None,
            s => Some(small("message id", s)?),
        };
        let channel = match fields[4].chars().collect::<Vec<_>>()[..] {
            [] => None,
            [c] => Some(c),
            _ => return Err(NmeaError::Field(format!("channel {:?}", fields[4]))),
        };
        let payload = fields[5];
        for (i, b) in payload.bytes().enumerate() {
            dearmor(b, i)?;
        }
        let fill_bits = small("fill bits", fields[6])?;
        if fill_bits > 5 {
            return Err(NmeaError::Field(format!("fill bits {fill_bits}")));
        }
        Ok(RawSentence {
            talker: talker.to_string(),
            fragment_count,
            fragment_index,
            message_id,
            channel,
            payload: payload.to_string(),
            fill_bits,
            checksum: stated,
        })
    }
}

/// De-armored message bits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitBuffer {
    sextets: Vec<u8>,
    len: usize,
}

impl BitBuffer {
    pub fn from_payload(payload: &str, fill_bits: u8) -> Result<Self> {
        let mut buf = BitBuffer::default();
        buf.extend(payload)?;
        buf.truncate_fill(fill_bits);
        Ok(buf)
    }

    fn extend(&mut self, payload: &str) -> Result<()> {
        // positions here are relative to the fragment, which is what a
        // reader of the raw line wants to see
        for (i, b) in payload.bytes().enumerate() {
            self.sextets.push(dearmor(b, i)?);
        }
        self.len = self.sextets.len() * 6;
        Ok(())
    }

    fn truncate_fill(&mut self, fill_bits: u8) {
        self.len = self.len.saturating_sub(fill_bits as usize);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        (self.sextets[i / 6] >> (5 - i % 6)) & 1 == 1
    }

    /// Unsigned big-endian field of `width` bits starting at `start`.
    pub fn uint(&self, start: usize, width: usize) -> u64 {
        (start..start + width).fold(0u64, |acc, i| (acc << 1) | self.bit(i) as u64)
    }

    /// Two's-complement signed field.
    pub fn int(&self, start: usize, width: usize) -> i64 {
        let raw = self.uint(start, width);
        let shift = 64 - width as u32;
        ((raw << shift) as i64) >> shift
    }
}

/// Concatenates the payloads of a complete multipart message. Input order
/// does not matter; the fill bits of the final fragment are dropped.
pub fn assemble(fragments: &[RawSentence]) -> Result<BitBuffer> {
    let Some(first) = fragments.first() else {
        return Err(NmeaError::Incomplete {
            expected: 1,
            present: 0,
        });
    };
    let count = first.fragment_count;
    let mut slots: Vec<Option<&RawSentence>> = vec![None; count as usize];
    for f in fragments {
        if f.fragment_count != count {
            return Err(NmeaError::Mismatch("fragment count"));
        }
        if f.message_id != first.message_id {
            return Err(NmeaError::Mismatch("message id"));
        }
        if f.channel != first.channel {
            return Err(NmeaError::Mismatch("channel"));
        }
        let slot = &mut slots[f.fragment_index as usize - 1];
        if slot.is_some() {
            return Err(NmeaError::DuplicateFragment {
                index: f.fragment_index,
            });
        }
        *slot = Some(f);
    }
    let present = slots.iter().filter(|s| s.is_some()).count();
    if present != count as usize {
        return Err(NmeaError::Incomplete {
            expected: count,
            present,
        });
    }
    let mut buf = BitBuffer::default();
    for f in slots.iter().flatten() {
        buf.extend(&f.payload)?;
    }
    buf.truncate_fill(slots.last().copied().flatten().expect("complete").fill_bits);
    Ok(buf)
}

/// Kinematic content of a decoded position report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub msg_type: u8,
    pub mmsi: u32,
    pub nav_status: Option<u8>,
    pub lat: f64,
    pub lon: f64,
    pub sog: Option<f64>,
    pub cog: Option<f64>,
}

impl PositionReport {
    pub fn into_record(self, timestamp: DateTime<Utc>) -> Option<PositionRecord> {
        PositionRecord::new(timestamp, Mmsi(self.mmsi), self.lat, self.lon)
            .map(|r| r.with_kinematics(self.sog, self.cog, self.nav_status))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decoded {
    Position(PositionReport),
    /// A position report carrying the "not available" sentinel (or any
    /// out-of-range coordinate).
    Unavailable {
        msg_type: u8,
        mmsi: u32,
    },
    /// Not a position report.
    Skip {
        msg_type: u8,
    },
}

const RAW_PER_DEGREE: f64 = 600_000.0;
const SOG_UNAVAILABLE: u64 = 1023;
const COG_UNAVAILABLE: u64 = 3600;

struct Layout {
    nav_status: Option<usize>,
    sog: usize,
    lon: usize,
    lat: usize,
    cog: usize,
}

const CLASS_A: Layout = Layout {
    nav_status: Some(38),
    sog: 50,
    lon: 61,
    lat: 89,
    cog: 116,
};

const CLASS_B: Layout = Layout {
    nav_status: None,
    sog: 46,
    lon: 57,
    lat: 85,
    cog: 112,
};

/// Extracts a position report from a message. Non-position types yield
/// [`Decoded::Skip`].
pub fn decode_position_report(bits: &BitBuffer) -> Result<Decoded> {
    if bits.len() < 6 {
        return Err(NmeaError::Truncated {
            msg_type: 0,
            needed: 6,
            got: bits.len(),
        });
    }
    let msg_type = bits.uint(0, 6) as u8;
    let layout = match msg_type {
        1..=3 => &CLASS_A,
        18 | 19 => &CLASS_B,
        _ => return Ok(Decoded::Skip { msg_type }),
    };
    let needed = layout.cog + 12;
    if bits.len() < needed {
        return Err(NmeaError::Truncated {
            msg_type,
            needed,
            got: bits.len(),
        });
    }
    let mmsi = bits.uint(8, 30) as u32;
    let lon = bits.int(layout.lon, 28) as f64 / RAW_PER_DEGREE;
    let lat = bits.int(layout.lat, 27) as f64 / RAW_PER_DEGREE;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Ok(Decoded::Unavailable { msg_type, mmsi });
    }
    let sog = match bits.uint(layout.sog, 10) {
        SOG_UNAVAILABLE => None,
        raw => Some(raw as f64 / 10.0),
    };
    let cog = match bits.uint(layout.cog, 12) {
        raw if raw >= COG_UNAVAILABLE => None,
        raw => Some(raw as f64 / 10.0),
    };
    Ok(Decoded::Position(PositionReport {
        msg_type,
        mmsi,
        nav_status: layout.nav_status.map(|at| bits.uint(at, 4) as u8),
        lat,
        lon,
        sog,
        cog,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// A partial multipart message is dropped after this many further
    /// sentences have been read without completing it.
    pub expire_after: u64,
    /// Treat the first framing or checksum failure as fatal.
    pub strict: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            expire_after: 32,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub lines: u64,
    pub sentences: u64,
    pub framing_errors: u64,
    pub checksum_failures: u64,
    pub decode_errors: u64,
    pub incomplete: u64,
    pub duplicate_fragments: u64,
    /// Completed messages by type.
    pub by_type: BTreeMap<u8, u64>,
    pub position_unavailable: u64,
    pub missing_timestamp: u64,
    pub records: u64,
}

impl DecodeStats {
    /// Adds another stream's counters to these.
    pub fn merge(&mut self, other: &DecodeStats) {
        self.lines += other.lines;
        self.sentences += other.sentences;
        self.framing_errors += other.framing_errors;
        self.checksum_failures += other.checksum_failures;
        self.decode_errors += other.decode_errors;
        self.incomplete += other.incomplete;
        self.duplicate_fragments += other.duplicate_fragments;
        for (t, n) in &other.by_type {
            *self.by_type.entry(*t).or_default() += n;
        }
        self.position_unavailable += other.position_unavailable;
        self.missing_timestamp += other.missing_timestamp;
        self.records += other.records;
    }
}

struct Pending {
    fragments: Vec<RawSentence>,
    timestamp: Option<DateTime<Utc>>,
    started_at: u64,
}

/// Streaming AIVDM decoder.
pub struct Decoder {
    config: DecoderConfig,
    pending: HashMap<(Option<char>, Option<u8>), Pending>,
    stats: DecodeStats,
}

/// Splits off an optional receive timestamp: either `epoch<TAB>sentence` or
/// an NMEA 4 tag block carrying `c:epoch`.
fn split_timestamp(line: &str) -> (Option<DateTime<Utc>>, &str) {
    let parse_epoch = |s: &str| {
        s.trim().parse::<f64>().ok().and_then(|v| {
            // tag blocks sometimes carry milliseconds
            let secs = if v > 1e11 { v / 1000.0 } else { v };
            DateTime::from_timestamp_millis((secs * 1000.0).round() as i64)
        })
    };
    if let Some((prefix, rest)) = line.split_once('\t') {
        return (parse_epoch(prefix), rest.trim());
    }
    if let Some(tagged) = line.strip_prefix('\\') {
        if let Some((tags, rest)) = tagged.split_once('\\') {
            let tags = tags.split('*').next().unwrap_or_default();
            let ts = tags
                .split(',')
                .find_map(|kv| kv.strip_prefix("c:"))
                .and_then(parse_epoch);
            return (ts, rest.trim());
        }
    }
    (None, line.trim())
}

impl Decoder {
    pub fn new(config: DecoderConfig) -> Self {
        Decoder {
            config,
            pending: HashMap::new(),
            stats: DecodeStats::default(),
        }
    }

    pub fn stats(&self) -> &DecodeStats {
        &self.stats
    }

    /// Feeds one input line. Returns a record when the line completes a
    /// position report. Failures are counted and swallowed unless the
    /// decoder is strict.
    pub fn push_line(&mut self, line: &str) -> Result<Option<PositionRecord>> {
        if line.trim().is_empty() {
            return Ok(None);
        }
        self.stats.lines += 1;
        let (timestamp, sentence) = split_timestamp(line);
        let raw = match RawSentence::parse(sentence) {
            Ok(raw) => raw,
            Err(e) => {
                match e {
                    NmeaError::Checksum { .. } => self.stats.checksum_failures += 1,
                    NmeaError::Framing(_) => self.stats.framing_errors += 1,
                    _ => self.stats.decode_errors += 1,
                }
                if self.config.strict {
                    return Err(e);
                }
                return Ok(None);
            }
        };
        self.stats.sentences += 1;
        self.expire();

        if raw.fragment_count == 1 {
            let bits = BitBuffer::from_payload(&raw.payload, raw.fill_bits)?;
            return Ok(self.finish_message(&bits, timestamp));
        }

        let key = (raw.channel, raw.message_id);
        let now = self.stats.sentences;
        if raw.fragment_index == 1 {
            if self.pending.remove(&key).is_some() {
                self.stats.incomplete += 1;
            }
            self.pending.insert(
                key,
                Pending {
                    fragments: vec![raw],
                    timestamp,
                    started_at: now,
                },
            );
            return Ok(None);
        }
        let Some(mut pending) = self.pending.remove(&key) else {
            // continuation without a start
            self.stats.incomplete += 1;
            return Ok(None);
        };
        if pending
            .fragments
            .iter()
            .any(|f| f.fragment_index == raw.fragment_index)
        {
            self.stats.duplicate_fragments += 1;
            return Ok(None);
        }
        if pending.fragments[0].fragment_count != raw.fragment_count {
            self.stats.incomplete += 1;
            return Ok(None);
        }
        pending.fragments.push(raw);
        if pending.fragments.len() < pending.fragments[0].fragment_count as usize {
            self.pending.insert(key, pending);
            return Ok(None);
        }
        match assemble(&pending.fragments) {
            Ok(bits) => Ok(self.finish_message(&bits, pending.timestamp)),
            Err(_) => {
                self.stats.decode_errors += 1;
                Ok(None)
            }
        }
    }

    fn expire(&mut self) {
        let now = self.stats.sentences;
        let limit = self.config.expire_after;
        let before = self.pending.len();
        self.pending.retain(|_, p| now - p.started_at <= limit);
        self.stats.incomplete += (before - self.pending.len()) as u64;
    }

    fn finish_message(
        &mut self,
        bits: &BitBuffer,
        timestamp: Option<DateTime<Utc>>,
    ) -> Option<PositionRecord> {
        let decoded = match decode_position_report(bits) {
            Ok(d) => d,
            Err(_) => {
                self.stats.decode_errors += 1;
                return None;
            }
        };
        let msg_type = match &decoded {
            Decoded::Position(p) => p.msg_type,
            Decoded::Unavailable { msg_type, .. } | Decoded::Skip { msg_type } => *msg_type,
        };
        *self.stats.by_type.entry(msg_type).or_default() += 1;
        match decoded {
            Decoded::Position(report) => {
                let Some(ts) = timestamp else {
                    self.stats.missing_timestamp += 1;
                    return None;
                };
                let record = report.into_record(ts);
                if record.is_some() {
                    self.stats.records += 1;
                } else {
                    self.stats.missing_timestamp += 1;
                }
                record
            }
            Decoded::Unavailable { .. } => {
                self.stats.position_unavailable += 1;
                None
            }
            Decoded::Skip { .. } => None,
        }
    }

    /// Closes the stream, counting any buffered partial messages as incomplete.
    pub fn finish(mut self) -> DecodeStats {
        self.stats.incomplete += self.pending.len() as u64;
        self.stats
    }
}

/// Decodes every line of `input`.
pub fn decode_reader<R: BufRead>(
    input: R,
    config: DecoderConfig,
) -> crate::Result<(Vec<PositionRecord>, DecodeStats)> {
    let mut decoder = Decoder::new(config);
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| crate::Error::io("<aivdm input>", e))?;
        if let Some(r) = decoder.push_line(&line)? {
            out.push(r);
        }
    }
    Ok((out, decoder.finish()))
}
