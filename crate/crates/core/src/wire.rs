//! Exchange message encoding.
//!
//! Layout (all ASCII):
//!
//! ```text
//! PF1,<sender>,<x>,<y>,<t>,<n_sim>,<n_nbhd>\n
//! <n_sim + n_nbhd record lines, each exactly 100 bytes>
//! ```
//!
//! A record line is `user_id,item_id,value,weight`, right-padded with spaces
//! to 99 bytes and terminated by `\n`. Similarity records carry the sender's
//! id and integer stars; neighborhood records carry [`ANONYMOUS_USER`] and a
//! one-decimal aggregated value. Every accepted input is canonical: decoding
//! then re-encoding reproduces the input byte for byte.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefs::{ItemId, NeighborhoodEntry, NeighborhoodPreferenceList, PeerId, PrefsError, SimilarityData};

pub const PROTOCOL_VERSION: u32 = 1;
pub const RECORD_LEN: usize = 100;
pub const USER_ID_LEN: usize = 36;
pub const ITEM_ID_MAX: usize = 40;
/// u32::MAX has 10 digits.
pub const WEIGHT_MAX_DIGITS: usize = 10;
/// user_id placed on neighborhood records, which carry no origin.
pub const ANONYMOUS_USER: &str = "00000000-0000-0000-0000-000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordValue {
    /// Own rating, 1..=5.
    Stars(u8),
    /// Aggregated rating in tenths of a star, 10..=50.
    Tenths(u16),
}

impl RecordValue {
    pub fn as_f64(self) -> f64 {
        match self {
            RecordValue::Stars(s) => s as f64,
            RecordValue::Tenths(t) => t as f64 / 10.0,
        }
    }

    fn is_valid(self) -> bool {
        match self {
            RecordValue::Stars(s) => (1..=5).contains(&s),
            RecordValue::Tenths(t) => (10..=50).contains(&t),
        }
    }
}

impl fmt::Display for RecordValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RecordValue::Stars(s) => write!(f, "{s}"),
            RecordValue::Tenths(t) => write!(f, "{}.{}", t / 10, t % 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub value: RecordValue,
    pub weight: u32,
}

/// Position and time of the sender when the message was built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextStamp {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeMessage {
    pub version: u32,
    pub sender: PeerId,
    pub context: ContextStamp,
    pub similarity_payload: Vec<RatingRecord>,
    pub neighborhood_payload: Vec<RatingRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u32),
    #[error("field `{field}` does not fit its layout: {reason}")]
    Field { field: &'static str, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    Truncated,
    BadVersion,
    MalformedHeader(&'static str),
    MalformedRecord(&'static str),
    TrailingBytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at byte {offset}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

impl DecodeError {
    fn at(offset: usize, kind: DecodeErrorKind) -> Self {
        Self { offset, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PayloadError {
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: &'static str },
    #[error(transparent)]
    Prefs(#[from] PrefsError),
}

impl ExchangeMessage {
    /// Builds a message from the sender's shared similarity data and its
    /// neighborhood list.
    pub fn build(
        sender: PeerId,
        context: ContextStamp,
        similarity: &SimilarityData,
        neighborhood: &NeighborhoodPreferenceList,
    ) -> Self {
        let similarity_payload = similarity
            .vector
            .iter()
            .map(|(item, &stars)| RatingRecord {
                user_id: sender.as_str().to_string(),
                item_id: item.as_str().to_string(),
                value: RecordValue::Stars(stars),
                weight: 1,
            })
            .collect();
        let neighborhood_payload = neighborhood
            .iter()
            .map(|(item, entry)| RatingRecord {
                user_id: ANONYMOUS_USER.to_string(),
                item_id: item.as_str().to_string(),
                value: RecordValue::Tenths(entry.value_tenths()),
                weight: entry.weight(),
            })
            .collect();
        Self { version: PROTOCOL_VERSION, sender, context, similarity_payload, neighborhood_payload }
    }

    pub fn record_count(&self) -> usize {
        self.similarity_payload.len() + self.neighborhood_payload.len()
    }

    /// Recovers the sender's similarity data. Records must be attributed to
    /// the sender and hold integer stars with weight 1.
    pub fn similarity_data(&self) -> Result<SimilarityData, PayloadError> {
        let mut data = SimilarityData::default();
        for (index, r) in self.similarity_payload.iter().enumerate() {
            let bad = |reason| PayloadError::Record { index, reason };
            if r.user_id != self.sender.as_str() {
                return Err(bad("similarity record not attributed to sender"));
            }
            let RecordValue::Stars(stars) = r.value else {
                return Err(bad("similarity record must carry integer stars"));
            };
            if r.weight != 1 {
                return Err(bad("similarity record weight must be 1"));
            }
            if data.vector.insert(ItemId::new(r.item_id.clone())?, stars).is_some() {
                return Err(bad("duplicate item"));
            }
        }
        Ok(data)
    }

    /// Recovers the sender's neighborhood list, bounded by the receiver's
    /// `capacity`.
    pub fn neighborhood(&self, capacity: usize) -> Result<NeighborhoodPreferenceList, PayloadError> {
        let mut list = NeighborhoodPreferenceList::new(capacity)?;
        for (index, r) in self.neighborhood_payload.iter().enumerate() {
            let bad = |reason| PayloadError::Record { index, reason };
            if r.user_id != ANONYMOUS_USER {
                return Err(bad("neighborhood record must be anonymous"));
            }
            let RecordValue::Tenths(_) = r.value else {
                return Err(bad("neighborhood record must carry an aggregated value"));
            };
            let item = ItemId::new(r.item_id.clone())?;
            if list.contains(&item) {
                return Err(bad("duplicate item"));
            }
            list.insert(item, NeighborhoodEntry::new(r.value.as_f64(), r.weight)?)?;
        }
        Ok(list)
    }
}

fn header_line(m: &ExchangeMessage) -> String {
    format!(
        "PF{},{},{},{},{},{},{}\n",
        m.version,
        m.sender,
        m.context.x,
        m.context.y,
        m.context.t,
        m.similarity_payload.len(),
        m.neighborhood_payload.len()
    )
}

fn is_token_byte(b: u8) -> bool {
    b.is_ascii_graphic() && b != b','
}

fn field_err(field: &'static str, reason: &'static str) -> EncodeError {
    EncodeError::Field { field, reason }
}

fn check_message(m: &ExchangeMessage) -> Result<(), EncodeError> {
    if m.version != PROTOCOL_VERSION {
        return Err(EncodeError::UnsupportedVersion(m.version));
    }
    let sender = m.sender.as_str().as_bytes();
    if sender.len() != USER_ID_LEN {
        return Err(field_err("sender", "must be exactly 36 bytes"));
    }
    if !sender.iter().all(|&b| is_token_byte(b)) {
        return Err(field_err("sender", "must be printable ASCII without commas"));
    }
    let c = m.context;
    if !(c.x.is_finite() && c.y.is_finite() && c.t.is_finite()) {
        return Err(field_err("context", "coordinates and time must be finite"));
    }
    if c.t < 0.0 {
        return Err(field_err("context.t", "must be non-negative"));
    }
    for r in m.similarity_payload.iter().chain(&m.neighborhood_payload) {
        check_record(r)?;
    }
    Ok(())
}

fn check_record(r: &RatingRecord) -> Result<(), EncodeError> {
    let user = r.user_id.as_bytes();
    if user.len() != USER_ID_LEN {
        return Err(field_err("user_id", "must be exactly 36 bytes"));
    }
    if !user.iter().all(|&b| is_token_byte(b)) {
        return Err(field_err("user_id", "must be printable ASCII without commas"));
    }
    let item = r.item_id.as_bytes();
    if item.is_empty() || item.len() > ITEM_ID_MAX {
        return Err(field_err("item_id", "must be 1..=40 bytes"));
    }
    if !item.iter().all(|&b| is_token_byte(b)) {
        return Err(field_err("item_id", "must be printable ASCII without commas"));
    }
    if !r.value.is_valid() {
        return Err(field_err("value", "outside 1..=5 stars"));
    }
    if r.weight == 0 {
        return Err(field_err("weight", "must be positive"));
    }
    Ok(())
}

/// Canonical encoding of `m`.
pub fn encode(m: &ExchangeMessage) -> Result<Vec<u8>, EncodeError> {
    check_message(m)?;
    let header = header_line(m);
    let mut out = String::with_capacity(header.len() + RECORD_LEN * m.record_count());
    out.push_str(&header);
    for r in m.similarity_payload.iter().chain(&m.neighborhood_payload) {
        let start = out.len();
        write!(out, "{},{},{},{}", r.user_id, r.item_id, r.value, r.weight).expect("writing to a String cannot fail");
        let used = out.len() - start;
        debug_assert!(used < RECORD_LEN);
        out.extend(std::iter::repeat_n(' ', RECORD_LEN - 1 - used));
        out.push('\n');
    }
    Ok(out.into_bytes())
}

/// Length of `encode(m)` for a valid message.
pub fn payload_size(m: &ExchangeMessage) -> usize {
    header_line(m).len() + RECORD_LEN * m.record_count()
}

pub fn decode(bytes: &[u8]) -> Result<ExchangeMessage, DecodeError> {
    use DecodeErrorKind::*;

    let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
        return Err(DecodeError::at(bytes.len(), Truncated));
    };
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|e| DecodeError::at(e.valid_up_to(), MalformedHeader("not UTF-8")))?;
    let fields: Vec<&str> = header.split(',').collect();

    let tag = fields[0];
    if tag != "PF1" {
        return Err(if tag.starts_with("PF") {
            DecodeError::at(0, BadVersion)
        } else {
            DecodeError::at(0, MalformedHeader("missing PF tag"))
        });
    }
    if fields.len() != 7 {
        return Err(DecodeError::at(0, MalformedHeader("expected 7 fields")));
    }
    let offset_of = |i: usize| fields[..i].iter().map(|f| f.len() + 1).sum::<usize>();

    let sender = fields[1];
    if sender.len() != USER_ID_LEN || !sender.bytes().all(is_token_byte) {
        return Err(DecodeError::at(offset_of(1), MalformedHeader("bad sender")));
    }
    let mut coords = [0.0f64; 3];
    for (slot, i) in coords.iter_mut().zip(2..5) {
        *slot = parse_canonical_f64(fields[i])
            .ok_or_else(|| DecodeError::at(offset_of(i), MalformedHeader("bad context number")))?;
    }
    if coords[2] < 0.0 {
        return Err(DecodeError::at(offset_of(4), MalformedHeader("negative timestamp")));
    }
    let n_sim = parse_canonical_u32(fields[5])
        .ok_or_else(|| DecodeError::at(offset_of(5), MalformedHeader("bad count")))? as usize;
    let n_nbhd = parse_canonical_u32(fields[6])
        .ok_or_else(|| DecodeError::at(offset_of(6), MalformedHeader("bad count")))? as usize;

    let body = nl + 1;
    let total = n_sim
        .checked_add(n_nbhd)
        .and_then(|n| n.checked_mul(RECORD_LEN))
        .and_then(|n| n.checked_add(body))
        .ok_or(DecodeError::at(offset_of(5), MalformedHeader("count overflow")))?;
    if bytes.len() < total {
        let complete = (bytes.len() - body) / RECORD_LEN;
        return Err(DecodeError::at(body + complete * RECORD_LEN, Truncated));
    }
    if bytes.len() > total {
        return Err(DecodeError::at(total, TrailingBytes));
    }

    let mut records = Vec::with_capacity(n_sim + n_nbhd);
    for (i, line) in bytes[body..].chunks_exact(RECORD_LEN).enumerate() {
        let offset = body + i * RECORD_LEN;
        records.push(decode_record(line).map_err(|why| DecodeError::at(offset, MalformedRecord(why)))?);
    }
    let neighborhood_payload = records.split_off(n_sim);
    Ok(ExchangeMessage {
        version: PROTOCOL_VERSION,
        sender: PeerId::new(sender),
        context: ContextStamp { x: coords[0], y: coords[1], t: coords[2] },
        similarity_payload: records,
        neighborhood_payload,
    })
}

fn decode_record(line: &[u8]) -> Result<RatingRecord, &'static str> {
    if line[RECORD_LEN - 1] != b'\n' {
        return Err("missing line terminator");
    }
    let body = &line[..RECORD_LEN - 1];
    let used = body.iter().rposition(|&b| b != b' ').map_or(0, |p| p + 1);
    if used == 0 {
        return Err("empty record");
    }
    let content = &body[..used];
    if !content.iter().all(|&b| b.is_ascii_graphic()) {
        return Err("non-printable byte in record");
    }
    // printable ASCII is valid UTF-8
    let content = std::str::from_utf8(content).map_err(|_| "not UTF-8")?;
    let fields: Vec<&str> = content.split(',').collect();
    let [user_id, item_id, value, weight] = fields[..] else {
        return Err("expected 4 fields");
    };
    if user_id.len() != USER_ID_LEN {
        return Err("bad user_id");
    }
    if item_id.is_empty() || item_id.len() > ITEM_ID_MAX {
        return Err("bad item_id");
    }
    let value = parse_value(value).ok_or("bad value")?;
    let weight = parse_canonical_u32(weight).filter(|&w| w > 0).ok_or("bad weight")?;
    Ok(RatingRecord { user_id: user_id.to_string(), item_id: item_id.to_string(), value, weight })
}

fn parse_value(s: &str) -> Option<RecordValue> {
    let b = s.as_bytes();
    let digit = |c: u8| c.is_ascii_digit().then(|| c - b'0');
    let value = match b {
        [s] => RecordValue::Stars(digit(*s)?),
        [i, b'.', f] => RecordValue::Tenths(digit(*i)? as u16 * 10 + digit(*f)? as u16),
        _ => return None,
    };
    value.is_valid().then_some(value)
}

fn parse_canonical_u32(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: u32 = s.parse().ok()?;
    (v.to_string() == s).then_some(v)
}

fn parse_canonical_f64(s: &str) -> Option<f64> {
    let v: f64 = s.parse().ok()?;
    (v.is_finite() && v.to_string() == s).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefs::{NeighborhoodEntry, NeighborhoodPreferenceList};
    use proptest::prelude::*;

    const SENDER: &str = "6f1c2a1e-93b4-4d0e-8c55-3d2b7f9a0c11";

    fn stamp() -> ContextStamp {
        ContextStamp { x: 12.5, y: 3.0, t: 61.0 }
    }

    fn nbhd_message(n: usize) -> ExchangeMessage {
        let mut list = NeighborhoodPreferenceList::new(n.max(1)).unwrap();
        for i in 0..n {
            list.insert(
                ItemId::new(format!("tt{:07}", i)).unwrap(),
                NeighborhoodEntry::new(1.0 + (i % 41) as f64 / 10.0, 1 + i as u32 % 7).unwrap(),
            )
            .unwrap();
        }
        ExchangeMessage::build(PeerId::new(SENDER), stamp(), &SimilarityData::default(), &list)
    }

    #[test]
    fn empty_message_is_header_only() {
        let m = nbhd_message(0);
        let bytes = encode(&m).unwrap();
        assert_eq!(std::str::from_utf8(&bytes).unwrap(), format!("PF1,{SENDER},12.5,3,61,0,0\n"));
        assert_eq!(payload_size(&m), bytes.len());
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn record_lines_are_fixed_width() {
        let mut sim = SimilarityData::default();
        sim.vector.insert(ItemId::new("tt0111161").unwrap(), 5);
        let m =
            ExchangeMessage::build(PeerId::new(SENDER), stamp(), &sim, &NeighborhoodPreferenceList::new(1).unwrap());
        let bytes = encode(&m).unwrap();
        let header_len = payload_size(&m) - RECORD_LEN;
        let line = &bytes[header_len..];
        assert_eq!(line.len(), 100);
        let text = std::str::from_utf8(line).unwrap();
        assert!(text.starts_with(&format!("{SENDER},tt0111161,5,1 ")));
        assert!(text.ends_with(" \n"));
    }

    #[test]
    fn thousand_records_are_100_kb_plus_header() {
        let m = nbhd_message(1000);
        let bytes = encode(&m).unwrap();
        let header = header_line(&m).len();
        assert_eq!(bytes.len(), 100_000 + header);
        assert_eq!(payload_size(&m), bytes.len());
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn size_is_linear_in_records() {
        for n in [0usize, 1, 7, 250] {
            let m = nbhd_message(n);
            assert_eq!(payload_size(&m), header_line(&m).len() + 100 * n);
        }
    }

    #[test]
    fn empty_input_is_truncated() {
        assert_eq!(decode(b"").unwrap_err(), DecodeError::at(0, DecodeErrorKind::Truncated));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let bytes = encode(&nbhd_message(2)).unwrap();
        let mut v2 = bytes.clone();
        v2[2] = b'2';
        assert_eq!(decode(&v2).unwrap_err().kind, DecodeErrorKind::BadVersion);

        let mut m = nbhd_message(0);
        m.version = 2;
        assert_eq!(encode(&m), Err(EncodeError::UnsupportedVersion(2)));
    }

    #[test]
    fn flipped_delimiter_reports_record_offset() {
        let m = nbhd_message(3);
        let mut bytes = encode(&m).unwrap();
        let header = header_line(&m).len();
        let second = header + RECORD_LEN;
        let comma = second + bytes[second..].iter().position(|&b| b == b',').unwrap();
        bytes[comma] = b';';
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.offset, second);
        assert!(matches!(err.kind, DecodeErrorKind::MalformedRecord(_)));
    }

    #[test]
    fn truncated_body_and_trailing_bytes() {
        let m = nbhd_message(2);
        let bytes = encode(&m).unwrap();
        let header = header_line(&m).len();
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err, DecodeError::at(header + RECORD_LEN, DecodeErrorKind::Truncated));
        let mut extra = bytes.clone();
        extra.push(b'x');
        assert_eq!(decode(&extra).unwrap_err().kind, DecodeErrorKind::TrailingBytes);
    }

    #[test]
    fn non_canonical_numbers_are_rejected() {
        let good = format!("PF1,{SENDER},1.5,2,3,0,0\n");
        assert!(decode(good.as_bytes()).is_ok());
        for bad in [
            format!("PF1,{SENDER},1.50,2,3,0,0\n"),
            format!("PF1,{SENDER},1.5,2,3,00,0\n"),
            format!("PF1,{SENDER},inf,2,3,0,0\n"),
            format!("PF1,{SENDER},1.5,2,-3,0,0\n"),
            format!("PF1,{SENDER},1.5,2,3,0\n"),
        ] {
            assert!(decode(bad.as_bytes()).is_err(), "{bad}");
        }
    }

    #[test]
    fn oversized_fields_fail_to_encode() {
        let mut m = nbhd_message(1);
        m.neighborhood_payload[0].item_id = "x".repeat(ITEM_ID_MAX + 1);
        assert!(matches!(encode(&m), Err(EncodeError::Field { field: "item_id", .. })));

        let mut m = nbhd_message(0);
        m.sender = PeerId::new("short");
        assert!(matches!(encode(&m), Err(EncodeError::Field { field: "sender", .. })));
    }

    #[test]
    fn widest_record_fits() {
        let mut m = nbhd_message(1);
        m.neighborhood_payload[0].item_id = "y".repeat(ITEM_ID_MAX);
        m.neighborhood_payload[0].weight = u32::MAX;
        let bytes = encode(&m).unwrap();
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn payload_views_round_trip() {
        let mut sim = SimilarityData::default();
        sim.vector.insert(ItemId::new("a").unwrap(), 4);
        sim.vector.insert(ItemId::new("b").unwrap(), 1);
        let mut list = NeighborhoodPreferenceList::new(4).unwrap();
        list.insert(ItemId::new("c").unwrap(), NeighborhoodEntry::new(3.7, 9).unwrap()).unwrap();
        let m = ExchangeMessage::build(PeerId::new(SENDER), stamp(), &sim, &list);
        let back = decode(&encode(&m).unwrap()).unwrap();
        assert_eq!(back.similarity_data().unwrap(), sim);
        assert_eq!(back.neighborhood(4).unwrap(), list);
        assert!(back.neighborhood(0).is_err());
    }

    fn arb_record(anonymous: bool) -> impl Strategy<Value = RatingRecord> {
        (
            "[a-z0-9]{1,40}",
            prop_oneof![(1u8..=5).prop_map(RecordValue::Stars), (10u16..=50).prop_map(RecordValue::Tenths)],
            1u32..,
        )
            .prop_map(move |(item_id, value, weight)| RatingRecord {
                user_id: if anonymous { ANONYMOUS_USER.into() } else { SENDER.into() },
                item_id,
                value,
                weight,
            })
    }

    fn arb_message() -> impl Strategy<Value = ExchangeMessage> {
        (
            -1e6f64..1e6,
            -1e6f64..1e6,
            0f64..1e7,
            prop::collection::vec(arb_record(false), 0..5),
            prop::collection::vec(arb_record(true), 0..5),
        )
            .prop_map(|(x, y, t, s, n)| ExchangeMessage {
                version: PROTOCOL_VERSION,
                sender: PeerId::new(SENDER),
                context: ContextStamp { x, y, t },
                similarity_payload: s,
                neighborhood_payload: n,
            })
    }

    proptest! {
        #[test]
        fn round_trip(m in arb_message()) {
            let bytes = encode(&m).unwrap();
            prop_assert_eq!(bytes.len(), payload_size(&m));
            prop_assert_eq!(decode(&bytes).unwrap(), m);
        }

        #[test]
        fn encode_is_injective(a in arb_message(), b in arb_message()) {
            if a != b {
                prop_assert_ne!(encode(&a).unwrap(), encode(&b).unwrap());
            }
        }

        #[test]
        fn decode_never_accepts_non_canonical(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
            if let Ok(m) = decode(&bytes) {
                prop_assert_eq!(encode(&m).unwrap(), bytes);
            }
        }

        #[test]
        fn mutated_encodings_decode_canonically(m in arb_message(), pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
            let mut bytes = encode(&m).unwrap();
            let i = pos.index(bytes.len());
            bytes[i] = byte;
            if let Ok(back) = decode(&bytes) {
                prop_assert_eq!(encode(&back).unwrap(), bytes);
            }
        }
    }
}
