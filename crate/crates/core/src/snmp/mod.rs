//! SNMPv3 discovery probe, engine-ID extraction and vendor labeling.
//!
//! An unauthenticated `noAuthNoPriv` get-request with the reportable flag
//! set and empty USM parameters makes a compliant agent answer with a
//! report PDU whose security parameters carry its authoritative engine ID.
//! When the engine ID uses the RFC 3411 layout (first bit set), its first
//! four octets are the vendor's IANA private enterprise number.

pub mod ber;
mod label;
mod vendor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use label::{label_response_set, read_labels, write_labels, LabelRecord};
pub use vendor::{
    vendor_from_engine_id, vendor_from_pen, LabelSource, VendorDictionary, VendorLabel,
    OTHER_VENDOR,
};

pub const SNMP_PORT: u16 = 161;

const MSG_MAX_SIZE: i64 = 65507;
const USM_SECURITY_MODEL: i64 = 3;
const FLAG_REPORTABLE: u8 = 0x04;
const PDU_GET_REQUEST: u8 = 0xa0;
const PDU_REPORT: u8 = 0xa8;
/// usmStatsUnknownEngineIDs.0
const USM_STATS_UNKNOWN_ENGINE_IDS: [u32; 11] = [1, 3, 6, 1, 6, 3, 15, 1, 1, 4, 0];

pub const ENGINE_ID_MIN_LEN: usize = 5;
pub const ENGINE_ID_MAX_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnmpError {
    #[error("malformed BER at byte {offset}: {reason}")]
    Ber { offset: usize, reason: String },
    #[error("unsupported SNMP version {0}")]
    Version(i64),
    #[error("engine ID length {0} outside 5..=32 octets")]
    EngineIdLength(usize),
    #[error("invalid engine ID text: {0}")]
    EngineIdText(String),
}

/// An SNMP engine identifier (RFC 3411 `SnmpEngineID`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EngineId(Vec<u8>);

impl EngineId {
    pub fn new(raw: Vec<u8>) -> Result<Self, SnmpError> {
        if !(ENGINE_ID_MIN_LEN..=ENGINE_ID_MAX_LEN).contains(&raw.len()) {
            return Err(SnmpError::EngineIdLength(raw.len()));
        }
        Ok(EngineId(raw))
    }

    /// Builds an RFC 3411 engine ID: enterprise number with the high bit set,
    /// followed by a format octet and its data.
    pub fn from_enterprise(pen: u32, format: u8, data: &[u8]) -> Result<Self, SnmpError> {
        let mut raw = (pen | 0x8000_0000).to_be_bytes().to_vec();
        raw.push(format);
        raw.extend_from_slice(data);
        EngineId::new(raw)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn format_flag(&self) -> bool {
        self.0[0] & 0x80 != 0
    }

    pub fn enterprise_number(&self) -> Option<u32> {
        self.format_flag()
            .then(|| u32::from_be_bytes([self.0[0] & 0x7f, self.0[1], self.0[2], self.0[3]]))
    }

    pub fn format_octet(&self) -> Option<u8> {
        self.format_flag().then_some(self.0[4])
    }
}

impl fmt::Display for EngineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|b| format!("{b:02x}")).collect();
        f.write_str(&parts.join(":"))
    }
}

impl FromStr for EngineId {
    type Err = SnmpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| *c != ':').collect();
        let raw = hex::decode(&compact).map_err(|e| SnmpError::EngineIdText(e.to_string()))?;
        EngineId::new(raw)
    }
}

impl Serialize for EngineId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EngineId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// The fields of an SNMPv3 message this crate cares about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct V3Message {
    pub version: i64,
    pub msg_id: i64,
    pub flags: u8,
    pub security_model: i64,
    pub engine_id: Vec<u8>,
    pub engine_boots: i64,
    pub engine_time: i64,
    pub pdu_tag: u8,
    pub request_id: i64,
}

impl V3Message {
    pub fn is_report(&self) -> bool {
        self.pdu_tag == PDU_REPORT
    }

    pub fn is_get_request(&self) -> bool {
        self.pdu_tag == PDU_GET_REQUEST
    }
}

fn usm_parameters(engine_id: &[u8], boots: i64, time: i64) -> Vec<u8> {
    ber::sequence(
        ber::SEQUENCE,
        &[
            ber::octets(engine_id),
            ber::integer(boots),
            ber::integer(time),
            ber::octets(b""),
            ber::octets(b""),
            ber::octets(b""),
        ],
    )
}

fn message(msg_id: i32, flags: u8, usm: Vec<u8>, context_engine: &[u8], pdu: Vec<u8>) -> Vec<u8> {
    ber::sequence(
        ber::SEQUENCE,
        &[
            ber::integer(3),
            ber::sequence(
                ber::SEQUENCE,
                &[
                    ber::integer(i64::from(msg_id)),
                    ber::integer(MSG_MAX_SIZE),
                    ber::octets(&[flags]),
                    ber::integer(USM_SECURITY_MODEL),
                ],
            ),
            ber::octets(&usm),
            ber::sequence(
                ber::SEQUENCE,
                &[ber::octets(context_engine), ber::octets(b""), pdu],
            ),
        ],
    )
}

/// Encodes the discovery get-request. `msg_id` doubles as the PDU request-id.
pub fn encode_snmpv3_probe(msg_id: i32) -> Vec<u8> {
    let pdu = ber::sequence(
        PDU_GET_REQUEST,
        &[
            ber::integer(i64::from(msg_id)),
            ber::integer(0),
            ber::integer(0),
            ber::sequence(ber::SEQUENCE, &[]),
        ],
    );
    message(msg_id, FLAG_REPORTABLE, usm_parameters(b"", 0, 0), b"", pdu)
}

/// Encodes the report an agent sends back to a discovery probe.
pub fn encode_report(
    msg_id: i32,
    request_id: i32,
    engine_id: &EngineId,
    boots: i64,
    time: i64,
    unknown_engine_ids: u32,
) -> Vec<u8> {
    let varbind = ber::sequence(
        ber::SEQUENCE,
        &[
            ber::oid(&USM_STATS_UNKNOWN_ENGINE_IDS),
            ber::unsigned(ber::COUNTER32, unknown_engine_ids),
        ],
    );
    let pdu = ber::sequence(
        PDU_REPORT,
        &[
            ber::integer(i64::from(request_id)),
            ber::integer(0),
            ber::integer(0),
            ber::sequence(ber::SEQUENCE, &[varbind]),
        ],
    );
    message(
        msg_id,
        0,
        usm_parameters(engine_id.as_bytes(), boots, time),
        engine_id.as_bytes(),
        pdu,
    )
}

/// Decodes an SNMPv3 message with USM security parameters.
pub fn decode_message(bytes: &[u8]) -> Result<V3Message, SnmpError> {
    let mut top = ber::Reader::new(bytes);
    let mut msg = top.expect(ber::SEQUENCE)?;
    let version = msg.integer()?;
    if version != 3 {
        return Err(SnmpError::Version(version));
    }
    let mut global = msg.expect(ber::SEQUENCE)?;
    let msg_id = global.integer()?;
    let _max_size = global.integer()?;
    let flags_at = global.offset();
    let flags = global.octet_string()?;
    let flags = *flags.first().ok_or(SnmpError::Ber {
        offset: flags_at,
        reason: "empty msgFlags".into(),
    })?;
    let security_model = global.integer()?;

    let usm_at = msg.offset();
    let usm_bytes = msg.octet_string()?;
    let mut usm_outer = ber::Reader::new(usm_bytes);
    // Rebase so errors inside the security parameters report absolute offsets.
    let usm_base = usm_at + header_len(&bytes[usm_at..]);
    let mut usm = usm_outer
        .expect(ber::SEQUENCE)
        .map_err(|e| rebase(e, usm_base))?;
    let engine_id = usm
        .octet_string()
        .map_err(|e| rebase(e, usm_base))?
        .to_vec();
    let engine_boots = usm.integer().map_err(|e| rebase(e, usm_base))?;
    let engine_time = usm.integer().map_err(|e| rebase(e, usm_base))?;

    let mut scoped = msg.expect(ber::SEQUENCE)?;
    let _context_engine = scoped.octet_string()?;
    let _context_name = scoped.octet_string()?;
    let pdu_at = scoped.offset();
    let (pdu_tag, mut pdu) = scoped.any()?;
    if pdu_tag & 0xe0 != 0xa0 {
        return Err(SnmpError::Ber {
            offset: pdu_at,
            reason: format!("tag 0x{pdu_tag:02x} is not a PDU"),
        });
    }
    let request_id = pdu.integer()?;

    Ok(V3Message {
        version,
        msg_id,
        flags,
        security_model,
        engine_id,
        engine_boots,
        engine_time,
        pdu_tag,
        request_id,
    })
}

fn header_len(tlv: &[u8]) -> usize {
    match tlv.get(1) {
        Some(l) if l & 0x80 != 0 => 2 + usize::from(l & 0x7f),
        _ => 2,
    }
}

fn rebase(err: SnmpError, base: usize) -> SnmpError {
    match err {
        SnmpError::Ber { offset, reason } => SnmpError::Ber {
            offset: offset + base,
            reason,
        },
        other => other,
    }
}

/// Extracts and validates `msgAuthoritativeEngineID` from a report.
pub fn parse_engine_id(report: &[u8]) -> Result<EngineId, SnmpError> {
    EngineId::new(decode_message(report)?.engine_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn probe_is_deterministic_for_fixed_msg_id() {
        let a = encode_snmpv3_probe(0x1000);
        let b = encode_snmpv3_probe(0x1000);
        assert_eq!(a, b);
        assert_ne!(a, encode_snmpv3_probe(0x1001));
        let msg = decode_message(&a).unwrap();
        assert_eq!(msg.version, 3);
        assert_eq!(msg.msg_id, 0x1000);
        assert_eq!(msg.request_id, 0x1000);
        assert_eq!(msg.flags, FLAG_REPORTABLE);
        assert_eq!(msg.security_model, 3);
        assert!(msg.engine_id.is_empty());
        assert!(msg.is_get_request());
    }

    #[test]
    fn probe_wire_bytes() {
        // Known-good discovery message layout with msgID 0x1000.
        let expected = hex::decode(concat!(
            "303a020103",
            "300f",
            "02021000",
            "020300ffe3",
            "040104",
            "020103",
            "0410",
            "300e",
            "0400",
            "020100",
            "020100",
            "0400",
            "0400",
            "0400",
            "3012",
            "0400",
            "0400",
            "a00c",
            "02021000",
            "020100",
            "020100",
            "3000",
        ))
        .unwrap();
        assert_eq!(encode_snmpv3_probe(0x1000), expected);
    }

    #[test]
    fn enterprise_number_layout() {
        let cisco: EngineId = "80:00:00:09:03:00:11:22:33:44:55".parse().unwrap();
        assert!(cisco.format_flag());
        assert_eq!(cisco.enterprise_number(), Some(9));
        assert_eq!(cisco.format_octet(), Some(3));

        let juniper: EngineId = "80:00:0a:4c:01:c0:a8:01:01".parse().unwrap();
        assert_eq!(juniper.enterprise_number(), Some(2636));

        let legacy: EngineId = "00:00:00:09:01:02:03".parse().unwrap();
        assert!(!legacy.format_flag());
        assert_eq!(legacy.enterprise_number(), None);
    }

    #[test]
    fn short_engine_id_rejected() {
        assert_eq!(
            "80:00:09".parse::<EngineId>(),
            Err(SnmpError::EngineIdLength(3))
        );
        let report = encode_report_raw(&[0x80, 0x00, 0x09]);
        assert_eq!(parse_engine_id(&report), Err(SnmpError::EngineIdLength(3)));
        assert_eq!(
            EngineId::new(vec![0x80; 33]),
            Err(SnmpError::EngineIdLength(33))
        );
    }

    fn encode_report_raw(engine: &[u8]) -> Vec<u8> {
        let pdu = ber::sequence(
            PDU_REPORT,
            &[
                ber::integer(1),
                ber::integer(0),
                ber::integer(0),
                ber::sequence(ber::SEQUENCE, &[]),
            ],
        );
        message(1, 0, usm_parameters(engine, 0, 0), engine, pdu)
    }

    #[test]
    fn malformed_report_reports_offset() {
        let id = EngineId::from_enterprise(2636, 1, &[1, 2, 3, 4]).unwrap();
        let report = encode_report(5, 5, &id, 1, 2, 3);
        let truncated = &report[..report.len() - 6];
        match parse_engine_id(truncated) {
            Err(SnmpError::Ber { offset, .. }) => assert!(offset < report.len()),
            other => panic!("expected BER error, got {other:?}"),
        }
        assert!(matches!(
            parse_engine_id(&[]),
            Err(SnmpError::Ber { offset: 0, .. })
        ));

        // Corrupt the USM inner sequence tag; the reported offset points into it.
        let mut bad = report.clone();
        let pos = find_usm_sequence(&bad);
        bad[pos] = 0x31;
        match parse_engine_id(&bad) {
            Err(SnmpError::Ber { offset, .. }) => assert_eq!(offset, pos),
            other => panic!("expected BER error, got {other:?}"),
        }
    }

    fn find_usm_sequence(report: &[u8]) -> usize {
        // version(3) + global sequence, then the USM octet string header.
        let mut r = ber::Reader::new(report);
        let mut msg = r.expect(ber::SEQUENCE).unwrap();
        msg.integer().unwrap();
        msg.expect(ber::SEQUENCE).unwrap();
        let at = msg.offset();
        at + header_len(&report[at..])
    }

    #[test]
    fn rejects_other_versions() {
        let v2 = ber::sequence(ber::SEQUENCE, &[ber::integer(1), ber::octets(b"public")]);
        assert_eq!(decode_message(&v2), Err(SnmpError::Version(1)));
    }

    proptest! {
        #[test]
        fn report_roundtrip(raw in proptest::collection::vec(any::<u8>(), ENGINE_ID_MIN_LEN..=ENGINE_ID_MAX_LEN),
                            msg_id in 0i32.., boots in 0i64..1_000_000, time in 0i64..1_000_000) {
            let id = EngineId::new(raw).unwrap();
            let report = encode_report(msg_id, msg_id, &id, boots, time, 7);
            prop_assert_eq!(parse_engine_id(&report).unwrap(), id.clone());
            let msg = decode_message(&report).unwrap();
            prop_assert!(msg.is_report());
            prop_assert_eq!(msg.msg_id, i64::from(msg_id));
            prop_assert_eq!(msg.engine_boots, boots);
            let text = id.to_string();
            prop_assert_eq!(text.parse::<EngineId>().unwrap(), id);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_message(&bytes);
        }
    }
}
