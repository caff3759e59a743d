//! The fifteen-feature fingerprint extracted from one target's replies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::probe::{ProbeKind, ReplyKind, ResponseRecord, ResponseSet};
use crate::proto::{Protocol, ProtocolSet};

pub const IPID_MODULUS: u32 = 65536;
pub const DEFAULT_STEP_THRESHOLD: u16 = 1300;
pub const FEATURE_COUNT: usize = 15;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "icmp_ipid_echo",
    "icmp_ipid",
    "tcp_ipid",
    "udp_ipid",
    "shared_all",
    "shared_tcp_icmp",
    "shared_udp_icmp",
    "shared_tcp_udp",
    "udp_ittl",
    "icmp_ittl",
    "tcp_ittl",
    "icmp_resp_size",
    "tcp_resp_size",
    "udp_resp_size",
    "tcp_syn_seq",
];

const I: u8 = 1;
const T: u8 = 2;
const U: u8 = 4;

/// Protocols each feature (in canonical order) depends on.
pub const FEATURE_DEPENDENCIES: [ProtocolSet; FEATURE_COUNT] = [
    ProtocolSet::from_bits(I),
    ProtocolSet::from_bits(I),
    ProtocolSet::from_bits(T),
    ProtocolSet::from_bits(U),
    ProtocolSet::from_bits(I | T | U),
    ProtocolSet::from_bits(I | T),
    ProtocolSet::from_bits(I | U),
    ProtocolSet::from_bits(T | U),
    ProtocolSet::from_bits(U),
    ProtocolSet::from_bits(I),
    ProtocolSet::from_bits(T),
    ProtocolSet::from_bits(I),
    ProtocolSet::from_bits(T),
    ProtocolSet::from_bits(U),
    ProtocolSet::from_bits(T),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("IPID classification needs exactly 3 values, got {0}")]
    SequenceLength(usize),
    #[error("step threshold must be in 1..65536, got {0}")]
    Threshold(u32),
    #[error("feature string has {0} fields, expected 15")]
    FieldCount(usize),
    #[error("feature {name}: invalid value {value:?}")]
    Value { name: &'static str, value: String },
    #[error("feature string is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IpidClass {
    Incremental,
    Random,
    Static,
    Zero,
    Duplicate,
    /// The reply reflects the request's IPID; only used for ICMP.
    Echo,
}

impl IpidClass {
    pub fn token(self) -> &'static str {
        match self {
            IpidClass::Incremental => "i",
            IpidClass::Random => "r",
            IpidClass::Static => "s",
            IpidClass::Zero => "z",
            IpidClass::Duplicate => "dup",
            IpidClass::Echo => "echo",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        Some(match s {
            "i" => IpidClass::Incremental,
            "r" => IpidClass::Random,
            "s" => IpidClass::Static,
            "z" => IpidClass::Zero,
            "dup" => IpidClass::Duplicate,
            "echo" => IpidClass::Echo,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpidConfig {
    pub step_threshold: u16,
}

impl Default for IpidConfig {
    fn default() -> Self {
        IpidConfig {
            step_threshold: DEFAULT_STEP_THRESHOLD,
        }
    }
}

impl IpidConfig {
    pub fn new(step_threshold: u32) -> Result<Self, FeatureError> {
        if step_threshold == 0 || step_threshold >= IPID_MODULUS {
            return Err(FeatureError::Threshold(step_threshold));
        }
        Ok(IpidConfig {
            step_threshold: step_threshold as u16,
        })
    }

    /// Probability that a single modular step between two independent
    /// uniform IPIDs falls within the threshold.
    pub fn random_step_within_threshold(&self) -> f64 {
        (f64::from(self.step_threshold) + 1.0) / f64::from(IPID_MODULUS)
    }

    /// Approximate chance that a random counter's triple passes as incremental.
    pub fn random_misclassification_probability(&self) -> f64 {
        self.random_step_within_threshold().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TtlClass {
    T32,
    T64,
    T128,
    T255,
}

impl TtlClass {
    pub const ALL: [TtlClass; 4] = [TtlClass::T32, TtlClass::T64, TtlClass::T128, TtlClass::T255];

    pub fn value(self) -> u8 {
        match self {
            TtlClass::T32 => 32,
            TtlClass::T64 => 64,
            TtlClass::T128 => 128,
            TtlClass::T255 => 255,
        }
    }

    pub fn from_value(v: u8) -> Option<Self> {
        TtlClass::ALL.into_iter().find(|c| c.value() == v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SynSeq {
    Zero,
    Nonzero,
}

/// One optional slot per feature; a slot is filled iff every protocol it
/// depends on answered all three probes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureVector {
    pub icmp_ipid_echo: Option<bool>,
    pub icmp_ipid: Option<IpidClass>,
    pub tcp_ipid: Option<IpidClass>,
    pub udp_ipid: Option<IpidClass>,
    pub shared_all: Option<bool>,
    pub shared_tcp_icmp: Option<bool>,
    pub shared_udp_icmp: Option<bool>,
    pub shared_tcp_udp: Option<bool>,
    pub udp_ittl: Option<TtlClass>,
    pub icmp_ittl: Option<TtlClass>,
    pub tcp_ittl: Option<TtlClass>,
    pub icmp_resp_size: Option<u16>,
    pub tcp_resp_size: Option<u16>,
    pub udp_resp_size: Option<u16>,
    pub tcp_syn_seq: Option<SynSeq>,
}

fn bool_token(b: bool) -> String {
    if b { "True" } else { "False" }.to_string()
}

impl FeatureVector {
    /// Canonical tokens in feature order, `None` for absent fields.
    pub fn tokens(&self) -> [Option<String>; FEATURE_COUNT] {
        [
            self.icmp_ipid_echo.map(bool_token),
            self.icmp_ipid.map(|c| c.token().to_string()),
            self.tcp_ipid.map(|c| c.token().to_string()),
            self.udp_ipid.map(|c| c.token().to_string()),
            self.shared_all.map(bool_token),
            self.shared_tcp_icmp.map(bool_token),
            self.shared_udp_icmp.map(bool_token),
            self.shared_tcp_udp.map(bool_token),
            self.udp_ittl.map(|t| t.value().to_string()),
            self.icmp_ittl.map(|t| t.value().to_string()),
            self.tcp_ittl.map(|t| t.value().to_string()),
            self.icmp_resp_size.map(|s| s.to_string()),
            self.tcp_resp_size.map(|s| s.to_string()),
            self.udp_resp_size.map(|s| s.to_string()),
            self.tcp_syn_seq
                .map(|s| if s == SynSeq::Zero { "0" } else { "1" }.to_string()),
        ]
    }

    fn presence(&self) -> [bool; FEATURE_COUNT] {
        self.tokens().map(|t| t.is_some())
    }

    /// Comma-separated canonical form; this string is the signature key.
    pub fn canonical(&self) -> String {
        self.tokens()
            .iter()
            .map(|t| t.as_deref().unwrap_or("-"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Protocols whose single-protocol features are present.
    pub fn responsive(&self) -> ProtocolSet {
        let mut set = ProtocolSet::EMPTY;
        if self.icmp_ipid_echo.is_some() {
            set.insert(Protocol::Icmp);
        }
        if self.tcp_ipid.is_some() {
            set.insert(Protocol::Tcp);
        }
        if self.udp_ipid.is_some() {
            set.insert(Protocol::Udp);
        }
        set
    }

    /// Keeps only the features computable from `subset`.
    pub fn project(&self, subset: ProtocolSet) -> FeatureVector {
        let keep = |i: usize| FEATURE_DEPENDENCIES[i].is_subset(subset);
        FeatureVector {
            icmp_ipid_echo: self.icmp_ipid_echo.filter(|_| keep(0)),
            icmp_ipid: self.icmp_ipid.filter(|_| keep(1)),
            tcp_ipid: self.tcp_ipid.filter(|_| keep(2)),
            udp_ipid: self.udp_ipid.filter(|_| keep(3)),
            shared_all: self.shared_all.filter(|_| keep(4)),
            shared_tcp_icmp: self.shared_tcp_icmp.filter(|_| keep(5)),
            shared_udp_icmp: self.shared_udp_icmp.filter(|_| keep(6)),
            shared_tcp_udp: self.shared_tcp_udp.filter(|_| keep(7)),
            udp_ittl: self.udp_ittl.filter(|_| keep(8)),
            icmp_ittl: self.icmp_ittl.filter(|_| keep(9)),
            tcp_ittl: self.tcp_ittl.filter(|_| keep(10)),
            icmp_resp_size: self.icmp_resp_size.filter(|_| keep(11)),
            tcp_resp_size: self.tcp_resp_size.filter(|_| keep(12)),
            udp_resp_size: self.udp_resp_size.filter(|_| keep(13)),
            tcp_syn_seq: self.tcp_syn_seq.filter(|_| keep(14)),
        }
    }

    /// Checks that presence matches a responsive set and ECHO is used correctly.
    pub fn check_consistency(&self) -> Result<(), FeatureError> {
        let responsive = self.responsive();
        for (i, present) in self.presence().into_iter().enumerate() {
            if present != FEATURE_DEPENDENCIES[i].is_subset(responsive) {
                return Err(FeatureError::Inconsistent(format!(
                    "{} presence does not match responsive protocols {responsive}",
                    FEATURE_NAMES[i]
                )));
            }
        }
        if self.tcp_ipid == Some(IpidClass::Echo) || self.udp_ipid == Some(IpidClass::Echo) {
            return Err(FeatureError::Inconsistent("echo class outside ICMP".into()));
        }
        if self.icmp_ipid.map(|c| c == IpidClass::Echo) != self.icmp_ipid_echo {
            return Err(FeatureError::Inconsistent(
                "icmp_ipid is echo iff icmp_ipid_echo is True".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn parse_field<T>(
    i: usize,
    tok: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>, FeatureError> {
    if tok == "-" {
        return Ok(None);
    }
    parse(tok).map(Some).ok_or_else(|| FeatureError::Value {
        name: FEATURE_NAMES[i],
        value: tok.to_string(),
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "True" => Some(true),
        "False" => Some(false),
        _ => None,
    }
}

fn parse_ttl(s: &str) -> Option<TtlClass> {
    s.parse().ok().and_then(TtlClass::from_value)
}

impl FromStr for FeatureVector {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t: Vec<&str> = s.split(',').map(str::trim).collect();
        if t.len() != FEATURE_COUNT {
            return Err(FeatureError::FieldCount(t.len()));
        }
        let v = FeatureVector {
            icmp_ipid_echo: parse_field(0, t[0], parse_bool)?,
            icmp_ipid: parse_field(1, t[1], IpidClass::from_token)?,
            tcp_ipid: parse_field(2, t[2], IpidClass::from_token)?,
            udp_ipid: parse_field(3, t[3], IpidClass::from_token)?,
            shared_all: parse_field(4, t[4], parse_bool)?,
            shared_tcp_icmp: parse_field(5, t[5], parse_bool)?,
            shared_udp_icmp: parse_field(6, t[6], parse_bool)?,
            shared_tcp_udp: parse_field(7, t[7], parse_bool)?,
            udp_ittl: parse_field(8, t[8], parse_ttl)?,
            icmp_ittl: parse_field(9, t[9], parse_ttl)?,
            tcp_ittl: parse_field(10, t[10], parse_ttl)?,
            icmp_resp_size: parse_field(11, t[11], |s| s.parse().ok())?,
            tcp_resp_size: parse_field(12, t[12], |s| s.parse().ok())?,
            udp_resp_size: parse_field(13, t[13], |s| s.parse().ok())?,
            tcp_syn_seq: parse_field(14, t[14], |s| match s {
                "0" => Some(SynSeq::Zero),
                "1" => Some(SynSeq::Nonzero),
                _ => None,
            })?,
        };
        v.check_consistency()?;
        Ok(v)
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn modular_step(a: u16, b: u16) -> u16 {
    b.wrapping_sub(a)
}

/// Classifies three IPIDs from one protocol, in send order.
///
/// Zero, static and duplicate are checked first, in that order; otherwise
/// the larger of the two modular steps decides incremental versus random.
pub fn classify_ipid_sequence(ipids: &[u16], cfg: &IpidConfig) -> Result<IpidClass, FeatureError> {
    let [a, b, c] = ipids else {
        return Err(FeatureError::SequenceLength(ipids.len()));
    };
    let (a, b, c) = (*a, *b, *c);
    if a == 0 && b == 0 && c == 0 {
        return Ok(IpidClass::Zero);
    }
    if a == b && b == c {
        return Ok(IpidClass::Static);
    }
    if a == b || b == c || a == c {
        return Ok(IpidClass::Duplicate);
    }
    let max_step = modular_step(a, b).max(modular_step(b, c));
    Ok(if max_step <= cfg.step_threshold {
        IpidClass::Incremental
    } else {
        IpidClass::Random
    })
}

/// Smallest initial TTL class at or above the observed TTL.
pub fn infer_ittl(observed_ttl: u8) -> TtlClass {
    TtlClass::ALL
        .into_iter()
        .find(|c| c.value() >= observed_ttl)
        .unwrap_or(TtlClass::T255)
}

fn answered(set: &ResponseSet, protocol: Protocol) -> Vec<&ResponseRecord> {
    let expected = ReplyKind::expected_for(protocol);
    set.records_for(protocol)
        .filter(|r| r.reply_kind == expected)
        .collect()
}

fn ipids(records: &[&ResponseRecord]) -> Vec<u16> {
    records.iter().map(|r| r.reply_ipid.unwrap_or(0)).collect()
}

fn icmp_echoes(records: &[&ResponseRecord]) -> bool {
    records
        .iter()
        .all(|r| r.reply_ipid == Some(r.probe.sent_ipid))
}

/// Per-protocol counter class, or `None` when the protocol is unresponsive.
fn counter_class(set: &ResponseSet, protocol: Protocol, cfg: &IpidConfig) -> Option<IpidClass> {
    if !set.responsive.contains(protocol) {
        return None;
    }
    let recs = answered(set, protocol);
    if protocol == Protocol::Icmp && icmp_echoes(&recs) {
        return Some(IpidClass::Echo);
    }
    classify_ipid_sequence(&ipids(&recs), cfg).ok()
}

/// True iff the named protocols' replies, merged in send order, form one
/// sequence whose every modular step is within the threshold. False when
/// any named protocol is unresponsive or its own counter is not incremental.
pub fn detect_shared_counter(set: &ResponseSet, protocols: ProtocolSet, cfg: &IpidConfig) -> bool {
    if protocols.len() < 2 {
        return false;
    }
    let mut merged: Vec<&ResponseRecord> = Vec::new();
    for p in protocols.iter() {
        if counter_class(set, p, cfg) != Some(IpidClass::Incremental) {
            return false;
        }
        merged.extend(answered(set, p));
    }
    merged.sort_by_key(|r| r.probe.seq_index);
    let seq = ipids(&merged);
    seq.windows(2)
        .all(|w| modular_step(w[0], w[1]) <= cfg.step_threshold)
}

pub fn extract_features(set: &ResponseSet, cfg: &IpidConfig) -> FeatureVector {
    let responsive = set.responsive;
    let icmp = answered(set, Protocol::Icmp);
    let tcp = answered(set, Protocol::Tcp);
    let udp = answered(set, Protocol::Udp);
    let first_ttl =
        |recs: &[&ResponseRecord]| recs.first().and_then(|r| r.reply_ttl).map(infer_ittl);
    let first_size = |recs: &[&ResponseRecord]| recs.first().and_then(|r| r.reply_total_length);
    let has = |bits: u8| ProtocolSet::from_bits(bits).is_subset(responsive);
    let shared =
        |bits: u8| has(bits).then(|| detect_shared_counter(set, ProtocolSet::from_bits(bits), cfg));

    let mut v = FeatureVector::default();
    if has(I) {
        v.icmp_ipid_echo = Some(icmp_echoes(&icmp));
        v.icmp_ipid = counter_class(set, Protocol::Icmp, cfg);
        v.icmp_ittl = first_ttl(&icmp);
        v.icmp_resp_size = first_size(&icmp);
    }
    if has(T) {
        v.tcp_ipid = counter_class(set, Protocol::Tcp, cfg);
        v.tcp_ittl = first_ttl(&tcp);
        v.tcp_resp_size = first_size(&tcp);
        v.tcp_syn_seq = tcp
            .iter()
            .find(|r| r.probe.kind == ProbeKind::TcpSyn)
            .and_then(|r| r.tcp_rst_seq)
            .map(|s| {
                if s == 0 {
                    SynSeq::Zero
                } else {
                    SynSeq::Nonzero
                }
            });
    }
    if has(U) {
        v.udp_ipid = counter_class(set, Protocol::Udp, cfg);
        v.udp_ittl = first_ttl(&udp);
        v.udp_resp_size = first_size(&udp);
    }
    v.shared_all = shared(I | T | U);
    v.shared_tcp_icmp = shared(I | T);
    v.shared_udp_icmp = shared(I | U);
    v.shared_tcp_udp = shared(T | U);
    v
}
