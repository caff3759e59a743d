//! The ten-probe measurement plan and the records it produces.
//!
//! Per target: three ICMP echo requests, two TCP ACKs and one TCP SYN with
//! a non-zero acknowledgment number, three UDP datagrams with an all-zero
//! payload, and a single SNMPv3 discovery request. Transport probes are
//! sent round-robin (ICMP, TCP, UDP) by default so that shared IPID
//! counters show up as one monotone sequence across protocols.

mod live;
mod scan;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::net;
use crate::proto::{Protocol, ProtocolSet};

pub use live::{route_source, LiveTransport};
pub use scan::{
    encode_probe, execute_scan, Received, RecordingTransport, ScanError, ScanSummary, SendLogEntry,
    Transport, TransportError,
};

pub const PROBES_PER_TARGET: usize = 10;
pub const TRANSPORT_PROBES: usize = 9;
pub const SNMP_SEQ_INDEX: u8 = 9;
pub const DEFAULT_PORT: u16 = 33533;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{addr} is not a routable scan target ({reason})")]
    NotRoutable {
        addr: Ipv4Addr,
        reason: &'static str,
    },
    #[error("invalid probe configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbePlanConfig {
    pub tcp_udp_port: u16,
    pub icmp_payload_len: usize,
    pub udp_payload_len: usize,
    /// Probes per second toward one target.
    pub per_target_rate: f64,
    /// Packets per second overall.
    pub global_rate: f64,
    /// Seconds to wait for a reply after a probe is sent.
    pub reply_timeout: f64,
    pub interleave: bool,
    /// Minimum spacing between two probes to the same target, in seconds.
    pub probe_gap: f64,
    /// Targets probed concurrently.
    pub max_in_flight: usize,
}

impl Default for ProbePlanConfig {
    fn default() -> Self {
        ProbePlanConfig {
            tcp_udp_port: DEFAULT_PORT,
            icmp_payload_len: 56,
            udp_payload_len: 12,
            per_target_rate: 20.0,
            global_rate: 10_000.0,
            reply_timeout: 2.0,
            interleave: true,
            probe_gap: 0.05,
            max_in_flight: 256,
        }
    }
}

/// At most this many targets may be in flight; probe tags (ICMP sequence
/// numbers and source ports) are drawn from a 32768-value window.
pub const MAX_IN_FLIGHT: usize = 3000;

impl ProbePlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if self.tcp_udp_port == 0 {
            return bad("tcp_udp_port must be in 1..=65535");
        }
        if !(self.per_target_rate > 0.0 && self.per_target_rate.is_finite()) {
            return bad("per_target_rate must be positive");
        }
        if !(self.global_rate > 0.0 && self.global_rate.is_finite()) {
            return bad("global_rate must be positive");
        }
        if !(self.reply_timeout >= 0.0 && self.reply_timeout.is_finite()) {
            return bad("reply_timeout must be non-negative");
        }
        if !(self.probe_gap >= 0.0 && self.probe_gap.is_finite()) {
            return bad("probe_gap must be non-negative");
        }
        if self.icmp_payload_len > 1472 || self.udp_payload_len > 1472 {
            return bad("payload lengths must fit a 1500-byte MTU");
        }
        if self.max_in_flight == 0 || self.max_in_flight > MAX_IN_FLIGHT {
            return bad("max_in_flight must be in 1..=3000");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    EchoRequest,
    TcpAck,
    TcpSyn,
    UdpZero,
    SnmpGet,
}

impl ProbeKind {
    pub fn protocol(self) -> Protocol {
        match self {
            ProbeKind::EchoRequest => Protocol::Icmp,
            ProbeKind::TcpAck | ProbeKind::TcpSyn => Protocol::Tcp,
            ProbeKind::UdpZero => Protocol::Udp,
            ProbeKind::SnmpGet => Protocol::Snmpv3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub target: Ipv4Addr,
    pub protocol: Protocol,
    pub kind: ProbeKind,
    /// Position in send order; 0..=8 for transport probes, 9 for SNMPv3.
    pub seq_index: u8,
    pub sent_ipid: u16,
    /// Acknowledgment number carried by TCP probes (non-zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_ack: Option<u32>,
    /// Seconds since scan start.
    pub sent_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    EchoReply,
    TcpRst,
    IcmpPortUnreach,
    SnmpReport,
    None,
}

impl ReplyKind {
    pub fn expected_for(protocol: Protocol) -> ReplyKind {
        match protocol {
            Protocol::Icmp => ReplyKind::EchoReply,
            Protocol::Tcp => ReplyKind::TcpRst,
            Protocol::Udp => ReplyKind::IcmpPortUnreach,
            Protocol::Snmpv3 => ReplyKind::SnmpReport,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub probe: ProbeRecord,
    pub reply_kind: ReplyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_ipid: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_ttl: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_total_length: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_rst_seq: Option<u32>,
    /// Seconds between send and receipt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt: Option<f64>,
    /// Hex-encoded SNMPv3 report message (UDP payload).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snmp_report: Option<String>,
}

impl ResponseRecord {
    pub fn unanswered(probe: ProbeRecord) -> Self {
        ResponseRecord {
            probe,
            reply_kind: ReplyKind::None,
            reply_ipid: None,
            reply_ttl: None,
            reply_total_length: None,
            tcp_rst_seq: None,
            rtt: None,
            snmp_report: None,
        }
    }

    pub fn is_answered(&self) -> bool {
        self.reply_kind != ReplyKind::None
    }

    pub fn validate(&self) -> Result<(), String> {
        let seq = self.probe.seq_index;
        if self.probe.kind.protocol() != self.probe.protocol {
            return Err(format!(
                "record {seq}: kind {:?} does not match protocol",
                self.probe.kind
            ));
        }
        match self.reply_kind {
            ReplyKind::None => {
                if self.reply_ipid.is_some()
                    || self.reply_ttl.is_some()
                    || self.reply_total_length.is_some()
                    || self.tcp_rst_seq.is_some()
                    || self.rtt.is_some()
                    || self.snmp_report.is_some()
                {
                    return Err(format!(
                        "record {seq}: unanswered probe carries reply fields"
                    ));
                }
            }
            kind => {
                if self.reply_ipid.is_none()
                    || self.reply_ttl.is_none()
                    || self.reply_total_length.is_none()
                {
                    return Err(format!("record {seq}: reply without ipid/ttl/length"));
                }
                if self.reply_ttl == Some(0) {
                    return Err(format!("record {seq}: reply ttl 0"));
                }
                if kind == ReplyKind::TcpRst && self.tcp_rst_seq.is_none() {
                    return Err(format!("record {seq}: TCP RST without sequence number"));
                }
                if kind != ReplyKind::TcpRst && self.tcp_rst_seq.is_some() {
                    return Err(format!("record {seq}: sequence number on non-RST reply"));
                }
                if kind == ReplyKind::SnmpReport && self.snmp_report.is_none() {
                    return Err(format!("record {seq}: SNMP report without payload"));
                }
            }
        }
        Ok(())
    }
}

/// Every reply collected for one target, in send order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSet {
    pub target: Ipv4Addr,
    pub records: Vec<ResponseRecord>,
    pub responsive: ProtocolSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResponseSet {
    /// Assembles a set, deriving which protocols count as responsive.
    pub fn new(target: Ipv4Addr, mut records: Vec<ResponseRecord>) -> Self {
        records.sort_by_key(|r| r.probe.seq_index);
        let responsive = responsive_protocols(&records);
        ResponseSet {
            target,
            records,
            responsive,
            error: None,
        }
    }

    pub fn records_for(&self, protocol: Protocol) -> impl Iterator<Item = &ResponseRecord> {
        self.records
            .iter()
            .filter(move |r| r.probe.protocol == protocol)
    }

    pub fn snmp_record(&self) -> Option<&ResponseRecord> {
        self.records_for(Protocol::Snmpv3).next()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.records.len() != PROBES_PER_TARGET {
            return Err(format!(
                "{}: expected {} records, found {}",
                self.target,
                PROBES_PER_TARGET,
                self.records.len()
            ));
        }
        for (i, r) in self.records.iter().enumerate() {
            if usize::from(r.probe.seq_index) != i {
                return Err(format!("{}: records out of send order", self.target));
            }
            if r.probe.target != self.target {
                return Err(format!(
                    "{}: record {i} targets {}",
                    self.target, r.probe.target
                ));
            }
            r.validate().map_err(|e| format!("{}: {e}", self.target))?;
        }
        for p in Protocol::TRANSPORT {
            if self.records_for(p).count() != 3 {
                return Err(format!("{}: expected 3 {p} probes", self.target));
            }
        }
        if self.snmp_record().is_none() {
            return Err(format!("{}: missing SNMPv3 probe", self.target));
        }
        if responsive_protocols(&self.records) != self.responsive {
            return Err(format!(
                "{}: responsive set inconsistent with records",
                self.target
            ));
        }
        Ok(())
    }
}

/// A protocol is responsive only when all three of its probes drew the
/// expected reply kind; partial answers count as unresponsive.
pub fn responsive_protocols(records: &[ResponseRecord]) -> ProtocolSet {
    let mut set = ProtocolSet::EMPTY;
    for p in Protocol::TRANSPORT {
        let expected = ReplyKind::expected_for(p);
        let mut answered = 0;
        let mut total = 0;
        for r in records.iter().filter(|r| r.probe.protocol == p) {
            total += 1;
            if r.reply_kind == expected {
                answered += 1;
            }
        }
        if total == 3 && answered == 3 {
            set.insert(p);
        }
    }
    set
}

/// Builds the ten probe templates for `target` (send times left at zero).
pub fn build_probe_plan<R: Rng + ?Sized>(
    target: Ipv4Addr,
    cfg: &ProbePlanConfig,
    rng: &mut R,
) -> Result<Vec<ProbeRecord>, PlanError> {
    cfg.validate()?;
    if let Some(reason) = net::non_routable_reason(target) {
        return Err(PlanError::NotRoutable {
            addr: target,
            reason,
        });
    }

    let icmp = [ProbeKind::EchoRequest; 3];
    let tcp = [ProbeKind::TcpAck, ProbeKind::TcpAck, ProbeKind::TcpSyn];
    let udp = [ProbeKind::UdpZero; 3];
    let order: Vec<ProbeKind> = if cfg.interleave {
        (0..3).flat_map(|i| [icmp[i], tcp[i], udp[i]]).collect()
    } else {
        icmp.into_iter().chain(tcp).chain(udp).collect()
    };

    let mut used = HashSet::new();
    let mut fresh_ipid = |rng: &mut R| loop {
        let v: u16 = rng.gen();
        if v != 0 && used.insert(v) {
            return v;
        }
    };

    let mut plan = Vec::with_capacity(PROBES_PER_TARGET);
    for (i, kind) in order.into_iter().chain([ProbeKind::SnmpGet]).enumerate() {
        let tcp_ack = (kind.protocol() == Protocol::Tcp).then(|| rng.gen_range(1..=u32::MAX));
        plan.push(ProbeRecord {
            target,
            protocol: kind.protocol(),
            kind,
            seq_index: i as u8,
            sent_ipid: fresh_ipid(rng),
            tcp_ack,
            sent_at: 0.0,
        });
    }
    Ok(plan)
}

/// Reads a target list: one dotted-quad per line, `#` starts a comment.
pub fn parse_target_list<R: BufRead>(reader: R) -> Result<Vec<Ipv4Addr>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let addr = text
            .parse()
            .map_err(|_| format!("line {}: `{text}` is not an IPv4 address", i + 1))?;
        out.push(addr);
    }
    Ok(out)
}

pub fn write_response_sets<'a, W: Write>(
    out: &mut W,
    sets: impl IntoIterator<Item = &'a ResponseSet>,
) -> Result<(), JsonlError> {
    jsonl::write_all(out, sets)
}

/// Loads scan output, rejecting the whole file on any malformed or inconsistent record.
pub fn read_response_sets<R: BufRead>(reader: R) -> Result<Vec<ResponseSet>, JsonlError> {
    jsonl::read_all(reader, ResponseSet::validate)
}
