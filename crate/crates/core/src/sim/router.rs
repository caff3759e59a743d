//! A single simulated router answering raw probe packets.

use std::net::Ipv4Addr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::profile::{IpidMode, RstSeqRule, StackProfile, UdpQuote};
use crate::packet::{
    self, tcp_flags, Body, TcpSegment, ICMP_CODE_PORT_UNREACH, IPPROTO_ICMP, IPPROTO_TCP,
    IPPROTO_UDP,
};
use crate::probe::{encode_probe, ProbePlanConfig, ProbeRecord, ReplyKind, ResponseRecord};
use crate::proto::Protocol;
use crate::snmp::{self, EngineId};

/// Smallest forward step between consecutive random IPIDs. Keeping every
/// step above the default classification threshold means a random counter
/// never passes for an incremental one, so noiseless fleets classify exactly.
pub const SIM_RANDOM_MIN_STEP: u16 = 1301;

/// Source address used by [`SimRouter::respond`].
pub const SIM_PROBER_ADDR: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 1);

#[derive(Debug, Clone)]
struct Counter {
    value: u16,
    jitter: u16,
    last: Option<f64>,
    carry: f64,
}

#[derive(Debug, Clone)]
enum Generator {
    Counter(usize),
    Random {
        prev: Option<u16>,
        prev2: Option<u16>,
    },
    Static(u16),
    Zero,
    Duplicate {
        k: u32,
        a: u16,
    },
}

#[derive(Debug, Clone)]
pub struct SimRouter {
    pub address: Ipv4Addr,
    pub profile: Arc<StackProfile>,
    pub snmpv3_enabled: bool,
    pub engine_id: Option<EngineId>,
    pub hop_count: u8,
    counters: Vec<Counter>,
    generators: [Generator; 3],
    rng: ChaCha8Rng,
}

fn slot(p: Protocol) -> usize {
    match p {
        Protocol::Icmp => 0,
        Protocol::Tcp => 1,
        Protocol::Udp | Protocol::Snmpv3 => 2,
    }
}

impl SimRouter {
    /// `counter_offset` shifts every incremental counter start, keeping the
    /// profile's relative spacing between separate counters.
    pub fn new(
        address: Ipv4Addr,
        profile: Arc<StackProfile>,
        engine_id: Option<EngineId>,
        hop_count: u8,
        counter_offset: u16,
        rng: ChaCha8Rng,
    ) -> Self {
        let mut counters: Vec<Counter> = Vec::new();
        let mut groups: Vec<(String, usize)> = Vec::new();
        let generators = Protocol::TRANSPORT.map(|p| {
            let b = profile.behavior(p);
            match &b.ipid {
                IpidMode::Incremental { start, step_jitter } => {
                    let existing = b
                        .counter
                        .as_ref()
                        .and_then(|g| groups.iter().find(|(n, _)| n == g).map(|(_, i)| *i));
                    let idx = existing.unwrap_or_else(|| {
                        counters.push(Counter {
                            value: start.wrapping_add(counter_offset),
                            jitter: *step_jitter,
                            last: None,
                            carry: 0.0,
                        });
                        if let Some(g) = &b.counter {
                            groups.push((g.clone(), counters.len() - 1));
                        }
                        counters.len() - 1
                    });
                    Generator::Counter(idx)
                }
                IpidMode::Random => Generator::Random {
                    prev: None,
                    prev2: None,
                },
                IpidMode::Static { value } => Generator::Static(*value),
                IpidMode::Zero => Generator::Zero,
                IpidMode::DuplicatePattern => Generator::Duplicate { k: 0, a: 0 },
            }
        });
        SimRouter {
            address,
            snmpv3_enabled: engine_id.is_some(),
            engine_id,
            profile,
            hop_count,
            counters,
            generators,
            rng,
        }
    }

    fn next_ipid(&mut self, p: Protocol, now: f64) -> u16 {
        let background = self.profile.background_rate;
        let rng = &mut self.rng;
        match &mut self.generators[slot(p)] {
            Generator::Counter(i) => {
                let c = &mut self.counters[*i];
                if let Some(last) = c.last {
                    c.carry += background * (now - last).max(0.0);
                }
                let extra = c.carry.floor();
                c.carry -= extra;
                c.last = Some(now);
                let jitter = if c.jitter > 0 {
                    rng.gen_range(0..=c.jitter)
                } else {
                    0
                };
                let step = 1u32 + u32::from(jitter) + (extra as u32);
                c.value = c.value.wrapping_add(step as u16);
                c.value
            }
            Generator::Random { prev, prev2 } => loop {
                let x: u16 = rng.gen();
                let far = prev.is_none_or(|p| x.wrapping_sub(p) >= SIM_RANDOM_MIN_STEP);
                if far && Some(x) != *prev2 {
                    *prev2 = *prev;
                    *prev = Some(x);
                    break x;
                }
            },
            Generator::Static(v) => *v,
            Generator::Zero => 0,
            Generator::Duplicate { k, a } => {
                let phase = *k % 3;
                *k += 1;
                match phase {
                    0 => {
                        *a = rng.gen_range(1..=u16::MAX);
                        *a
                    }
                    1 => *a,
                    _ => loop {
                        let x = rng.gen_range(1..=u16::MAX);
                        if x != *a {
                            break x;
                        }
                    },
                }
            }
        }
    }

    fn ttl(&self, p: Protocol) -> u8 {
        self.profile
            .behavior(p)
            .ittl
            .saturating_sub(self.hop_count)
            .max(1)
    }

    fn reply(
        &mut self,
        p: Protocol,
        dst: Ipv4Addr,
        ipid: Option<u16>,
        ip_proto: u8,
        payload: &[u8],
        now: f64,
    ) -> Vec<u8> {
        let ident = ipid.unwrap_or_else(|| self.next_ipid(p, now));
        packet::build_ipv4(self.address, dst, ident, self.ttl(p), ip_proto, payload)
    }

    /// Answers one raw IPv4 probe, or `None` when the stack stays silent.
    pub fn handle_packet(&mut self, bytes: &[u8], now: f64) -> Option<Vec<u8>> {
        let pkt = packet::parse(bytes).ok()?;
        if pkt.ip.dst != self.address {
            return None;
        }
        let ihl = usize::from(bytes[0] & 0x0f) * 4;
        let src = pkt.ip.src;
        match pkt.body {
            Body::EchoRequest { ident, seq, .. } if self.profile.icmp.respond => {
                let data = &bytes[ihl + packet::ICMP_HEADER_LEN..];
                let echo = self.profile.icmp_echo_ipid.then_some(pkt.ip.ident);
                let icmp = packet::icmp_echo_reply(ident, seq, data);
                Some(self.reply(Protocol::Icmp, src, echo, IPPROTO_ICMP, &icmp, now))
            }
            Body::Tcp(seg) if self.profile.tcp.respond && seg.flags & tcp_flags::RST == 0 => {
                let rst = if seg.flags & tcp_flags::ACK != 0 {
                    TcpSegment {
                        src_port: seg.dst_port,
                        dst_port: seg.src_port,
                        seq: seg.ack,
                        ack: 0,
                        flags: tcp_flags::RST,
                        window: 0,
                    }
                } else {
                    let seq = match self.profile.rst_seq_rule {
                        RstSeqRule::RfcZero => 0,
                        RstSeqRule::Nonzero => seg.ack.max(1),
                    };
                    let syn_len = u32::from(seg.flags & tcp_flags::SYN != 0);
                    TcpSegment {
                        src_port: seg.dst_port,
                        dst_port: seg.src_port,
                        seq,
                        ack: seg.seq.wrapping_add(syn_len),
                        flags: tcp_flags::RST | tcp_flags::ACK,
                        window: 0,
                    }
                };
                let tcp = packet::build_tcp(self.address, src, &rst);
                Some(self.reply(Protocol::Tcp, src, None, IPPROTO_TCP, &tcp, now))
            }
            Body::Udp {
                src_port,
                dst_port,
                payload,
            } if dst_port == snmp::SNMP_PORT => {
                let engine = self.engine_id.clone()?;
                let msg = snmp::decode_message(&payload).ok()?;
                if !msg.is_get_request() {
                    return None;
                }
                let msg_id = i32::try_from(msg.msg_id).ok()?;
                let request_id = i32::try_from(msg.request_id).ok()?;
                let report = snmp::encode_report(msg_id, request_id, &engine, 1, 86400, 1);
                let udp = packet::build_udp(self.address, src, snmp::SNMP_PORT, src_port, &report);
                Some(self.reply(Protocol::Udp, src, None, IPPROTO_UDP, &udp, now))
            }
            Body::Udp { .. } if self.profile.udp.respond => {
                let n = match self.profile.udp_quote {
                    UdpQuote::Minimal => ihl + packet::UDP_HEADER_LEN,
                    UdpQuote::Full => bytes.len(),
                    UdpQuote::Extended(n) => usize::from(n),
                };
                let mut quoted = bytes[..n.min(bytes.len())].to_vec();
                quoted.resize(n, 0);
                let icmp = packet::icmp_unreachable(ICMP_CODE_PORT_UNREACH, &quoted);
                Some(self.reply(Protocol::Udp, src, None, IPPROTO_ICMP, &icmp, now))
            }
            _ => None,
        }
    }

    /// Probe-level view of [`handle_packet`](Self::handle_packet): encodes
    /// the probe, lets the stack answer, and records what came back.
    pub fn respond(
        &mut self,
        probe: &ProbeRecord,
        cfg: &ProbePlanConfig,
        now: f64,
    ) -> ResponseRecord {
        let tag = 40000 + u16::from(probe.seq_index);
        let bytes = encode_probe(probe, SIM_PROBER_ADDR, cfg, 0x5151, tag, 0x1000_0000);
        let Some(reply) = self.handle_packet(&bytes, now) else {
            return ResponseRecord::unanswered(probe.clone());
        };
        let pkt = packet::parse(&reply).expect("simulator emits valid packets");
        let (kind, rst_seq, report) = match &pkt.body {
            Body::EchoReply { .. } => (ReplyKind::EchoReply, None, None),
            Body::Tcp(seg) => (ReplyKind::TcpRst, Some(seg.seq), None),
            Body::Unreachable { .. } => (ReplyKind::IcmpPortUnreach, None, None),
            Body::Udp { payload, .. } => (ReplyKind::SnmpReport, None, Some(hex::encode(payload))),
            _ => return ResponseRecord::unanswered(probe.clone()),
        };
        ResponseRecord {
            probe: probe.clone(),
            reply_kind: kind,
            reply_ipid: Some(pkt.ip.ident),
            reply_ttl: Some(pkt.ip.ttl),
            reply_total_length: Some(pkt.ip.total_length),
            tcp_rst_seq: rst_seq,
            rtt: Some(0.0),
            snmp_report: report,
        }
    }
}
