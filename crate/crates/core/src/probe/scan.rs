//! Event-driven scan loop over a pluggable packet transport.
//!
//! All probes of one target go out in plan order, spaced by the per-target
//! gap; different targets interleave under the global rate cap. The
//! transport owns the clock, so the simulator can run the same schedule in
//! virtual time.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{
    build_probe_plan, PlanError, ProbeKind, ProbePlanConfig, ProbeRecord, ReplyKind,
    ResponseRecord, ResponseSet,
};
use crate::packet::{
    self, tcp_flags, Body, TcpSegment, ICMP_CODE_PORT_UNREACH, IPPROTO_ICMP, IPPROTO_TCP,
    IPPROTO_UDP,
};
use crate::proto::Protocol;
use crate::snmp;

const SEND_TTL: u8 = 64;
const TAG_BASE: u16 = 32768;
const TAG_SPACE: u32 = 32768;

/// A packet handed back by the transport with its arrival time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Received {
    pub at: Duration,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// A single send failed; the scan records it against the target and continues.
    #[error("send failed: {0}")]
    Send(String),
    /// The transport is unusable; the scan stops.
    #[error("transport failure: {0}")]
    Fatal(String),
    #[error("missing raw-packet capability: {0}")]
    Capability(String),
}

/// Raw IPv4 packet I/O plus the clock the scan is scheduled against.
pub trait Transport {
    /// Source address placed in outgoing packets.
    fn local_addr(&self) -> Ipv4Addr;
    /// Time since the transport was opened.
    fn now(&self) -> Duration;
    /// Blocks (or advances virtual time) until `t`.
    fn wait_until(&mut self, t: Duration) -> Result<(), TransportError>;
    /// Sends a complete IPv4 packet.
    fn send(&mut self, dst: Ipv4Addr, packet: &[u8]) -> Result<(), TransportError>;
    /// Returns every packet that has arrived by `now()`.
    fn drain(&mut self) -> Result<Vec<Received>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn local_addr(&self) -> Ipv4Addr {
        (**self).local_addr()
    }
    fn now(&self) -> Duration {
        (**self).now()
    }
    fn wait_until(&mut self, t: Duration) -> Result<(), TransportError> {
        (**self).wait_until(t)
    }
    fn send(&mut self, dst: Ipv4Addr, packet: &[u8]) -> Result<(), TransportError> {
        (**self).send(dst, packet)
    }
    fn drain(&mut self) -> Result<Vec<Received>, TransportError> {
        (**self).drain()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendLogEntry {
    pub at: Duration,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub dst_port: Option<u16>,
}

/// Wraps a transport and records every successful send.
#[derive(Debug)]
pub struct RecordingTransport<T> {
    inner: T,
    log: Vec<SendLogEntry>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[SendLogEntry] {
        &self.log
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn local_addr(&self) -> Ipv4Addr {
        self.inner.local_addr()
    }
    fn now(&self) -> Duration {
        self.inner.now()
    }
    fn wait_until(&mut self, t: Duration) -> Result<(), TransportError> {
        self.inner.wait_until(t)
    }
    fn send(&mut self, dst: Ipv4Addr, bytes: &[u8]) -> Result<(), TransportError> {
        self.inner.send(dst, bytes)?;
        let parsed = packet::parse(bytes).ok();
        let dst_port = parsed.as_ref().and_then(|p| match &p.body {
            Body::Tcp(seg) => Some(seg.dst_port),
            Body::Udp { dst_port, .. } => Some(*dst_port),
            _ => None,
        });
        self.log.push(SendLogEntry {
            at: self.inner.now(),
            dst,
            protocol: parsed.map(|p| p.ip.protocol).unwrap_or(0),
            dst_port,
        });
        Ok(())
    }
    fn drain(&mut self) -> Result<Vec<Received>, TransportError> {
        self.inner.drain()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct ScanSummary {
    pub targets: usize,
    pub completed: usize,
    pub target_errors: usize,
    pub packets_sent: usize,
    pub duplicate_replies: usize,
    pub unmatched_replies: usize,
    pub late_replies: usize,
}

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("no targets to scan")]
    NoTargets,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("scan aborted after {} of {} targets: {source}", summary.completed, summary.targets)]
    Aborted {
        source: TransportError,
        summary: ScanSummary,
    },
    #[error("output sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// Wire bytes for one probe. `tag` becomes the ICMP sequence number, the
/// TCP/UDP source port and the SNMP message ID.
pub fn encode_probe(
    probe: &ProbeRecord,
    src: Ipv4Addr,
    cfg: &ProbePlanConfig,
    icmp_ident: u16,
    tag: u16,
    tcp_seq: u32,
) -> Vec<u8> {
    let dst = probe.target;
    let port = cfg.tcp_udp_port;
    let (proto, l4) = match probe.kind {
        ProbeKind::EchoRequest => (
            IPPROTO_ICMP,
            packet::icmp_echo_request(icmp_ident, tag, &vec![0; cfg.icmp_payload_len]),
        ),
        ProbeKind::TcpAck | ProbeKind::TcpSyn => {
            let flags = if probe.kind == ProbeKind::TcpSyn {
                tcp_flags::SYN
            } else {
                tcp_flags::ACK
            };
            let seg = TcpSegment {
                src_port: tag,
                dst_port: port,
                seq: tcp_seq,
                ack: probe.tcp_ack.unwrap_or(1),
                flags,
                window: 1024,
            };
            (IPPROTO_TCP, packet::build_tcp(src, dst, &seg))
        }
        ProbeKind::UdpZero => (
            IPPROTO_UDP,
            packet::build_udp(src, dst, tag, port, &vec![0; cfg.udp_payload_len]),
        ),
        ProbeKind::SnmpGet => {
            let msg = snmp::encode_snmpv3_probe(i32::from(tag));
            (
                IPPROTO_UDP,
                packet::build_udp(src, dst, tag, snmp::SNMP_PORT, &msg),
            )
        }
    };
    packet::build_ipv4(src, dst, probe.sent_ipid, SEND_TTL, proto, &l4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MatchKey {
    target: Ipv4Addr,
    protocol: Protocol,
    tag: u16,
}

struct InFlight {
    target: Ipv4Addr,
    plan: Vec<ProbeRecord>,
    tags: Vec<u16>,
    tcp_seqs: Vec<u32>,
    replies: Vec<Option<ResponseRecord>>,
    next: usize,
    error: Option<String>,
}

struct Engine<'a, T: Transport> {
    cfg: &'a ProbePlanConfig,
    transport: T,
    start: Duration,
    icmp_ident: u16,
    timeout: Duration,
    tag_counter: u32,
    outstanding: HashMap<MatchKey, (u64, usize)>,
    slots: BTreeMap<u64, InFlight>,
    summary: ScanSummary,
}

fn nanos_per(rate: f64) -> Duration {
    Duration::from_nanos((1e9 / rate).ceil() as u64)
}

impl<T: Transport> Engine<'_, T> {
    fn next_tag(&mut self) -> u16 {
        let tag = TAG_BASE + (self.tag_counter % TAG_SPACE) as u16;
        self.tag_counter = self.tag_counter.wrapping_add(1);
        tag
    }

    fn admit(&mut self, id: u64, target: Ipv4Addr, rng: &mut ChaCha8Rng) -> Result<(), PlanError> {
        let plan = build_probe_plan(target, self.cfg, rng)?;
        let tags: Vec<u16> = (0..plan.len()).map(|_| self.next_tag()).collect();
        let tcp_seqs: Vec<u32> = (0..plan.len()).map(|_| rng.gen()).collect();
        for (i, probe) in plan.iter().enumerate() {
            self.outstanding.insert(
                MatchKey {
                    target,
                    protocol: probe.protocol,
                    tag: tags[i],
                },
                (id, i),
            );
        }
        let replies = vec![None; plan.len()];
        self.slots.insert(
            id,
            InFlight {
                target,
                plan,
                tags,
                tcp_seqs,
                replies,
                next: 0,
                error: None,
            },
        );
        Ok(())
    }

    fn absorb(&mut self) -> Result<(), TransportError> {
        for rx in self.transport.drain()? {
            self.absorb_one(rx);
        }
        Ok(())
    }

    fn absorb_one(&mut self, rx: Received) {
        let pkt = match packet::parse(&rx.bytes) {
            Ok(p) => p,
            Err(e) => {
                debug!("dropping unparsable packet: {e}");
                self.summary.unmatched_replies += 1;
                return;
            }
        };
        let local = self.transport.local_addr();
        let port = self.cfg.tcp_udp_port;
        let mut tcp_rst_seq = None;
        let mut snmp_report = None;
        let (key, kind) = match &pkt.body {
            Body::EchoReply { ident, seq } if *ident == self.icmp_ident => (
                MatchKey {
                    target: pkt.ip.src,
                    protocol: Protocol::Icmp,
                    tag: *seq,
                },
                ReplyKind::EchoReply,
            ),
            Body::Tcp(seg) if seg.flags & tcp_flags::RST != 0 && seg.src_port == port => {
                tcp_rst_seq = Some(seg.seq);
                (
                    MatchKey {
                        target: pkt.ip.src,
                        protocol: Protocol::Tcp,
                        tag: seg.dst_port,
                    },
                    ReplyKind::TcpRst,
                )
            }
            Body::Unreachable {
                code: ICMP_CODE_PORT_UNREACH,
                quoted: Some(q),
            } if q.protocol == IPPROTO_UDP
                && q.src == local
                && q.ports.map(|p| p.1) == Some(port) =>
            {
                let tag = q.ports.map(|p| p.0).unwrap_or(0);
                (
                    MatchKey {
                        target: q.dst,
                        protocol: Protocol::Udp,
                        tag,
                    },
                    ReplyKind::IcmpPortUnreach,
                )
            }
            Body::Udp {
                src_port,
                dst_port,
                payload,
            } if *src_port == snmp::SNMP_PORT => match snmp::decode_message(payload) {
                Ok(msg) if msg.is_report() => {
                    snmp_report = Some(hex::encode(payload));
                    (
                        MatchKey {
                            target: pkt.ip.src,
                            protocol: Protocol::Snmpv3,
                            tag: *dst_port,
                        },
                        ReplyKind::SnmpReport,
                    )
                }
                _ => {
                    debug!("ignoring non-report SNMP packet from {}", pkt.ip.src);
                    self.summary.unmatched_replies += 1;
                    return;
                }
            },
            _ => {
                self.summary.unmatched_replies += 1;
                return;
            }
        };
        let Some(&(slot_id, idx)) = self.outstanding.get(&key) else {
            debug!("unmatched {kind:?} from {}", key.target);
            self.summary.unmatched_replies += 1;
            return;
        };
        let timeout = self.timeout;
        let start = self.start;
        let Some(slot) = self.slots.get_mut(&slot_id) else {
            return;
        };
        let probe = &slot.plan[idx];
        if idx >= slot.next {
            // reply before the probe was sent: stale tag reuse
            self.summary.unmatched_replies += 1;
            return;
        }
        let sent = start + Duration::from_secs_f64(probe.sent_at);
        let rtt = rx.at.saturating_sub(sent);
        if rtt > timeout {
            self.summary.late_replies += 1;
            return;
        }
        if slot.replies[idx].is_some() {
            debug!("duplicate reply for {} probe {}", slot.target, idx);
            self.summary.duplicate_replies += 1;
            return;
        }
        slot.replies[idx] = Some(ResponseRecord {
            probe: probe.clone(),
            reply_kind: kind,
            reply_ipid: Some(pkt.ip.ident),
            reply_ttl: Some(pkt.ip.ttl),
            reply_total_length: Some(pkt.ip.total_length),
            tcp_rst_seq,
            rtt: Some(rtt.as_secs_f64()),
            snmp_report,
        });
    }

    fn finish(&mut self, id: u64) -> ResponseSet {
        let slot = self.slots.remove(&id).expect("slot exists");
        for (probe, tag) in slot.plan.iter().zip(&slot.tags) {
            self.outstanding.remove(&MatchKey {
                target: slot.target,
                protocol: probe.protocol,
                tag: *tag,
            });
        }
        let records = slot
            .plan
            .into_iter()
            .zip(slot.replies)
            .map(|(probe, reply)| reply.unwrap_or_else(|| ResponseRecord::unanswered(probe)))
            .collect();
        let mut set = ResponseSet::new(slot.target, records);
        if slot.error.is_some() {
            self.summary.target_errors += 1;
        }
        set.error = slot.error;
        self.summary.completed += 1;
        set
    }
}

/// Probes every target with the ten-packet plan and hands each finished
/// [`ResponseSet`] to `sink` as soon as its reply window closes.
///
/// Target order is shuffled with `seed`; probe IPIDs, TCP sequence numbers
/// and the ICMP identifier come from the same seeded stream, so a scan over
/// the simulator is reproducible bit for bit. Per-target send failures are
/// recorded in [`ResponseSet::error`]; a fatal transport error flushes every
/// in-flight target and returns [`ScanError::Aborted`].
pub fn execute_scan<T, F>(
    targets: &[Ipv4Addr],
    cfg: &ProbePlanConfig,
    seed: u64,
    transport: T,
    mut sink: F,
) -> Result<ScanSummary, ScanError>
where
    T: Transport,
    F: FnMut(ResponseSet) -> std::io::Result<()>,
{
    if targets.is_empty() {
        return Err(ScanError::NoTargets);
    }
    cfg.validate()?;
    let mut seen = HashSet::new();
    let mut order: Vec<Ipv4Addr> = Vec::with_capacity(targets.len());
    for t in targets {
        if let Some(reason) = crate::net::non_routable_reason(*t) {
            return Err(PlanError::NotRoutable { addr: *t, reason }.into());
        }
        if seen.insert(*t) {
            order.push(*t);
        } else {
            warn!("duplicate target {t} skipped");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let start = transport.now();
    let mut engine = Engine {
        cfg,
        start,
        icmp_ident: rng.gen(),
        timeout: Duration::from_secs_f64(cfg.reply_timeout),
        tag_counter: 0,
        outstanding: HashMap::new(),
        slots: BTreeMap::new(),
        summary: ScanSummary {
            targets: order.len(),
            ..Default::default()
        },
        transport,
    };
    let global_gap = nanos_per(cfg.global_rate);
    let target_gap = nanos_per(cfg.per_target_rate).max(Duration::from_secs_f64(cfg.probe_gap));

    // (eligible time, slot id) for targets with probes left to send
    let mut ready: BinaryHeap<Reverse<(Duration, u64)>> = BinaryHeap::new();
    // (finalize time, slot id) for targets whose last probe is out
    let mut closing: BinaryHeap<Reverse<(Duration, u64)>> = BinaryHeap::new();
    let mut pending = order.into_iter();
    let mut next_id = 0u64;
    let mut global_next = start;

    loop {
        while engine.slots.len() < cfg.max_in_flight {
            let Some(target) = pending.next() else { break };
            engine.admit(next_id, target, &mut rng)?;
            ready.push(Reverse((engine.transport.now().max(start), next_id)));
            next_id += 1;
        }

        let send_at = ready
            .peek()
            .map(|Reverse((t, id))| ((*t).max(global_next), *id));
        let close_at = closing.peek().map(|Reverse((t, id))| (*t, *id));
        let step = match (send_at, close_at) {
            (None, None) => break,
            (Some(s), Some(c)) if c.0 <= s.0 => Err(c),
            (Some(s), _) => Ok(s),
            (None, Some(c)) => Err(c),
        };

        let outcome = (|| -> Result<(), TransportError> {
            match step {
                Err((at, id)) => {
                    closing.pop();
                    engine.transport.wait_until(at)?;
                    engine.absorb()?;
                    let set = engine.finish(id);
                    sink(set).map_err(|e| TransportError::Fatal(format!("sink: {e}")))?;
                }
                Ok((at, id)) => {
                    ready.pop();
                    engine.transport.wait_until(at)?;
                    engine.absorb()?;
                    let slot = engine.slots.get_mut(&id).expect("ready slot");
                    let idx = slot.next;
                    slot.plan[idx].sent_at = (at - start).as_secs_f64();
                    let (probe, tag, seq) =
                        (slot.plan[idx].clone(), slot.tags[idx], slot.tcp_seqs[idx]);
                    let bytes = encode_probe(
                        &probe,
                        engine.transport.local_addr(),
                        cfg,
                        engine.icmp_ident,
                        tag,
                        seq,
                    );
                    global_next = at + global_gap;
                    match engine.transport.send(probe.target, &bytes) {
                        Ok(()) => {
                            engine.summary.packets_sent += 1;
                            let slot = engine.slots.get_mut(&id).expect("ready slot");
                            slot.next += 1;
                            if slot.next < slot.plan.len() {
                                ready.push(Reverse((at + target_gap, id)));
                            } else {
                                closing.push(Reverse((at + engine.timeout, id)));
                            }
                        }
                        Err(TransportError::Send(msg)) => {
                            warn!("{}: {msg}", probe.target);
                            let slot = engine.slots.get_mut(&id).expect("ready slot");
                            slot.error = Some(format!("send of probe {idx} failed: {msg}"));
                            closing.push(Reverse((at, id)));
                        }
                        Err(fatal) => return Err(fatal),
                    }
                }
            }
            Ok(())
        })();

        if let Err(source) = outcome {
            let ids: Vec<u64> = engine.slots.keys().copied().collect();
            for id in ids {
                let mut set = engine.finish(id);
                set.error
                    .get_or_insert_with(|| format!("scan aborted: {source}"));
                let _ = sink(set);
            }
            return Err(ScanError::Aborted {
                source,
                summary: engine.summary,
            });
        }
    }
    Ok(engine.summary)
}
