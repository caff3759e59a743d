//! Minimal IPv4 / ICMP / TCP / UDP packet crafting and parsing.
//!
//! Only what the ten-probe plan needs: echo request/reply, bare TCP
//! segments, UDP datagrams and ICMP destination-unreachable messages with
//! their quoted inner header. Options are never emitted; on parse they are
//! skipped via the header-length fields.

use std::net::Ipv4Addr;

use thiserror::Error;

pub const IPPROTO_ICMP: u8 = 1;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

pub const IPV4_HEADER_LEN: usize = 20;
pub const ICMP_HEADER_LEN: usize = 8;
pub const TCP_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;

const ICMP_ECHO_REPLY: u8 = 0;
const ICMP_DEST_UNREACH: u8 = 3;
const ICMP_ECHO_REQUEST: u8 = 8;
pub const ICMP_CODE_PORT_UNREACH: u8 = 3;

pub mod tcp_flags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("packet truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("not an IPv4 packet (version {0})")]
    NotIpv4(u8),
    #[error("bad IPv4 header length {0}")]
    BadHeaderLength(usize),
    #[error("IPv4 header checksum mismatch")]
    BadChecksum,
}

/// Internet checksum (RFC 1071) over `data`, seeded with `initial`.
pub fn checksum(data: &[u8], initial: u32) -> u16 {
    let mut sum = initial;
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        sum += u32::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(*last) << 8;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn pseudo_header_sum(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, len: usize) -> u32 {
    let s = src.octets();
    let d = dst.octets();
    u32::from(u16::from_be_bytes([s[0], s[1]]))
        + u32::from(u16::from_be_bytes([s[2], s[3]]))
        + u32::from(u16::from_be_bytes([d[0], d[1]]))
        + u32::from(u16::from_be_bytes([d[2], d[3]]))
        + u32::from(protocol)
        + len as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub ident: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub total_length: u16,
}

/// Wraps `payload` in a 20-byte IPv4 header with a valid checksum.
pub fn build_ipv4(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    ident: u16,
    ttl: u8,
    protocol: u8,
    payload: &[u8],
) -> Vec<u8> {
    let total = IPV4_HEADER_LEN + payload.len();
    let mut buf = Vec::with_capacity(total);
    buf.push(0x45);
    buf.push(0);
    buf.extend_from_slice(&(total as u16).to_be_bytes());
    buf.extend_from_slice(&ident.to_be_bytes());
    buf.extend_from_slice(&[0, 0]);
    buf.push(ttl);
    buf.push(protocol);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&src.octets());
    buf.extend_from_slice(&dst.octets());
    let csum = checksum(&buf[..IPV4_HEADER_LEN], 0);
    buf[10..12].copy_from_slice(&csum.to_be_bytes());
    buf.extend_from_slice(payload);
    buf
}

fn icmp_message(kind: u8, code: u8, rest: [u8; 4], data: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(ICMP_HEADER_LEN + data.len());
    buf.push(kind);
    buf.push(code);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&rest);
    buf.extend_from_slice(data);
    let csum = checksum(&buf, 0);
    buf[2..4].copy_from_slice(&csum.to_be_bytes());
    buf
}

pub fn icmp_echo_request(ident: u16, seq: u16, payload: &[u8]) -> Vec<u8> {
    let [a, b] = ident.to_be_bytes();
    let [c, d] = seq.to_be_bytes();
    icmp_message(ICMP_ECHO_REQUEST, 0, [a, b, c, d], payload)
}

pub fn icmp_echo_reply(ident: u16, seq: u16, payload: &[u8]) -> Vec<u8> {
    let [a, b] = ident.to_be_bytes();
    let [c, d] = seq.to_be_bytes();
    icmp_message(ICMP_ECHO_REPLY, 0, [a, b, c, d], payload)
}

/// ICMP destination unreachable carrying `quoted` (a prefix of the offending datagram).
pub fn icmp_unreachable(code: u8, quoted: &[u8]) -> Vec<u8> {
    icmp_message(ICMP_DEST_UNREACH, code, [0; 4], quoted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpSegment {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub window: u16,
}

pub fn build_tcp(src: Ipv4Addr, dst: Ipv4Addr, seg: &TcpSegment) -> Vec<u8> {
    let mut buf = Vec::with_capacity(TCP_HEADER_LEN);
    buf.extend_from_slice(&seg.src_port.to_be_bytes());
    buf.extend_from_slice(&seg.dst_port.to_be_bytes());
    buf.extend_from_slice(&seg.seq.to_be_bytes());
    buf.extend_from_slice(&seg.ack.to_be_bytes());
    buf.push(5 << 4);
    buf.push(seg.flags);
    buf.extend_from_slice(&seg.window.to_be_bytes());
    buf.extend_from_slice(&[0, 0, 0, 0]);
    let csum = checksum(&buf, pseudo_header_sum(src, dst, IPPROTO_TCP, buf.len()));
    buf[16..18].copy_from_slice(&csum.to_be_bytes());
    buf
}

pub fn build_udp(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    payload: &[u8],
) -> Vec<u8> {
    let len = UDP_HEADER_LEN + payload.len();
    let mut buf = Vec::with_capacity(len);
    buf.extend_from_slice(&src_port.to_be_bytes());
    buf.extend_from_slice(&dst_port.to_be_bytes());
    buf.extend_from_slice(&(len as u16).to_be_bytes());
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(payload);
    let mut csum = checksum(&buf, pseudo_header_sum(src, dst, IPPROTO_UDP, len));
    if csum == 0 {
        csum = 0xffff;
    }
    buf[6..8].copy_from_slice(&csum.to_be_bytes());
    buf
}

/// The inner header quoted by an ICMP error message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuotedHeader {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub ident: u16,
    pub protocol: u8,
    /// Inner transport ports, when at least 4 bytes past the inner IP header were quoted.
    pub ports: Option<(u16, u16)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    EchoRequest {
        ident: u16,
        seq: u16,
        payload_len: usize,
    },
    EchoReply {
        ident: u16,
        seq: u16,
    },
    Unreachable {
        code: u8,
        quoted: Option<QuotedHeader>,
    },
    OtherIcmp {
        kind: u8,
        code: u8,
    },
    Tcp(TcpSegment),
    Udp {
        src_port: u16,
        dst_port: u16,
        payload: Vec<u8>,
    },
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub ip: Ipv4Header,
    pub body: Body,
}

fn need(bytes: &[u8], n: usize) -> Result<(), PacketError> {
    if bytes.len() < n {
        Err(PacketError::Truncated {
            needed: n,
            have: bytes.len(),
        })
    } else {
        Ok(())
    }
}

/// Parses an IPv4 header, returning it and the header length. The checksum
/// is only verified when `verify` is set (quoted headers may be rewritten by
/// middleboxes).
fn parse_ipv4_header(bytes: &[u8], verify: bool) -> Result<(Ipv4Header, usize), PacketError> {
    need(bytes, IPV4_HEADER_LEN)?;
    let version = bytes[0] >> 4;
    if version != 4 {
        return Err(PacketError::NotIpv4(version));
    }
    let ihl = usize::from(bytes[0] & 0x0f) * 4;
    if ihl < IPV4_HEADER_LEN {
        return Err(PacketError::BadHeaderLength(ihl));
    }
    need(bytes, ihl)?;
    if verify && checksum(&bytes[..ihl], 0) != 0 {
        return Err(PacketError::BadChecksum);
    }
    let header = Ipv4Header {
        total_length: u16::from_be_bytes([bytes[2], bytes[3]]),
        ident: u16::from_be_bytes([bytes[4], bytes[5]]),
        ttl: bytes[8],
        protocol: bytes[9],
        src: Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]),
        dst: Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]),
    };
    Ok((header, ihl))
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a full IPv4 packet as received from a raw socket or the simulator.
pub fn parse(bytes: &[u8]) -> Result<Packet, PacketError> {
    let (ip, ihl) = parse_ipv4_header(bytes, true)?;
    let end = usize::from(ip.total_length).clamp(ihl, bytes.len());
    let l4 = &bytes[ihl..end];
    let body = match ip.protocol {
        IPPROTO_ICMP => {
            need(l4, ICMP_HEADER_LEN)?;
            let (kind, code) = (l4[0], l4[1]);
            match kind {
                ICMP_ECHO_REPLY => Body::EchoReply {
                    ident: be16(l4, 4),
                    seq: be16(l4, 6),
                },
                ICMP_ECHO_REQUEST => Body::EchoRequest {
                    ident: be16(l4, 4),
                    seq: be16(l4, 6),
                    payload_len: l4.len() - ICMP_HEADER_LEN,
                },
                ICMP_DEST_UNREACH => {
                    let inner = &l4[ICMP_HEADER_LEN..];
                    let quoted = parse_ipv4_header(inner, false).ok().map(|(h, inner_ihl)| {
                        let ports = (inner.len() >= inner_ihl + 4)
                            .then(|| (be16(inner, inner_ihl), be16(inner, inner_ihl + 2)));
                        QuotedHeader {
                            src: h.src,
                            dst: h.dst,
                            ident: h.ident,
                            protocol: h.protocol,
                            ports,
                        }
                    });
                    Body::Unreachable { code, quoted }
                }
                _ => Body::OtherIcmp { kind, code },
            }
        }
        IPPROTO_TCP => {
            need(l4, TCP_HEADER_LEN)?;
            Body::Tcp(TcpSegment {
                src_port: be16(l4, 0),
                dst_port: be16(l4, 2),
                seq: be32(l4, 4),
                ack: be32(l4, 8),
                flags: l4[13],
                window: be16(l4, 14),
            })
        }
        IPPROTO_UDP => {
            need(l4, UDP_HEADER_LEN)?;
            Body::Udp {
                src_port: be16(l4, 0),
                dst_port: be16(l4, 2),
                payload: l4[UDP_HEADER_LEN..].to_vec(),
            }
        }
        _ => Body::Other,
    };
    Ok(Packet { ip, body })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 1);
    const B: Ipv4Addr = Ipv4Addr::new(8, 8, 8, 8);

    #[test]
    fn checksum_rfc1071_example() {
        // Sample from RFC 1071 section 3.
        let data = [0x00, 0x01, 0xf2, 0x03, 0xf4, 0xf5, 0xf6, 0xf7];
        assert_eq!(checksum(&data, 0), !0xddf2);
    }

    #[test]
    fn echo_reply_is_84_bytes_for_56_byte_payload() {
        let icmp = icmp_echo_reply(7, 9, &[0u8; 56]);
        let pkt = build_ipv4(B, A, 1234, 61, IPPROTO_ICMP, &icmp);
        assert_eq!(pkt.len(), 84);
        let parsed = parse(&pkt).unwrap();
        assert_eq!(parsed.ip.total_length, 84);
        assert_eq!(parsed.ip.ident, 1234);
        assert_eq!(parsed.body, Body::EchoReply { ident: 7, seq: 9 });
    }

    #[test]
    fn unreachable_quotes_inner_ports() {
        let udp = build_udp(A, B, 40001, 33533, &[0; 12]);
        let inner = build_ipv4(A, B, 555, 64, IPPROTO_UDP, &udp);
        let icmp = icmp_unreachable(ICMP_CODE_PORT_UNREACH, &inner[..28]);
        let pkt = build_ipv4(B, A, 99, 250, IPPROTO_ICMP, &icmp);
        assert_eq!(pkt.len(), 56);
        match parse(&pkt).unwrap().body {
            Body::Unreachable {
                code,
                quoted: Some(q),
            } => {
                assert_eq!(code, ICMP_CODE_PORT_UNREACH);
                assert_eq!(q.dst, B);
                assert_eq!(q.ident, 555);
                assert_eq!(q.ports, Some((40001, 33533)));
            }
            other => panic!("unexpected body {other:?}"),
        }
    }

    #[test]
    fn rejects_corrupted_header() {
        let mut pkt = build_ipv4(A, B, 1, 64, IPPROTO_UDP, &build_udp(A, B, 1, 2, &[]));
        pkt[8] ^= 0xff;
        assert_eq!(parse(&pkt), Err(PacketError::BadChecksum));
        assert!(matches!(
            parse(&pkt[..10]),
            Err(PacketError::Truncated { .. })
        ));
    }

    proptest! {
        #[test]
        fn tcp_roundtrip(sport: u16, dport: u16, seq: u32, ack: u32, flags: u8, ident: u16, ttl in 1u8..) {
            let seg = TcpSegment { src_port: sport, dst_port: dport, seq, ack, flags, window: 1024 };
            let l4 = build_tcp(A, B, &seg);
            // transport checksum over pseudo header folds to zero
            prop_assert_eq!(checksum(&l4, pseudo_header_sum(A, B, IPPROTO_TCP, l4.len())), 0);
            let pkt = build_ipv4(A, B, ident, ttl, IPPROTO_TCP, &l4);
            let parsed = parse(&pkt).unwrap();
            prop_assert_eq!(parsed.ip.ident, ident);
            prop_assert_eq!(parsed.ip.ttl, ttl);
            prop_assert_eq!(parsed.body, Body::Tcp(seg));
        }

        #[test]
        fn parse_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..120)) {
            let _ = parse(&bytes);
        }
    }
}
