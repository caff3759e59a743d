//! Simulated vendor stack behaviour and the built-in profile catalog.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::features::TtlClass;
use crate::proto::Protocol;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum IpidMode {
    /// Counter that advances by 1 + U(0..=step_jitter) per reply, plus background traffic.
    Incremental {
        start: u16,
        #[serde(default)]
        step_jitter: u16,
    },
    Random,
    Static {
        value: u16,
    },
    Zero,
    /// Each triple of replies carries exactly two equal IPIDs.
    DuplicatePattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBehavior {
    pub respond: bool,
    pub ipid: IpidMode,
    pub ittl: u8,
    /// Protocols naming the same counter draw IPIDs from one incremental counter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counter: Option<String>,
}

impl ProtocolBehavior {
    pub fn new(ipid: IpidMode, ittl: u8) -> Self {
        ProtocolBehavior {
            respond: true,
            ipid,
            ittl,
            counter: None,
        }
    }

    pub fn shared(mut self, counter: &str) -> Self {
        self.counter = Some(counter.to_string());
        self
    }

    pub fn silent(mut self) -> Self {
        self.respond = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "bytes", rename_all = "snake_case")]
pub enum UdpQuote {
    /// Inner IP header plus 8 bytes: a 56-byte unreachable.
    Minimal,
    /// The whole offending datagram.
    Full,
    /// This many bytes of the offending datagram, zero-padded.
    Extended(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RstSeqRule {
    /// RST answering a SYN carries sequence number 0.
    RfcZero,
    /// RST answering a SYN copies the SYN's acknowledgment number.
    Nonzero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackProfile {
    pub name: String,
    pub vendor: String,
    pub icmp: ProtocolBehavior,
    pub tcp: ProtocolBehavior,
    pub udp: ProtocolBehavior,
    pub icmp_echo_ipid: bool,
    pub udp_quote: UdpQuote,
    pub rst_seq_rule: RstSeqRule,
    /// Enterprise number placed in SNMPv3 engine IDs; looked up from the
    /// vendor name when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enterprise_number: Option<u32>,
    /// IPID increments per second from unrelated traffic.
    #[serde(default)]
    pub background_rate: f64,
}

impl StackProfile {
    pub fn behavior(&self, p: Protocol) -> &ProtocolBehavior {
        match p {
            Protocol::Icmp => &self.icmp,
            Protocol::Tcp => &self.tcp,
            Protocol::Udp | Protocol::Snmpv3 => &self.udp,
        }
    }

    pub fn behavior_mut(&mut self, p: Protocol) -> &mut ProtocolBehavior {
        match p {
            Protocol::Icmp => &mut self.icmp,
            Protocol::Tcp => &mut self.tcp,
            Protocol::Udp | Protocol::Snmpv3 => &mut self.udp,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| {
            Err(SimError::Profile {
                name: self.name.clone(),
                reason: m,
            })
        };
        if self.name.is_empty() || self.vendor.is_empty() {
            return bad("name and vendor must be non-empty".into());
        }
        for p in Protocol::TRANSPORT {
            let b = self.behavior(p);
            if TtlClass::from_value(b.ittl).is_none() {
                return bad(format!(
                    "{p} ittl {} is not one of 32, 64, 128, 255",
                    b.ittl
                ));
            }
            if let Some(group) = &b.counter {
                if !matches!(b.ipid, IpidMode::Incremental { .. }) {
                    return bad(format!(
                        "{p} shares counter {group:?} but is not incremental"
                    ));
                }
            }
        }
        if let UdpQuote::Extended(n) = self.udp_quote {
            if !(28..=1024).contains(&n) {
                return bad(format!("extended quote length {n} outside 28..=1024"));
            }
        }
        if !self.background_rate.is_finite() || self.background_rate < 0.0 {
            return bad("background_rate must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Changes one randomly chosen attribute; used to inject per-router noise.
    pub fn perturb<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let protos = Protocol::TRANSPORT;
        match rng.gen_range(0..4) {
            0 | 1 => {
                let b = self.behavior_mut(protos[rng.gen_range(0..3)]);
                let others: Vec<u8> = TtlClass::ALL
                    .iter()
                    .map(|c| c.value())
                    .filter(|v| *v != b.ittl)
                    .collect();
                b.ittl = others[rng.gen_range(0..others.len())];
            }
            2 => {
                self.udp_quote = match self.udp_quote {
                    UdpQuote::Minimal => UdpQuote::Full,
                    _ => UdpQuote::Minimal,
                };
            }
            _ => {
                self.rst_seq_rule = match self.rst_seq_rule {
                    RstSeqRule::RfcZero => RstSeqRule::Nonzero,
                    RstSeqRule::Nonzero => RstSeqRule::RfcZero,
                };
            }
        }
    }
}

fn inc(start: u16) -> IpidMode {
    IpidMode::Incremental {
        start,
        step_jitter: 0,
    }
}

fn b(ipid: IpidMode, ittl: u8) -> ProtocolBehavior {
    ProtocolBehavior::new(ipid, ittl)
}

#[allow(clippy::too_many_arguments)]
fn profile(
    name: &str,
    vendor: &str,
    icmp: ProtocolBehavior,
    tcp: ProtocolBehavior,
    udp: ProtocolBehavior,
    echo: bool,
    udp_quote: UdpQuote,
    rst: RstSeqRule,
) -> StackProfile {
    StackProfile {
        name: name.into(),
        vendor: vendor.into(),
        icmp,
        tcp,
        udp,
        icmp_echo_ipid: echo,
        udp_quote,
        rst_seq_rule: rst,
        enterprise_number: None,
        background_rate: 0.0,
    }
}

use IpidMode::{DuplicatePattern, Random, Static, Zero};
use RstSeqRule::{Nonzero, RfcZero};
use UdpQuote::{Extended, Full, Minimal};

/// Ten distinct profiles covering every counter class and shared-counter
/// layout, plus two vendors configured identically (`ruijie-rgos` and
/// `brocade-netiron`).
pub fn catalog() -> Vec<StackProfile> {
    vec![
        profile(
            "juniper-mx",
            "Juniper",
            b(Random, 64),
            b(Random, 64),
            b(Random, 255),
            false,
            Minimal,
            RfcZero,
        ),
        profile(
            "cisco-nxos",
            "Cisco",
            b(Random, 255),
            b(Random, 64),
            b(Random, 255),
            false,
            Minimal,
            RfcZero,
        ),
        profile(
            "cisco-ios",
            "Cisco",
            b(Random, 255),
            b(Random, 255),
            b(inc(20000), 255),
            true,
            Minimal,
            Nonzero,
        ),
        profile(
            "cisco-iosxr",
            "Cisco",
            b(Random, 255),
            b(inc(3000), 255),
            b(inc(40000), 255),
            true,
            Extended(68),
            RfcZero,
        ),
        profile(
            "huawei-vrp",
            "Huawei",
            b(Random, 255),
            b(inc(7000), 255).shared("main"),
            b(inc(7000), 255).shared("main"),
            true,
            Minimal,
            RfcZero,
        ),
        profile(
            "juniper-junos-shared",
            "Juniper",
            b(inc(1000), 64).shared("all"),
            b(inc(1000), 64).shared("all"),
            b(inc(1000), 255).shared("all"),
            false,
            Minimal,
            RfcZero,
        ),
        profile(
            "mikrotik-ros",
            "MikroTik",
            b(inc(500), 64),
            b(Zero, 64),
            b(DuplicatePattern, 64),
            false,
            Full,
            RfcZero,
        ),
        profile(
            "h3c-comware",
            "H3C",
            b(inc(9000), 255),
            b(Random, 255),
            b(Random, 255),
            false,
            Minimal,
            RfcZero,
        ),
        profile(
            "nokia-sros",
            "Alcatel/Nokia",
            b(inc(100), 255).shared("ctl"),
            b(inc(100), 255).shared("ctl"),
            b(inc(33000), 255),
            false,
            Full,
            Nonzero,
        ),
        profile(
            "ericsson-ipos",
            "Ericsson",
            b(Random, 255),
            b(inc(12000), 64).shared("main"),
            b(inc(12000), 255).shared("main"),
            true,
            Minimal,
            RfcZero,
        ),
    ]
}

pub fn colliding_pair() -> [StackProfile; 2] {
    let make = |name: &str, vendor: &str| {
        profile(
            name,
            vendor,
            b(Static { value: 4242 }, 64),
            b(Random, 64),
            b(Random, 64),
            false,
            Full,
            RfcZero,
        )
    };
    [
        make("ruijie-rgos", "Ruijie"),
        make("brocade-netiron", "Brocade"),
    ]
}

/// Catalog plus the colliding pair.
pub fn builtin_profiles() -> Vec<StackProfile> {
    let mut all = catalog();
    all.extend(colliding_pair());
    all
}

pub fn builtin_profile(name: &str) -> Option<StackProfile> {
    builtin_profiles().into_iter().find(|p| p.name == name)
}

/// Canonical feature string each built-in profile should produce.
pub fn expected_signature(name: &str) -> Option<&'static str> {
    Some(match name {
        "juniper-mx" => "False,r,r,r,False,False,False,False,255,64,64,84,40,56,0",
        "cisco-nxos" => "False,r,r,r,False,False,False,False,255,255,64,84,40,56,0",
        "cisco-ios" => "True,echo,r,i,False,False,False,False,255,255,255,84,40,56,1",
        "cisco-iosxr" => "True,echo,i,i,False,False,False,False,255,255,255,84,40,96,0",
        "huawei-vrp" => "True,echo,i,i,False,False,False,True,255,255,255,84,40,56,0",
        "juniper-junos-shared" => "False,i,i,i,True,True,True,True,255,64,64,84,40,56,0",
        "mikrotik-ros" => "False,i,z,dup,False,False,False,False,64,64,64,84,40,68,0",
        "h3c-comware" => "False,i,r,r,False,False,False,False,255,255,255,84,40,56,0",
        "nokia-sros" => "False,i,i,i,False,True,False,False,255,255,255,84,40,68,1",
        "ericsson-ipos" => "True,echo,i,i,False,False,False,True,255,255,64,84,40,56,0",
        "ruijie-rgos" | "brocade-netiron" => {
            "False,s,r,r,False,False,False,False,64,64,64,84,40,68,0"
        }
        _ => return None,
    })
}
