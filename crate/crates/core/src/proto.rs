//! Transport protocols probed per target and small sets thereof.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Icmp,
    Tcp,
    Udp,
    Snmpv3,
}

impl Protocol {
    /// The three protocols whose replies feed the feature vector.
    pub const TRANSPORT: [Protocol; 3] = [Protocol::Icmp, Protocol::Tcp, Protocol::Udp];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Icmp => "icmp",
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Snmpv3 => "snmpv3",
        }
    }

    fn bit(self) -> u8 {
        match self {
            Protocol::Icmp => 0b001,
            Protocol::Tcp => 0b010,
            Protocol::Udp => 0b100,
            Protocol::Snmpv3 => 0,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "icmp" => Ok(Protocol::Icmp),
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            "snmpv3" | "snmp" => Ok(Protocol::Snmpv3),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// A subset of {ICMP, TCP, UDP}.
///
/// Serialized as a list of protocol names in ICMP, TCP, UDP order and
/// displayed as `icmp+tcp` style strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ProtocolSet(u8);

impl ProtocolSet {
    pub const EMPTY: ProtocolSet = ProtocolSet(0);
    pub const ALL: ProtocolSet = ProtocolSet(0b111);

    /// Fallback order for partial lookups: two-protocol subsets first, then
    /// singletons, each group ordered TCP&UDP, ICMP&UDP, ICMP&TCP, UDP, TCP, ICMP.
    pub const PARTIAL_ORDER: [ProtocolSet; 6] = [
        ProtocolSet(0b110),
        ProtocolSet(0b101),
        ProtocolSet(0b011),
        ProtocolSet(0b100),
        ProtocolSet(0b010),
        ProtocolSet(0b001),
    ];

    /// Bits: ICMP = 1, TCP = 2, UDP = 4; higher bits are dropped.
    pub const fn from_bits(bits: u8) -> Self {
        ProtocolSet(bits & 0b111)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub fn from_protocols<I: IntoIterator<Item = Protocol>>(protocols: I) -> Self {
        let mut set = ProtocolSet::EMPTY;
        for p in protocols {
            set.insert(p);
        }
        set
    }

    pub fn insert(&mut self, p: Protocol) {
        self.0 |= p.bit();
    }

    pub fn contains(self, p: Protocol) -> bool {
        p.bit() != 0 && self.0 & p.bit() != 0
    }

    pub fn is_subset(self, other: ProtocolSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_full(self) -> bool {
        self == ProtocolSet::ALL
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Protocol> {
        Protocol::TRANSPORT
            .into_iter()
            .filter(move |p| self.contains(*p))
    }

    /// Every non-empty proper subset, in partial fallback order.
    pub fn proper_subsets(self) -> impl Iterator<Item = ProtocolSet> {
        ProtocolSet::PARTIAL_ORDER
            .into_iter()
            .filter(move |s| s.is_subset(self) && *s != self)
    }
}

impl fmt::Display for ProtocolSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.iter().map(Protocol::as_str).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for ProtocolSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" || s.is_empty() {
            return Ok(ProtocolSet::EMPTY);
        }
        let mut set = ProtocolSet::EMPTY;
        for part in s.split(['+', ',']) {
            let p: Protocol = part.trim().parse()?;
            if p == Protocol::Snmpv3 {
                return Err("snmpv3 is not a feature protocol".into());
            }
            set.insert(p);
        }
        Ok(set)
    }
}

impl Serialize for ProtocolSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ProtocolSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let protocols = Vec::<Protocol>::deserialize(deserializer)?;
        if protocols.contains(&Protocol::Snmpv3) {
            return Err(serde::de::Error::custom("snmpv3 is not a feature protocol"));
        }
        Ok(ProtocolSet::from_protocols(protocols))
    }
}
