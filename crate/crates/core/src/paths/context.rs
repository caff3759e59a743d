//! IP-to-AS and IP-to-country tables, AS relationships and anycast prefixes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use log::warn;
use serde::Deserialize;

use super::PathError;

/// Longest-prefix-match table keyed by masked network address per length.
#[derive(Debug, Clone)]
pub struct PrefixTable<T> {
    by_len: Vec<HashMap<u32, T>>,
    len: usize,
}

impl<T> Default for PrefixTable<T> {
    fn default() -> Self {
        PrefixTable {
            by_len: (0..=32).map(|_| HashMap::new()).collect(),
            len: 0,
        }
    }
}

impl<T> PrefixTable<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false (and keeps the old value) if the prefix was already present.
    pub fn insert(&mut self, net: Ipv4Net, value: T) -> bool {
        let net = net.trunc();
        let slot = &mut self.by_len[usize::from(net.prefix_len())];
        let key = u32::from(net.network());
        if slot.contains_key(&key) {
            return false;
        }
        slot.insert(key, value);
        self.len += 1;
        true
    }

    pub fn lookup(&self, addr: Ipv4Addr) -> Option<&T> {
        let a = u32::from(addr);
        (0..=32usize).rev().find_map(|len| {
            let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
            self.by_len[len].get(&(a & mask))
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = std::io::Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('#')).then(|| Ok((i + 1, t.to_string())))
        }
        Err(e) => Some(Err(e)),
    })
}

/// `prefix<TAB>length<TAB>asn`. Multi-origin entries (`a_b` or `a,b`) map to
/// the first origin; AS sets in braces are skipped.
pub fn load_pfx2as<R: BufRead>(reader: R) -> Result<PrefixTable<u32>, PathError> {
    let mut table = PrefixTable::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let err = |m: String| PathError::Parse {
            file: "pfx2as",
            line,
            message: m,
        };
        let cols: Vec<&str> = text.split('\t').map(str::trim).collect();
        let [prefix, len, asn] = cols[..] else {
            return Err(err(format!(
                "expected 3 tab-separated columns, got {}",
                cols.len()
            )));
        };
        let addr: Ipv4Addr = prefix
            .parse()
            .map_err(|_| err(format!("bad prefix {prefix:?}")))?;
        let len: u8 = len
            .parse()
            .map_err(|_| err(format!("bad length {len:?}")))?;
        let net = Ipv4Net::new(addr, len).map_err(|_| err(format!("bad length {len}")))?;
        let first = asn.split(['_', ',']).next().unwrap_or("");
        if first.starts_with('{') {
            continue;
        }
        let asn: u32 = first.parse().map_err(|_| err(format!("bad ASN {asn:?}")))?;
        table.insert(net, asn);
    }
    Ok(table)
}

#[derive(Deserialize)]
struct CountryRow {
    prefix: Ipv4Net,
    country: String,
}

/// CSV with header `prefix,country`, prefixes in CIDR notation.
pub fn load_country_csv<R: Read>(reader: R) -> Result<PrefixTable<String>, PathError> {
    let mut table = PrefixTable::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: CountryRow = row?;
        table.insert(row.prefix, row.country.trim().to_ascii_uppercase());
    }
    Ok(table)
}

/// One CIDR prefix per line.
pub fn load_anycast<R: BufRead>(reader: R) -> Result<PrefixTable<()>, PathError> {
    let mut table = PrefixTable::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let net: Ipv4Net = text.parse().map_err(|_| PathError::Parse {
            file: "anycast",
            line,
            message: format!("bad prefix {text:?}"),
        })?;
        table.insert(net, ());
    }
    Ok(table)
}

/// How a neighbor relates to the AS whose adjacency list it sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relationship {
    Provider,
    Customer,
    Peer,
}

#[derive(Debug, Clone, Default)]
pub struct AsGraph {
    adj: BTreeMap<u32, Vec<(u32, Relationship)>>,
    edges: usize,
}

impl AsGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a provider-customer edge. Returns false if the pair was already linked.
    pub fn add_provider_customer(&mut self, provider: u32, customer: u32) -> bool {
        self.add(
            provider,
            customer,
            Relationship::Customer,
            Relationship::Provider,
        )
    }

    pub fn add_peering(&mut self, a: u32, b: u32) -> bool {
        self.add(a, b, Relationship::Peer, Relationship::Peer)
    }

    fn add(&mut self, a: u32, b: u32, b_to_a: Relationship, a_to_b: Relationship) -> bool {
        if a == b || self.relationship(a, b).is_some() {
            return false;
        }
        self.adj.entry(a).or_default().push((b, b_to_a));
        self.adj.entry(b).or_default().push((a, a_to_b));
        self.edges += 1;
        true
    }

    /// What `neighbor` is to `asn`.
    pub fn relationship(&self, asn: u32, neighbor: u32) -> Option<Relationship> {
        self.adj
            .get(&asn)?
            .iter()
            .find(|(n, _)| *n == neighbor)
            .map(|(_, r)| *r)
    }

    pub fn neighbors(&self, asn: u32) -> &[(u32, Relationship)] {
        self.adj.get(&asn).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, asn: u32) -> bool {
        self.adj.contains_key(&asn)
    }

    pub fn ases(&self) -> impl Iterator<Item = u32> + '_ {
        self.adj.keys().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }
}

/// `as1|as2|rel[|source]` where rel -1 means as1 is the provider of as2 and
/// 0 means peers. Repeated pairs keep the first relationship.
pub fn load_relationships<R: BufRead>(reader: R) -> Result<AsGraph, PathError> {
    let mut g = AsGraph::new();
    let mut repeated = BTreeSet::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let err = |m: String| PathError::Parse {
            file: "relationships",
            line,
            message: m,
        };
        let cols: Vec<&str> = text.split('|').collect();
        if cols.len() < 3 {
            return Err(err("expected as1|as2|rel".into()));
        }
        let a: u32 = cols[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad ASN {:?}", cols[0])))?;
        let b: u32 = cols[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad ASN {:?}", cols[1])))?;
        let added = match cols[2].trim() {
            "-1" => g.add_provider_customer(a, b),
            "0" => g.add_peering(a, b),
            other => return Err(err(format!("unknown relationship {other:?}"))),
        };
        if !added {
            repeated.insert((a.min(b), a.max(b)));
        }
    }
    if !repeated.is_empty() {
        warn!(
            "{} AS pairs listed more than once; kept the first relationship",
            repeated.len()
        );
    }
    Ok(g)
}

#[derive(Debug, Clone, Default)]
pub struct AsContext {
    pub pfx2as: PrefixTable<u32>,
    pub country: PrefixTable<String>,
    pub graph: AsGraph,
    pub anycast: PrefixTable<()>,
}

impl AsContext {
    pub fn asn_of(&self, addr: Ipv4Addr) -> Option<u32> {
        self.pfx2as.lookup(addr).copied()
    }

    pub fn country_of(&self, addr: Ipv4Addr) -> Option<&str> {
        self.country.lookup(addr).map(String::as_str)
    }
}
