//! Traceroute ingest, hop annotation with vendor verdicts, and path- and
//! AS-level vendor diversity analyses.

mod context;
mod report;
mod transit;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{
    load_anycast, load_country_csv, load_pfx2as, load_relationships, AsContext, AsGraph,
    PrefixTable, Relationship,
};
pub use report::{
    annotate_paths, diversity_report, homogeneity_report, write_combinations_csv,
    write_homogeneity_csv, write_identified_csv, write_sizes_csv, AnnotatedPath, Annotation,
    DiversityReport, HomogeneousAs, RegionFilter, IDENTIFIED_BINS,
};
pub use transit::{
    alternative_transit, write_transit_csv, TransitConfig, TransitOutcome, TransitResult,
    VISIBILITY_NOTE,
};

pub const DEFAULT_MIN_HOPS: usize = 3;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("{file} line {line}: {message}")]
    Parse {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("alias sets overlap: {addr} appears in {first} and {second}")]
    AliasOverlap {
        addr: Ipv4Addr,
        first: String,
        second: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub hop: u32,
    #[serde(default)]
    pub ip: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceroutePath {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub hops: Vec<Hop>,
}

impl TraceroutePath {
    pub fn routable_hops(&self) -> usize {
        self.hops.iter().filter(|h| h.ip.is_some()).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub lines: usize,
    pub malformed: usize,
    pub too_short: usize,
    pub stripped_hops: usize,
    pub dropped_last_hop: usize,
}

/// Reads traceroute JSONL. Private, reserved and anycast hop addresses are
/// blanked, a last responsive hop equal to the destination is removed, and
/// paths left with fewer than `min_hops` addressed hops are dropped.
/// Malformed lines are skipped and counted.
pub fn ingest_traceroutes<R: BufRead>(
    reader: R,
    min_hops: usize,
    anycast: Option<&PrefixTable<()>>,
) -> Result<(Vec<TraceroutePath>, IngestStats), PathError> {
    let mut stats = IngestStats::default();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        stats.lines += 1;
        let mut path: TraceroutePath = match serde_json::from_str(text) {
            Ok(p) => p,
            Err(e) => {
                warn!("traceroute line {}: {e}", i + 1);
                stats.malformed += 1;
                continue;
            }
        };
        if path.hops.windows(2).any(|w| w[0].hop >= w[1].hop) {
            warn!(
                "traceroute line {}: hop indices not strictly increasing",
                i + 1
            );
            stats.malformed += 1;
            continue;
        }
        for hop in &mut path.hops {
            if let Some(ip) = hop.ip {
                let anycast_hit = anycast.is_some_and(|t| t.lookup(ip).is_some());
                if !crate::net::is_routable(ip) || anycast_hit {
                    hop.ip = None;
                    stats.stripped_hops += 1;
                }
            }
        }
        if let Some(last) = path.hops.iter().rposition(|h| h.ip.is_some()) {
            if path.hops[last].ip == Some(path.dst) {
                path.hops.remove(last);
                stats.dropped_last_hop += 1;
            }
        }
        if path.routable_hops() < min_hops {
            stats.too_short += 1;
            continue;
        }
        out.push(path);
    }
    Ok((out, stats))
}

pub fn write_traceroutes<'a, W: Write>(
    out: &mut W,
    paths: impl IntoIterator<Item = &'a TraceroutePath>,
) -> Result<(), PathError> {
    for p in paths {
        serde_json::to_writer(&mut *out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ExtReply {
    from: Option<String>,
}

#[derive(Deserialize)]
struct ExtHop {
    hop: u32,
    #[serde(default)]
    result: Vec<ExtReply>,
    #[serde(default)]
    hops: Vec<ExtReply>,
}

#[derive(Deserialize)]
struct ExtTraceroute {
    #[serde(alias = "from")]
    src_addr: Option<String>,
    dst_addr: Option<String>,
    result: Vec<ExtHop>,
}

fn ext_to_path(t: ExtTraceroute) -> Option<TraceroutePath> {
    let src = t.src_addr?.parse().ok()?;
    let dst = t.dst_addr?.parse().ok()?;
    let hops = t
        .result
        .into_iter()
        .map(|h| {
            let ip = h
                .result
                .iter()
                .chain(&h.hops)
                .find_map(|r| r.from.as_deref().and_then(|f| f.parse().ok()));
            Hop { hop: h.hop, ip }
        })
        .collect();
    Some(TraceroutePath { src, dst, hops })
}

/// Converts traceroute results in the public measurement-platform schema
/// (`src_addr`/`from`, `dst_addr`, `result[].result[].from` or
/// `result[].hops[].from`) into path JSONL. Accepts one object per line or a
/// top-level array. Returns (converted, skipped).
pub fn convert_external<R: BufRead, W: Write>(
    mut reader: R,
    out: &mut W,
) -> Result<(usize, usize), PathError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let trimmed = text.trim_start();
    let items: Vec<serde_json::Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)?
    } else {
        let mut v = Vec::new();
        for line in trimmed.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line) {
                Ok(x) => v.push(x),
                Err(_) => v.push(serde_json::Value::Null),
            }
        }
        v
    };
    let (mut ok, mut skipped) = (0, 0);
    for item in items {
        match serde_json::from_value::<ExtTraceroute>(item)
            .ok()
            .and_then(ext_to_path)
        {
            Some(p) => {
                write_traceroutes(out, [&p])?;
                ok += 1;
            }
            None => skipped += 1,
        }
    }
    Ok((ok, skipped))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasSet {
    pub router_id: String,
    pub interfaces: Vec<Ipv4Addr>,
}

/// Parses `node N<id>: ip ip ...` lines; `#` comments and singleton nodes are skipped.
pub fn load_alias_sets<R: BufRead>(reader: R) -> Result<Vec<AliasSet>, PathError> {
    let mut sets = Vec::new();
    let mut owner: HashMap<Ipv4Addr, String> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |m: &str| PathError::Parse {
            file: "aliases",
            line: i + 1,
            message: m.to_string(),
        };
        let rest = text
            .strip_prefix("node ")
            .ok_or_else(|| err("expected `node N<id>: ...`"))?;
        let (id, addrs) = rest
            .split_once(':')
            .ok_or_else(|| err("missing ':' after node id"))?;
        let id = id.trim();
        if !id.starts_with('N') || id.len() < 2 {
            return Err(err("node id must look like N<number>"));
        }
        let mut interfaces = Vec::new();
        for tok in addrs.split_whitespace() {
            let ip: Ipv4Addr = tok
                .parse()
                .map_err(|_| err(&format!("bad address {tok:?}")))?;
            if !interfaces.contains(&ip) {
                interfaces.push(ip);
            }
        }
        if interfaces.len() < 2 {
            continue;
        }
        for ip in &interfaces {
            if let Some(first) = owner.insert(*ip, id.to_string()) {
                return Err(PathError::AliasOverlap {
                    addr: *ip,
                    first,
                    second: id.to_string(),
                });
            }
        }
        sets.push(AliasSet {
            router_id: id.to_string(),
            interfaces,
        });
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str) -> (Vec<TraceroutePath>, IngestStats) {
        ingest_traceroutes(text.as_bytes(), DEFAULT_MIN_HOPS, None).unwrap()
    }

    #[test]
    fn private_hop_makes_path_too_short() {
        let (paths, stats) = ingest(
            r#"{"src":"8.8.8.8","dst":"9.9.9.9","hops":[{"hop":1,"ip":"10.0.0.1"},{"hop":2,"ip":"1.2.3.4"},{"hop":3,"ip":"5.6.7.8"}]}
"#,
        );
        assert!(paths.is_empty());
        assert_eq!((stats.stripped_hops, stats.too_short), (1, 1));
    }

    #[test]
    fn public_path_kept_and_last_hop_dropped() {
        let five = r#"{"src":"8.8.8.8","dst":"9.9.9.9","hops":[{"hop":1,"ip":"1.1.1.1"},{"hop":2,"ip":"1.1.1.2"},{"hop":3},{"hop":4,"ip":"1.1.1.4"},{"hop":5,"ip":"1.1.1.5"}]}"#;
        let to_dst = r#"{"src":"8.8.8.8","dst":"9.9.9.9","hops":[{"hop":1,"ip":"1.1.1.1"},{"hop":2,"ip":"1.1.1.2"},{"hop":3,"ip":"1.1.1.3"},{"hop":4,"ip":"9.9.9.9"},{"hop":5,"ip":null}]}"#;
        let short = r#"{"src":"8.8.8.8","dst":"9.9.9.9","hops":[{"hop":1,"ip":"1.1.1.1"},{"hop":2,"ip":"1.1.1.2"},{"hop":3,"ip":"9.9.9.9"}]}"#;
        let (paths, stats) = ingest(&format!("{five}\n{to_dst}\n{short}\nnot json\n"));
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].hops.len(), 5);
        assert_eq!(paths[1].routable_hops(), 3);
        assert!(paths[1]
            .hops
            .iter()
            .all(|h| h.ip != Some("9.9.9.9".parse().unwrap())));
        assert_eq!(
            (stats.malformed, stats.too_short, stats.dropped_last_hop),
            (1, 1, 2)
        );
    }

    #[test]
    fn anycast_hops_stripped() {
        let mut anycast = PrefixTable::new();
        anycast.insert("1.1.1.0/24".parse().unwrap(), ());
        let line = r#"{"src":"8.8.8.8","dst":"9.9.9.9","hops":[{"hop":1,"ip":"1.1.1.1"},{"hop":2,"ip":"2.2.2.2"},{"hop":3,"ip":"2.2.2.3"},{"hop":4,"ip":"2.2.2.4"}]}
"#;
        let (paths, _) = ingest_traceroutes(line.as_bytes(), 3, Some(&anycast)).unwrap();
        assert_eq!(paths[0].hops[0].ip, None);
    }

    #[test]
    fn converts_external_schema() {
        let input = r#"[{"src_addr":"8.8.8.8","dst_addr":"9.9.9.9","result":[{"hop":1,"result":[{"x":"*"},{"from":"1.1.1.1"}]},{"hop":2,"hops":[{"from":"2.2.2.2"}]},{"hop":3,"result":[{"x":"*"}]}]},{"dst_addr":"bad"}]"#;
        let mut out = Vec::new();
        assert_eq!(
            convert_external(input.as_bytes(), &mut out).unwrap(),
            (1, 1)
        );
        let p: TraceroutePath = serde_json::from_slice(&out[..out.len() - 1]).unwrap();
        assert_eq!(
            p.hops.iter().map(|h| h.ip).collect::<Vec<_>>(),
            vec![
                Some("1.1.1.1".parse().unwrap()),
                Some("2.2.2.2".parse().unwrap()),
                None
            ]
        );
    }

    #[test]
    fn alias_parsing() {
        let sets = load_alias_sets(
            "# c\nnode N1:  1.0.0.1 1.0.0.2\nnode N2: 1.0.0.3\nnode N3: 1.0.0.4 1.0.0.5 1.0.0.6\n"
                .as_bytes(),
        )
        .unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[1].interfaces.len(), 3);
        assert!(matches!(
            load_alias_sets("node N1: 1.0.0.1 1.0.0.2\nnode N2: 1.0.0.2 1.0.0.9\n".as_bytes()),
            Err(PathError::AliasOverlap { .. })
        ));
        assert!(load_alias_sets("nod N1: 1.0.0.1\n".as_bytes()).is_err());
    }
}
