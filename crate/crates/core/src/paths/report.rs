//! Hop annotation and the per-path and per-AS vendor reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use super::{AliasSet, AsContext, TraceroutePath};
use crate::classify::Outcome;

pub const IDENTIFIED_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPath {
    pub path: TraceroutePath,
    /// One entry per hop; `None` where the hop has no address.
    pub hop_verdicts: Vec<Option<Outcome>>,
    pub vendor_set: BTreeSet<String>,
    pub routable_hops: usize,
    pub identified_hops: usize,
}

impl AnnotatedPath {
    /// VENDOR hops over addressed hops; 0 for a path without addressed hops.
    pub fn identified_fraction(&self) -> f64 {
        if self.routable_hops == 0 {
            0.0
        } else {
            self.identified_hops as f64 / self.routable_hops as f64
        }
    }

    /// VENDOR hops over every hop, silent ones included.
    pub fn identified_fraction_all_hops(&self) -> f64 {
        if self.path.hops.is_empty() {
            0.0
        } else {
            self.identified_hops as f64 / self.path.hops.len() as f64
        }
    }

    pub fn combination(&self) -> String {
        self.vendor_set
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub paths: Vec<AnnotatedPath>,
    /// Alias sets whose interfaces carried two or more distinct vendors.
    pub alias_conflicts: usize,
    /// Alias sets with at least one vendor-labelled interface.
    pub alias_sets_labelled: usize,
}

/// Attaches verdicts to every addressed hop. Hops without a verdict count as
/// UNKNOWN. With alias sets, a single vendor among a router's interfaces is
/// copied to all of them, and two or more vendors turn all of them into
/// NON_UNIQUE.
pub fn annotate_paths(
    paths: &[TraceroutePath],
    verdicts: &HashMap<Ipv4Addr, Outcome>,
    aliases: Option<&[AliasSet]>,
) -> Annotation {
    let mut overlay: HashMap<Ipv4Addr, Outcome> = HashMap::new();
    let (mut conflicts, mut labelled) = (0, 0);
    for set in aliases.unwrap_or(&[]) {
        let vendors: BTreeSet<String> = set
            .interfaces
            .iter()
            .filter_map(|ip| match verdicts.get(ip) {
                Some(Outcome::Vendor(v)) => Some(v.clone()),
                _ => None,
            })
            .collect();
        let shared = match vendors.len() {
            0 => continue,
            1 => Outcome::Vendor(vendors.into_iter().next().expect("one vendor")),
            _ => {
                conflicts += 1;
                Outcome::NonUnique(vendors)
            }
        };
        labelled += 1;
        for ip in &set.interfaces {
            overlay.insert(*ip, shared.clone());
        }
    }

    let annotated = paths
        .iter()
        .map(|path| {
            let hop_verdicts: Vec<Option<Outcome>> = path
                .hops
                .iter()
                .map(|h| {
                    h.ip.map(|ip| {
                        overlay
                            .get(&ip)
                            .or_else(|| verdicts.get(&ip))
                            .cloned()
                            .unwrap_or(Outcome::Unknown)
                    })
                })
                .collect();
            let mut vendor_set = BTreeSet::new();
            let mut identified_hops = 0;
            for v in hop_verdicts.iter().flatten() {
                if let Outcome::Vendor(name) = v {
                    vendor_set.insert(name.clone());
                    identified_hops += 1;
                }
            }
            AnnotatedPath {
                routable_hops: path.routable_hops(),
                path: path.clone(),
                hop_verdicts,
                vendor_set,
                identified_hops,
            }
        })
        .collect();
    Annotation {
        paths: annotated,
        alias_conflicts: conflicts,
        alias_sets_labelled: labelled,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionFilter {
    All,
    /// Both endpoints in the country.
    Intra(String),
    /// Exactly one endpoint in the country.
    Inter(String),
}

impl fmt::Display for RegionFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionFilter::All => f.write_str("all"),
            RegionFilter::Intra(c) => write!(f, "intra:{c}"),
            RegionFilter::Inter(c) => write!(f, "inter:{c}"),
        }
    }
}

impl FromStr for RegionFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        if lower == "all" {
            return Ok(RegionFilter::All);
        }
        let (kind, cc) = lower.split_once(':').ok_or_else(|| {
            format!("bad region filter {s:?}, expected all, intra:CC or inter:CC")
        })?;
        if cc.len() != 2 || !cc.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(format!("bad country code {cc:?}"));
        }
        let cc = cc.to_ascii_uppercase();
        match kind {
            "intra" => Ok(RegionFilter::Intra(cc)),
            "inter" => Ok(RegionFilter::Inter(cc)),
            _ => Err(format!("bad region filter {s:?}")),
        }
    }
}

impl Serialize for RegionFilter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Combination {
    pub combination: String,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub filter: RegionFilter,
    pub note: &'static str,
    /// Paths that passed the filter.
    pub paths: usize,
    /// Paths with an endpoint lacking a country mapping (region filters only).
    pub unmapped: usize,
    /// Mapped paths that did not match the region filter.
    pub filtered_out: usize,
    pub size_distribution: BTreeMap<usize, usize>,
    /// Non-empty vendor sets, most frequent first, ties by name.
    pub combinations: Vec<Combination>,
    /// Bin i counts paths with identified fraction in [i/10, (i+1)/10); the last bin includes 1.
    pub identified_histogram: [usize; IDENTIFIED_BINS],
    /// Paths where at least a third of the addressed hops have a vendor.
    pub at_least_third_routable: usize,
    /// Same, with silent hops in the denominator.
    pub at_least_third_all_hops: usize,
}

fn region_match(filter: &RegionFilter, ctx: &AsContext, p: &TraceroutePath) -> Option<bool> {
    let (cc, intra) = match filter {
        RegionFilter::All => return Some(true),
        RegionFilter::Intra(c) => (c, true),
        RegionFilter::Inter(c) => (c, false),
    };
    let src = ctx.country_of(p.src)?;
    let dst = ctx.country_of(p.dst)?;
    let (a, b) = (src == cc, dst == cc);
    Some(if intra { a && b } else { a != b })
}

pub fn diversity_report(
    annotated: &[AnnotatedPath],
    filter: &RegionFilter,
    ctx: &AsContext,
) -> DiversityReport {
    let mut r = DiversityReport {
        filter: filter.clone(),
        note: super::VISIBILITY_NOTE,
        paths: 0,
        unmapped: 0,
        filtered_out: 0,
        size_distribution: BTreeMap::new(),
        combinations: Vec::new(),
        identified_histogram: [0; IDENTIFIED_BINS],
        at_least_third_routable: 0,
        at_least_third_all_hops: 0,
    };
    let mut combos: BTreeMap<String, usize> = BTreeMap::new();
    for a in annotated {
        match region_match(filter, ctx, &a.path) {
            None => {
                r.unmapped += 1;
                continue;
            }
            Some(false) => {
                r.filtered_out += 1;
                continue;
            }
            Some(true) => {}
        }
        r.paths += 1;
        *r.size_distribution.entry(a.vendor_set.len()).or_default() += 1;
        if !a.vendor_set.is_empty() {
            *combos.entry(a.combination()).or_default() += 1;
        }
        let bin = (IDENTIFIED_BINS * a.identified_hops)
            .checked_div(a.routable_hops)
            .map_or(0, |b| b.min(IDENTIFIED_BINS - 1));
        r.identified_histogram[bin] += 1;
        if a.routable_hops > 0 && 3 * a.identified_hops >= a.routable_hops {
            r.at_least_third_routable += 1;
        }
        if !a.path.hops.is_empty() && 3 * a.identified_hops >= a.path.hops.len() {
            r.at_least_third_all_hops += 1;
        }
    }
    r.combinations = combos
        .into_iter()
        .map(|(combination, paths)| Combination { combination, paths })
        .collect();
    r.combinations.sort_by(|x, y| {
        y.paths
            .cmp(&x.paths)
            .then_with(|| x.combination.cmp(&y.combination))
    });
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneousAs {
    pub asn: u32,
    pub dominant_vendor: String,
    pub share: f64,
    pub vendor_ips: usize,
    pub total_ips: usize,
}

/// Groups fingerprinted router IPs (every verdict except UNRESPONSIVE) by
/// origin AS and reports ASes with at least `min_routers` of them where one
/// vendor holds a share of at least `dominance`.
pub fn homogeneity_report<'a>(
    verdicts: impl IntoIterator<Item = (Ipv4Addr, &'a Outcome)>,
    ctx: &AsContext,
    min_routers: usize,
    dominance: f64,
) -> Vec<HomogeneousAs> {
    let mut per_as: BTreeMap<u32, (usize, BTreeMap<&'a str, usize>)> = BTreeMap::new();
    for (ip, outcome) in verdicts {
        if matches!(outcome, Outcome::Unresponsive) {
            continue;
        }
        let Some(asn) = ctx.asn_of(ip) else { continue };
        let entry = per_as.entry(asn).or_default();
        entry.0 += 1;
        if let Outcome::Vendor(v) = outcome {
            *entry.1.entry(v.as_str()).or_default() += 1;
        }
    }
    per_as
        .into_iter()
        .filter(|(_, (total, _))| *total >= min_routers.max(1))
        .filter_map(|(asn, (total, vendors))| {
            let (vendor, count) = vendors
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))?;
            let share = count as f64 / total as f64;
            (share >= dominance).then(|| HomogeneousAs {
                asn,
                dominant_vendor: vendor.to_string(),
                share,
                vendor_ips: count,
                total_ips: total,
            })
        })
        .collect()
}

pub fn write_sizes_csv<W: Write>(out: W, r: &DiversityReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vendor_set_size", "paths", "fraction"])?;
    for (size, n) in &r.size_distribution {
        let frac = if r.paths == 0 {
            0.0
        } else {
            *n as f64 / r.paths as f64
        };
        w.write_record([size.to_string(), n.to_string(), format!("{frac:.4}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_combinations_csv<W: Write>(out: W, r: &DiversityReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["combination", "paths"])?;
    for c in &r.combinations {
        w.write_record([c.combination.clone(), c.paths.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_identified_csv<W: Write>(out: W, r: &DiversityReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_low", "bin_high", "paths"])?;
    for (i, n) in r.identified_histogram.iter().enumerate() {
        let lo = i as f64 / IDENTIFIED_BINS as f64;
        let hi = (i + 1) as f64 / IDENTIFIED_BINS as f64;
        w.write_record([format!("{lo:.1}"), format!("{hi:.1}"), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_homogeneity_csv<W: Write>(out: W, rows: &[HomogeneousAs]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["asn", "dominant_vendor", "share", "vendor_ips", "total_ips"])?;
    for h in rows {
        w.write_record([
            h.asn.to_string(),
            h.dominant_vendor.clone(),
            format!("{:.4}", h.share),
            h.vendor_ips.to_string(),
            h.total_ips.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
