//! Fleet specifications, deterministic fleet construction and ground truth.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::sync::Arc;

use ipnet::Ipv4Net;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::profile::{builtin_profile, StackProfile};
use super::router::SimRouter;
use super::SimError;
use crate::net;
use crate::snmp::{EngineId, VendorDictionary};

/// Engine-ID format octet for a MAC-address suffix.
const ENGINE_FORMAT_MAC: u8 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Builtin(String),
    Inline(Box<StackProfile>),
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<StackProfile, SimError> {
        let p = match self {
            ProfileRef::Builtin(name) => {
                builtin_profile(name).ok_or_else(|| SimError::UnknownProfile(name.clone()))?
            }
            ProfileRef::Inline(p) => (**p).clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetGroup {
    pub profile: ProfileRef,
    pub count: usize,
}

fn default_prefix() -> Ipv4Net {
    "5.0.0.0/16".parse().expect("valid prefix")
}
fn default_snmp() -> f64 {
    0.6
}
fn default_hops() -> u8 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub base_prefix: Ipv4Net,
    /// Share of each group that answers SNMPv3; assigned exactly per group.
    #[serde(default = "default_snmp")]
    pub snmpv3_fraction: f64,
    #[serde(default = "default_hops")]
    pub hop_count: u8,
    /// Per-router probability of one perturbed profile attribute.
    #[serde(default)]
    pub noise: f64,
    /// Per-reply drop probability.
    #[serde(default)]
    pub loss: f64,
    pub groups: Vec<FleetGroup>,
}

impl FleetSpec {
    pub fn new(seed: u64, groups: Vec<FleetGroup>) -> Self {
        FleetSpec {
            seed,
            base_prefix: default_prefix(),
            snmpv3_fraction: default_snmp(),
            hop_count: default_hops(),
            noise: 0.0,
            loss: 0.0,
            groups,
        }
    }

    pub fn from_profiles(
        seed: u64,
        profiles: impl IntoIterator<Item = (StackProfile, usize)>,
    ) -> Self {
        let groups = profiles
            .into_iter()
            .map(|(p, count)| FleetGroup {
                profile: ProfileRef::Inline(Box::new(p)),
                count,
            })
            .collect();
        FleetSpec::new(seed, groups)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::Spec(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        frac("snmpv3_fraction", self.snmpv3_fraction)?;
        frac("noise", self.noise)?;
        frac("loss", self.loss)?;
        if self.groups.is_empty() {
            return Err(SimError::Spec("fleet has no groups".into()));
        }
        if let Some(g) = self.groups.iter().find(|g| g.count == 0) {
            return Err(SimError::Spec(format!("group {:?} has count 0", g.profile)));
        }
        Ok(())
    }
}

/// One line of the ground-truth file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub address: Ipv4Addr,
    pub vendor: String,
    pub snmpv3_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterSummary {
    pub address: Ipv4Addr,
    pub profile: String,
    pub vendor: String,
    pub snmpv3_enabled: bool,
    pub perturbed: bool,
}

#[derive(Debug, Clone)]
pub struct Fleet {
    pub spec: FleetSpec,
    pub routers: Vec<SimRouter>,
    perturbed: Vec<bool>,
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.routers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routers.is_empty()
    }

    pub fn addresses(&self) -> Vec<Ipv4Addr> {
        self.routers.iter().map(|r| r.address).collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.routers
            .iter()
            .map(|r| GroundTruth {
                address: r.address,
                vendor: r.profile.vendor.clone(),
                snmpv3_enabled: r.snmpv3_enabled,
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<RouterSummary> {
        self.routers
            .iter()
            .zip(&self.perturbed)
            .map(|(r, p)| RouterSummary {
                address: r.address,
                profile: r.profile.name.clone(),
                vendor: r.profile.vendor.clone(),
                snmpv3_enabled: r.snmpv3_enabled,
                perturbed: *p,
            })
            .collect()
    }
}

fn usable_addresses(prefix: Ipv4Net) -> impl Iterator<Item = Ipv4Addr> {
    prefix.hosts().filter(|a| net::is_routable(*a))
}

fn mac_suffix(addr: Ipv4Addr) -> [u8; 6] {
    let o = addr.octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

/// Builds every router of the spec. Addresses come from the base prefix in
/// a seeded random order; the SNMPv3-enabled share of each group is exact
/// (rounded) and chosen by a seeded shuffle.
pub fn make_fleet(spec: &FleetSpec, dict: &VendorDictionary) -> Result<Fleet, SimError> {
    spec.validate()?;
    let profiles: Vec<Arc<StackProfile>> = spec
        .groups
        .iter()
        .map(|g| g.profile.resolve().map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut pens = Vec::with_capacity(profiles.len());
    for p in &profiles {
        let pen = p
            .enterprise_number
            .or_else(|| dict.pen_of(&p.vendor))
            .ok_or_else(|| SimError::Profile {
                name: p.name.clone(),
                reason: format!("no enterprise number for vendor {:?}", p.vendor),
            })?;
        pens.push(pen);
    }
    let needed: usize = spec.groups.iter().map(|g| g.count).sum();
    let available = usable_addresses(spec.base_prefix).take(needed).count();
    if available < needed {
        return Err(SimError::AddressExhausted {
            prefix: spec.base_prefix,
            needed,
            available,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut addrs: Vec<Ipv4Addr> = usable_addresses(spec.base_prefix).collect();
    addrs.shuffle(&mut rng);
    addrs.truncate(needed);

    let mut routers = Vec::with_capacity(needed);
    let mut perturbed = Vec::with_capacity(needed);
    let mut next_addr = addrs.into_iter();
    let mut index = 0u64;
    for ((group, profile), pen) in spec.groups.iter().zip(&profiles).zip(&pens) {
        let enabled_count = ((group.count as f64) * spec.snmpv3_fraction).round() as usize;
        let mut enabled: Vec<bool> = (0..group.count).map(|i| i < enabled_count).collect();
        enabled.shuffle(&mut rng);
        for snmp_on in enabled {
            let address = next_addr.next().expect("address count checked");
            let noisy = spec.noise > 0.0 && rng.gen_bool(spec.noise);
            let profile = if noisy {
                let mut p = (**profile).clone();
                p.perturb(&mut rng);
                Arc::new(p)
            } else {
                Arc::clone(profile)
            };
            let engine_id = snmp_on
                .then(|| EngineId::from_enterprise(*pen, ENGINE_FORMAT_MAC, &mac_suffix(address)))
                .transpose()
                .map_err(|e| SimError::Profile {
                    name: profile.name.clone(),
                    reason: e.to_string(),
                })?;
            let offset: u16 = rng.gen();
            let mut router_rng = ChaCha8Rng::seed_from_u64(spec.seed);
            router_rng.set_stream(index);
            routers.push(SimRouter::new(
                address,
                profile,
                engine_id,
                spec.hop_count,
                offset,
                router_rng,
            ));
            perturbed.push(noisy);
            index += 1;
        }
    }
    let unique: HashSet<Ipv4Addr> = routers.iter().map(|r| r.address).collect();
    debug_assert_eq!(unique.len(), routers.len());
    Ok(Fleet {
        spec: spec.clone(),
        routers,
        perturbed,
    })
}

pub fn write_ground_truth<W: Write>(out: W, truth: &[GroundTruth]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for t in truth {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: Read>(input: R) -> Result<Vec<GroundTruth>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
