//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use routerprint::classify::{
    classify_vector, evaluate_holdout, read_verdicts, write_holdout_csv, write_verdicts, Outcome,
    VerdictRecord,
};
use routerprint::features::{
    classify_ipid_sequence, extract_features, FeatureVector, IpidClass, IpidConfig,
};
use routerprint::paths::{
    alternative_transit, annotate_paths, diversity_report, homogeneity_report, AliasSet, AsContext,
    AsGraph, Hop, PrefixTable, RegionFilter, TraceroutePath, TransitConfig, TransitOutcome,
};
use routerprint::probe::{
    execute_scan, read_response_sets, write_response_sets, ProbePlanConfig, RecordingTransport,
    ResponseSet,
};
use routerprint::proto::ProtocolSet;
use routerprint::signatures::{
    build_signature_table, load_table, store_table, sweep_threshold, LabeledVector,
    SignatureBuildConfig,
};
use routerprint::sim::{
    builtin_profile, catalog, colliding_pair, make_fleet, Fleet, FleetSpec, IpidMode,
    ProtocolBehavior, RstSeqRule, SimTransport, StackProfile, UdpQuote,
};
use routerprint::snmp::{label_response_set, VendorDictionary};

const JUNIPER_ROW: &str = "False,r,r,r,False,False,False,False,255,64,64,84,40,56,0";
const CISCO_ROW: &str = "False,r,r,r,False,False,False,False,255,255,64,84,40,56,0";

struct SendAudit {
    scenario: String,
    targets: usize,
    off_count: usize,
}

static SEND_AUDIT: Mutex<Vec<SendAudit>> = Mutex::new(Vec::new());
static NOISELESS_LABELED: OnceLock<Vec<(FeatureVector, String)>> = OnceLock::new();

fn scan(fleet: Fleet, seed: u64, scenario: &str) -> Vec<ResponseSet> {
    let targets = fleet.addresses();
    let mut transport = RecordingTransport::new(SimTransport::new(fleet));
    let mut sets = Vec::with_capacity(targets.len());
    execute_scan(
        &targets,
        &ProbePlanConfig::default(),
        seed,
        &mut transport,
        |s| {
            sets.push(s);
            Ok(())
        },
    )
    .expect("scan");
    let mut per_target: HashMap<Ipv4Addr, usize> = HashMap::new();
    for e in transport.log() {
        *per_target.entry(e.dst).or_default() += 1;
    }
    let wanted: HashSet<Ipv4Addr> = targets.iter().copied().collect();
    let off = targets
        .iter()
        .filter(|a| per_target.get(a).copied().unwrap_or(0) != 10)
        .count()
        + per_target.keys().filter(|a| !wanted.contains(a)).count();
    SEND_AUDIT.lock().unwrap().push(SendAudit {
        scenario: scenario.to_string(),
        targets: targets.len(),
        off_count: off,
    });
    sets
}

fn fleet_of(seed: u64, prefix: &str, snmp: f64, profiles: Vec<(StackProfile, usize)>) -> Fleet {
    let mut spec = FleetSpec::from_profiles(seed, profiles);
    spec.base_prefix = prefix.parse().unwrap();
    spec.snmpv3_fraction = snmp;
    make_fleet(&spec, &VendorDictionary::builtin()).expect("fleet")
}

/// SNMP-labeled vectors of a scan.
fn labeled(sets: &[ResponseSet], dataset: &str) -> Vec<LabeledVector> {
    let dict = VendorDictionary::builtin();
    sets.iter()
        .filter_map(|s| {
            let label = label_response_set(s, &dict)?.expect("decodable report");
            Some(LabeledVector::new(
                extract_features(s, &IpidConfig::default()),
                label.vendor,
                dataset,
            ))
        })
        .collect()
}

fn within(limit: Duration, start: Instant) {
    let took = start.elapsed();
    assert!(took < limit, "took {took:?}, limit {limit:?}");
}

fn c01_signature_rows() {
    let start = Instant::now();
    let fleet = fleet_of(
        1,
        "5.0.0.0/24",
        0.0,
        vec![
            (builtin_profile("juniper-mx").unwrap(), 3),
            (builtin_profile("cisco-nxos").unwrap(), 3),
        ],
    );
    let truth: HashMap<_, _> = fleet
        .ground_truth()
        .into_iter()
        .map(|g| (g.address, g.vendor))
        .collect();
    for set in scan(fleet, 1, "signature rows") {
        let row = extract_features(&set, &IpidConfig::default()).canonical();
        let expected = if truth[&set.target] == "Juniper" {
            JUNIPER_ROW
        } else {
            CISCO_ROW
        };
        assert_eq!(row, expected, "{}", set.target);
    }
    within(Duration::from_secs(1), start);
}

fn c02_ittl_flip() {
    let train = fleet_of(
        2,
        "5.0.0.0/24",
        1.0,
        vec![
            (builtin_profile("juniper-mx").unwrap(), 25),
            (builtin_profile("cisco-nxos").unwrap(), 25),
        ],
    );
    let table = build_signature_table(
        &labeled(&scan(train, 2, "ittl flip training"), "train"),
        &SignatureBuildConfig::default(),
    )
    .unwrap();
    let juniper: FeatureVector = JUNIPER_ROW.parse().unwrap();
    assert_eq!(
        classify_vector(&juniper, &table).outcome,
        Outcome::Vendor("Juniper".into())
    );

    let mut flipped = builtin_profile("juniper-mx").unwrap();
    flipped.icmp.ittl = 255;
    let test = fleet_of(3, "5.0.1.0/24", 0.0, vec![(flipped, 10)]);
    for set in scan(test, 3, "ittl flip") {
        let v = extract_features(&set, &IpidConfig::default());
        assert_eq!(v.canonical(), CISCO_ROW);
        assert_eq!(
            classify_vector(&v, &table).outcome,
            Outcome::Vendor("Cisco".into())
        );
    }
}

fn c03_monte_carlo() {
    let start = Instant::now();
    let cfg = IpidConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 1_000_000u32;
    let mut hits = 0u32;
    for _ in 0..trials {
        let t: [u16; 3] = rng.gen();
        if classify_ipid_sequence(&t, &cfg).unwrap() == IpidClass::Incremental {
            hits += 1;
        }
    }
    let observed = f64::from(hits) / f64::from(trials);
    let derived = (1301.0f64 / 65536.0).powi(2);
    for reference in [derived, 3.87e-4] {
        assert!(
            observed >= 0.5 * reference && observed <= 2.0 * reference,
            "observed {observed:.3e} vs {reference:.3e}"
        );
    }
    println!("      observed {observed:.3e}, derived {derived:.3e}");
    within(Duration::from_secs(10), start);
}

fn c04_wraparound() {
    let cfg = IpidConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let s1: u32 = rng.gen_range(1..=1300);
        let s2: u32 = rng.gen_range(1..=1300);
        // start close enough to 65535 that the triple wraps
        let a: u32 = rng.gen_range(65536 - s1 - s2..=65535);
        let t = [
            a as u16,
            ((a + s1) % 65536) as u16,
            ((a + s1 + s2) % 65536) as u16,
        ];
        assert!(a + s1 + s2 > 65535);
        assert_eq!(
            classify_ipid_sequence(&t, &cfg).unwrap(),
            IpidClass::Incremental,
            "{t:?}"
        );
    }
}

fn c05_round_trip() {
    let start = Instant::now();
    let fleet = fleet_of(
        5,
        "5.0.0.0/16",
        0.6,
        catalog().into_iter().map(|p| (p, 200)).collect(),
    );
    let truth: HashMap<_, _> = fleet
        .ground_truth()
        .into_iter()
        .map(|g| (g.address, g))
        .collect();
    assert_eq!(truth.values().filter(|g| g.snmpv3_enabled).count(), 1200);
    let sets = scan(fleet, 5, "round trip");
    let train = labeled(&sets, "fleet");
    assert_eq!(train.len(), 1200);
    let dict = VendorDictionary::builtin();
    for set in &sets {
        let label = label_response_set(set, &dict).map(|l| l.unwrap().vendor);
        let g = &truth[&set.target];
        assert_eq!(
            label,
            g.snmpv3_enabled.then(|| g.vendor.clone()),
            "{}",
            set.target
        );
    }
    let table = build_signature_table(&train, &SignatureBuildConfig::default()).unwrap();
    let (mut correct, mut non_unique, mut total) = (0, 0, 0);
    for set in sets.iter().filter(|s| !truth[&s.target].snmpv3_enabled) {
        total += 1;
        match classify_vector(&extract_features(set, &IpidConfig::default()), &table).outcome {
            Outcome::Vendor(v) if v == truth[&set.target].vendor => correct += 1,
            Outcome::NonUnique(_) => non_unique += 1,
            other => panic!(
                "{}: {other:?}, truth {}",
                set.target, truth[&set.target].vendor
            ),
        }
    }
    assert_eq!((total, correct, non_unique), (800, 800, 0));
    let _ = NOISELESS_LABELED.set(train.into_iter().map(|lv| (lv.vector, lv.vendor)).collect());

    let pair = colliding_pair().into_iter().map(|p| (p, 200)).collect();
    let fleet = fleet_of(6, "5.1.0.0/16", 0.6, pair);
    let sets = scan(fleet, 6, "colliding pair");
    let table =
        build_signature_table(&labeled(&sets, "pair"), &SignatureBuildConfig::default()).unwrap();
    let both: BTreeSet<String> = ["Brocade", "Ruijie"].map(String::from).into();
    for set in &sets {
        let out = classify_vector(&extract_features(set, &IpidConfig::default()), &table).outcome;
        assert_eq!(out, Outcome::NonUnique(both.clone()), "{}", set.target);
    }
    println!(
        "      {correct}/{total} SNMP-silent routers correct; {} colliding routers NON_UNIQUE",
        sets.len()
    );
    within(Duration::from_secs(60), start);
}

const VENDOR_POOL: [&str; 6] = ["Cisco", "Juniper", "Huawei", "MikroTik", "H3C", "Ericsson"];

fn random_behavior(rng: &mut ChaCha8Rng) -> ProtocolBehavior {
    let ipid = if rng.gen_bool(0.5) {
        IpidMode::Random
    } else {
        IpidMode::Incremental {
            start: rng.gen(),
            step_jitter: 0,
        }
    };
    ProtocolBehavior::new(ipid, *[64u8, 255].choose(rng).unwrap())
}

fn random_profile(rng: &mut ChaCha8Rng, name: String, vendor: &str) -> StackProfile {
    let mut p = builtin_profile("juniper-mx").unwrap();
    p.name = name;
    p.vendor = vendor.to_string();
    p.enterprise_number = None;
    p.icmp = random_behavior(rng);
    p.tcp = random_behavior(rng);
    p.udp = random_behavior(rng);
    let incremental = |b: &ProtocolBehavior| matches!(b.ipid, IpidMode::Incremental { .. });
    if incremental(&p.icmp) && incremental(&p.tcp) && rng.gen_bool(0.5) {
        p.icmp.counter = Some("a".into());
        p.tcp.counter = Some("a".into());
    }
    p.icmp_echo_ipid = rng.gen_bool(0.3);
    p.udp_quote = if rng.gen_bool(0.5) {
        UdpQuote::Minimal
    } else {
        UdpQuote::Full
    };
    p.rst_seq_rule = if rng.gen_bool(0.5) {
        RstSeqRule::RfcZero
    } else {
        RstSeqRule::Nonzero
    };
    p
}

/// Blanks every feature that needs a UDP reply.
fn mask_udp(canonical: &str) -> String {
    canonical
        .split(',')
        .enumerate()
        .map(|(i, t)| {
            if [3, 4, 6, 7, 8, 13].contains(&i) {
                "-"
            } else {
                t
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn c06_partial_signatures() {
    let coverage = Mutex::new((0usize, 0usize));
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 12,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&(any::<u64>(), 2usize..=5), |(seed, k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vendors = VENDOR_POOL.to_vec();
            vendors.shuffle(&mut rng);
            let mut profiles: Vec<StackProfile> = (0..k)
                .map(|i| random_profile(&mut rng, format!("p{i}"), vendors[i]))
                .collect();
            // One profile differing from another only over UDP guarantees a colliding projection.
            let mut twin = profiles[0].clone();
            twin.name = "twin".into();
            twin.vendor = vendors[k].to_string();
            twin.udp.ittl = if twin.udp.ittl == 64 { 255 } else { 64 };
            profiles.push(twin);

            let train = fleet_of(
                seed,
                "5.0.0.0/16",
                1.0,
                profiles.iter().cloned().map(|p| (p, 25)).collect(),
            );
            let train_vectors = labeled(&scan(train, seed, "partial training"), "train");
            prop_assert_eq!(train_vectors.len(), 25 * profiles.len());
            let table =
                build_signature_table(&train_vectors, &SignatureBuildConfig::default()).unwrap();

            let mut by_projection: HashMap<String, BTreeSet<String>> = HashMap::new();
            for lv in &train_vectors {
                by_projection
                    .entry(mask_udp(&lv.vector.canonical()))
                    .or_default()
                    .insert(lv.vendor.clone());
            }
            let silent_udp = profiles
                .iter()
                .cloned()
                .map(|mut p| {
                    p.udp.respond = false;
                    (p, 4)
                })
                .collect();
            let test = fleet_of(seed ^ 1, "5.1.0.0/16", 0.0, silent_udp);
            for set in scan(test, seed ^ 1, "partial") {
                let v = extract_features(&set, &IpidConfig::default());
                prop_assert_eq!(v.responsive(), ProtocolSet::from_bits(0b011));
                let expected = by_projection
                    .get(&v.canonical())
                    .cloned()
                    .unwrap_or_default();
                prop_assert!(
                    !expected.is_empty(),
                    "projection {} never seen in training",
                    v.canonical()
                );
                let got = classify_vector(&v, &table).outcome;
                let mut cov = coverage.lock().unwrap();
                if expected.len() == 1 {
                    cov.0 += 1;
                    prop_assert_eq!(got, Outcome::Vendor(expected.into_iter().next().unwrap()));
                } else {
                    cov.1 += 1;
                    prop_assert_eq!(got, Outcome::NonUnique(expected));
                }
            }
            Ok(())
        })
        .unwrap();
    let (unique, colliding) = *coverage.lock().unwrap();
    println!(
        "      {unique} unique-projection and {colliding} colliding-projection routers checked"
    );
    assert!(unique > 0 && colliding > 0);
}

fn c07_sweep_monotonic() {
    let mut spec = FleetSpec::from_profiles(7, catalog().into_iter().map(|p| (p, 120)));
    spec.snmpv3_fraction = 1.0;
    spec.noise = 0.3;
    let fleet = make_fleet(&spec, &VendorDictionary::builtin()).unwrap();
    let corpus = labeled(&scan(fleet, 7, "noisy corpus"), "noisy");
    let thresholds: Vec<u32> = (1..=50).collect();
    let rows = sweep_threshold(&corpus, &thresholds).unwrap();

    let mut groups: HashMap<String, HashMap<&str, u64>> = HashMap::new();
    for lv in corpus
        .iter()
        .filter(|lv| lv.vector.responsive() == ProtocolSet::ALL)
    {
        *groups
            .entry(lv.vector.canonical())
            .or_default()
            .entry(lv.vendor.as_str())
            .or_default() += 1;
    }
    for row in &rows {
        let t = u64::from(row.threshold);
        let kept = groups.values().filter(|g| g.values().sum::<u64>() >= t);
        let (unique, non_unique) =
            kept.fold(
                (0, 0),
                |(u, n), g| if g.len() == 1 { (u + 1, n) } else { (u, n + 1) },
            );
        assert_eq!(
            (row.unique, row.non_unique),
            (unique, non_unique),
            "threshold {t}"
        );
    }
    assert!(rows
        .windows(2)
        .all(|w| w[1].unique <= w[0].unique && w[1].non_unique <= w[0].non_unique));
    assert!(rows[0].non_unique > 0, "noise should create shared keys");
    println!(
        "      t=1: {}/{}  t=20: {}/{}  t=50: {}/{} (unique/non-unique)",
        rows[0].unique,
        rows[0].non_unique,
        rows[19].unique,
        rows[19].non_unique,
        rows[49].unique,
        rows[49].non_unique
    );
}

fn c08_holdout() {
    let data = NOISELESS_LABELED.get().cloned().unwrap_or_else(|| {
        let fleet = fleet_of(
            5,
            "5.0.0.0/16",
            0.6,
            catalog().into_iter().map(|p| (p, 200)).collect(),
        );
        labeled(&scan(fleet, 5, "holdout"), "fleet")
            .into_iter()
            .map(|lv| (lv.vector, lv.vendor))
            .collect()
    });
    let report = evaluate_holdout(&data, &SignatureBuildConfig::default(), 0.8, 8).unwrap();
    assert_eq!(report.train_size + report.test_size, data.len());
    let vendors: BTreeSet<&str> = data.iter().map(|(_, v)| v.as_str()).collect();
    assert_eq!(report.scores.len(), vendors.len());
    for s in &report.scores {
        assert_eq!(
            (s.recall, s.precision),
            (Some(1.0), Some(1.0)),
            "{}",
            s.vendor
        );
    }
    let mut csv = Vec::new();
    write_holdout_csv(&mut csv, &report).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("vendor,recall,precision,total"));
    for (line, s) in lines.zip(&report.scores) {
        let vendor = if s.vendor.contains(',') {
            format!("\"{}\"", s.vendor)
        } else {
            s.vendor.clone()
        };
        assert_eq!(line, format!("{vendor},1.0000,1.0000,{}", s.total));
    }
}

fn outcome_of(rng: &mut ChaCha8Rng) -> Outcome {
    match rng.gen_range(0..10) {
        0..=5 => Outcome::Vendor(VENDOR_POOL[rng.gen_range(0..4)].to_string()),
        6 | 7 => Outcome::Unknown,
        8 => Outcome::NonUnique(["Cisco", "Huawei"].map(String::from).into()),
        _ => Outcome::Unresponsive,
    }
}

/// paths, unmapped, filtered out, sizes, combinations, histogram, third (routable), third (all hops)
type Recount = (
    usize,
    usize,
    usize,
    BTreeMap<usize, usize>,
    Vec<(String, usize)>,
    [usize; 10],
    usize,
    usize,
);

/// Brute-force recount of a diversity report.
fn recount(
    paths: &[TraceroutePath],
    effective: &HashMap<Ipv4Addr, Outcome>,
    filter: &RegionFilter,
    ctx: &AsContext,
) -> Recount {
    let (mut n, mut unmapped, mut out) = (0, 0, 0);
    let mut sizes = BTreeMap::new();
    let mut combos: Vec<(String, usize)> = Vec::new();
    let mut hist = [0usize; 10];
    let (mut third_r, mut third_a) = (0, 0);
    for p in paths {
        if *filter != RegionFilter::All {
            let (Some(a), Some(b)) = (ctx.country_of(p.src), ctx.country_of(p.dst)) else {
                unmapped += 1;
                continue;
            };
            let cc = match filter {
                RegionFilter::Intra(c) | RegionFilter::Inter(c) => c.as_str(),
                RegionFilter::All => unreachable!(),
            };
            let pass = match filter {
                RegionFilter::Intra(_) => a == cc && b == cc,
                _ => (a == cc) ^ (b == cc),
            };
            if !pass {
                out += 1;
                continue;
            }
        }
        n += 1;
        let mut names: Vec<String> = Vec::new();
        let (mut ident, mut routable) = (0, 0);
        for h in &p.hops {
            let Some(ip) = h.ip else { continue };
            routable += 1;
            if let Some(Outcome::Vendor(v)) = effective.get(&ip) {
                ident += 1;
                if !names.contains(v) {
                    names.push(v.clone());
                }
            }
        }
        names.sort();
        *sizes.entry(names.len()).or_insert(0) += 1;
        if !names.is_empty() {
            let key = names.join("+");
            match combos.iter_mut().find(|(k, _)| *k == key) {
                Some(e) => e.1 += 1,
                None => combos.push((key, 1)),
            }
        }
        let frac = if routable == 0 {
            0.0
        } else {
            ident as f64 / routable as f64
        };
        hist[((frac * 10.0 + 1e-9).floor() as usize).min(9)] += 1;
        if routable > 0 && ident as f64 >= routable as f64 / 3.0 - 1e-9 {
            third_r += 1;
        }
        if !p.hops.is_empty() && ident as f64 >= p.hops.len() as f64 / 3.0 - 1e-9 {
            third_a += 1;
        }
    }
    combos.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    (n, unmapped, out, sizes, combos, hist, third_r, third_a)
}

fn c09_path_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let routers: Vec<Ipv4Addr> = (0..4000u32)
        .map(|i| Ipv4Addr::from(0x0100_0000 + (i % 20) * 0x1_0000 + i))
        .collect();
    let verdicts: HashMap<Ipv4Addr, Outcome> = routers
        .iter()
        .filter_map(|ip| {
            if rng.gen_bool(0.9) {
                Some((*ip, outcome_of(&mut rng)))
            } else {
                None
            }
        })
        .collect();
    let mut pool = routers.clone();
    pool.shuffle(&mut rng);
    let mut aliases = Vec::new();
    let mut rest = &pool[..1200];
    while rest.len() >= 4 {
        let n = rng.gen_range(2..=4);
        aliases.push(AliasSet {
            router_id: format!("N{}", aliases.len()),
            interfaces: rest[..n].to_vec(),
        });
        rest = &rest[n..];
    }

    let mut ctx = AsContext::default();
    ctx.country
        .insert("8.0.0.0/9".parse().unwrap(), "US".to_string());
    ctx.country
        .insert("8.128.0.0/10".parse().unwrap(), "DE".to_string());
    let endpoint =
        |rng: &mut ChaCha8Rng| Ipv4Addr::from(0x0800_0000 + rng.gen_range(0..0x0100_0000u32));
    let paths: Vec<TraceroutePath> = (0..10_000)
        .map(|_| {
            let len = rng.gen_range(3..=12);
            let hops = (1..=len)
                .map(|h| Hop {
                    hop: h,
                    ip: rng
                        .gen_bool(0.85)
                        .then(|| routers[rng.gen_range(0..routers.len())]),
                })
                .collect();
            TraceroutePath {
                src: endpoint(&mut rng),
                dst: endpoint(&mut rng),
                hops,
            }
        })
        .collect();

    // Independent alias resolution.
    let mut effective = verdicts.clone();
    for set in &aliases {
        let mut names: Vec<String> = set
            .interfaces
            .iter()
            .filter_map(|ip| match verdicts.get(ip) {
                Some(Outcome::Vendor(v)) => Some(v.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        let o = match names.len() {
            0 => continue,
            1 => Outcome::Vendor(names[0].clone()),
            _ => Outcome::NonUnique(names.into_iter().collect()),
        };
        for ip in &set.interfaces {
            effective.insert(*ip, o.clone());
        }
    }

    let annotation = annotate_paths(&paths, &verdicts, Some(&aliases));
    for set in &aliases {
        let labels: BTreeSet<&str> = annotation
            .paths
            .iter()
            .flat_map(|a| a.path.hops.iter().zip(&a.hop_verdicts))
            .filter(|(h, _)| h.ip.is_some_and(|ip| set.interfaces.contains(&ip)))
            .filter_map(|(_, v)| match v {
                Some(Outcome::Vendor(n)) => Some(n.as_str()),
                _ => None,
            })
            .collect();
        assert!(
            labels.len() <= 1,
            "alias set {} carries {labels:?}",
            set.router_id
        );
    }
    for a in &annotation.paths {
        assert!(a.vendor_set.len() <= a.routable_hops);
        let f = a.identified_fraction();
        assert!((0.0..=1.0).contains(&f));
        let scaled = f * a.routable_hops as f64;
        assert!((scaled - scaled.round()).abs() < 1e-9);
    }

    let filters = [
        RegionFilter::All,
        RegionFilter::Intra("US".into()),
        RegionFilter::Inter("US".into()),
        RegionFilter::Intra("DE".into()),
    ];
    let mut totals = Vec::new();
    for filter in &filters {
        let r = diversity_report(&annotation.paths, filter, &ctx);
        let (n, unmapped, out, sizes, combos, hist, third_r, third_a) =
            recount(&paths, &effective, filter, &ctx);
        assert_eq!(
            (r.paths, r.unmapped, r.filtered_out),
            (n, unmapped, out),
            "{filter}"
        );
        assert_eq!(r.size_distribution, sizes, "{filter}");
        let got: Vec<(String, usize)> = r
            .combinations
            .iter()
            .map(|c| (c.combination.clone(), c.paths))
            .collect();
        assert_eq!(got, combos, "{filter}");
        assert_eq!(r.identified_histogram, hist, "{filter}");
        assert_eq!(
            (r.at_least_third_routable, r.at_least_third_all_hops),
            (third_r, third_a),
            "{filter}"
        );
        totals.push(r.paths);
        if *filter != RegionFilter::All {
            assert_eq!(r.paths + r.unmapped + r.filtered_out, paths.len());
        }
    }
    assert!(totals[0] >= totals[1] + totals[2]);
    assert!(totals[1] > 0 && totals[2] > 0);

    // Homogeneity against a direct tally.
    let mut pfx = PrefixTable::new();
    let mut ips: Vec<(Ipv4Addr, Outcome)> = Vec::new();
    for asn in 0..30u32 {
        pfx.insert(format!("20.{asn}.0.0/16").parse().unwrap(), 64_500 + asn);
        let size = rng.gen_range(400..2500u32);
        let share = rng.gen_range(0.70..0.97);
        let dominant = VENDOR_POOL[rng.gen_range(0..VENDOR_POOL.len())];
        for i in 0..size {
            let ip = Ipv4Addr::from(0x1400_0000 + (asn << 16) + i);
            let o = if rng.gen_bool(share) {
                Outcome::Vendor(dominant.to_string())
            } else {
                outcome_of(&mut rng)
            };
            ips.push((ip, o));
        }
    }
    let hctx = AsContext {
        pfx2as: pfx,
        ..AsContext::default()
    };
    let got = homogeneity_report(ips.iter().map(|(ip, o)| (*ip, o)), &hctx, 1000, 0.85);
    let mut expected = Vec::new();
    for asn in 0..30u32 {
        let members: Vec<&Outcome> = ips
            .iter()
            .filter(|(ip, o)| ip.octets()[1] == asn as u8 && !matches!(o, Outcome::Unresponsive))
            .map(|(_, o)| o)
            .collect();
        if members.len() < 1000 {
            continue;
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for o in &members {
            if let Outcome::Vendor(v) = o {
                *counts.entry(v.as_str()).or_default() += 1;
            }
        }
        let (v, c) = counts
            .iter()
            .max_by_key(|(_, c)| **c)
            .map(|(v, c)| (*v, *c))
            .unwrap();
        if c * 100 >= members.len() * 85 {
            expected.push((64_500 + asn, v.to_string(), c, members.len()));
        }
    }
    let got: Vec<_> = got
        .iter()
        .map(|h| (h.asn, h.dominant_vendor.clone(), h.vendor_ips, h.total_ips))
        .collect();
    assert_eq!(got, expected);
    assert!(!expected.is_empty());
    println!(
        "      4 region filters recounted over {} paths; {} homogeneous ASes",
        paths.len(),
        expected.len()
    );
    within(Duration::from_secs(30), start);
}

#[derive(Clone, Copy, PartialEq)]
enum Edge {
    Up,
    Down,
    Peer,
}

fn c10_alternative_transit() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = TransitConfig::default();
    let mut counts = [0usize; 3];
    for _ in 0..50 {
        let mut graph = AsGraph::new();
        // rel[(a, b)] = what the edge a -> b is, walking from a to b
        let mut rel: HashMap<(u32, u32), Edge> = HashMap::new();
        for a in 1..=20u32 {
            for b in a + 1..=20 {
                if !rng.gen_bool(0.18) {
                    continue;
                }
                match rng.gen_range(0..5) {
                    0 | 1 => {
                        graph.add_provider_customer(a, b);
                        rel.insert((a, b), Edge::Down);
                        rel.insert((b, a), Edge::Up);
                    }
                    2 | 3 => {
                        graph.add_provider_customer(b, a);
                        rel.insert((a, b), Edge::Up);
                        rel.insert((b, a), Edge::Down);
                    }
                    _ => {
                        graph.add_peering(a, b);
                        rel.insert((a, b), Edge::Peer);
                        rel.insert((b, a), Edge::Peer);
                    }
                }
            }
        }
        // Every simple path of 3..=6 ASes, kept if valley-free.
        let mut valid: Vec<Vec<u32>> = Vec::new();
        fn extend(path: &mut Vec<u32>, rel: &HashMap<(u32, u32), Edge>, out: &mut Vec<Vec<u32>>) {
            if path.len() >= 3 {
                let edges: Vec<Edge> = path.windows(2).map(|w| rel[&(w[0], w[1])]).collect();
                let ups = edges.iter().take_while(|e| **e == Edge::Up).count();
                let rest = &edges[ups..];
                let rest = if rest.first() == Some(&Edge::Peer) {
                    &rest[1..]
                } else {
                    rest
                };
                if rest.iter().all(|e| *e == Edge::Down) {
                    out.push(path.clone());
                }
            }
            if path.len() == 6 {
                return;
            }
            for next in 1..=20u32 {
                if !path.contains(&next) && rel.contains_key(&(*path.last().unwrap(), next)) {
                    path.push(next);
                    extend(path, rel, out);
                    path.pop();
                }
            }
        }
        for s in 1..=20u32 {
            extend(&mut vec![s], &rel, &mut valid);
        }
        for dst in 1..=20u32 {
            for avoid in (1..=20u32).filter(|a| *a != dst) {
                let mut alt = BTreeSet::new();
                let mut via = false;
                for p in valid
                    .iter()
                    .filter(|p| *p.last().unwrap() == dst && p[0] != avoid)
                {
                    let interior = &p[1..p.len() - 1];
                    if interior.contains(&avoid) {
                        via = true;
                    } else {
                        alt.extend(interior.iter().copied());
                    }
                }
                let expected = if !alt.is_empty() {
                    TransitOutcome::Alternative(alt.into_iter().collect())
                } else if via {
                    TransitOutcome::OnlyViaAvoided
                } else {
                    TransitOutcome::NoPathVisible
                };
                let got = alternative_transit(&graph, dst, avoid, &cfg);
                assert!(!got.truncated);
                if let TransitOutcome::Alternative(list) = &got.outcome {
                    assert!(!list.contains(&avoid));
                }
                assert_eq!(got.outcome, expected, "dst {dst} avoid {avoid}");
                counts[match expected {
                    TransitOutcome::Alternative(_) => 0,
                    TransitOutcome::OnlyViaAvoided => 1,
                    TransitOutcome::NoPathVisible => 2,
                }] += 1;
            }
        }
        assert_eq!(
            alternative_transit(&graph, 999, 1, &cfg).outcome,
            TransitOutcome::NoPathVisible
        );
    }
    println!(
        "      alternative {} / only-via-avoided {} / no path {}",
        counts[0], counts[1], counts[2]
    );
    assert!(counts.iter().all(|c| *c > 0));
    within(Duration::from_secs(30), start);
}

/// Cut points inside a line that drop more than trailing whitespace.
fn mid_line_cuts(bytes: &[u8], step: usize) -> Vec<usize> {
    let content_end = bytes
        .iter()
        .rposition(|b| !b.is_ascii_whitespace())
        .unwrap();
    (1..=content_end)
        .step_by(step)
        .chain([content_end])
        .filter(|&i| bytes[i - 1] != b'\n')
        .collect()
}

fn c11_serialization() {
    let fleet = fleet_of(11, "5.0.0.0/24", 0.6, builtin_profiles_subset());
    let sets = scan(fleet, 11, "serialization");
    let mut train = labeled(&sets, "a");
    train.extend(labeled(&sets, "b"));
    let table = build_signature_table(
        &train,
        &SignatureBuildConfig {
            min_occurrences: 2,
            derive_partials: true,
        },
    )
    .unwrap();

    let stored = store_table(&table);
    assert_eq!(load_table(&stored).unwrap(), table);
    for cut in mid_line_cuts(&stored, 41) {
        assert!(
            load_table(&stored[..cut]).is_err(),
            "table cut at {cut} loaded"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let mut bad = stored.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 1 << rng.gen_range(0..7);
        assert!(load_table(&bad).is_err(), "corrupted byte {i} accepted");
    }

    let mut scan_bytes = Vec::new();
    write_response_sets(&mut scan_bytes, &sets).unwrap();
    assert_eq!(read_response_sets(&scan_bytes[..]).unwrap(), sets);
    for cut in mid_line_cuts(&scan_bytes, 997) {
        assert!(
            read_response_sets(&scan_bytes[..cut]).is_err(),
            "scan output cut at {cut} loaded"
        );
    }

    let records: Vec<VerdictRecord> = sets
        .iter()
        .map(|s| {
            VerdictRecord::new(
                s.target,
                &classify_vector(&extract_features(s, &IpidConfig::default()), &table),
            )
        })
        .collect();
    let mut vbytes = Vec::new();
    write_verdicts(&mut vbytes, &records).unwrap();
    assert_eq!(read_verdicts(&vbytes[..]).unwrap(), records);
    for r in &records {
        assert_eq!(VerdictRecord::new(r.target, &r.to_verdict().unwrap()), *r);
    }
    for cut in mid_line_cuts(&vbytes, 13) {
        assert!(
            read_verdicts(&vbytes[..cut]).is_err(),
            "verdicts cut at {cut} loaded"
        );
    }
}

fn builtin_profiles_subset() -> Vec<(StackProfile, usize)> {
    let mut v: Vec<(StackProfile, usize)> = catalog().into_iter().map(|p| (p, 6)).collect();
    v.extend(colliding_pair().into_iter().map(|p| (p, 6)));
    let mut partial = builtin_profile("cisco-ios").unwrap();
    partial.name = "cisco-ios-no-udp".into();
    partial.udp.respond = false;
    v.push((partial, 6));
    v
}

fn c12_probe_count() {
    // A lossy fleet as one more scenario: loss never changes what is sent.
    let mut spec = FleetSpec::from_profiles(12, catalog().into_iter().map(|p| (p, 20)));
    spec.loss = 0.3;
    scan(
        make_fleet(&spec, &VendorDictionary::builtin()).unwrap(),
        12,
        "lossy",
    );
    let audit = SEND_AUDIT.lock().unwrap();
    let targets: usize = audit.iter().map(|a| a.targets).sum();
    for a in audit.iter() {
        assert!(a.targets > 0);
        assert_eq!(
            a.off_count, 0,
            "scenario {:?}: {} targets without exactly 10 packets",
            a.scenario, a.off_count
        );
    }
    println!(
        "      {} scans, {targets} targets, 10 packets each",
        audit.len()
    );
}

type Criterion = (u32, &'static str, fn());

fn main() {
    let criteria: [Criterion; 12] = [
        (
            1,
            "juniper-like and cisco-like profiles yield the two reference signature rows",
            c01_signature_rows,
        ),
        (
            2,
            "juniper ICMP iTTL 64 -> 255 is classified as Cisco",
            c02_ittl_flip,
        ),
        (
            3,
            "random IPID triples pass as incremental at the expected rate",
            c03_monte_carlo,
        ),
        (
            4,
            "wrapping incremental triples classify as incremental",
            c04_wraparound,
        ),
        (
            5,
            "simulated fleet round trip: 100% accuracy, colliding pair NON_UNIQUE",
            c05_round_trip,
        ),
        (
            6,
            "ICMP+TCP-only routers match partial signatures (property test)",
            c06_partial_signatures,
        ),
        (
            7,
            "threshold sweep counts are non-increasing and match a recount",
            c07_sweep_monotonic,
        ),
        (
            8,
            "holdout precision and recall are 1.0 on the noiseless fleet",
            c08_holdout,
        ),
        (
            9,
            "path diversity and AS homogeneity match brute-force tallies",
            c09_path_oracles,
        ),
        (
            10,
            "alternative transit matches exhaustive valley-free enumeration",
            c10_alternative_transit,
        ),
        (
            11,
            "tables, scan output and verdicts round-trip; damaged files rejected",
            c11_serialization,
        ),
        (
            12,
            "every scan sends exactly 10 packets per target",
            c12_probe_count,
        ),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let status = if result.is_ok() { "PASS" } else { "FAIL" };
        if result.is_err() {
            failed += 1;
        }
        println!("{status} {n:>2}  {name}  ({secs:.2} s)");
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
