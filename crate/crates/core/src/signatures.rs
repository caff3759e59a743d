//! Vendor signature table: grouping labeled feature vectors by canonical
//! key, occurrence thresholding, uniqueness classing and persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::proto::ProtocolSet;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MIN_OCCURRENCES: u32 = 20;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("unsupported signature table format version {found} (this build reads version {FORMAT_VERSION})")]
    Version { found: String },
    #[error("signature table checksum mismatch (file corrupted or edited)")]
    Checksum,
    #[error("signature table is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid signature table: {0}")]
    Invalid(String),
    #[error("invalid build configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureClass {
    Unique,
    NonUnique,
    BelowThreshold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureRecord {
    pub key: FeatureVector,
    pub protocols: ProtocolSet,
    pub vendor_counts: BTreeMap<String, u64>,
    pub class: SignatureClass,
    pub dataset_ids: BTreeSet<String>,
}

impl SignatureRecord {
    pub fn total(&self) -> u64 {
        self.vendor_counts.values().sum()
    }

    pub fn vendors(&self) -> impl Iterator<Item = &str> {
        self.vendor_counts.keys().map(String::as_str)
    }

    /// The single vendor of a unique record.
    pub fn unique_vendor(&self) -> Option<&str> {
        (self.class == SignatureClass::Unique)
            .then(|| self.vendors().next())
            .flatten()
    }

    pub fn is_matchable(&self) -> bool {
        self.class != SignatureClass::BelowThreshold
    }
}

/// Pure classing rule shared by the builder, the sweep and the loader.
pub fn classify_counts(
    vendor_counts: &BTreeMap<String, u64>,
    min_occurrences: u32,
) -> SignatureClass {
    let total: u64 = vendor_counts.values().sum();
    if total < u64::from(min_occurrences) {
        SignatureClass::BelowThreshold
    } else if vendor_counts.len() == 1 {
        SignatureClass::Unique
    } else {
        SignatureClass::NonUnique
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureBuildConfig {
    pub min_occurrences: u32,
    pub derive_partials: bool,
}

impl Default for SignatureBuildConfig {
    fn default() -> Self {
        SignatureBuildConfig {
            min_occurrences: DEFAULT_MIN_OCCURRENCES,
            derive_partials: true,
        }
    }
}

impl SignatureBuildConfig {
    pub fn validate(&self) -> Result<(), SignatureError> {
        if self.min_occurrences == 0 {
            return Err(SignatureError::Config(
                "min_occurrences must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildMeta {
    pub config: SignatureBuildConfig,
    /// Labeled vectors contributed by each dataset.
    pub datasets: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at: Option<String>,
}

/// A labeled observation fed to the builder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledVector {
    pub vector: FeatureVector,
    pub vendor: String,
    pub dataset: String,
}

impl LabeledVector {
    pub fn new(
        vector: FeatureVector,
        vendor: impl Into<String>,
        dataset: impl Into<String>,
    ) -> Self {
        LabeledVector {
            vector,
            vendor: vendor.into(),
            dataset: dataset.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureTable {
    pub format_version: u32,
    pub build_meta: BuildMeta,
    records: BTreeMap<String, SignatureRecord>,
}

impl SignatureTable {
    pub fn empty(config: SignatureBuildConfig) -> Self {
        SignatureTable {
            format_version: FORMAT_VERSION,
            build_meta: BuildMeta {
                config,
                datasets: BTreeMap::new(),
                built_at: None,
            },
            records: BTreeMap::new(),
        }
    }

    /// Exact-match lookup; below-threshold records are never returned.
    pub fn lookup(&self, key: &FeatureVector) -> Option<&SignatureRecord> {
        self.records
            .get(&key.canonical())
            .filter(|r| r.is_matchable())
    }

    /// Any record for the key, including below-threshold ones.
    pub fn get(&self, key: &str) -> Option<&SignatureRecord> {
        self.records.get(key)
    }

    pub fn records(&self) -> impl Iterator<Item = &SignatureRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, class: SignatureClass, protocols: Option<ProtocolSet>) -> usize {
        self.records
            .values()
            .filter(|r| r.class == class && protocols.is_none_or(|p| r.protocols == p))
            .count()
    }

    pub fn with_built_at(mut self, built_at: impl Into<String>) -> Self {
        self.build_meta.built_at = Some(built_at.into());
        self
    }
}

type Groups = BTreeMap<String, (FeatureVector, BTreeMap<String, u64>, BTreeSet<String>)>;

fn group(labeled: &[LabeledVector], derive_partials: bool) -> (Groups, BTreeMap<String, u64>) {
    let mut groups: Groups = BTreeMap::new();
    let mut datasets: BTreeMap<String, u64> = BTreeMap::new();
    for lv in labeled {
        *datasets.entry(lv.dataset.clone()).or_default() += 1;
        let responsive = lv.vector.responsive();
        if responsive.is_empty() {
            continue;
        }
        let mut keys = vec![lv.vector.clone()];
        if derive_partials {
            keys.extend(responsive.proper_subsets().map(|s| lv.vector.project(s)));
        }
        for key in keys {
            let entry = groups
                .entry(key.canonical())
                .or_insert_with(|| (key, BTreeMap::new(), BTreeSet::new()));
            *entry.1.entry(lv.vendor.clone()).or_default() += 1;
            entry.2.insert(lv.dataset.clone());
        }
    }
    (groups, datasets)
}

/// Groups vectors by canonical key and classes each group. With
/// `derive_partials`, every vector also contributes its projection onto each
/// non-empty proper subset of its responsive protocols. Unresponsive vectors
/// contribute nothing; duplicates are counted, never merged.
pub fn build_signature_table(
    labeled: &[LabeledVector],
    cfg: &SignatureBuildConfig,
) -> Result<SignatureTable, SignatureError> {
    cfg.validate()?;
    let (groups, datasets) = group(labeled, cfg.derive_partials);
    let records = groups
        .into_iter()
        .map(|(k, (key, vendor_counts, dataset_ids))| {
            let class = classify_counts(&vendor_counts, cfg.min_occurrences);
            let protocols = key.responsive();
            (
                k,
                SignatureRecord {
                    key,
                    protocols,
                    vendor_counts,
                    class,
                    dataset_ids,
                },
            )
        })
        .collect();
    Ok(SignatureTable {
        format_version: FORMAT_VERSION,
        build_meta: BuildMeta {
            config: *cfg,
            datasets,
            built_at: None,
        },
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: u32,
    pub unique: usize,
    pub non_unique: usize,
}

/// Unique and non-unique full-protocol signature counts at each threshold.
pub fn sweep_threshold(
    labeled: &[LabeledVector],
    thresholds: &[u32],
) -> Result<Vec<SweepRow>, SignatureError> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(SignatureError::Config(
            "sweep thresholds must be sorted ascending".into(),
        ));
    }
    if thresholds.contains(&0) {
        return Err(SignatureError::Config(
            "thresholds must be at least 1".into(),
        ));
    }
    let (groups, _) = group(labeled, false);
    let full: Vec<&BTreeMap<String, u64>> = groups
        .values()
        .filter(|g| g.0.responsive().is_full())
        .map(|g| &g.1)
        .collect();
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let (mut unique, mut non_unique) = (0, 0);
            for counts in &full {
                match classify_counts(counts, threshold) {
                    SignatureClass::Unique => unique += 1,
                    SignatureClass::NonUnique => non_unique += 1,
                    SignatureClass::BelowThreshold => {}
                }
            }
            SweepRow {
                threshold,
                unique,
                non_unique,
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), SignatureError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BodyRef<'a> {
    format_version: u32,
    build_meta: &'a BuildMeta,
    records: Vec<&'a SignatureRecord>,
}

#[derive(Serialize)]
struct FileRef<'a> {
    format_version: u32,
    checksum: String,
    build_meta: &'a BuildMeta,
    records: Vec<&'a SignatureRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOwned {
    format_version: u32,
    checksum: String,
    build_meta: BuildMeta,
    records: Vec<SignatureRecord>,
}

fn body_checksum(table_version: u32, meta: &BuildMeta, records: Vec<&SignatureRecord>) -> String {
    let body = BodyRef {
        format_version: table_version,
        build_meta: meta,
        records,
    };
    let bytes = serde_json::to_vec(&body).expect("table body serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Pretty-printed JSON with a SHA-256 checksum over the compact body.
pub fn store_table(table: &SignatureTable) -> Vec<u8> {
    let records: Vec<&SignatureRecord> = table.records.values().collect();
    let checksum = body_checksum(table.format_version, &table.build_meta, records.clone());
    let file = FileRef {
        format_version: table.format_version,
        checksum,
        build_meta: &table.build_meta,
        records,
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("table serializes");
    out.push(b'\n');
    out
}

pub fn load_table(bytes: &[u8]) -> Result<SignatureTable, SignatureError> {
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(u64::from(FORMAT_VERSION)) => {}
        Some(v) => {
            return Err(SignatureError::Version {
                found: v.to_string(),
            })
        }
        None => return Err(SignatureError::Invalid("missing format_version".into())),
    }
    let file: FileOwned = serde_json::from_value(value)?;
    let expected = body_checksum(
        file.format_version,
        &file.build_meta,
        file.records.iter().collect(),
    );
    if expected != file.checksum {
        return Err(SignatureError::Checksum);
    }
    let min = file.build_meta.config.min_occurrences;
    let mut records = BTreeMap::new();
    for r in file.records {
        let key = r.key.canonical();
        if r.protocols != r.key.responsive() || r.protocols.is_empty() {
            return Err(SignatureError::Invalid(format!(
                "{key}: protocol set does not match key"
            )));
        }
        if r.class != classify_counts(&r.vendor_counts, min) {
            return Err(SignatureError::Invalid(format!(
                "{key}: class inconsistent with vendor counts"
            )));
        }
        if records.insert(key.clone(), r).is_some() {
            return Err(SignatureError::Invalid(format!("duplicate key {key}")));
        }
    }
    Ok(SignatureTable {
        format_version: file.format_version,
        build_meta: file.build_meta,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const JUNIPER: &str = "False,r,r,r,False,False,False,False,255,64,64,84,40,56,0";
    const CISCO: &str = "False,r,r,r,False,False,False,False,255,255,64,84,40,56,0";

    fn fv(s: &str) -> FeatureVector {
        s.parse().unwrap()
    }

    fn many(key: &str, vendor: &str, dataset: &str, n: usize) -> Vec<LabeledVector> {
        (0..n)
            .map(|_| LabeledVector::new(fv(key), vendor, dataset))
            .collect()
    }

    #[test]
    fn unique_juniper_record() {
        let t = build_signature_table(
            &many(JUNIPER, "Juniper", "a", 25),
            &SignatureBuildConfig::default(),
        )
        .unwrap();
        let r = t.lookup(&fv(JUNIPER)).unwrap();
        assert_eq!(r.class, SignatureClass::Unique);
        assert_eq!(
            r.vendor_counts,
            BTreeMap::from([("Juniper".to_string(), 25)])
        );
        assert_eq!(r.protocols, ProtocolSet::ALL);
        // 1 full key + 6 projections
        assert_eq!(t.len(), 7);
    }

    #[test]
    fn below_threshold_is_not_matchable() {
        let t = build_signature_table(
            &many(JUNIPER, "Juniper", "a", 19),
            &SignatureBuildConfig::default(),
        )
        .unwrap();
        assert_eq!(
            t.get(JUNIPER).unwrap().class,
            SignatureClass::BelowThreshold
        );
        assert!(t.lookup(&fv(JUNIPER)).is_none());
    }

    #[test]
    fn cross_dataset_conflict_is_non_unique() {
        let mut input = many(CISCO, "Cisco", "a", 20);
        input.extend(many(CISCO, "Huawei", "b", 20));
        let t = build_signature_table(&input, &SignatureBuildConfig::default()).unwrap();
        let r = t.lookup(&fv(CISCO)).unwrap();
        assert_eq!(r.class, SignatureClass::NonUnique);
        assert_eq!(r.dataset_ids.len(), 2);
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let t = build_signature_table(&[], &SignatureBuildConfig::default()).unwrap();
        assert!(t.is_empty());
        assert!(build_signature_table(
            &[],
            &SignatureBuildConfig {
                min_occurrences: 0,
                derive_partials: true
            }
        )
        .is_err());
    }

    #[test]
    fn projections_collide_across_vendors() {
        let mut input = many(JUNIPER, "Juniper", "a", 30);
        input.extend(many(CISCO, "Cisco", "a", 30));
        let t = build_signature_table(&input, &SignatureBuildConfig::default()).unwrap();
        assert_eq!(
            t.lookup(&fv(JUNIPER)).unwrap().class,
            SignatureClass::Unique
        );
        assert_eq!(t.lookup(&fv(CISCO)).unwrap().class, SignatureClass::Unique);
        // TCP&UDP projection drops the ICMP TTL that separates them
        let tcp_udp = fv(JUNIPER).project(ProtocolSet::from_bits(0b110));
        assert_eq!(t.lookup(&tcp_udp).unwrap().class, SignatureClass::NonUnique);
        let icmp = fv(JUNIPER).project(ProtocolSet::from_bits(0b001));
        assert_eq!(t.lookup(&icmp).unwrap().unique_vendor(), Some("Juniper"));
    }

    #[test]
    fn store_contains_keys_verbatim_and_roundtrips() {
        let mut input = many(JUNIPER, "Juniper", "a", 20);
        input.extend(many(CISCO, "Cisco", "a", 20));
        let t = build_signature_table(&input, &SignatureBuildConfig::default())
            .unwrap()
            .with_built_at("2026-01-01T00:00:00Z");
        let bytes = store_table(&t);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains(JUNIPER) && text.contains(CISCO));
        assert_eq!(load_table(&bytes).unwrap(), t);
        assert!(load_table(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn tampering_and_version_rejected() {
        let t = build_signature_table(
            &many(JUNIPER, "Juniper", "a", 20),
            &SignatureBuildConfig::default(),
        )
        .unwrap();
        let text = String::from_utf8(store_table(&t)).unwrap();
        let tampered = text.replacen("\"Juniper\": 20", "\"Juniper\": 21", 1);
        assert_ne!(tampered, text);
        assert!(matches!(
            load_table(tampered.as_bytes()),
            Err(SignatureError::Checksum)
        ));
        let future = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(
            load_table(future.as_bytes()),
            Err(SignatureError::Version { .. })
        ));
    }

    #[test]
    fn sweep_counts() {
        let mut input = many(JUNIPER, "Juniper", "a", 25);
        input.extend(many(CISCO, "Cisco", "a", 5));
        input.extend(many(CISCO, "Huawei", "a", 10));
        let rows = sweep_threshold(&input, &[1, 10, 16, 20, 26]).unwrap();
        let got: Vec<(u32, usize, usize)> = rows
            .iter()
            .map(|r| (r.threshold, r.unique, r.non_unique))
            .collect();
        assert_eq!(
            got,
            vec![(1, 1, 1), (10, 1, 1), (16, 1, 0), (20, 1, 0), (26, 0, 0)]
        );
        assert!(sweep_threshold(&input, &[5, 1]).is_err());
        let mut csv = Vec::new();
        write_sweep_csv(&mut csv, &rows[..1]).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "threshold,unique,non_unique\n1,1,1\n"
        );
    }
}
