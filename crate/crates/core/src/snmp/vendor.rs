use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::EngineId;

pub const OTHER_VENDOR: &str = "Other";

const BUILTIN_CSV: &str = include_str!("../../data/vendors.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Snmpv3,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VendorLabel {
    pub name: String,
    pub source: LabelSource,
}

impl VendorLabel {
    pub fn new(name: impl Into<String>, source: LabelSource) -> Self {
        VendorLabel {
            name: name.into(),
            source,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    pen: u32,
    vendor: String,
}

/// Private-enterprise-number to vendor mapping, loaded from `pen,vendor` CSV.
///
/// A `# version: N` comment line sets the dictionary version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VendorDictionary {
    pub version: String,
    entries: BTreeMap<u32, String>,
}

impl VendorDictionary {
    pub fn builtin() -> Self {
        Self::from_csv(BUILTIN_CSV.as_bytes()).expect("builtin vendor dictionary parses")
    }

    pub fn from_csv<R: Read>(mut reader: R) -> Result<Self, csv::Error> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let version = text
            .lines()
            .find_map(|l| {
                l.trim()
                    .strip_prefix("# version:")
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unversioned".to_string());
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            entries.insert(row.pen, row.vendor);
        }
        Ok(VendorDictionary { version, entries })
    }

    /// Adds or replaces entries from another dictionary.
    pub fn extend(&mut self, other: &VendorDictionary) {
        self.entries
            .extend(other.entries.iter().map(|(k, v)| (*k, v.clone())));
    }

    pub fn get(&self, pen: u32) -> Option<&str> {
        self.entries.get(&pen).map(String::as_str)
    }

    pub fn pen_of(&self, vendor: &str) -> Option<u32> {
        self.entries
            .iter()
            .find(|(_, v)| v.as_str() == vendor)
            .map(|(k, _)| *k)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn vendor_from_pen(pen: u32, dict: &VendorDictionary) -> VendorLabel {
    VendorLabel::new(dict.get(pen).unwrap_or(OTHER_VENDOR), LabelSource::Snmpv3)
}

/// Legacy-layout engine IDs (format flag clear) are labeled "Other".
pub fn vendor_from_engine_id(id: &EngineId, dict: &VendorDictionary) -> VendorLabel {
    match id.enterprise_number() {
        Some(pen) => vendor_from_pen(pen, dict),
        None => VendorLabel::new(OTHER_VENDOR, LabelSource::Snmpv3),
    }
}
