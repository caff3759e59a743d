//! Vendor verdicts from exact signature matches, with partial fallback,
//! and the seeded train/test holdout evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::jsonl::{self, JsonlError};
use crate::proto::ProtocolSet;
use crate::signatures::{
    build_signature_table, LabeledVector, SignatureBuildConfig, SignatureClass, SignatureError,
    SignatureTable,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Vendor(String),
    NonUnique(BTreeSet<String>),
    Unknown,
    Unresponsive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Full,
    Partial(ProtocolSet),
}

impl std::fmt::Display for MatchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatchKind::Full => f.write_str("full"),
            MatchKind::Partial(set) => write!(f, "partial:{set}"),
        }
    }
}

impl std::str::FromStr for MatchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(MatchKind::Full);
        }
        let set = s
            .strip_prefix("partial:")
            .ok_or_else(|| format!("bad match kind {s:?}"))?;
        let set: ProtocolSet = set
            .parse()
            .map_err(|e| format!("bad match kind {s:?}: {e}"))?;
        if set.is_empty() || set.is_full() {
            return Err(format!("bad match kind {s:?}"));
        }
        Ok(MatchKind::Partial(set))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub matched_key: Option<String>,
    pub match_kind: Option<MatchKind>,
}

impl Verdict {
    fn bare(outcome: Outcome) -> Self {
        Verdict {
            outcome,
            matched_key: None,
            match_kind: None,
        }
    }

    pub fn vendor(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Vendor(v) => Some(v),
            _ => None,
        }
    }
}

/// Looks up the full key first, then each projection in fallback order.
///
/// A full-key hit decides immediately (unique or not). A vector with only
/// some protocols responsive starts at its own subset. Partial hits that are
/// non-unique do not stop the search; if nothing unique turns up, the first
/// non-unique hit is reported.
pub fn classify_vector(v: &FeatureVector, table: &SignatureTable) -> Verdict {
    let responsive = v.responsive();
    if responsive.is_empty() {
        return Verdict::bare(Outcome::Unresponsive);
    }
    let hit = |subset: ProtocolSet| {
        let key = if subset == responsive {
            v.clone()
        } else {
            v.project(subset)
        };
        table.lookup(&key).map(|r| (r, subset))
    };
    if responsive.is_full() {
        if let Some((r, _)) = hit(responsive) {
            return verdict_from(r, MatchKind::Full);
        }
    }
    let mut first_non_unique = None;
    let own = (!responsive.is_full()).then_some(responsive);
    for subset in own.into_iter().chain(responsive.proper_subsets()) {
        if let Some((r, s)) = hit(subset) {
            match r.class {
                SignatureClass::Unique => return verdict_from(r, MatchKind::Partial(s)),
                SignatureClass::NonUnique => {
                    first_non_unique.get_or_insert((r, s));
                }
                SignatureClass::BelowThreshold => {}
            }
        }
    }
    match first_non_unique {
        Some((r, s)) => verdict_from(r, MatchKind::Partial(s)),
        None => Verdict::bare(Outcome::Unknown),
    }
}

fn verdict_from(r: &crate::signatures::SignatureRecord, kind: MatchKind) -> Verdict {
    let outcome = match r.unique_vendor() {
        Some(vendor) => Outcome::Vendor(vendor.to_string()),
        None => Outcome::NonUnique(r.vendors().map(str::to_string).collect()),
    };
    Verdict {
        outcome,
        matched_key: Some(r.key.canonical()),
        match_kind: Some(kind),
    }
}

/// One line of a verdicts file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub target: Ipv4Addr,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_kind: Option<String>,
}

impl VerdictRecord {
    pub fn new(target: Ipv4Addr, v: &Verdict) -> Self {
        let (verdict, vendor, candidates) = match &v.outcome {
            Outcome::Vendor(name) => ("vendor", Some(name.clone()), Vec::new()),
            Outcome::NonUnique(c) => ("non_unique", None, c.iter().cloned().collect()),
            Outcome::Unknown => ("unknown", None, Vec::new()),
            Outcome::Unresponsive => ("unresponsive", None, Vec::new()),
        };
        VerdictRecord {
            target,
            verdict: verdict.to_string(),
            vendor,
            candidates,
            matched_key: v.matched_key.clone(),
            match_kind: v.match_kind.map(|k| k.to_string()),
        }
    }

    pub fn to_verdict(&self) -> Result<Verdict, String> {
        let outcome = match (self.verdict.as_str(), &self.vendor, self.candidates.len()) {
            ("vendor", Some(v), 0) => Outcome::Vendor(v.clone()),
            ("non_unique", None, n) if n >= 2 => {
                Outcome::NonUnique(self.candidates.iter().cloned().collect())
            }
            ("unknown", None, 0) => Outcome::Unknown,
            ("unresponsive", None, 0) => Outcome::Unresponsive,
            _ => return Err(format!("{}: inconsistent verdict fields", self.target)),
        };
        let match_kind = self.match_kind.as_deref().map(str::parse).transpose()?;
        let matched = matches!(outcome, Outcome::Vendor(_) | Outcome::NonUnique(_));
        if matched != self.matched_key.is_some() || matched != match_kind.is_some() {
            return Err(format!(
                "{}: match fields inconsistent with verdict",
                self.target
            ));
        }
        if let Some(key) = &self.matched_key {
            key.parse::<FeatureVector>()
                .map_err(|e| format!("{}: matched_key: {e}", self.target))?;
        }
        Ok(Verdict {
            outcome,
            matched_key: self.matched_key.clone(),
            match_kind,
        })
    }
}

pub fn write_verdicts<'a, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = &'a VerdictRecord>,
) -> Result<(), JsonlError> {
    jsonl::write_all(out, records)
}

pub fn read_verdicts<R: BufRead>(reader: R) -> Result<Vec<VerdictRecord>, JsonlError> {
    jsonl::read_all(reader, |r: &VerdictRecord| r.to_verdict().map(|_| ()))
}

#[derive(Debug, Error)]
pub enum HoldoutError {
    #[error("split must be strictly between 0 and 1, got {0}")]
    Split(f64),
    #[error("no labeled vectors to evaluate")]
    Empty,
    #[error(transparent)]
    Build(#[from] SignatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VendorScore {
    pub vendor: String,
    /// Absent when the vendor has no test instances.
    pub recall: Option<f64>,
    /// Absent when no test vector was attributed to the vendor.
    pub precision: Option<f64>,
    /// Test instances of the vendor.
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutReport {
    pub train_size: usize,
    pub test_size: usize,
    pub scores: Vec<VendorScore>,
}

/// Seeded random split; builds a table from the training share and scores
/// vendor verdicts on the rest. Only VENDOR verdicts count toward precision;
/// any other verdict is a recall miss.
pub fn evaluate_holdout(
    labeled: &[(FeatureVector, String)],
    cfg: &SignatureBuildConfig,
    split: f64,
    seed: u64,
) -> Result<HoldoutReport, HoldoutError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(HoldoutError::Split(split));
    }
    if labeled.is_empty() {
        return Err(HoldoutError::Empty);
    }
    let mut idx: Vec<usize> = (0..labeled.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((labeled.len() as f64) * split).round() as usize;
    let (train, test) = idx.split_at(n_train.min(labeled.len()));

    let train_set: Vec<LabeledVector> = train
        .iter()
        .map(|&i| LabeledVector::new(labeled[i].0.clone(), labeled[i].1.clone(), "train"))
        .collect();
    let table = build_signature_table(&train_set, cfg)?;

    #[derive(Default)]
    struct Tally {
        support: usize,
        correct: usize,
        predicted: usize,
    }
    let mut tally: BTreeMap<String, Tally> = BTreeMap::new();
    for &i in test {
        let (vector, truth) = &labeled[i];
        tally.entry(truth.clone()).or_default().support += 1;
        if let Outcome::Vendor(pred) = classify_vector(vector, &table).outcome {
            if pred == *truth {
                tally.entry(pred.clone()).or_default().correct += 1;
            }
            tally.entry(pred).or_default().predicted += 1;
        }
    }
    let scores = tally
        .into_iter()
        .map(|(vendor, t)| VendorScore {
            vendor,
            recall: (t.support > 0).then(|| t.correct as f64 / t.support as f64),
            precision: (t.predicted > 0).then(|| t.correct as f64 / t.predicted as f64),
            total: t.support,
        })
        .collect();
    Ok(HoldoutReport {
        train_size: train.len(),
        test_size: test.len(),
        scores,
    })
}

/// `vendor,recall,precision,total` with empty cells for undefined values.
pub fn write_holdout_csv<W: Write>(out: W, report: &HoldoutReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vendor", "recall", "precision", "total"])?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
    for s in &report.scores {
        w.write_record([
            s.vendor.clone(),
            fmt(s.recall),
            fmt(s.precision),
            s.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
