//! Valley-free search for transit ASes toward a destination that avoid a given AS.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use super::{AsGraph, Relationship};

/// Every path result is limited to what the relationship data shows.
pub const VISIBILITY_NOTE: &str = "visible paths only";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitConfig {
    /// Longest AS path considered, counted in ASes including both ends.
    pub max_depth: usize,
    /// Cap on DFS node expansions; the result is marked truncated when hit.
    pub max_expansions: u64,
}

impl Default for TransitConfig {
    fn default() -> Self {
        TransitConfig {
            max_depth: 6,
            max_expansions: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", content = "transit_ases", rename_all = "snake_case")]
pub enum TransitOutcome {
    NoPathVisible,
    OnlyViaAvoided,
    /// Sorted, distinct transit ASes of the paths that avoid the AS.
    Alternative(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitResult {
    pub dst_as: u32,
    pub avoid_as: u32,
    #[serde(flatten)]
    pub outcome: TransitOutcome,
    pub paths_examined: u64,
    pub truncated: bool,
    pub note: &'static str,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Up,
    Down,
}

struct Search<'a> {
    graph: &'a AsGraph,
    avoid: u32,
    cfg: TransitConfig,
    stack: Vec<u32>,
    alt: BTreeSet<u32>,
    via_avoided: bool,
    paths: u64,
    expansions: u64,
    truncated: bool,
}

impl Search<'_> {
    fn visit(&mut self, phase: Phase) {
        if self.expansions >= self.cfg.max_expansions {
            self.truncated = true;
            return;
        }
        self.expansions += 1;
        let n = self.stack.len();
        let here = self.stack[n - 1];
        if n >= 3 && here != self.avoid {
            self.paths += 1;
            let interior = &self.stack[1..n - 1];
            if interior.contains(&self.avoid) {
                self.via_avoided = true;
            } else {
                self.alt.extend(interior.iter().copied());
            }
        }
        if n >= self.cfg.max_depth {
            return;
        }
        for &(next, rel) in self.graph.neighbors(here) {
            // Walking away from the destination, the reversed path must
            // still read as uphill, at most one peer link, then downhill.
            let next_phase = match (phase, rel) {
                (Phase::Up, Relationship::Provider) => Phase::Up,
                (_, Relationship::Customer) => Phase::Down,
                (Phase::Up, Relationship::Peer) => Phase::Down,
                _ => continue,
            };
            if self.stack.contains(&next) {
                continue;
            }
            self.stack.push(next);
            self.visit(next_phase);
            self.stack.pop();
        }
    }
}

/// Enumerates simple valley-free AS paths that end at `dst_as`, have at
/// least one transit AS and do not start at `avoid_as`. Transit ASes of the
/// paths that avoid `avoid_as` form the alternative; if every path crosses
/// it the result is ONLY_VIA_AVOIDED.
pub fn alternative_transit(
    graph: &AsGraph,
    dst_as: u32,
    avoid_as: u32,
    cfg: &TransitConfig,
) -> TransitResult {
    let mut s = Search {
        graph,
        avoid: avoid_as,
        cfg: *cfg,
        stack: vec![dst_as],
        alt: BTreeSet::new(),
        via_avoided: false,
        paths: 0,
        expansions: 0,
        truncated: false,
    };
    if graph.contains(dst_as) && cfg.max_depth >= 3 {
        s.visit(Phase::Up);
    }
    let outcome = if !s.alt.is_empty() {
        TransitOutcome::Alternative(s.alt.into_iter().collect())
    } else if s.via_avoided {
        TransitOutcome::OnlyViaAvoided
    } else {
        TransitOutcome::NoPathVisible
    };
    TransitResult {
        dst_as,
        avoid_as,
        outcome,
        paths_examined: s.paths,
        truncated: s.truncated,
        note: VISIBILITY_NOTE,
    }
}

pub fn write_transit_csv<W: Write>(out: W, rows: &[TransitResult]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dst_as",
        "avoid_as",
        "result",
        "transit_ases",
        "paths_examined",
        "truncated",
        "note",
    ])?;
    for r in rows {
        let (label, ases) = match &r.outcome {
            TransitOutcome::NoPathVisible => ("no_path_visible", String::new()),
            TransitOutcome::OnlyViaAvoided => ("only_via_avoided", String::new()),
            TransitOutcome::Alternative(a) => (
                "alternative",
                a.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
            ),
        };
        w.write_record([
            r.dst_as.to_string(),
            r.avoid_as.to_string(),
            label.to_string(),
            ases,
            r.paths_examined.to_string(),
            r.truncated.to_string(),
            r.note.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
