//! In-process router fleet used as a scan backend with known ground truth.

mod fleet;
mod profile;
mod router;
mod transport;

use ipnet::Ipv4Net;
use thiserror::Error;

pub use fleet::{
    make_fleet, read_ground_truth, write_ground_truth, Fleet, FleetGroup, FleetSpec, GroundTruth,
    ProfileRef, RouterSummary,
};
pub use profile::{
    builtin_profile, builtin_profiles, catalog, colliding_pair, expected_signature, IpidMode,
    ProtocolBehavior, RstSeqRule, StackProfile, UdpQuote,
};
pub use router::{SimRouter, SIM_PROBER_ADDR, SIM_RANDOM_MIN_STEP};
pub use transport::SimTransport;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("profile {name}: {reason}")]
    Profile { name: String, reason: String },
    #[error("unknown built-in profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid fleet spec: {0}")]
    Spec(String),
    #[error("{prefix} has {available} usable addresses, fleet needs {needed}")]
    AddressExhausted {
        prefix: Ipv4Net,
        needed: usize,
        available: usize,
    },
}
