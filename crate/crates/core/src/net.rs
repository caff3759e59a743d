//! Address classification helpers.

use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

/// Special-purpose IPv4 blocks that never appear as routable router
/// interfaces (IANA special-purpose registry, plus multicast and class E).
const SPECIAL_PURPOSE: &[(&str, &str)] = &[
    ("0.0.0.0/8", "this network"),
    ("10.0.0.0/8", "private"),
    ("100.64.0.0/10", "shared address space"),
    ("127.0.0.0/8", "loopback"),
    ("169.254.0.0/16", "link local"),
    ("172.16.0.0/12", "private"),
    ("192.0.0.0/24", "IETF protocol assignments"),
    ("192.0.2.0/24", "documentation"),
    ("192.88.99.0/24", "6to4 relay anycast"),
    ("192.168.0.0/16", "private"),
    ("198.18.0.0/15", "benchmarking"),
    ("198.51.100.0/24", "documentation"),
    ("203.0.113.0/24", "documentation"),
    ("224.0.0.0/4", "multicast"),
    ("240.0.0.0/4", "reserved"),
];

/// Returns why `addr` is not a routable unicast address, or `None` if it is.
pub fn non_routable_reason(addr: Ipv4Addr) -> Option<&'static str> {
    if addr.is_broadcast() {
        return Some("broadcast");
    }
    SPECIAL_PURPOSE.iter().find_map(|(net, why)| {
        let net: Ipv4Net = net.parse().expect("static prefix");
        net.contains(&addr).then_some(*why)
    })
}

pub fn is_routable(addr: Ipv4Addr) -> bool {
    non_routable_reason(addr).is_none()
}
