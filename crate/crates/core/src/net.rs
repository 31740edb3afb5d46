//! Network topology documents: hosts, subnets, firewalls and deterministic
//! reachability.
//!
//! A document is JSON with five top-level keys: `subnets` (sizes, indexed by
//! subnet id), `hosts`, `firewalls`, `adjacency` and `service_catalog`.
//! Subnet adjacency is undirected; firewall rules are directional and an
//! absent rule on an adjacent edge means the edge is unfiltered. An explicit
//! rule with an empty `allowed_services` set blocks every traversal of that
//! edge in that direction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::terrain::{risk_tier, RiskTier, ServiceCategory};

pub mod reference;

/// `(subnet, host)` pair identifying one host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HostAddress(pub usize, pub usize);

impl HostAddress {
    pub fn subnet(self) -> usize {
        self.0
    }

    pub fn host(self) -> usize {
        self.1
    }
}

impl fmt::Display for HostAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

impl HostAddress {
    /// Parses the `(s,h)` display form, tolerating whitespace.
    pub fn parse(text: &str) -> Option<Self> {
        let inner = text.trim().strip_prefix('(')?.strip_suffix(')')?;
        let (a, b) = inner.split_once(',')?;
        Some(HostAddress(
            a.trim().parse().ok()?,
            b.trim().parse().ok()?,
        ))
    }
}

/// One host: its address and static configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub address: HostAddress,
    pub services: Vec<String>,
    pub os: String,
    #[serde(default)]
    pub processes: Vec<String>,
    /// Bounty paid into the goal reward component the first time this host
    /// is compromised. The reference network uses 0 everywhere.
    #[serde(default)]
    pub compromise_value: f64,
}

/// Directional firewall rule on one adjacency edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirewallRule {
    pub src: usize,
    pub dst: usize,
    pub allowed_services: BTreeSet<String>,
}

/// A full network document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Size of each subnet, indexed by subnet id. Size 0 is allowed (an
    /// edge subnet such as the internet carries no hosts).
    pub subnets: Vec<usize>,
    pub hosts: Vec<HostSpec>,
    pub firewalls: Vec<FirewallRule>,
    /// Undirected subnet adjacency, one entry per edge.
    pub adjacency: Vec<(usize, usize)>,
    pub service_catalog: BTreeMap<String, ServiceCategory>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum NetError {
    #[error("network document is not valid JSON: {0}")]
    Json(String),
    #[error("network document failed validation:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("unknown host address {0}")]
    UnknownAddress(HostAddress),
}

impl NetworkConfig {
    pub fn host(&self, address: HostAddress) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.address == address)
    }

    pub fn host_index(&self, address: HostAddress) -> Option<usize> {
        self.hosts.iter().position(|h| h.address == address)
    }

    pub fn hosts_in_subnet(&self, subnet: usize) -> impl Iterator<Item = &HostSpec> {
        self.hosts.iter().filter(move |h| h.address.subnet() == subnet)
    }

    pub fn total_services(&self) -> usize {
        self.hosts.iter().map(|h| h.services.len()).sum()
    }

    pub fn risk_tier(&self, address: HostAddress) -> Result<RiskTier, NetError> {
        let host = self
            .host(address)
            .ok_or(NetError::UnknownAddress(address))?;
        risk_tier(&host.services, &self.service_catalog)
            .map_err(|e| NetError::Validation(vec![e.to_string()]))
    }

    pub fn adjacent_subnets(&self, subnet: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &(a, b) in &self.adjacency {
            if a == subnet {
                out.insert(b);
            }
            if b == subnet {
                out.insert(a);
            }
        }
        out
    }

    fn firewall(&self, src: usize, dst: usize) -> Option<&FirewallRule> {
        self.firewalls.iter().find(|r| r.src == src && r.dst == dst)
    }

    /// True when traffic from subnet `src` may reach `service` on a host in
    /// subnet `dst`. An absent rule leaves the edge unfiltered.
    pub fn firewall_allows(&self, src: usize, dst: usize, service: &str) -> bool {
        match self.firewall(src, dst) {
            Some(rule) => rule.allowed_services.contains(service),
            None => true,
        }
    }

    /// Collects every validation violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), NetError> {
        let mut errs = Vec::new();
        let mut seen = BTreeSet::new();
        for host in &self.hosts {
            let HostAddress(s, h) = host.address;
            if !seen.insert(host.address) {
                errs.push(format!("duplicate host address {}", host.address));
            }
            match self.subnets.get(s) {
                None => errs.push(format!("host {} references unknown subnet {s}", host.address)),
                Some(&size) if h >= size => errs.push(format!(
                    "host {} exceeds subnet {s} size {size}",
                    host.address
                )),
                _ => {}
            }
            if host.services.is_empty() {
                errs.push(format!("host {} runs no services", host.address));
            }
            let mut unique = BTreeSet::new();
            for service in &host.services {
                if !unique.insert(service) {
                    errs.push(format!(
                        "host {} lists service `{service}` more than once",
                        host.address
                    ));
                }
                if !self.service_catalog.contains_key(service) {
                    errs.push(format!(
                        "host {} runs `{service}` which is missing from the service catalog",
                        host.address
                    ));
                }
            }
        }
        for (subnet, &size) in self.subnets.iter().enumerate() {
            let present = self.hosts_in_subnet(subnet).count();
            if present != size {
                errs.push(format!(
                    "subnet {subnet} declares {size} hosts but {present} are defined"
                ));
            }
        }
        for rule in &self.firewalls {
            for idx in [rule.src, rule.dst] {
                if idx >= self.subnets.len() {
                    errs.push(format!(
                        "firewall rule {}->{} references unknown subnet {idx}",
                        rule.src, rule.dst
                    ));
                }
            }
            for service in &rule.allowed_services {
                if !self.service_catalog.contains_key(service) {
                    errs.push(format!(
                        "firewall rule {}->{} allows `{service}` which is missing from the catalog",
                        rule.src, rule.dst
                    ));
                }
            }
        }
        let mut edges = BTreeSet::new();
        for &(a, b) in &self.adjacency {
            if a == b {
                errs.push(format!("adjacency contains self-loop on subnet {a}"));
            }
            if a >= self.subnets.len() || b >= self.subnets.len() {
                errs.push(format!("adjacency edge ({a},{b}) references an unknown subnet"));
            }
            if !edges.insert((a.min(b), a.max(b))) {
                errs.push(format!("adjacency edge ({a},{b}) is listed more than once"));
            }
        }
        if self.subnets.len() > 1 && !self.subnet_graph_connected() {
            errs.push("the subnet graph is not connected".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(NetError::Validation(errs))
        }
    }

    fn subnet_graph_connected(&self) -> bool {
        if self.subnets.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.subnets.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for next in self.adjacent_subnets(s) {
                if next < seen.len() && !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        seen.into_iter().all(|v| v)
    }

    /// Canonical serialization: struct field order with sorted map keys.
    /// Serialize-parse-serialize is byte stable.
    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("network serializes");
        out.push('\n');
        out
    }
}

/// Parses and validates a network document.
pub fn parse_network_config(text: &str) -> Result<NetworkConfig, NetError> {
    let config: NetworkConfig =
        serde_json::from_str(text).map_err(|e| NetError::Json(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Hosts reachable given a set of compromised footholds.
///
/// A host is reachable when it shares a subnet with a compromised host, or
/// when it sits in a subnet adjacent to one holding a compromised host and
/// the firewall on that directed edge admits at least one service the host
/// runs. Compromised hosts are themselves reachable.
pub fn reachable_hosts(
    net: &NetworkConfig,
    compromised: &BTreeSet<HostAddress>,
) -> Result<BTreeSet<HostAddress>, NetError> {
    for &address in compromised {
        if net.host(address).is_none() {
            return Err(NetError::UnknownAddress(address));
        }
    }
    let foothold_subnets: BTreeSet<usize> =
        compromised.iter().map(|a| a.subnet()).collect();
    let mut out = BTreeSet::new();
    for subnet in &foothold_subnets {
        for host in net.hosts_in_subnet(*subnet) {
            out.insert(host.address);
        }
    }
    for &src in &foothold_subnets {
        for dst in net.adjacent_subnets(src) {
            for host in net.hosts_in_subnet(dst) {
                if out.contains(&host.address) {
                    continue;
                }
                if host
                    .services
                    .iter()
                    .any(|service| net.firewall_allows(src, dst, service))
                {
                    out.insert(host.address);
                }
            }
        }
    }
    Ok(out)
}

/// True when every subnet chain from `start_subnet` to striking distance of
/// `target` passes through a subnet whose hosts are all High tier, so any
/// traversal must compromise a High-tier host. Used as a design check on
/// shipped networks.
pub fn high_tier_unavoidable(
    net: &NetworkConfig,
    start_subnet: usize,
    target: HostAddress,
) -> Result<bool, NetError> {
    if net.host(target).is_none() {
        return Err(NetError::UnknownAddress(target));
    }
    let traversable: Vec<bool> = (0..net.subnets.len())
        .map(|s| {
            net.hosts_in_subnet(s).any(|h| {
                risk_tier(&h.services, &net.service_catalog)
                    .map(|t| t != RiskTier::High)
                    .unwrap_or(false)
            })
        })
        .collect();
    if !traversable.get(start_subnet).copied().unwrap_or(false) {
        return Ok(true);
    }
    // BFS over subnets that offer a non-High foothold.
    let mut seen = vec![false; net.subnets.len()];
    seen[start_subnet] = true;
    let mut queue = VecDeque::from([start_subnet]);
    while let Some(s) = queue.pop_front() {
        if s == target.subnet() || net.adjacent_subnets(s).contains(&target.subnet()) {
            return Ok(false);
        }
        for next in net.adjacent_subnets(s) {
            if next < seen.len() && !seen[next] && traversable[next] {
                seen[next] = true;
                queue.push_back(next);
            }
        }
    }
    Ok(true)
}
