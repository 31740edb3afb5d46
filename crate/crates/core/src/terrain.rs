//! Defensive terrain: service categories, per-action detection penalties and
//! host risk tiers.
//!
//! Every service in a network document belongs to one of four categories.
//! Acting against a host costs a negative penalty decided by the worst
//! category among the services it runs, the action family (scan or exploit)
//! and a global penalty scale. Exploits are always one unit worse than scans
//! for the same category, and security-hardening services are penalised like
//! common ones: they raise detection likelihood, not attacker value.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::ActionKind;

/// Category of a single network service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceCategory {
    Common,
    Security,
    Data,
    Authentication,
}

impl ServiceCategory {
    /// Severity rank used when picking the worst category on a host.
    /// Security and Common share a penalty row but Security ranks above
    /// Common so the choice is deterministic.
    pub fn rank(self) -> u8 {
        match self {
            ServiceCategory::Common => 0,
            ServiceCategory::Security => 1,
            ServiceCategory::Data => 2,
            ServiceCategory::Authentication => 3,
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "common" => Some(ServiceCategory::Common),
            "security" => Some(ServiceCategory::Security),
            "data" => Some(ServiceCategory::Data),
            "authentication" | "auth" => Some(ServiceCategory::Authentication),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceCategory::Common => "common",
            ServiceCategory::Security => "security",
            ServiceCategory::Data => "data",
            ServiceCategory::Authentication => "authentication",
        }
    }
}

impl fmt::Display for ServiceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ServiceCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ServiceCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        ServiceCategory::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown service category `{text}`")))
    }
}

/// Risk tier of a host, decided by the services it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

/// Multiplier applied to every base penalty. Must be at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PenaltyScale(f64);

impl PenaltyScale {
    pub const ONE: PenaltyScale = PenaltyScale(1.0);

    pub fn new(value: f64) -> Result<Self, TerrainError> {
        if value.is_finite() && value >= 1.0 {
            Ok(PenaltyScale(value))
        } else {
            Err(TerrainError::InvalidScale(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PenaltyScale {
    type Error = TerrainError;
    fn try_from(v: f64) -> Result<Self, TerrainError> {
        PenaltyScale::new(v)
    }
}

impl From<PenaltyScale> for f64 {
    fn from(s: PenaltyScale) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum TerrainError {
    #[error("penalty scale must be a finite value >= 1, got {0}")]
    InvalidScale(f64),
    #[error("base penalty must be negative, got {0}")]
    NonNegativeBase(f64),
    #[error("service `{0}` is not in the service catalog")]
    UnknownService(String),
    #[error("host runs no services, so it has no penalty category")]
    EmptyServiceList,
}

/// Base (scale 1) penalty for acting against a host whose worst category is
/// `category`. Scans cost one unit less than exploits in every category.
pub fn base_penalty(category: ServiceCategory, kind: ActionKind) -> f64 {
    let exploit = match category {
        ServiceCategory::Authentication => -6.0,
        ServiceCategory::Data => -4.0,
        ServiceCategory::Security | ServiceCategory::Common => -2.0,
    };
    if kind.is_exploit() {
        exploit
    } else {
        exploit + 1.0
    }
}

/// Multiplies a base penalty by the scale. The base must be negative; a
/// positive "penalty" would silently turn risk into reward.
pub fn scaled_penalty(base: f64, scale: PenaltyScale) -> Result<f64, TerrainError> {
    if base >= 0.0 {
        return Err(TerrainError::NonNegativeBase(base));
    }
    Ok(base * scale.value())
}

/// Worst (highest-rank) category among `services` according to the catalog.
pub fn worst_category(
    services: &[String],
    catalog: &BTreeMap<String, ServiceCategory>,
) -> Result<ServiceCategory, TerrainError> {
    if services.is_empty() {
        return Err(TerrainError::EmptyServiceList);
    }
    let mut worst: Option<ServiceCategory> = None;
    for name in services {
        let cat = *catalog
            .get(name)
            .ok_or_else(|| TerrainError::UnknownService(name.clone()))?;
        worst = Some(match worst {
            Some(w) if w.rank() >= cat.rank() => w,
            _ => cat,
        });
    }
    Ok(worst.expect("non-empty service list"))
}

/// Scaled penalty for one action against a host running `services`.
pub fn host_penalty(
    services: &[String],
    kind: ActionKind,
    catalog: &BTreeMap<String, ServiceCategory>,
    scale: PenaltyScale,
) -> Result<f64, TerrainError> {
    let category = worst_category(services, catalog)?;
    scaled_penalty(base_penalty(category, kind), scale)
}

/// Risk tier of a host running `services`: High when any authentication
/// service is present, Medium when data services are the worst exposure,
/// Low otherwise.
pub fn risk_tier(
    services: &[String],
    catalog: &BTreeMap<String, ServiceCategory>,
) -> Result<RiskTier, TerrainError> {
    Ok(match worst_category(services, catalog)? {
        ServiceCategory::Authentication => RiskTier::High,
        ServiceCategory::Data => RiskTier::Medium,
        ServiceCategory::Security | ServiceCategory::Common => RiskTier::Low,
    })
}
