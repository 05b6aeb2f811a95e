//! Request paths: a monolith or a chain of dependent services.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::profile::ClusterProfile;

/// Application shape as written in a plan: `monolith` or `{chain: k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Topology {
    Monolith,
    Chain(u32),
}

impl Topology {
    pub fn hop_count(self) -> u32 {
        match self {
            Topology::Monolith => 1,
            Topology::Chain(k) => k,
        }
    }

    /// Parses the display form, `monolith` or `chain-k`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "monolith" {
            return Some(Topology::Monolith);
        }
        s.strip_prefix("chain-")?.parse().ok().map(Topology::Chain)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Monolith => f.write_str("monolith"),
            Topology::Chain(k) => write!(f, "chain-{k}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainForm {
    chain: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TopologyForm {
    Name(String),
    Chain(ChainForm),
}

impl Serialize for Topology {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Topology::Monolith => s.serialize_str("monolith"),
            Topology::Chain(k) => ChainForm { chain: *k }.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match TopologyForm::deserialize(d)? {
            TopologyForm::Name(n) => Topology::parse(&n).ok_or_else(|| {
                serde::de::Error::custom(format!("unknown topology `{n}`; expected `monolith` or `{{chain: k}}`"))
            }),
            TopologyForm::Chain(c) => Ok(Topology::Chain(c.chain)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Monolith,
    Chain,
}

/// Ordered deployments a single request traverses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceTopology {
    pub kind: TopologyKind,
    pub hops: Vec<String>,
}

impl ServiceTopology {
    pub fn monolith(deployment: impl Into<String>) -> Self {
        Self {
            kind: TopologyKind::Monolith,
            hops: vec![deployment.into()],
        }
    }

    /// A chain needs at least two hops.
    pub fn chain(hops: Vec<String>) -> Option<Self> {
        (hops.len() >= 2).then_some(Self {
            kind: TopologyKind::Chain,
            hops,
        })
    }

    /// Binds a plan topology to the profile's deployments, in declaration order.
    pub fn resolve(topology: Topology, profile: &ClusterProfile) -> Result<Self, String> {
        let names: Vec<String> = profile.deployments.iter().map(|d| d.name.clone()).collect();
        match topology {
            Topology::Monolith => names
                .first()
                .map(|n| Self::monolith(n.clone()))
                .ok_or_else(|| "profile has no deployments".to_string()),
            Topology::Chain(k) => {
                let k = k as usize;
                if names.len() < k {
                    return Err(format!(
                        "chain of {k} hops needs {k} deployments, profile has {}",
                        names.len()
                    ));
                }
                Self::chain(names[..k].to_vec()).ok_or_else(|| "hop count ≥ 2 required for a chain".to_string())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaml_forms() {
        let m: Topology = serde_yaml::from_str("monolith").unwrap();
        assert_eq!(m, Topology::Monolith);
        let c: Topology = serde_yaml::from_str("{chain: 3}").unwrap();
        assert_eq!(c, Topology::Chain(3));
        let c: Topology = serde_yaml::from_str("chain-4").unwrap();
        assert_eq!(c, Topology::Chain(4));
        assert!(serde_yaml::from_str::<Topology>("ring").is_err());
        let back: Topology = serde_yaml::from_str(&serde_yaml::to_string(&Topology::Chain(5)).unwrap()).unwrap();
        assert_eq!(back, Topology::Chain(5));
    }

    #[test]
    fn resolve_against_profile() {
        let p = ClusterProfile::four_node().with_topology_deployments(Topology::Chain(3));
        let t = ServiceTopology::resolve(Topology::Chain(3), &p).unwrap();
        assert_eq!(t.hops, ["svc-1", "svc-2", "svc-3"]);
        assert!(ServiceTopology::resolve(Topology::Chain(4), &p).is_err());
        assert!(ServiceTopology::chain(vec!["a".into()]).is_none());
    }
}
