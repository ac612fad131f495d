use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Time, MS};

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("topology is not connected")]
    Disconnected,
    #[error("topology has no relay")]
    NoRelay,
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Relay,
    Guard,
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "client" => Ok(Role::Client),
            "relay" => Ok(Role::Relay),
            "guard" => Ok(Role::Guard),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Client => "client",
            Role::Relay => "relay",
            Role::Guard => "guard",
        })
    }
}

/// LAN links join clients to the relay; WAN links reach the guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkClass {
    Lan,
    Wan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub latency: Time,
    pub jitter: Time,
    pub bandwidth_bps: u64,
    pub class: LinkClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    LanDefault,
    LocalGuard,
    Vpn,
}

impl FromStr for Preset {
    type Err = TopologyError;
    fn from_str(s: &str) -> Result<Self, TopologyError> {
        match s {
            "lan" | "lan_default" => Ok(Preset::LanDefault),
            "local_guard" | "local-guard" => Ok(Preset::LocalGuard),
            "vpn" => Ok(Preset::Vpn),
            _ => Err(TopologyError::UnknownPreset(s.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::LanDefault => "lan_default",
            Preset::LocalGuard => "local_guard",
            Preset::Vpn => "vpn",
        })
    }
}

const MBPS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub preset: Option<Preset>,
}

impl Topology {
    /// Star around the relay: node 0 is the relay, then `n` clients, then
    /// the guards. `local_guard` always has exactly one guard.
    pub fn preset(p: Preset, n: usize, m: usize) -> Self {
        let m = if p == Preset::LocalGuard { 1 } else { m };
        let (client_lat, guard_lat, guard_bw) = match p {
            Preset::LanDefault => (10 * MS, 100 * MS, 10 * MBPS),
            Preset::LocalGuard => (10 * MS, 10 * MS, 100 * MBPS),
            Preset::Vpn => (100 * MS, 100 * MS, 10 * MBPS),
        };
        let mut nodes = vec![NodeSpec {
            name: "relay".into(),
            role: Role::Relay,
        }];
        let mut links = Vec::new();
        for i in 0..n {
            nodes.push(NodeSpec {
                name: format!("c{i}"),
                role: Role::Client,
            });
            links.push(LinkSpec {
                a: nodes.len() - 1,
                b: 0,
                latency: client_lat,
                jitter: 0,
                bandwidth_bps: 100 * MBPS,
                class: LinkClass::Lan,
            });
        }
        for j in 0..m {
            nodes.push(NodeSpec {
                name: format!("g{j}"),
                role: Role::Guard,
            });
            links.push(LinkSpec {
                a: nodes.len() - 1,
                b: 0,
                latency: guard_lat,
                jitter: 0,
                bandwidth_bps: guard_bw,
                class: if p == Preset::LocalGuard {
                    LinkClass::Lan
                } else {
                    LinkClass::Wan
                },
            });
        }
        Self {
            nodes,
            links,
            preset: Some(p),
        }
    }

    /// Adds the same jitter bound to every link.
    pub fn with_jitter(mut self, jitter: Time) -> Self {
        for l in &mut self.links {
            l.jitter = jitter;
        }
        self
    }

    fn with_role(&self, r: Role) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == r)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn relay(&self) -> Option<NodeId> {
        self.with_role(Role::Relay).first().copied()
    }

    pub fn clients(&self) -> Vec<NodeId> {
        self.with_role(Role::Client)
    }

    pub fn guards(&self) -> Vec<NodeId> {
        self.with_role(Role::Guard)
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.links
            .iter()
            .position(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.relay().is_none() {
            return Err(TopologyError::NoRelay);
        }
        if self.nodes.is_empty() {
            return Ok(());
        }
        let mut seen = BTreeSet::from([0]);
        let mut todo = VecDeque::from([0]);
        while let Some(x) = todo.pop_front() {
            for l in &self.links {
                let y = if l.a == x {
                    l.b
                } else if l.b == x {
                    l.a
                } else {
                    continue;
                };
                if seen.insert(y) {
                    todo.push_back(y);
                }
            }
        }
        if seen.len() == self.nodes.len() {
            Ok(())
        } else {
            Err(TopologyError::Disconnected)
        }
    }

    /// Key-value text:
    ///
    /// ```text
    /// preset lan_default 10 3
    /// node relay relay
    /// node c0 client
    /// link c0 relay latency_ms=10 jitter_ms=0 bandwidth_mbps=100 class=lan
    /// ```
    ///
    /// A `preset` line expands to that preset; later lines add to it.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut topo = Topology {
            nodes: Vec::new(),
            links: Vec::new(),
            preset: None,
        };
        let mut names: BTreeMap<String, NodeId> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| TopologyError::Parse { line, msg };
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split_whitespace().collect();
            match f[0] {
                "preset" => {
                    let [_, p, n, m] = f[..] else {
                        return Err(err("expected: preset NAME N M".into()));
                    };
                    let p: Preset = p.parse()?;
                    let n = n.parse().map_err(|e| err(format!("n: {e}")))?;
                    let m = m.parse().map_err(|e| err(format!("m: {e}")))?;
                    topo = Topology::preset(p, n, m);
                    names = topo.nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
                }
                "node" => {
                    let [_, name, role] = f[..] else {
                        return Err(err("expected: node NAME ROLE".into()));
                    };
                    if names.contains_key(name) {
                        return Err(err(format!("duplicate node {name}")));
                    }
                    let role = role.parse().map_err(err)?;
                    names.insert(name.to_string(), topo.nodes.len());
                    topo.nodes.push(NodeSpec {
                        name: name.to_string(),
                        role,
                    });
                }
                "link" => {
                    if f.len() < 3 {
                        return Err(err("expected: link A B key=value...".into()));
                    }
                    let node = |s: &str| names.get(s).copied().ok_or_else(|| err(format!("unknown node {s}")));
                    let (a, b) = (node(f[1])?, node(f[2])?);
                    let mut spec = LinkSpec {
                        a,
                        b,
                        latency: 0,
                        jitter: 0,
                        bandwidth_bps: 100 * MBPS,
                        class: LinkClass::Lan,
                    };
                    for kv in &f[3..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("bad pair {kv}")))?;
                        let num = || v.parse::<f64>().map_err(|e| err(format!("{k}: {e}")));
                        match k {
                            "latency_ms" => spec.latency = (num()? * MS as f64).round() as Time,
                            "jitter_ms" => spec.jitter = (num()? * MS as f64).round() as Time,
                            "bandwidth_mbps" => spec.bandwidth_bps = (num()? * MBPS as f64).round() as u64,
                            "class" => {
                                spec.class = match v {
                                    "lan" => LinkClass::Lan,
                                    "wan" => LinkClass::Wan,
                                    _ => return Err(err(format!("unknown class {v}"))),
                                }
                            }
                            _ => return Err(err(format!("unknown key {k}"))),
                        }
                    }
                    if spec.bandwidth_bps == 0 {
                        return Err(err("bandwidth must be positive".into()));
                    }
                    topo.links.push(spec);
                }
                other => return Err(err(format!("unknown directive {other}"))),
            }
        }
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            s.push_str(&format!("node {} {}\n", n.name, n.role));
        }
        for l in &self.links {
            s.push_str(&format!(
                "link {} {} latency_ms={} jitter_ms={} bandwidth_mbps={} class={}\n",
                self.nodes[l.a].name,
                self.nodes[l.b].name,
                l.latency as f64 / MS as f64,
                l.jitter as f64 / MS as f64,
                l.bandwidth_bps as f64 / MBPS as f64,
                match l.class {
                    LinkClass::Lan => "lan",
                    LinkClass::Wan => "wan",
                }
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_their_scenarios() {
        let t = Topology::preset(Preset::LanDefault, 4, 3);
        assert_eq!(t.clients().len(), 4);
        assert_eq!(t.guards().len(), 3);
        let c = &t.links[t.link_between(t.clients()[0], 0).unwrap()];
        assert_eq!((c.latency, c.bandwidth_bps), (10 * MS, 100 * MBPS));
        let g = &t.links[t.link_between(t.guards()[0], 0).unwrap()];
        assert_eq!((g.latency, g.bandwidth_bps, g.class), (100 * MS, 10 * MBPS, LinkClass::Wan));

        let t = Topology::preset(Preset::LocalGuard, 4, 3);
        assert_eq!(t.guards().len(), 1);
        assert_eq!(t.links[t.link_between(t.guards()[0], 0).unwrap()].latency, 10 * MS);

        let t = Topology::preset(Preset::Vpn, 2, 1);
        assert_eq!(t.links[t.link_between(t.clients()[1], 0).unwrap()].latency, 100 * MS);
    }

    #[test]
    fn text_roundtrip() {
        let t = Topology::preset(Preset::LanDefault, 3, 2).with_jitter(MS);
        let mut back = Topology::parse(&t.to_text()).unwrap();
        back.preset = t.preset;
        assert_eq!(back, t);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Topology::parse("node r relay\nnode c client\n"),
            Err(TopologyError::Disconnected)
        ));
        assert!(matches!(
            Topology::parse("node r relay\nlink r x\n"),
            Err(TopologyError::Parse { line: 2, .. })
        ));
        assert!(matches!(Topology::parse("node c client\n"), Err(TopologyError::NoRelay)));
        let t = Topology::parse("preset vpn 2 1\nnode extra client\nlink extra relay latency_ms=5\n").unwrap();
        assert_eq!(t.clients().len(), 3);
    }
}
