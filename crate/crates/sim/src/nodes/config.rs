use std::collections::BTreeMap;
use std::str::FromStr;

use lldc_core::roles::{Cover, Fault, ProtocolOptions, When};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::{ChurnTrace, Strategy, Time, Topology, MS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupChoice {
    Ristretto,
    /// The small prime-order group; only for tests.
    Test,
}

impl FromStr for GroupChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ristretto" | "ristretto255" => Ok(GroupChoice::Ristretto),
            "test" => Ok(GroupChoice::Test),
            _ => Err(format!("unknown group {s:?}")),
        }
    }
}

/// Per-deployment protocol settings shared by every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub cell_len: usize,
    /// Rounds in flight.
    pub window: u64,
    /// Rounds between reservation rounds; 0 keeps every slot open.
    pub load_period: u64,
    /// Pause when every slot is closed.
    pub sleep: Time,
    /// Round timeout as a multiple of the slowest contributor's round trip.
    pub timeout_factor: u64,
    pub group: GroupChoice,
    pub equivocation: bool,
    pub premask: bool,
    /// Guard pre-streaming depth in multiples of `window`.
    pub guard_depth: u64,
    /// Modelled cost of one group exponentiation during setup.
    pub exp_cost: Time,
    pub downstream_cap: usize,
    /// Guards whose signatures clients require; empty means all.
    pub trusted_guards: Vec<u32>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            cell_len: lldc_core::dcnet::DEFAULT_CELL_LEN,
            window: 1,
            load_period: 50,
            sleep: 100 * MS,
            timeout_factor: 5,
            group: GroupChoice::Ristretto,
            equivocation: true,
            premask: false,
            guard_depth: 2,
            exp_cost: 60,
            downstream_cap: lldc_core::dcnet::DEFAULT_DOWNSTREAM_CAP,
            trusted_guards: Vec::new(),
        }
    }
}

impl NodeConfig {
    pub fn protocol(&self) -> ProtocolOptions {
        ProtocolOptions {
            cell_len: self.cell_len,
            equivocation: self.equivocation,
            premask: self.premask,
            window: self.window,
        }
    }

    pub fn depth(&self) -> u64 {
        (self.guard_depth * self.window).max(1)
    }

    /// `key = value` lines; `#` starts a comment. Unknown keys are errors,
    /// except the per-node `id` and `role` which the simulator assigns.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ConfigError::Parse { line, msg };
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {l:?}")))?;
            fn num<T: FromStr>(v: &str, k: &str, line: usize) -> Result<T, ConfigError>
            where
                T::Err: std::fmt::Display,
            {
                v.parse().map_err(|e| ConfigError::Parse {
                    line,
                    msg: format!("{k}: {e}"),
                })
            }
            match k {
                "cell_len" => c.cell_len = num(v, k, line)?,
                "window" => c.window = num(v, k, line)?,
                "load_period" => c.load_period = num(v, k, line)?,
                "sleep_ms" => c.sleep = num::<u64>(v, k, line)? * MS,
                "timeout_factor" => c.timeout_factor = num(v, k, line)?,
                "group" => c.group = v.parse().map_err(err)?,
                "equivocation" => c.equivocation = num(v, k, line)?,
                "premask" => c.premask = num(v, k, line)?,
                "guard_depth" => c.guard_depth = num(v, k, line)?,
                "exp_cost_us" => c.exp_cost = num(v, k, line)?,
                "downstream_cap" => c.downstream_cap = num(v, k, line)?,
                "trusted_guards" => {
                    c.trusted_guards = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| num(s, k, line))
                        .collect::<Result<_, _>>()?
                }
                "id" | "role" => {}
                _ => return Err(err(format!("unknown key {k}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let trusted: Vec<String> = self.trusted_guards.iter().map(u32::to_string).collect();
        format!(
            "cell_len = {}\nwindow = {}\nload_period = {}\nsleep_ms = {}\ntimeout_factor = {}\ngroup = {}\n\
             equivocation = {}\npremask = {}\nguard_depth = {}\nexp_cost_us = {}\ndownstream_cap = {}\n\
             trusted_guards = {}\n",
            self.cell_len,
            self.window,
            self.load_period,
            self.sleep / MS,
            self.timeout_factor,
            match self.group {
                GroupChoice::Ristretto => "ristretto",
                GroupChoice::Test => "test",
            },
            self.equivocation,
            self.premask,
            self.guard_depth,
            self.exp_cost,
            self.downstream_cap,
            trusted.join(","),
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.cell_len <= lldc_core::dcnet::CELL_HEADER {
            return bad("cell_len leaves no room for payload");
        }
        if self.timeout_factor == 0 {
            return bad("timeout_factor must be positive");
        }
        if self.guard_depth == 0 {
            return bad("guard_depth must be positive");
        }
        Ok(())
    }
}

/// Application traffic offered by the clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    Idle,
    /// Closed-loop pings to the exit from a random subset of clients. The
    /// run stops after `count` pings came back or were given up.
    Ping {
        count: usize,
        size: usize,
        active_fraction: f64,
        think: Time,
        timeout: Time,
    },
    /// Each active client offers `rate_bps` in `msg_size` messages.
    Cbr {
        active_fraction: f64,
        rate_bps: u64,
        msg_size: usize,
    },
}

impl Workload {
    pub fn ping(count: usize) -> Self {
        Workload::Ping {
            count,
            size: 64,
            active_fraction: 0.05,
            think: 50 * MS,
            timeout: 30_000 * MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedSend {
    pub at: Time,
    pub client: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Target {
    Client(usize),
    Guard(usize),
}

/// A scripted misbehaviour, armed in one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adversary {
    Party {
        target: Target,
        epoch: u32,
        when: When,
        fault: Fault,
        cover: Cover,
    },
    /// The relay sends `client` a different downstream message for `round`.
    EquivocateZ { epoch: u32, round: u64, client: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnPlan {
    pub trace: ChurnTrace,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopAt {
    /// Completed rounds over all epochs.
    pub rounds: Option<u64>,
    pub time: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: Topology,
    pub node: NodeConfig,
    pub workload: Workload,
    /// One-off messages, on top of the workload.
    pub sends: Vec<ScriptedSend>,
    pub adversaries: Vec<Adversary>,
    pub churn: Option<ChurnPlan>,
    /// Clients associated at time zero; `None` means all, or none when a
    /// churn trace drives membership.
    pub initial_present: Option<Vec<usize>>,
    pub stop: StopAt,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(topology: Topology, node: NodeConfig, workload: Workload, seed: u64) -> Self {
        Self {
            topology,
            node,
            workload,
            sends: Vec::new(),
            adversaries: Vec::new(),
            churn: None,
            initial_present: None,
            stop: StopAt {
                rounds: None,
                time: None,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.node.validate()?;
        self.topology
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = self.topology.clients().len();
        let m = self.topology.guards().len();
        if n == 0 || m == 0 {
            return Err(ConfigError::Invalid("need at least one client and one guard".into()));
        }
        if let Some(plan) = &self.churn {
            let devices = plan.trace.devices();
            if devices > n {
                return Err(ConfigError::Invalid(format!(
                    "trace has {devices} devices but the topology has {n} clients"
                )));
            }
        }
        for a in &self.adversaries {
            let ok = match a {
                Adversary::Party {
                    target: Target::Client(i),
                    ..
                } => *i < n,
                Adversary::Party {
                    target: Target::Guard(j),
                    ..
                } => *j < m,
                Adversary::EquivocateZ { client, .. } => *client < n,
            };
            if !ok {
                return Err(ConfigError::Invalid(format!("adversary target out of range: {a:?}")));
            }
        }
        match &self.workload {
            Workload::Ping { active_fraction, .. } | Workload::Cbr { active_fraction, .. }
                if !(0.0..=1.0).contains(active_fraction) =>
            {
                Err(ConfigError::Invalid("active fraction must lie in [0, 1]".into()))
            }
            _ if self.sends.iter().any(|x| x.client >= n) => {
                Err(ConfigError::Invalid("scripted send names an unknown client".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Index of the bit a client sets in a reservation round.
pub(crate) fn reservation_bit(bits: &[u8], slot: usize) -> bool {
    bits.get(slot / 8).is_some_and(|b| b >> (slot % 8) & 1 == 1)
}

pub(crate) fn reservation_vector(len: usize, slot: usize) -> Vec<u8> {
    let mut v = vec![0; len.max(slot / 8 + 1)];
    v[slot / 8] |= 1 << (slot % 8);
    v
}

/// Splits `a=1,b=2` into a map; used by CLI-style specs.
pub fn parse_pairs(s: &str) -> Result<BTreeMap<String, String>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("expected key=value, got {p:?}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip() {
        let c = NodeConfig {
            window: 4,
            trusted_guards: vec![0, 2],
            premask: true,
            ..NodeConfig::default()
        };
        assert_eq!(NodeConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn config_errors_name_the_line() {
        let e = NodeConfig::parse("window = 2\n\nbogus = 1\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::Parse {
                line: 3,
                msg: "unknown key bogus".into()
            }
        );
        assert!(matches!(NodeConfig::parse("window = x"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(NodeConfig::parse("window = 0"), Err(ConfigError::Invalid(_))));
        assert!(NodeConfig::parse("id = 3\nrole = client\n").is_ok());
    }

    #[test]
    fn reservation_bits() {
        let v = reservation_vector(4, 10);
        assert!(reservation_bit(&v, 10));
        assert!(!reservation_bit(&v, 9));
        assert!(!reservation_bit(&v, 40));
    }
}
