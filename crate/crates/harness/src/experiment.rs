use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use lldc_sim::nodes::{
    simulate, Event, GroupChoice, NodeConfig, Report, ScriptedSend, SimConfig, SimError, SimOutput, Workload,
};
use lldc_sim::simnet::{Preset, Time, Topology, MS, SECOND};

use crate::adversary::AdversarySpec;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Load {
    Idle,
    /// Closed-loop pings; the run ends once `count` have come back or timed out.
    Ping { count: usize, active_fraction: f64 },
    /// Constant bitrate per active client.
    Cbr { active_fraction: f64, rate_bps: u64 },
}

/// One simulated deployment and what it is asked to carry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub name: String,
    pub preset: Preset,
    pub n: usize,
    pub m: usize,
    pub window: u64,
    pub cell_len: usize,
    /// Reservation rounds that close idle slots.
    pub load_tuning: bool,
    pub load: Load,
    pub adversaries: Vec<AdversarySpec>,
    /// Stop after this many completed rounds.
    pub rounds: Option<u64>,
    pub duration: Option<Time>,
    pub seed: u64,
    #[serde(skip)]
    pub group: GroupChoice,
}

impl Experiment {
    pub fn new(name: &str, preset: Preset, n: usize, m: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            preset,
            n,
            m,
            window: 1,
            cell_len: lldc_core::dcnet::DEFAULT_CELL_LEN,
            load_tuning: true,
            load: Load::Ping {
                count: 100,
                active_fraction: 0.05,
            },
            adversaries: Vec::new(),
            rounds: None,
            duration: Some(600 * SECOND),
            seed,
            group: GroupChoice::Ristretto,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.into()));
        if self.n < 2 {
            return bad("need at least two clients");
        }
        if self.m < 1 {
            return bad("need at least one guard");
        }
        if let Load::Ping { active_fraction, .. } | Load::Cbr { active_fraction, .. } = self.load {
            if !(0.0..=1.0).contains(&active_fraction) {
                return bad("active fraction must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig, HarnessError> {
        self.validate()?;
        let node = NodeConfig {
            cell_len: self.cell_len,
            window: self.window,
            load_period: if self.load_tuning { NodeConfig::default().load_period } else { 0 },
            group: self.group,
            ..NodeConfig::default()
        };
        let workload = match self.load {
            Load::Idle => Workload::Idle,
            Load::Ping { count, active_fraction } => match Workload::ping(count) {
                Workload::Ping {
                    size, think, timeout, ..
                } => Workload::Ping {
                    count,
                    size,
                    active_fraction,
                    think,
                    timeout,
                },
                w => w,
            },
            Load::Cbr {
                active_fraction,
                rate_bps,
            } => Workload::Cbr {
                active_fraction,
                rate_bps,
                msg_size: 512,
            },
        };
        let mut cfg = SimConfig::new(Topology::preset(self.preset, self.n, self.m), node, workload, self.seed);
        cfg.adversaries = self.adversaries.iter().map(AdversarySpec::to_sim).collect();
        if !self.adversaries.is_empty() {
            // one short message per client, so the first rounds carry data
            cfg.sends = (0..self.n)
                .map(|c| ScriptedSend {
                    at: 0,
                    client: c,
                    data: format!("hello from {c}").into_bytes(),
                })
                .collect();
        }
        cfg.stop.rounds = self.rounds;
        cfg.stop.time = self.duration;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<RunResult, HarnessError> {
        let out = simulate(self.sim_config()?)?;
        let violations = check_invariants(self, &out);
        Ok(RunResult {
            experiment: self.clone(),
            output: out,
            violations,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub experiment: Experiment,
    pub output: SimOutput,
    pub violations: Vec<String>,
}

impl RunResult {
    pub fn report(&self) -> &Report {
        &self.output.report
    }
}

/// Structural checks every run must pass.
pub fn check_invariants(exp: &Experiment, out: &SimOutput) -> Vec<String> {
    let mut v = Vec::new();
    if Report::from_events(&out.events) != out.report {
        v.push("report differs from the one derived from the event log".into());
    }
    let r = &out.report;
    if exp.preset == Preset::LanDefault && r.wan_bytes > r.lan_bytes {
        v.push(format!("WAN bytes {} exceed LAN bytes {}", r.wan_bytes, r.lan_bytes));
    }
    let honest_excluded = out.events.iter().any(|e| match e {
        Event::Blame {
            verdict: lldc_core::disruption::Verdict::Excluded(who),
            ..
        } => !exp.adversaries.iter().any(|a| is_target(a, who)),
        _ => false,
    });
    if honest_excluded {
        v.push("an honest party was excluded".into());
    }
    v
}

fn is_target(a: &AdversarySpec, who: &lldc_core::EntityId) -> bool {
    use lldc_core::EntityId;
    use lldc_sim::nodes::Target;
    matches!(
        (a.target(), who),
        (Some(Target::Client(i)), EntityId::Client(c)) if c.0 as usize == i
    ) || matches!(
        (a.target(), who),
        (Some(Target::Guard(j)), EntityId::Guard(g)) if g.0 as usize == j
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub preset: Preset,
    pub n: usize,
    pub m: usize,
    pub window: u64,
    pub pings: usize,
    pub mean_rtt_ms: f64,
    pub p50_rtt_ms: f64,
    pub p95_rtt_ms: f64,
    pub mean_round_ms: f64,
    pub rounds: u64,
    pub lan_bytes: u64,
    pub wan_bytes: u64,
    pub simulated_s: f64,
}

impl SweepRow {
    fn of(exp: &Experiment, r: &Report) -> Self {
        Self {
            preset: exp.preset,
            n: exp.n,
            m: exp.m,
            window: exp.window,
            pings: r.ping_rtt.count,
            mean_rtt_ms: r.ping_rtt.mean_ms,
            p50_rtt_ms: r.ping_rtt.p50_ms,
            p95_rtt_ms: r.ping_rtt.p95_ms,
            mean_round_ms: r.round_latency.mean_ms,
            rounds: r.rounds,
            lan_bytes: r.lan_bytes,
            wan_bytes: r.wan_bytes,
            simulated_s: r.duration_s,
        }
    }
}

/// Baseline for latency sweeps: pings from 5% of the clients, load tuning
/// off so every slot stays in the schedule, small cells to keep runs short.
pub fn sweep_base(preset: Preset, m: usize, window: u64, pings: usize, seed: u64) -> Experiment {
    let mut e = Experiment::new("sweep", preset, 2, m, seed);
    e.window = window;
    e.cell_len = 256;
    e.load_tuning = false;
    e.load = Load::Ping {
        count: pings,
        active_fraction: 0.05,
    };
    e.duration = Some(3_600 * SECOND);
    e
}

/// Runs `base` once per client count, in parallel. Rows come back in the
/// order of `ns` whatever the scheduling.
pub fn sweep_latency(base: &Experiment, ns: &[usize]) -> Result<Vec<SweepRow>, HarnessError> {
    if ns.is_empty() {
        return Err(HarnessError::Invalid("empty client list".into()));
    }
    ns.par_iter()
        .map(|&n| {
            let mut e = base.clone();
            e.n = n;
            e.name = format!("{}-n{n}", base.name);
            let r = e.run()?;
            Ok(SweepRow::of(&e, r.report()))
        })
        .collect()
}

/// Positions where the mean RTT drops as `n` grows.
pub fn monotone_violations(rows: &[SweepRow]) -> Vec<(usize, usize)> {
    rows.windows(2)
        .filter(|w| w[1].n > w[0].n && w[1].mean_rtt_ms < w[0].mean_rtt_ms)
        .map(|w| (w[0].n, w[1].n))
        .collect()
}

/// Modelled setup duration at (n, m): from the setup request to the first
/// epoch starting, in an otherwise idle deployment.
pub fn simulated_setup_duration(preset: Preset, n: usize, m: usize, seed: u64) -> Result<Time, HarnessError> {
    let mut e = Experiment::new("setup", preset, n, m, seed);
    e.load = Load::Idle;
    e.cell_len = 128;
    e.rounds = Some(1);
    let out = e.run()?.output;
    let start = out.events.iter().find_map(|e| match e {
        Event::SetupStarted { time, .. } => Some(*time),
        _ => None,
    });
    let done = out.events.iter().find_map(|e| match e {
        Event::EpochStarted { time, .. } => Some(*time),
        _ => None,
    });
    match (start, done) {
        (Some(s), Some(d)) => Ok(d - s),
        _ => Err(HarnessError::Invalid("setup never completed".into())),
    }
}

pub fn ms(t: Time) -> f64 {
    t as f64 / MS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_deployments() {
        let mut e = Experiment::new("x", Preset::LanDefault, 1, 1, 0);
        assert!(e.validate().is_err());
        e.n = 2;
        e.m = 0;
        assert!(e.validate().is_err());
        e.m = 1;
        e.load = Load::Ping {
            count: 1,
            active_fraction: 1.5,
        };
        assert!(e.validate().is_err());
    }

    #[test]
    fn monotone_check() {
        let row = |n, rtt| SweepRow {
            preset: Preset::LanDefault,
            n,
            m: 1,
            window: 1,
            pings: 1,
            mean_rtt_ms: rtt,
            p50_rtt_ms: rtt,
            p95_rtt_ms: rtt,
            mean_round_ms: 0.0,
            rounds: 0,
            lan_bytes: 0,
            wan_bytes: 0,
            simulated_s: 0.0,
        };
        assert!(monotone_violations(&[row(2, 1.0), row(5, 1.0), row(9, 3.0)]).is_empty());
        assert_eq!(monotone_violations(&[row(2, 4.0), row(5, 3.0)]), vec![(2, 5)]);
    }

    #[test]
    fn setup_duration_is_modelled() {
        let d = simulated_setup_duration(Preset::LanDefault, 10, 3, 1).unwrap();
        // two client round trips and the guard chain over 100 ms links
        assert!(d > 600 * MS && d < 1_200 * MS, "{d}");
    }
}
