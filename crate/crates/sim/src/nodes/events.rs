use lldc_core::disruption::Verdict;
use lldc_core::EntityId;
use serde::Serialize;

use crate::simnet::{ChurnKind, Time, MS, SECOND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundLabel {
    Slot,
    Reservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Idle,
    Cell,
    Failed,
    Reservation,
}

/// One line of the simulation log. Reports are computed from these alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SetupStarted {
        time: Time,
        epoch: u32,
        halting: bool,
        reason: String,
        clients: usize,
        guards: usize,
    },
    EpochStarted {
        time: Time,
        epoch: u32,
        clients: Vec<u32>,
        guards: Vec<u32>,
    },
    SetupFailed {
        time: Time,
        epoch: u32,
        error: String,
    },
    Halted {
        time: Time,
        reason: String,
    },
    Resumed {
        time: Time,
    },
    Round {
        time: Time,
        epoch: u32,
        round: u64,
        kind: RoundLabel,
        slot: Option<usize>,
        /// When the relay announced the round.
        opened: Time,
        outcome: Outcome,
        payload_bytes: usize,
        retransmit: bool,
        retransmission: bool,
    },
    PingSent {
        time: Time,
        client: usize,
        seq: u64,
    },
    PingEcho {
        time: Time,
        client: usize,
        seq: u64,
        rtt: Time,
    },
    PingLost {
        time: Time,
        client: usize,
        seq: u64,
    },
    Sent {
        time: Time,
        client: usize,
        bytes: usize,
    },
    Received {
        time: Time,
        client: usize,
        bytes: usize,
        data: String,
    },
    Blame {
        time: Time,
        epoch: u32,
        round: u64,
        verdict: Verdict,
        exchanges: usize,
        duration: Time,
        /// Steps the relay took, from the blame transcript.
        notes: Vec<String>,
    },
    Timeout {
        time: Time,
        epoch: u32,
        round: u64,
        missing: Vec<EntityId>,
    },
    Churn {
        time: Time,
        device: String,
        client: usize,
        kind: ChurnKind,
    },
    Finished {
        time: Time,
        rounds: u64,
        lan_bytes: u64,
        wan_bytes: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl Stats {
    /// Nearest-rank percentiles.
    pub fn of(samples: &[Time]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        let ms = |t: Time| t as f64 / MS as f64;
        Self {
            count: s.len(),
            mean_ms: ms(s.iter().sum::<Time>()) / s.len() as f64,
            p50_ms: ms(rank(0.5)),
            p95_ms: ms(rank(0.95)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub duration_s: f64,
    pub rounds: u64,
    pub epochs: usize,
    pub round_latency: Stats,
    pub ping_rtt: Stats,
    pub pings_lost: usize,
    pub lan_bytes: u64,
    pub wan_bytes: u64,
    pub payload_bytes: u64,
    pub availability: f64,
    pub interruptions: usize,
    pub max_downtime_s: f64,
    pub verdicts: Vec<String>,
    pub timeouts: usize,
}

impl Report {
    pub fn from_events(events: &[Event]) -> Self {
        let mut round_lat = Vec::new();
        let mut rtts = Vec::new();
        let mut r = Report {
            duration_s: 0.0,
            rounds: 0,
            epochs: 0,
            round_latency: Stats::default(),
            ping_rtt: Stats::default(),
            pings_lost: 0,
            lan_bytes: 0,
            wan_bytes: 0,
            payload_bytes: 0,
            availability: 1.0,
            interruptions: 0,
            max_downtime_s: 0.0,
            verdicts: Vec::new(),
            timeouts: 0,
        };
        let mut halted: Option<Time> = None;
        let mut down: Vec<Time> = Vec::new();
        let mut end = 0;
        for e in events {
            match e {
                Event::EpochStarted { .. } => r.epochs += 1,
                Event::Round {
                    time,
                    opened,
                    payload_bytes,
                    ..
                } => {
                    r.rounds += 1;
                    round_lat.push(time - opened);
                    r.payload_bytes += *payload_bytes as u64;
                }
                Event::PingEcho { rtt, .. } => rtts.push(*rtt),
                Event::PingLost { .. } => r.pings_lost += 1,
                Event::Blame { verdict, .. } => r.verdicts.push(verdict.to_string()),
                Event::Timeout { .. } => r.timeouts += 1,
                Event::Halted { time, .. } => {
                    if halted.is_none() {
                        halted = Some(*time);
                        r.interruptions += 1;
                    }
                }
                Event::Resumed { time } => {
                    if let Some(h) = halted.take() {
                        down.push(time - h);
                    }
                }
                Event::Finished {
                    time,
                    lan_bytes,
                    wan_bytes,
                    ..
                } => {
                    end = *time;
                    r.lan_bytes = *lan_bytes;
                    r.wan_bytes = *wan_bytes;
                }
                _ => {}
            }
        }
        if let Some(h) = halted {
            down.push(end.saturating_sub(h));
        }
        r.duration_s = end as f64 / SECOND as f64;
        let total_down: Time = down.iter().sum();
        r.max_downtime_s = down.iter().max().copied().unwrap_or(0) as f64 / SECOND as f64;
        if end > 0 {
            r.availability = 1.0 - total_down as f64 / end as f64;
        }
        r.round_latency = Stats::of(&round_lat);
        r.ping_rtt = Stats::of(&rtts);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s = Stats::of(&(1..=100).map(|v| v * MS).collect::<Vec<_>>());
        assert_eq!(s.count, 100);
        assert_eq!(s.p50_ms, 50.0);
        assert_eq!(s.p95_ms, 95.0);
        assert_eq!(s.mean_ms, 50.5);
        assert_eq!(Stats::of(&[]), Stats::default());
    }

    #[test]
    fn downtime_from_halts() {
        let ev = vec![
            Event::Halted {
                time: 10 * SECOND,
                reason: "x".into(),
            },
            Event::Resumed { time: 12 * SECOND },
            Event::Halted {
                time: 90 * SECOND,
                reason: "y".into(),
            },
            Event::Finished {
                time: 100 * SECOND,
                rounds: 0,
                lan_bytes: 5,
                wan_bytes: 1,
            },
        ];
        let r = Report::from_events(&ev);
        assert_eq!(r.interruptions, 2);
        assert_eq!(r.max_downtime_s, 10.0);
        assert!((r.availability - 0.88).abs() < 1e-12);
        assert_eq!((r.lan_bytes, r.wan_bytes), (5, 1));
    }
}
