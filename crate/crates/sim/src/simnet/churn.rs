use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChurnError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: time {time_ms} goes backwards")]
    OutOfOrder { line: u64, time_ms: u64 },
    #[error("line {line}: device {device} disassociates while not associated")]
    NotAssociated { line: u64, device: String },
    #[error("resync duration must be positive, got {0}")]
    BadDuration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChurnKind {
    Assoc,
    Disassoc,
}

impl FromStr for ChurnKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "assoc" => Ok(ChurnKind::Assoc),
            "disassoc" => Ok(ChurnKind::Disassoc),
            _ => Err(format!("expected assoc or disassoc, got {s:?}")),
        }
    }
}

impl fmt::Display for ChurnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChurnKind::Assoc => "assoc",
            ChurnKind::Disassoc => "disassoc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub time_ms: u64,
    pub device: String,
    pub kind: ChurnKind,
}

/// Association events of one access point, in time order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnTrace {
    pub events: Vec<ChurnEvent>,
    /// Observation length; defaults to the last event time.
    pub span_ms: Option<u64>,
}

impl ChurnTrace {
    pub fn new(events: Vec<ChurnEvent>, span_ms: Option<u64>) -> Result<Self, ChurnError> {
        let t = Self { events, span_ms };
        t.validate()?;
        Ok(t)
    }

    /// Checks ordering and that every disassociation has a matching
    /// association. Line numbers count events from 1.
    pub fn validate(&self) -> Result<(), ChurnError> {
        let mut on = BTreeSet::new();
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            let line = i as u64 + 1;
            if e.time_ms < last {
                return Err(ChurnError::OutOfOrder { line, time_ms: e.time_ms });
            }
            last = e.time_ms;
            match e.kind {
                ChurnKind::Assoc => {
                    on.insert(e.device.as_str());
                }
                ChurnKind::Disassoc => {
                    if !on.remove(e.device.as_str()) {
                        return Err(ChurnError::NotAssociated {
                            line,
                            device: e.device.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads `time_ms,device_id,assoc|disassoc` rows. A header row naming
    /// `time_ms` is skipped.
    pub fn from_csv(text: &str) -> Result<Self, ChurnError> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut events = Vec::new();
        let mut last = 0;
        let mut on = BTreeSet::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| ChurnError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.get(0) == Some("time_ms") {
                continue;
            }
            if rec.len() != 3 {
                return Err(ChurnError::Parse {
                    line,
                    msg: format!("expected 3 fields, got {}", rec.len()),
                });
            }
            let time_ms: u64 = rec[0].parse().map_err(|e| ChurnError::Parse {
                line,
                msg: format!("time_ms: {e}"),
            })?;
            let kind: ChurnKind = rec[2].parse().map_err(|msg| ChurnError::Parse { line, msg })?;
            let device = rec[1].to_string();
            if device.is_empty() {
                return Err(ChurnError::Parse {
                    line,
                    msg: "empty device id".into(),
                });
            }
            if time_ms < last {
                return Err(ChurnError::OutOfOrder { line, time_ms });
            }
            last = time_ms;
            match kind {
                ChurnKind::Assoc => {
                    on.insert(device.clone());
                }
                ChurnKind::Disassoc => {
                    if !on.remove(&device) {
                        return Err(ChurnError::NotAssociated { line, device });
                    }
                }
            }
            events.push(ChurnEvent { time_ms, device, kind });
        }
        Ok(Self { events, span_ms: None })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time_ms", "device_id", "event"]).expect("in-memory write");
        for e in &self.events {
            w.write_record([e.time_ms.to_string(), e.device.clone(), e.kind.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn span_ms(&self) -> u64 {
        let last = self.events.last().map_or(0, |e| e.time_ms);
        self.span_ms.unwrap_or(last).max(last)
    }

    pub fn count(&self, kind: ChurnKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn devices(&self) -> usize {
        self.events.iter().map(|e| e.device.as_str()).collect::<BTreeSet<_>>().len()
    }
}

/// Cafe-like trace: `assoc` associations (re-associations of an already
/// present device included) and `disassoc` departures by `devices` distinct
/// devices, spread over `span_ms`.
pub fn synthetic_cafe_trace(assoc: usize, disassoc: usize, devices: usize, span_ms: u64, seed: u64) -> ChurnTrace {
    assert!(devices >= 1 && assoc >= devices && disassoc <= assoc);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut kinds: Vec<ChurnKind> = std::iter::repeat(ChurnKind::Assoc)
        .take(assoc)
        .chain(std::iter::repeat(ChurnKind::Disassoc).take(disassoc))
        .collect();
    kinds.shuffle(&mut rng);
    // every departure needs someone present: a prefix never has more
    // departures than arrivals
    let mut bal = 0i64;
    for i in 0..kinds.len() {
        bal += if kinds[i] == ChurnKind::Assoc { 1 } else { -1 };
        if bal < 0 {
            let j = (i + 1..kinds.len()).find(|&j| kinds[j] == ChurnKind::Assoc).expect("assoc >= disassoc");
            kinds.swap(i, j);
            bal += 2;
        }
    }
    let mut times: Vec<u64> = (0..kinds.len()).map(|_| rng.gen_range(0..span_ms)).collect();
    times.sort_unstable();

    // demand[i]: most departures after event i not covered by later arrivals
    let mut demand = vec![0i64; kinds.len() + 1];
    let mut run = 0i64;
    for i in (0..kinds.len()).rev() {
        run = (run + if kinds[i] == ChurnKind::Disassoc { 1 } else { -1 }).max(0);
        demand[i] = run;
    }

    let names: Vec<String> = (0..devices).map(|d| format!("dev{d:02}")).collect();
    let mut present: Vec<usize> = Vec::new();
    let mut seen = 0;
    let mut assocs_left = assoc;
    let mut events = Vec::with_capacity(kinds.len());
    for (i, (k, t)) in kinds.into_iter().zip(times).enumerate() {
        let d = match k {
            ChurnKind::Assoc => {
                let unseen = devices - seen;
                assocs_left -= 1;
                let absent: Vec<usize> = (0..seen).filter(|d| !present.contains(d)).collect();
                let may_repeat = !present.is_empty() && present.len() as i64 >= demand[i + 1] && unseen <= assocs_left;
                if unseen > 0 && (!may_repeat || rng.gen_bool(0.4)) {
                    seen += 1;
                    present.push(seen - 1);
                    seen - 1
                } else if !absent.is_empty() && (!may_repeat || rng.gen_bool(0.5)) {
                    let d = *absent.choose(&mut rng).expect("nonempty");
                    present.push(d);
                    d
                } else {
                    *present.choose(&mut rng).expect("someone is present")
                }
            }
            ChurnKind::Disassoc => {
                let j = rng.gen_range(0..present.len());
                present.swap_remove(j)
            }
        };
        events.push(ChurnEvent {
            time_ms: t,
            device: names[d].clone(),
            kind: k,
        });
    }
    ChurnTrace {
        events,
        span_ms: Some(span_ms),
    }
}

/// Membership that hovers around `mean` devices, never straying more than
/// `swing` away, with one join or leave every `step_ms`.
pub fn synthetic_membership_trace(mean: usize, swing: usize, span_ms: u64, step_ms: u64, seed: u64) -> ChurnTrace {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut present: Vec<usize> = (0..mean).collect();
    let mut next = mean;
    for d in &present {
        events.push(ChurnEvent {
            time_ms: 0,
            device: format!("dev{d:03}"),
            kind: ChurnKind::Assoc,
        });
    }
    let mut t = step_ms;
    while t < span_ms {
        let n = present.len();
        // drift back towards the mean
        let p_join = 0.5 + 0.1 * (mean as f64 - n as f64);
        let join = if n >= mean + swing {
            false
        } else if n + swing <= mean {
            true
        } else {
            rng.gen_bool(p_join.clamp(0.05, 0.95))
        };
        if join {
            present.push(next);
            events.push(ChurnEvent {
                time_ms: t,
                device: format!("dev{next:03}"),
                kind: ChurnKind::Assoc,
            });
            next += 1;
        } else {
            let d = present.swap_remove(rng.gen_range(0..n));
            events.push(ChurnEvent {
                time_ms: t,
                device: format!("dev{d:03}"),
                kind: ChurnKind::Disassoc,
            });
        }
        t += step_ms;
    }
    ChurnTrace {
        events,
        span_ms: Some(span_ms),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Every join or leave halts rounds for a full setup.
    Naive,
    /// Leaves halt; joins set up in the background.
    Abrupt,
    /// Everything sets up in the background.
    Graceful,
}

impl Strategy {
    pub fn halts_on(self, kind: ChurnKind) -> bool {
        match self {
            Strategy::Naive => true,
            Strategy::Abrupt => kind == ChurnKind::Disassoc,
            Strategy::Graceful => false,
        }
    }

    pub const ALL: [Strategy; 3] = [Strategy::Naive, Strategy::Abrupt, Strategy::Graceful];
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "abrupt" => Ok(Strategy::Abrupt),
            "graceful" => Ok(Strategy::Graceful),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Naive => "naive",
            Strategy::Abrupt => "abrupt",
            Strategy::Graceful => "graceful",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityReport {
    pub strategy: Strategy,
    pub interruptions: usize,
    pub availability: f64,
    pub max_downtime_s: f64,
    pub total_downtime_s: f64,
    pub total_time_s: f64,
}

/// Sorts and merges overlapping `[start, end)` windows.
pub fn merge_windows(mut w: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    w.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(w.len());
    for (s, e) in w {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Downtime caused by a trace when each halting event stops the network
/// for `d_s` seconds.
pub fn replay_churn(trace: &ChurnTrace, strategy: Strategy, d_s: f64) -> Result<AvailabilityReport, ChurnError> {
    if strategy != Strategy::Graceful && !(d_s > 0.0 && d_s.is_finite()) {
        return Err(ChurnError::BadDuration(d_s));
    }
    trace.validate()?;
    let windows: Vec<(f64, f64)> = trace
        .events
        .iter()
        .filter(|e| strategy.halts_on(e.kind))
        .map(|e| {
            let s = e.time_ms as f64 / 1000.0;
            (s, s + d_s)
        })
        .collect();
    let interruptions = windows.len();
    let merged = merge_windows(windows);
    let total_downtime_s: f64 = merged.iter().map(|(s, e)| e - s).sum();
    let max_downtime_s = merged.iter().map(|(s, e)| e - s).fold(0.0, f64::max);
    let end = merged.last().map_or(0.0, |w| w.1);
    let total_time_s = (trace.span_ms() as f64 / 1000.0).max(end);
    let availability = if total_time_s > 0.0 {
        1.0 - total_downtime_s / total_time_s
    } else {
        1.0
    };
    Ok(AvailabilityReport {
        strategy,
        interruptions,
        availability,
        max_downtime_s,
        total_downtime_s,
        total_time_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSeries {
    pub times_ms: Vec<u64>,
    pub sizes: Vec<usize>,
    /// Residual after removing the least-squares line, as a percentage of
    /// the mean size.
    pub deviation_pct: Vec<f64>,
}

/// Number of associated devices sampled at the end of every window.
pub fn anonymity_set_series(trace: &ChurnTrace, window_ms: u64) -> SetSeries {
    assert!(window_ms > 0);
    let span = trace.span_ms();
    let mut on = BTreeSet::new();
    let mut it = trace.events.iter().peekable();
    let mut times_ms = Vec::new();
    let mut sizes = Vec::new();
    let mut t = 0;
    loop {
        while let Some(e) = it.next_if(|e| e.time_ms <= t) {
            match e.kind {
                ChurnKind::Assoc => on.insert(e.device.as_str()),
                ChurnKind::Disassoc => on.remove(e.device.as_str()),
            };
        }
        times_ms.push(t);
        sizes.push(on.len());
        if t >= span {
            break;
        }
        t = (t + window_ms).min(span);
    }
    let deviation_pct = detrend_pct(&times_ms, &sizes);
    SetSeries {
        times_ms,
        sizes,
        deviation_pct,
    }
}

fn detrend_pct(x: &[u64], y: &[usize]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().map(|v| *v as f64).sum::<f64>() / n;
    let my = y.iter().map(|v| *v as f64).sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (*v as f64 - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (*a as f64 - mx) * (*b as f64 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let fit = my + slope * (*a as f64 - mx);
            if my > 0.0 {
                100.0 * (*b as f64 - fit) / my
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, d: &str, k: ChurnKind) -> ChurnEvent {
        ChurnEvent {
            time_ms: t,
            device: d.into(),
            kind: k,
        }
    }

    #[test]
    fn cafe_trace_has_requested_shape() {
        let t = synthetic_cafe_trace(222, 32, 33, 240 * 60_000, 5);
        t.validate().unwrap();
        assert_eq!(t.count(ChurnKind::Assoc), 222);
        assert_eq!(t.count(ChurnKind::Disassoc), 32);
        assert_eq!(t.devices(), 33);
        assert_eq!(t.span_ms(), 240 * 60_000);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let t = synthetic_cafe_trace(10, 4, 5, 60_000, 1);
        let mut back = ChurnTrace::from_csv(&t.to_csv()).unwrap();
        back.span_ms = t.span_ms;
        assert_eq!(back, t);

        let e = ChurnTrace::from_csv("time_ms,device_id,event\n5,a,assoc\n7,a,leave\n").unwrap_err();
        assert!(matches!(e, ChurnError::Parse { line: 3, .. }), "{e:?}");
        let e = ChurnTrace::from_csv("5,a,assoc\n4,a,disassoc\n").unwrap_err();
        assert_eq!(e, ChurnError::OutOfOrder { line: 2, time_ms: 4 });
        let e = ChurnTrace::from_csv("5,a,assoc\n6,b,disassoc\n").unwrap_err();
        assert!(matches!(e, ChurnError::NotAssociated { line: 2, .. }));
        let e = ChurnTrace::from_csv("x,a,assoc\n").unwrap_err();
        assert!(matches!(e, ChurnError::Parse { line: 1, .. }));
    }

    #[test]
    fn strategies_on_one_leave() {
        let t = ChurnTrace::new(
            vec![ev(0, "a", ChurnKind::Assoc), ev(1000, "a", ChurnKind::Disassoc)],
            Some(10_000),
        )
        .unwrap();
        let a = replay_churn(&t, Strategy::Abrupt, 0.82).unwrap();
        assert_eq!(a.interruptions, 1);
        assert!((a.max_downtime_s - 0.82).abs() < 1e-12);
        assert!((a.availability - (1.0 - 0.82 / 10.0)).abs() < 1e-12);
        let n = replay_churn(&t, Strategy::Naive, 0.82).unwrap();
        assert_eq!(n.interruptions, 2);
        let g = replay_churn(&t, Strategy::Graceful, 0.0).unwrap();
        assert_eq!((g.interruptions, g.availability, g.max_downtime_s), (0, 1.0, 0.0));
        assert!(replay_churn(&t, Strategy::Naive, 0.0).is_err());
    }

    #[test]
    fn overlapping_windows_merge() {
        assert_eq!(
            merge_windows(vec![(3.0, 4.0), (0.0, 1.0), (0.5, 2.0), (4.0, 5.0)]),
            vec![(0.0, 2.0), (3.0, 5.0)]
        );
    }

    #[test]
    fn set_series_steps() {
        let flat = ChurnTrace::new(vec![ev(0, "a", ChurnKind::Assoc)], Some(5000)).unwrap();
        let s = anonymity_set_series(&flat, 1000);
        assert!(s.sizes.iter().all(|v| *v == 1));
        assert!(s.deviation_pct.iter().all(|v| v.abs() < 1e-9));

        let t = ChurnTrace::new(
            vec![
                ev(0, "a", ChurnKind::Assoc),
                ev(1500, "b", ChurnKind::Assoc),
                ev(3500, "b", ChurnKind::Disassoc),
            ],
            Some(5000),
        )
        .unwrap();
        assert_eq!(anonymity_set_series(&t, 1000).sizes, vec![1, 1, 2, 2, 1, 1]);
    }

    #[test]
    fn membership_trace_stays_within_eight_percent() {
        // a 6% band leaves room for the tilt of the fitted line
        let t = synthetic_membership_trace(50, 3, 4 * 3_600_000, 30_000, 3);
        let s = anonymity_set_series(&t, 60_000);
        assert!(s.sizes.iter().all(|v| (47..=53).contains(v)));
        let worst = s.deviation_pct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst <= 8.0, "{worst}");
    }
}
