//! Report files. Everything is rendered to bytes first so runs can be
//! compared without touching the disk.
//!
//! CSV columns:
//!
//! * `rounds.csv`: `time_us,epoch,round,kind,slot,outcome,latency_us,payload_bytes`
//! * `pings.csv`: `time_us,client,seq,rtt_us` (`rtt_us` empty for lost pings)
//! * `sweep.csv`: one row per client count, latencies in milliseconds
//! * `availability.csv`: one row per strategy
//! * `set_series.csv`: `time_ms,size,deviation_pct`

use std::path::Path;

use lldc_sim::nodes::{Event, Outcome, RoundLabel};
use serde::Serialize;

use crate::experiment::{HarnessError, RunResult, SweepRow};
use crate::studies::{BlameDemo, ChurnStudy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub name: String,
    pub bytes: Vec<u8>,
}

fn file(name: &str, bytes: Vec<u8>) -> Rendered {
    Rendered {
        name: name.into(),
        bytes,
    }
}

fn json<T: Serialize>(name: &str, v: &T) -> Result<Rendered, HarnessError> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(file(name, b))
}

fn csv_of<T: Serialize>(name: &str, rows: impl IntoIterator<Item = T>) -> Result<Rendered, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(file(name, bytes))
}

#[derive(Serialize)]
struct RoundRow {
    time_us: u64,
    epoch: u32,
    round: u64,
    kind: RoundLabel,
    slot: Option<usize>,
    outcome: Outcome,
    latency_us: u64,
    payload_bytes: usize,
}

#[derive(Serialize)]
struct PingRow {
    time_us: u64,
    client: usize,
    seq: u64,
    rtt_us: Option<u64>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    simulated: bool,
    experiment: &'a crate::experiment::Experiment,
    report: &'a lldc_sim::nodes::Report,
    violations: &'a [String],
}

pub fn render_run(r: &RunResult) -> Result<Vec<Rendered>, HarnessError> {
    let ev = &r.output.events;
    let rounds = ev.iter().filter_map(|e| match e {
        Event::Round {
            time,
            epoch,
            round,
            kind,
            slot,
            opened,
            outcome,
            payload_bytes,
            ..
        } => Some(RoundRow {
            time_us: *time,
            epoch: *epoch,
            round: *round,
            kind: *kind,
            slot: *slot,
            outcome: *outcome,
            latency_us: time - opened,
            payload_bytes: *payload_bytes,
        }),
        _ => None,
    });
    let pings = ev.iter().filter_map(|e| match e {
        Event::PingEcho { time, client, seq, rtt } => Some(PingRow {
            time_us: *time,
            client: *client,
            seq: *seq,
            rtt_us: Some(*rtt),
        }),
        Event::PingLost { time, client, seq } => Some(PingRow {
            time_us: *time,
            client: *client,
            seq: *seq,
            rtt_us: None,
        }),
        _ => None,
    });
    Ok(vec![
        json(
            "report.json",
            &RunReport {
                simulated: true,
                experiment: &r.experiment,
                report: &r.output.report,
                violations: &r.violations,
            },
        )?,
        file("events.jsonl", r.output.log_jsonl().into_bytes()),
        csv_of("rounds.csv", rounds)?,
        csv_of("pings.csv", pings)?,
    ])
}

pub fn render_sweep(rows: &[SweepRow]) -> Result<Vec<Rendered>, HarnessError> {
    #[derive(Serialize)]
    struct Sweep<'a> {
        simulated: bool,
        rows: &'a [SweepRow],
    }
    Ok(vec![
        csv_of("sweep.csv", rows)?,
        json("sweep.json", &Sweep { simulated: true, rows })?,
    ])
}

pub fn render_churn(s: &ChurnStudy) -> Result<Vec<Rendered>, HarnessError> {
    #[derive(Serialize)]
    struct Point {
        time_ms: u64,
        size: usize,
        deviation_pct: f64,
    }
    let series = &s.series;
    let points = (0..series.times_ms.len()).map(|i| Point {
        time_ms: series.times_ms[i],
        size: series.sizes[i],
        deviation_pct: series.deviation_pct[i],
    });
    Ok(vec![
        json("availability.json", s)?,
        csv_of("availability.csv", &s.reports)?,
        csv_of("set_series.csv", points)?,
    ])
}

pub fn render_blame(d: &BlameDemo) -> Result<Vec<Rendered>, HarnessError> {
    let mut out = vec![json("transcript.json", d)?];
    out.extend(render_run(&d.run)?);
    Ok(out)
}

pub fn write_all(dir: &Path, files: &[Rendered]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{Experiment, Load};
    use lldc_sim::simnet::{Preset, SECOND};

    #[test]
    fn run_files_have_headers_and_one_line_per_event() {
        let mut e = Experiment::new("t", Preset::LanDefault, 3, 1, 2);
        e.cell_len = 128;
        e.load = Load::Ping {
            count: 3,
            active_fraction: 1.0,
        };
        e.duration = Some(30 * SECOND);
        let r = e.run().unwrap();
        let files = render_run(&r).unwrap();
        let get = |n: &str| String::from_utf8(files.iter().find(|f| f.name == n).unwrap().bytes.clone()).unwrap();
        assert_eq!(get("events.jsonl").lines().count(), r.output.events.len());
        assert!(get("rounds.csv").starts_with("time_us,epoch,round,kind,slot,outcome,latency_us,payload_bytes\n"));
        assert_eq!(get("pings.csv").lines().count(), 1 + 3);
        let v: serde_json::Value = serde_json::from_str(&get("report.json")).unwrap();
        assert_eq!(v["simulated"], true);
        assert_eq!(v["report"]["ping_rtt"]["count"], 3);
    }
}
