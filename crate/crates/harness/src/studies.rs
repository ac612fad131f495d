//! Churn analyses and blame demonstrations.

use lldc_core::crypto::Ristretto;
use lldc_core::disruption::{BlameTranscript, Verdict};
use lldc_core::roles::ProtocolOptions;
use lldc_core::session::run_fault_scenario;
use lldc_core::EntityId;
use lldc_sim::simnet::{
    anonymity_set_series, replay_churn, synthetic_cafe_trace, synthetic_membership_trace, AvailabilityReport,
    ChurnTrace, Preset, SetSeries, Strategy, SECOND,
};
use serde::Serialize;

use crate::adversary::AdversarySpec;
use crate::experiment::{simulated_setup_duration, Experiment, HarnessError, Load, RunResult};

/// Minutes covered by the café-style trace.
pub const CAFE_MINUTES: u64 = 240;

/// 222 associations and 32 disassociations from 33 devices over four hours.
pub fn cafe_trace(seed: u64) -> ChurnTrace {
    synthetic_cafe_trace(222, 32, 33, CAFE_MINUTES * 60_000, seed)
}

/// Membership hovering around 50 devices, sampled every minute for an hour.
pub fn membership_trace(seed: u64) -> ChurnTrace {
    synthetic_membership_trace(50, 3, 3_600_000, 60_000, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationSource {
    Given,
    Simulated { n: usize, m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChurnStudy {
    pub simulated: bool,
    pub resync_s: f64,
    pub resync_source: DurationSource,
    pub associations: usize,
    pub disassociations: usize,
    pub devices: usize,
    pub span_s: f64,
    pub reports: Vec<AvailabilityReport>,
    #[serde(skip)]
    pub series: SetSeries,
}

/// Resync duration for a churn replay: as given, or measured by simulating
/// one setup at (n, m).
pub fn resync_duration(given: Option<f64>, n: usize, m: usize, seed: u64) -> Result<(f64, DurationSource), HarnessError> {
    match given {
        Some(d) => Ok((d, DurationSource::Given)),
        None => {
            let d = simulated_setup_duration(Preset::LanDefault, n, m, seed)?;
            Ok((d as f64 / SECOND as f64, DurationSource::Simulated { n, m }))
        }
    }
}

pub fn churn_study(
    trace: &ChurnTrace,
    strategies: &[Strategy],
    resync: (f64, DurationSource),
    window_ms: u64,
) -> Result<ChurnStudy, HarnessError> {
    let reports = strategies
        .iter()
        .map(|s| replay_churn(trace, *s, resync.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    Ok(ChurnStudy {
        simulated: true,
        resync_s: resync.0,
        resync_source: resync.1,
        associations: trace.count(lldc_sim::simnet::ChurnKind::Assoc),
        disassociations: trace.count(lldc_sim::simnet::ChurnKind::Disassoc),
        devices: trace.devices(),
        span_s: trace.span_ms() as f64 / 1000.0,
        reports,
        series: anonymity_set_series(trace, window_ms),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlameDemo {
    pub simulated: bool,
    pub adversary: String,
    /// Lock-step run of the fault in process; absent for relay faults.
    pub culprit: Option<EntityId>,
    pub verdict: Option<Verdict>,
    pub timed_out: Vec<EntityId>,
    pub transcript: Option<BlameTranscript>,
    /// Verdicts the networked simulation reached, in order.
    pub simulated_verdicts: Vec<String>,
    #[serde(skip)]
    pub run: RunResult,
}

/// Runs `spec` twice: once in the lock-step session to get a full blame
/// transcript, once in the simulator to see the deployment react.
pub fn blame_demo(spec: &AdversarySpec, n: usize, m: usize, seed: u64) -> Result<BlameDemo, HarnessError> {
    let (culprit, verdict, timed_out, transcript) = match spec.culprit() {
        Some((who, fault, cover)) => {
            let opts = ProtocolOptions {
                cell_len: 256,
                ..ProtocolOptions::default()
            };
            let o = run_fault_scenario::<Ristretto>(n, m, opts, who, fault, cover, seed)
                .map_err(|e| HarnessError::Invalid(e.to_string()))?;
            (Some(o.culprit), Some(o.verdict), o.timed_out, o.transcript)
        }
        None => (None, None, Vec::new(), None),
    };
    let mut e = Experiment::new("blame-demo", Preset::LanDefault, n, m, seed);
    e.cell_len = 256;
    e.load_tuning = false;
    e.load = Load::Idle;
    e.adversaries = vec![spec.clone()];
    e.duration = Some(20 * SECOND);
    let run = e.run()?;
    Ok(BlameDemo {
        simulated: true,
        adversary: spec.to_string(),
        culprit,
        verdict,
        timed_out,
        transcript,
        simulated_verdicts: run.report().verdicts.clone(),
        run,
    })
}
