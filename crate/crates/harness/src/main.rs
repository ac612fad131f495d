use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use lldc_core::crypto::Ristretto;
use lldc_core::setup::{generate_identities, run_local_setup};
use lldc_harness::experiment::{monotone_violations, simulated_setup_duration, sweep_base, sweep_latency};
use lldc_harness::output::{render_blame, render_churn, render_run, render_sweep, write_all, Rendered};
use lldc_harness::studies::{blame_demo, cafe_trace, churn_study, membership_trace, resync_duration};
use lldc_harness::{AdversarySpec, Experiment, HarnessError, Load};
use lldc_sim::nodes::GroupChoice;
use lldc_sim::simnet::{ChurnTrace, Preset, Strategy, SECOND};

/// Simulated DC-net deployments: runs, sweeps, churn replays and blame demos.
/// Every figure printed or written comes from the simulator, not from hardware.
#[derive(Parser)]
#[command(name = "lldc", version)]
struct Cli {
    /// Directory for report files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every random choice. LLDC_SEED, when set, wins over this.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One simulated experiment.
    Run(RunArgs),
    /// Mean ping RTT against the number of clients.
    Sweep(SweepArgs),
    /// Availability under churn for each resync strategy.
    Churn(ChurnArgs),
    /// A scripted adversary, its blame transcript and the deployment's reaction.
    BlameDemo(BlameArgs),
    /// Setup cost: wall-clock in process and simulated over the network.
    SetupBench(SetupArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadArg {
    Ping,
    Cbr,
    Idle,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Ristretto,
    Test,
}

#[derive(Args)]
struct Deployment {
    /// lan, local_guard or vpn.
    #[arg(long, default_value = "lan")]
    preset: Preset,
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Rounds in flight.
    #[arg(long, default_value_t = 1)]
    window: u64,
    /// Upstream cell size in bytes.
    #[arg(long, default_value_t = lldc_core::dcnet::DEFAULT_CELL_LEN)]
    cell_len: usize,
    /// Keep every slot open instead of closing idle ones.
    #[arg(long)]
    no_load_tuning: bool,
    #[arg(long, value_enum, default_value = "ristretto")]
    group: GroupArg,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    deployment: Deployment,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, value_enum, default_value = "ping")]
    workload: WorkloadArg,
    /// Ping workload: number of pings. Otherwise: stop after this many rounds.
    #[arg(long)]
    rounds: Option<u64>,
    /// Share of clients generating traffic.
    #[arg(long, default_value_t = 0.05)]
    active_fraction: f64,
    /// Per active client, for the cbr workload.
    #[arg(long, default_value_t = 64_000)]
    rate_bps: u64,
    /// Simulated seconds before the run is cut off.
    #[arg(long, default_value_t = 3_600)]
    duration_s: u64,
    /// Scripted misbehaviour, repeatable. See `AdversarySpec` for the grammar.
    #[arg(long)]
    adversary: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    deployment: Deployment,
    /// Client counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,10,20,50")]
    ns: Vec<usize>,
    /// Pings per point.
    #[arg(long, default_value_t = 40)]
    pings: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    /// 222 joins and 32 leaves by 33 devices over four hours.
    Cafe,
    /// About 50 devices with small swings, for the anonymity-set series.
    Membership,
}

#[derive(Args)]
struct ChurnArgs {
    /// CSV of `time_ms,device_id,assoc|disassoc`.
    #[arg(long, conflicts_with = "synthetic")]
    trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    /// Only this strategy; all three otherwise.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Resync duration in seconds. Measured by simulating a setup when absent.
    #[arg(long = "D")]
    resync_s: Option<f64>,
    /// Deployment size used to measure the resync duration.
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Sampling window of the anonymity-set series.
    #[arg(long, default_value_t = 60_000)]
    window_ms: u64,
}

#[derive(Args)]
struct BlameArgs {
    #[arg(long, default_value = "disrupt-guard:0:flip0")]
    adversary: String,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
}

#[derive(Args)]
struct SetupArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,10,20,50,100")]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// In-process repetitions per point.
    #[arg(long, default_value_t = 3)]
    reps: usize,
}

enum Failure {
    Usage(String),
    Violations(Vec<String>),
    Harness(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Invalid(m) => Failure::Usage(m),
            e => Failure::Harness(e),
        }
    }
}

fn experiment(d: &Deployment, name: &str, n: usize, seed: u64) -> Experiment {
    let mut e = Experiment::new(name, d.preset, n, d.m, seed);
    e.window = d.window;
    e.cell_len = d.cell_len;
    e.load_tuning = !d.no_load_tuning;
    e.group = match d.group {
        GroupArg::Ristretto => GroupChoice::Ristretto,
        GroupArg::Test => GroupChoice::Test,
    };
    e
}

fn emit(out: &std::path::Path, files: &[Rendered]) -> Result<(), Failure> {
    write_all(out, files)?;
    for f in files {
        println!("wrote {}", out.join(&f.name).display());
    }
    Ok(())
}

fn run(a: RunArgs, seed: u64, out: &std::path::Path) -> Result<(), Failure> {
    let mut e = experiment(&a.deployment, "run", a.n, seed);
    e.duration = Some(a.duration_s * SECOND);
    e.load = match a.workload {
        WorkloadArg::Ping => Load::Ping {
            count: a.rounds.unwrap_or(100) as usize,
            active_fraction: a.active_fraction,
        },
        WorkloadArg::Cbr => Load::Cbr {
            active_fraction: a.active_fraction,
            rate_bps: a.rate_bps,
        },
        WorkloadArg::Idle => Load::Idle,
    };
    if !matches!(a.workload, WorkloadArg::Ping) {
        e.rounds = a.rounds;
    }
    e.adversaries = a
        .adversary
        .iter()
        .map(|s| s.parse::<AdversarySpec>().map_err(|err| Failure::Usage(format!("{s}: {err}"))))
        .collect::<Result<_, _>>()?;
    let r = e.run()?;
    emit(out, &render_run(&r)?)?;
    let rep = r.report();
    println!(
        "simulated {:.1} s: {} rounds, {} pings (mean {:.1} ms), verdicts {:?}",
        rep.duration_s, rep.rounds, rep.ping_rtt.count, rep.ping_rtt.mean_ms, rep.verdicts
    );
    if r.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations(r.violations))
    }
}

fn sweep(a: SweepArgs, seed: u64, out: &std::path::Path) -> Result<(), Failure> {
    let d = &a.deployment;
    let mut base = sweep_base(d.preset, d.m, d.window, a.pings, seed);
    base.cell_len = d.cell_len;
    base.load_tuning = !d.no_load_tuning;
    let rows = sweep_latency(&base, &a.ns)?;
    emit(out, &render_sweep(&rows)?)?;
    for r in &rows {
        println!("n={:>4} mean RTT {:>9.1} ms (p95 {:.1})", r.n, r.mean_rtt_ms, r.p95_rtt_ms);
    }
    let bad = monotone_violations(&rows);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations(
            bad.iter().map(|(a, b)| format!("mean RTT drops from n={a} to n={b}")).collect(),
        ))
    }
}

fn churn(a: ChurnArgs, seed: u64, out: &std::path::Path) -> Result<(), Failure> {
    let trace = match (&a.trace, a.synthetic) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            ChurnTrace::from_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        (None, Some(Synthetic::Membership)) => membership_trace(seed),
        (None, _) => cafe_trace(seed),
    };
    let strategies = match a.strategy {
        Some(s) => vec![s],
        None => Strategy::ALL.to_vec(),
    };
    let resync = resync_duration(a.resync_s, a.n, a.m, seed)?;
    let study = churn_study(&trace, &strategies, resync, a.window_ms)?;
    let mut files = render_churn(&study)?;
    files.push(Rendered {
        name: "trace.csv".into(),
        bytes: trace.to_csv().into_bytes(),
    });
    emit(out, &files)?;
    println!("resync duration {:.3} s ({:?})", study.resync_s, study.resync_source);
    for r in &study.reports {
        println!(
            "{:>8}: {} interruptions, availability {:.5}%, max downtime {:.2} s",
            r.strategy.to_string(),
            r.interruptions,
            r.availability * 100.0,
            r.max_downtime_s
        );
    }
    Ok(())
}

fn blame(a: BlameArgs, seed: u64, out: &std::path::Path) -> Result<(), Failure> {
    let spec: AdversarySpec = a.adversary.parse().map_err(|e| Failure::Usage(format!("{}: {e}", a.adversary)))?;
    let d = blame_demo(&spec, a.n, a.m, seed)?;
    emit(out, &render_blame(&d)?)?;
    if let Some(v) = d.verdict {
        println!("lock-step verdict: {v}");
    }
    println!("simulated verdicts: {:?}", d.simulated_verdicts);
    if d.run.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations(d.run.violations))
    }
}

#[derive(Serialize)]
struct SetupRow {
    n: usize,
    m: usize,
    /// Measured on this machine, so not reproducible byte for byte.
    wall_ms: f64,
    simulated_ms: f64,
}

fn setup_bench(a: SetupArgs, seed: u64, out: &std::path::Path) -> Result<(), Failure> {
    if a.ns.iter().any(|n| *n < 2) || a.m < 1 || a.reps < 1 {
        return Err(Failure::Usage("need n >= 2, m >= 1 and at least one repetition".into()));
    }
    let mut rows = Vec::new();
    for &n in &a.ns {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (roster, ck, gk, _) = generate_identities::<Ristretto, _>(n, a.m, &mut rng);
        let start = Instant::now();
        for epoch in 0..a.reps {
            run_local_setup(&roster, &ck, &gk, epoch as u32, None, &mut rng)
                .map_err(|e| Failure::Harness(HarnessError::Invalid(e.to_string())))?;
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1000.0 / a.reps as f64;
        let sim = simulated_setup_duration(Preset::LanDefault, n, a.m, seed)?;
        let row = SetupRow {
            n,
            m: a.m,
            wall_ms,
            simulated_ms: sim as f64 / 1000.0,
        };
        println!("n={n:>4} m={}: {:.1} ms in process, {:.1} ms simulated", a.m, row.wall_ms, row.simulated_ms);
        rows.push(row);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(HarnessError::from)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    emit(
        out,
        &[Rendered {
            name: "setup_bench.csv".into(),
            bytes,
        }],
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = match std::env::var("LLDC_SEED") {
        Ok(s) => match s.parse() {
            Ok(v) => v,
            Err(_) => {
                eprintln!("LLDC_SEED must be an unsigned integer, got {s:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => cli.seed,
    };
    let out = cli.out.as_path();
    let result = match cli.cmd {
        Cmd::Run(a) => run(a, seed, out),
        Cmd::Sweep(a) => sweep(a, seed, out),
        Cmd::Churn(a) => churn(a, seed, out),
        Cmd::BlameDemo(a) => blame(a, seed, out),
        Cmd::SetupBench(a) => setup_bench(a, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Violations(v)) => {
            for m in v {
                eprintln!("invariant violated: {m}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
