use lldc_core::disruption::Verdict;
use lldc_core::{ClientId, EntityId, GuardId};
use lldc_harness::experiment::{check_invariants, sweep_base, sweep_latency};
use lldc_harness::{AdversarySpec, Experiment, Load};
use lldc_sim::nodes::{Event, Report};
use lldc_sim::simnet::{Preset, SECOND};

fn small(n: usize, m: usize, seed: u64) -> Experiment {
    let mut e = Experiment::new("t", Preset::LanDefault, n, m, seed);
    e.cell_len = 256;
    e.load_tuning = false;
    e
}

fn first_verdict(e: &Experiment) -> Option<Verdict> {
    let r = e.run().unwrap();
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    r.output.events.iter().find_map(|ev| match ev {
        Event::Blame { verdict, .. } => Some(*verdict),
        _ => None,
    })
}

#[test]
fn scripted_matrix_convicts_only_the_culprit() {
    for spec in [
        "disrupt-client:0:flip0",
        "disrupt-client:3:flip0:lie",
        "disrupt-client:2:random:refuse",
        "disrupt-guard:0:flip0:forge-proof",
        "disrupt-guard:1:random:silent",
    ] {
        let a: AdversarySpec = spec.parse().unwrap();
        let mut e = small(4, 2, 5);
        e.load = Load::Idle;
        e.duration = Some(20 * SECOND);
        e.adversaries = vec![a.clone()];
        let want = match a.target().unwrap() {
            lldc_sim::nodes::Target::Client(i) => EntityId::Client(ClientId(i as u32)),
            lldc_sim::nodes::Target::Guard(j) => EntityId::Guard(GuardId(j as u32)),
        };
        assert_eq!(first_verdict(&e), Some(Verdict::Excluded(want)), "{spec}");
    }
}

#[test]
fn reports_are_views_of_the_log() {
    let mut e = small(6, 2, 3);
    e.load = Load::Cbr {
        active_fraction: 0.5,
        rate_bps: 20_000,
    };
    e.duration = Some(10 * SECOND);
    let r = e.run().unwrap();
    assert_eq!(Report::from_events(&r.output.events), r.output.report);
    assert!(check_invariants(&e, &r.output).is_empty());
    assert!(r.report().payload_bytes > 0);
    assert!(r.report().wan_bytes <= r.report().lan_bytes);
}

#[test]
fn sweep_rows_follow_the_requested_order() {
    let base = sweep_base(Preset::LocalGuard, 2, 1, 5, 4);
    let rows = sweep_latency(&base, &[8, 2, 4]).unwrap();
    assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![8, 2, 4]);
    assert!(rows.iter().all(|r| r.pings == 5));
    assert!(sweep_latency(&base, &[]).is_err());
}
