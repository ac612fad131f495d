use lldc_core::disruption::Verdict;
use lldc_core::roles::{Cover, Fault, When};
use lldc_core::{ClientId, EntityId, GuardId};
use lldc_sim::nodes::*;
use lldc_sim::simnet::{ChurnEvent, ChurnKind, ChurnTrace, Preset, Strategy, Topology, MS, SECOND};

fn node() -> NodeConfig {
    NodeConfig {
        cell_len: 128,
        ..NodeConfig::default()
    }
}

fn cfg(n: usize, m: usize, workload: Workload) -> SimConfig {
    SimConfig::new(Topology::preset(Preset::LanDefault, n, m), node(), workload, 7)
}

fn rounds(events: &[Event]) -> Vec<(u32, u64, Option<usize>, Outcome)> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Round {
                epoch,
                round,
                slot,
                outcome,
                ..
            } => Some((*epoch, *round, *slot, *outcome)),
            _ => None,
        })
        .collect()
}

fn received(events: &[Event]) -> Vec<(usize, String)> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Received { client, data, .. } => Some((*client, data.clone())),
            _ => None,
        })
        .collect()
}

fn scripted(n: usize, m: usize, sends: &[(u64, usize, &str)]) -> SimConfig {
    let mut c = cfg(n, m, Workload::Idle);
    c.sends = sends
        .iter()
        .map(|(ms, c, d)| ScriptedSend {
            at: ms * MS,
            client: *c,
            data: d.as_bytes().to_vec(),
        })
        .collect();
    c
}

#[test]
fn idle_rounds_carry_nothing() {
    let mut c = cfg(5, 2, Workload::Idle);
    c.stop.rounds = Some(10);
    let out = simulate(c).unwrap();
    let r = rounds(&out.events);
    assert_eq!(r.len(), 10);
    assert!(r.iter().all(|(_, _, _, o)| *o == Outcome::Idle));
    assert_eq!(out.report.payload_bytes, 0);
    assert_eq!(r.iter().map(|x| x.1).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
}

#[test]
fn scripted_send_is_echoed_to_its_sender() {
    let mut c = scripted(4, 2, &[(10, 2, "hello exit")]);
    c.stop.time = Some(5 * SECOND);
    let out = simulate(c).unwrap();
    assert_eq!(received(&out.events), vec![(2, "hello exit".to_string())]);
}

#[test]
fn window_does_not_change_what_is_delivered() {
    let sends = [(0, 0, "a0"), (5, 1, "b0"), (7, 0, "a1"), (300, 3, "d0"), (301, 1, "b1")];
    let run = |w: u64| {
        let mut c = scripted(4, 2, &sends);
        c.node.window = w;
        c.stop.time = Some(10 * SECOND);
        let mut got = received(&simulate(c).unwrap().events);
        got.sort();
        got
    };
    let one = run(1);
    assert_eq!(one.len(), sends.len());
    assert_eq!(one, run(4));
}

#[test]
fn slots_rotate_when_load_tuning_is_off() {
    let mut c = cfg(6, 2, Workload::Idle);
    c.node.load_period = 0;
    c.stop.rounds = Some(18);
    let slots: Vec<_> = rounds(&simulate(c).unwrap().events).iter().map(|r| r.2.unwrap()).collect();
    let want: Vec<_> = (0..18).map(|r| r % 6).collect();
    assert_eq!(slots, want);
}

#[test]
fn reservation_closes_idle_slots() {
    let mut c = cfg(6, 2, Workload::Idle);
    c.node.load_period = 4;
    c.node.sleep = 50 * MS;
    c.stop.rounds = Some(12);
    let out = simulate(c).unwrap();
    let r = rounds(&out.events);
    // after the first reservation nobody keeps a slot, so only reservations follow
    let after: Vec<_> = r.iter().skip(4).map(|x| x.2).collect();
    assert!(after.iter().all(Option::is_none), "{after:?}");
}

#[test]
fn same_seed_same_log() {
    let mk = || {
        let mut c = cfg(5, 2, Workload::ping(6));
        c.stop.time = Some(20 * SECOND);
        simulate(c).unwrap().log_jsonl()
    };
    assert_eq!(mk(), mk());
}

#[test]
fn rounds_wait_for_the_slowest_client() {
    let mut topo = Topology::preset(Preset::LanDefault, 4, 2);
    let slow = topo.clients()[2];
    let relay = topo.relay().unwrap();
    let l = topo.link_between(slow, relay).unwrap();
    topo.links[l].latency = 300 * MS;
    let mut c = SimConfig::new(topo, node(), Workload::Idle, 3);
    c.stop.rounds = Some(8);
    let out = simulate(c).unwrap();
    let lat: Vec<u64> = out
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Round { time, opened, round, .. } if *round > 0 => Some(time - opened),
            _ => None,
        })
        .collect();
    assert!(lat.iter().all(|t| *t >= 600 * MS), "{lat:?}");
}

fn one_event_trace(kind_after: ChurnKind) -> ChurnTrace {
    let mut ev: Vec<ChurnEvent> = (0..4)
        .map(|i| ChurnEvent {
            time_ms: 0,
            device: format!("d{i}"),
            kind: ChurnKind::Assoc,
        })
        .collect();
    let device = if kind_after == ChurnKind::Assoc { "d4" } else { "d1" };
    ev.push(ChurnEvent {
        time_ms: 5_000,
        device: device.into(),
        kind: kind_after,
    });
    ChurnTrace::new(ev, Some(15_000)).unwrap()
}

fn churn_run(strategy: Strategy, kind: ChurnKind) -> SimOutput {
    let mut c = cfg(5, 2, Workload::Idle);
    c.churn = Some(ChurnPlan {
        trace: one_event_trace(kind),
        strategy,
    });
    c.stop.time = Some(15 * SECOND);
    simulate(c).unwrap()
}

fn epochs(events: &[Event]) -> Vec<(u64, u32, Vec<u32>)> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::EpochStarted { time, epoch, clients, .. } => Some((*time, *epoch, clients.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn abrupt_leave_halts_for_one_setup() {
    let out = churn_run(Strategy::Abrupt, ChurnKind::Disassoc);
    let ep = epochs(&out.events);
    // the four initial joins each start a setup; the leave starts one more
    let last = ep.last().unwrap();
    assert_eq!(last.2, vec![0, 2, 3]);
    assert_eq!(out.report.interruptions, 1);
    let setup = out
        .events
        .iter()
        .rev()
        .find_map(|e| match e {
            Event::SetupStarted { time, .. } => Some(*time),
            _ => None,
        })
        .unwrap();
    assert_eq!(setup, 5 * SECOND);
    let down = out.report.max_downtime_s;
    assert!((down - (last.0 - setup) as f64 / SECOND as f64).abs() < 1e-9);
    assert!(down > 0.1 && down < 2.0, "{down}");
}

#[test]
fn graceful_churn_never_halts() {
    for kind in [ChurnKind::Assoc, ChurnKind::Disassoc] {
        let out = churn_run(Strategy::Graceful, kind);
        assert_eq!(out.report.interruptions, 0, "{kind:?}");
        let ep = epochs(&out.events);
        let want: Vec<u32> = if kind == ChurnKind::Assoc { vec![0, 1, 2, 3, 4] } else { vec![0, 2, 3] };
        assert_eq!(ep.last().unwrap().2, want);
    }
}

#[test]
fn epochs_do_not_interleave() {
    let out = churn_run(Strategy::Graceful, ChurnKind::Assoc);
    let mut current = None;
    for e in &out.events {
        match e {
            Event::EpochStarted { epoch, .. } => current = Some(*epoch),
            Event::Round { epoch, .. } => assert_eq!(Some(*epoch), current),
            _ => {}
        }
    }
    let ids: Vec<u32> = epochs(&out.events).iter().map(|e| e.1).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]), "{ids:?}");
}

fn verdicts(events: &[Event]) -> Vec<Verdict> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Blame { verdict, .. } => Some(*verdict),
            _ => None,
        })
        .collect()
}

fn disrupt(target: Target) -> SimOutput {
    // every slot carries data, since an idle cell cannot serve as ground truth
    let mut c = scripted(4, 2, &[(0, 0, "c0"), (0, 1, "c1"), (0, 2, "c2"), (0, 3, "c3")]);
    c.node.load_period = 0;
    c.adversaries.push(Adversary::Party {
        target,
        epoch: 0,
        when: When::At(1),
        fault: Fault::FlipBits((0..48).map(|i| 300 + 11 * i).collect()),
        cover: Cover::Honest,
    });
    c.stop.time = Some(20 * SECOND);
    simulate(c).unwrap()
}

#[test]
fn disruptive_client_is_excluded() {
    let out = disrupt(Target::Client(3));
    assert_eq!(verdicts(&out.events).first(), Some(&Verdict::Excluded(EntityId::Client(ClientId(3)))));
    let last = epochs(&out.events).last().cloned().unwrap();
    assert_eq!(last.2, vec![0, 1, 2]);
    // the disrupted message still gets through
    let got = received(&out.events);
    for c in 0..3 {
        assert!(got.contains(&(c, format!("c{c}"))), "{got:?}");
    }
}

#[test]
fn disruptive_guard_is_excluded() {
    let out = disrupt(Target::Guard(1));
    assert_eq!(verdicts(&out.events).first(), Some(&Verdict::Excluded(EntityId::Guard(GuardId(1)))));
    let guards = out.events.iter().rev().find_map(|e| match e {
        Event::EpochStarted { guards, .. } => Some(guards.clone()),
        _ => None,
    });
    assert_eq!(guards, Some(vec![0]));
}

#[test]
fn silent_client_times_out() {
    let mut c = cfg(4, 2, Workload::Idle);
    c.adversaries.push(Adversary::Party {
        target: Target::Client(2),
        epoch: 0,
        when: When::At(5),
        fault: Fault::Withhold,
        cover: Cover::Honest,
    });
    c.stop.time = Some(10 * SECOND);
    let out = simulate(c).unwrap();
    let missing = out.events.iter().find_map(|e| match e {
        Event::Timeout { missing, round, .. } => Some((*round, missing.clone())),
        _ => None,
    });
    assert_eq!(missing, Some((5, vec![EntityId::Client(ClientId(2))])));
    assert_eq!(epochs(&out.events).last().unwrap().2, vec![0, 1, 3]);
}

#[test]
fn equivocating_relay_is_caught() {
    let mut c = scripted(4, 2, &[(0, 0, "x"), (0, 1, "y"), (0, 2, "z"), (0, 3, "w")]);
    c.node.load_period = 0;
    c.adversaries.push(Adversary::EquivocateZ {
        epoch: 0,
        round: 2,
        client: 1,
    });
    c.stop.time = Some(20 * SECOND);
    let out = simulate(c).unwrap();
    // every later round mixes histories, so slot owners see their cells fail
    assert!(rounds(&out.events).iter().any(|r| r.0 == 0 && r.3 == Outcome::Failed));
    assert!(!verdicts(&out.events).is_empty());
    assert!(!verdicts(&out.events).iter().any(|v| matches!(v, Verdict::Excluded(EntityId::Client(_)))));
}
