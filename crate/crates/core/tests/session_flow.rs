use lldc_core::crypto::{Ristretto, TestGroup};
use lldc_core::disruption::Verdict;
use lldc_core::roles::{Cover, Delivered, Fault, FaultScript, ProtocolOptions};
use lldc_core::session::LocalSession;
use lldc_core::EntityId;

fn opts(equivocation: bool, premask: bool) -> ProtocolOptions {
    ProtocolOptions {
        cell_len: 256,
        equivocation,
        premask,
        window: 1,
    }
}

#[test]
fn honest_rounds_deliver_in_order() {
    for (e, p) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut s = LocalSession::<Ristretto>::new(3, 2, opts(e, p), 1).unwrap();
        for row in 0..3 {
            s.send(row, row as u32 + 1, format!("hello from {row}").as_bytes());
        }
        for _ in 0..6 {
            let r = s.step().unwrap();
            assert!(r.blame.is_none());
            assert_ne!(r.delivered, Delivered::Failed);
        }
        assert_eq!(s.delivered.len(), 3);
        for (_, conn, payload) in &s.delivered {
            assert_eq!(payload, format!("hello from {}", conn - 1).as_bytes());
        }
    }
}

#[test]
fn flipped_client_is_excluded() {
    let mut s = LocalSession::<Ristretto>::new(3, 2, opts(true, false), 2).unwrap();
    let owner = s.owner_of_round(3);
    for _ in 0..3 {
        s.step().unwrap();
    }
    s.send(owner, 9, b"payload that will be disrupted");
    let bad = (owner + 1) % 3;
    let positions = (0..64).map(|i| 400 + 7 * i).collect();
    s.roles.clients[bad].add_fault(FaultScript::at(3, Fault::FlipBits(positions), Cover::Lie));
    let t = s.run_until_blame(20).unwrap().expect("blame ran");
    assert_eq!(t.verdict, Verdict::Excluded(s.roles.clients[bad].entity()), "{:?} {:?}", t.events, t.position);
    assert_eq!(s.delivered.len(), 1, "retransmission delivered");
}

#[test]
fn bad_sigma_is_excluded_in_test_group() {
    let mut s = LocalSession::<TestGroup>::new(3, 2, opts(true, false), 3).unwrap();
    let owner = s.owner_of_round(2);
    s.step().unwrap();
    s.step().unwrap();
    s.send(owner, 1, b"x");
    s.roles.guards[1].add_fault(FaultScript::at(2, Fault::BadSigma, Cover::Honest));
    let t = s.run_until_blame(20).unwrap().expect("blame ran");
    assert_eq!(t.verdict, Verdict::Excluded(EntityId::Guard(s.roles.guards[1].id)));
}
