use lldc_core::roles::{Cover, Fault};
use lldc_harness::adversary::spread_flips;
use lldc_harness::AdversarySpec;
use lldc_sim::nodes::Target;
use proptest::prelude::*;

fn fault() -> impl Strategy<Value = Fault> {
    prop_oneof![
        Just(Fault::FlipBits(spread_flips())),
        prop::collection::vec(0usize..8192, 1..6).prop_map(Fault::FlipBits),
        Just(Fault::RandomCipher),
        Just(Fault::ForgedPadHash),
        Just(Fault::Withhold),
    ]
}

fn cover() -> impl Strategy<Value = Cover> {
    prop_oneof![
        Just(Cover::Honest),
        Just(Cover::Lie),
        Just(Cover::Refuse),
        Just(Cover::ForgeProof),
        Just(Cover::Silent),
        Just(Cover::ForgeSignature),
    ]
}

fn spec() -> impl Strategy<Value = AdversarySpec> {
    let party = (any::<bool>(), 0usize..64, fault(), cover(), 0u64..1000, 0u32..10).prop_map(
        |(client, i, fault, cover, round, epoch)| AdversarySpec::Party {
            target: if client { Target::Client(i) } else { Target::Guard(i) },
            fault,
            cover,
            round,
            epoch,
        },
    );
    let z = (0usize..64, 0u64..1000, 0u32..10)
        .prop_map(|(client, round, epoch)| AdversarySpec::EquivocateZ { client, round, epoch });
    prop_oneof![party, z]
}

proptest! {
    #[test]
    fn specs_survive_printing(s in spec()) {
        let back: AdversarySpec = s.to_string().parse().unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn garbage_never_panics(text in "[a-z0-9:=,-]{0,40}") {
        let _ = text.parse::<AdversarySpec>();
    }
}
