//! The eight acceptance criteria, one printed line each.
//!
//! Criterion 2 cannot hold in the order-101 group: a diverged client whose
//! pad exponent is zero mod 101 leaves no trace in the recovered key. It
//! still runs and prints FAIL; the test then checks that every miss is one
//! the modular-arithmetic oracle predicts and that the full-size group has
//! none.

use lldc_harness::criteria;

const SEED: u64 = 1;

/// Criteria that fail for a documented reason outside the implementation.
const UNATTAINABLE: &[u8] = &[2];

#[test]
fn acceptance() {
    let checks = criteria::all(SEED);
    println!();
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<u8> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    let unexpected: Vec<u8> = failed.iter().copied().filter(|id| !UNATTAINABLE.contains(id)).collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");

    let (small, full) = criteria::equivocation_tally(SEED);
    assert!(small.oracle_disagreements.is_empty(), "{:?}", small.oracle_disagreements);
    assert_eq!(small.predicted, small.mismatches.len(), "{:?}", small.mismatches);
    assert!(full.mismatches.is_empty(), "{:?}", full.mismatches);
}
