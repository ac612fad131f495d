use lldc_harness::criteria;

fn main() {
    let which: u8 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let seed = 1;
    let c = match which {
        1 => criteria::dcnet_correctness(seed),
        2 => criteria::equivocation_algebra(seed),
        3 => criteria::blame_suite(seed),
        4 => criteria::premask_coverage(seed),
        5 => criteria::shuffle_integrity(seed),
        6 => criteria::churn_counts(seed),
        7 => criteria::latency_scaling(seed),
        _ => criteria::determinism(seed),
    };
    println!("{c}");
}
