//! Acceptance checks. Each returns a [`Check`] instead of panicking so the
//! suite can report every line before deciding.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use lldc_core::crypto::{test_params, Group, Ristretto, SharedSecret, TestGroup};
use lldc_core::dcnet::{client_cipher, guard_cipher, relay_combine, round_pads, UpstreamCell};
use lldc_core::disruption::Verdict;
use lldc_core::equivocation::{client_tag, guard_tag, relay_recover_key, BlindingKey, DownstreamHistory};
use lldc_core::roles::{Cover, Fault, FaultScript, ProtocolOptions};
use lldc_core::session::{run_fault_scenario, Culprit, LocalSession};
use lldc_core::setup::{
    client_authenticate, generate_identities, guard_shuffle, guard_verify_and_sign, RelaySetup, SetupError,
    ShuffleTranscript,
};
use lldc_core::GuardId;
use lldc_sim::simnet::{Preset, Strategy};

use crate::adversary::{spread_flips, AdversarySpec};
use crate::experiment::{monotone_violations, sweep_base, sweep_latency, Experiment, Load, SweepRow};
use crate::output::{render_blame, render_churn, render_run};
use crate::studies::{blame_demo, cafe_trace, churn_study, DurationSource};

#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] criterion {}: {} ({:.1} s) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(id: u8, name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Check {
    let start = Instant::now();
    let (mut pass, mut detail) = f();
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            pass = false;
            detail = format!("{detail}; over the {} s budget", b.as_secs());
        }
    }
    Check {
        id,
        name,
        pass,
        detail,
        elapsed,
    }
}

fn rng_for(parts: &[u64]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    ChaCha20Rng::from_seed(h.finalize().into())
}

// 1. DC-net correctness

pub fn dcnet_correctness(seed: u64) -> Check {
    timed(1, "DC-net correctness", Some(Duration::from_secs(30)), || {
        let cell_len = 256;
        let configs: Vec<(usize, usize)> = (2..=6).flat_map(|n| (1..=3).map(move |m| (n, m))).collect();
        let bad: Vec<String> = configs
            .par_iter()
            .filter_map(|&(n, m)| {
                let mut rng = rng_for(&[seed, 1, n as u64, m as u64]);
                let matrix: Vec<Vec<SharedSecret>> =
                    (0..n).map(|_| (0..m).map(|_| SharedSecret { seed: rng.gen() }).collect()).collect();
                let slot_keys: Vec<[u8; 32]> = (0..n).map(|_| rng.gen()).collect();
                let columns: Vec<Vec<SharedSecret>> =
                    (0..m).map(|j| matrix.iter().map(|row| row[j]).collect()).collect();
                for round in 0..1000u64 {
                    let owner = rng.gen_range(0..n);
                    let len = rng.gen_range(0..=UpstreamCell::payload_capacity(cell_len));
                    let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                    let cell = UpstreamCell::seal(&slot_keys[owner], rng.gen(), &payload)
                        .encode(cell_len)
                        .expect("payload fits");
                    let clients: Vec<Option<Vec<u8>>> = (0..n)
                        .map(|i| {
                            let x = (i == owner).then_some(cell.as_slice());
                            Some(client_cipher(&matrix[i], round, cell_len, x).expect("cell fits"))
                        })
                        .collect();
                    let guards: Vec<Option<Vec<u8>>> =
                        columns.iter().map(|c| Some(guard_cipher(c, round, cell_len))).collect();
                    let out = relay_combine(round, cell_len, &guards, &clients).expect("complete round");
                    let decoded = UpstreamCell::decode(&out).ok().flatten();
                    if out != cell || decoded.map(|c| c.payload) != Some(payload) {
                        return Some(format!("n={n} m={m} round={round}"));
                    }
                }
                None
            })
            .collect();
        let total = configs.len() * 1000;
        (
            bad.is_empty(),
            format!("{}/{total} rounds bit-exact over n 2..=6, m 1..=3{}", total - bad.len(), first(&bad)),
        )
    })
}

fn first(bad: &[String]) -> String {
    bad.first().map(|b| format!("; first failure {b}")).unwrap_or_default()
}

// 2. Equivocation algebra, against plain modular arithmetic

const P: u64 = test_params::MODULUS as u64;
const Q: u64 = test_params::ORDER as u64;

/// Exponent of `F1(digest)` in the test group: the first eight digest bytes,
/// little-endian, reduced mod q.
fn oracle_f1_log(digest: &[u8]) -> u64 {
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest")) % Q
}

fn oracle_history(z: &[u8]) -> [u8; 32] {
    Sha256::new().chain_update([0u8; 32]).chain_update(z).finalize().into()
}

/// Pad bytes by counter-mode SHA-256, then F2 of the pad's hash: its low six bits.
fn oracle_pad_exponent(secret: &SharedSecret, round: u64, len: usize) -> u64 {
    let mut pad = Vec::new();
    let mut block = 0u64;
    while pad.len() < len {
        let d = Sha256::new()
            .chain_update(secret.seed)
            .chain_update(round.to_le_bytes())
            .chain_update(block.to_le_bytes())
            .finalize();
        pad.extend_from_slice(&d);
        block += 1;
    }
    pad.truncate(len);
    (Sha256::digest(&pad)[0] & 0x3f) as u64
}

fn modpow(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    acc
}

/// Outcome of the exhaustive partition sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlgebraTally {
    pub cases: usize,
    /// Recovered key differs from the modular-arithmetic prediction.
    pub oracle_disagreements: Vec<String>,
    /// Recovery returned k for a diverged partition, or missed it for the trivial one.
    pub mismatches: Vec<String>,
    /// Mismatches the oracle predicts: a diverged client's contribution
    /// vanishes mod q because its pad exponent or history offset is zero.
    pub predicted: usize,
}

const EQUIVOCATED: &str = "equivocated copy for";

/// Key recovery for every owner and every set of diverged clients, n 2..=4
/// and m 1..=2. With `oracle` set, every recovered key is also predicted
/// from plain modular arithmetic (test group only).
fn partition_sweep<G: Group>(seed: u64, oracle: bool) -> AlgebraTally {
    let len = 64;
    let relay_z = b"downstream message as the relay logged it".to_vec();
    let relay_hist = DownstreamHistory::new().updated(&relay_z);
    let mut tally = AlgebraTally::default();
    for n in 2..=4usize {
        for m in 1..=2usize {
            let mut rng = rng_for(&[seed, 2, n as u64, m as u64]);
            let matrix: Vec<Vec<SharedSecret>> =
                (0..n).map(|_| (0..m).map(|_| SharedSecret { seed: rng.gen() }).collect()).collect();
            for owner in 0..n {
                let round = 10 + owner as u64;
                let key = BlindingKey::random::<G, _>(&mut rng);
                for diverged in 0u32..(1 << n) {
                    tally.cases += 1;
                    let label = format!("n={n} m={m} owner={owner} diverged={diverged:0n$b}");
                    let is_diverged = |i: usize| diverged >> i & 1 == 1;
                    let hist = |i: usize| {
                        if is_diverged(i) {
                            DownstreamHistory::new().updated(format!("{EQUIVOCATED} {i}").as_bytes())
                        } else {
                            relay_hist
                        }
                    };
                    let kappas: Vec<_> = (0..n)
                        .map(|i| {
                            let pads = round_pads(&matrix[i], round, len);
                            client_tag::<G>(&pads, &hist(i), (i == owner).then_some(&key)).expect("valid key")
                        })
                        .collect();
                    let sigmas: Vec<_> = (0..m)
                        .map(|j| {
                            let col: Vec<_> = matrix.iter().map(|r| r[j]).collect();
                            guard_tag::<G>(&round_pads(&col, round, len))
                        })
                        .collect();
                    let got = relay_recover_key::<G>(&relay_hist, &sigmas, &kappas).ok();
                    let recovered = got.as_ref() == Some(&key);
                    let mut predicted_recovery = diverged == 0;
                    if oracle {
                        // log K = log k + sum over diverged i of e_i (log F1(h_i) - log F1(h))
                        let h_log = oracle_f1_log(&oracle_history(&relay_z));
                        let mut shift = 0;
                        for i in (0..n).filter(|i| is_diverged(*i)) {
                            let e: u64 = matrix[i].iter().map(|s| oracle_pad_exponent(s, round, len)).sum::<u64>() % Q;
                            let hi = oracle_f1_log(&oracle_history(format!("{EQUIVOCATED} {i}").as_bytes()));
                            shift = (shift + e * ((hi + Q - h_log) % Q)) % Q;
                        }
                        let want_log = (key.0[0] as u64 + shift) % Q;
                        let want = G::element_to_bytes(&G::f1_map(&[want_log as u8]).expect("in range"));
                        let expected_elem = modpow(test_params::GENERATOR as u64, want_log, P) as u16;
                        let got_elem = got.as_ref().and_then(|k| k.element::<G>().ok()).map(|e| G::element_to_bytes(&e));
                        if got_elem.as_deref() != Some(&expected_elem.to_le_bytes()[..]) || want != expected_elem.to_le_bytes() {
                            tally.oracle_disagreements.push(label.clone());
                        }
                        predicted_recovery = shift == 0;
                    }
                    if recovered != (diverged == 0) {
                        if recovered == predicted_recovery {
                            tally.predicted += 1;
                        }
                        tally.mismatches.push(label);
                    }
                }
            }
        }
    }
    tally
}

pub fn equivocation_tally(seed: u64) -> (AlgebraTally, AlgebraTally) {
    (partition_sweep::<TestGroup>(seed, true), partition_sweep::<Ristretto>(seed, false))
}

pub fn equivocation_algebra(seed: u64) -> Check {
    timed(2, "equivocation algebra", Some(Duration::from_secs(10)), || {
        let (small, full) = equivocation_tally(seed);
        (
            small.mismatches.is_empty() && small.oracle_disagreements.is_empty() && full.mismatches.is_empty(),
            format!(
                "q=101: {} partitions, recovered key equals the oracle's in {}, k returned iff no client diverged in {} ({} of {} misses are oracle-predicted cancellations mod 101){}; ristretto control: iff holds in {}/{}",
                small.cases,
                small.cases - small.oracle_disagreements.len(),
                small.cases - small.mismatches.len(),
                small.predicted,
                small.mismatches.len(),
                first(&small.mismatches),
                full.cases - full.mismatches.len(),
                full.cases,
            ),
        )
    })
}

// 3. Blame over a scripted-adversary matrix

const COVERS: [Cover; 6] = [
    Cover::Honest,
    Cover::Lie,
    Cover::Refuse,
    Cover::ForgeProof,
    Cover::Silent,
    Cover::ForgeSignature,
];

fn opts(equivocation: bool, premask: bool) -> ProtocolOptions {
    ProtocolOptions {
        cell_len: 128,
        equivocation,
        premask,
        window: 1,
    }
}

/// Every (culprit, fault, cover, options) script for three clients and two guards.
pub fn blame_matrix() -> Vec<(Culprit, Fault, Cover, ProtocolOptions)> {
    let mut out = Vec::new();
    let culprits: Vec<Culprit> = (0..3).map(Culprit::Client).chain((0..2).map(Culprit::Guard)).collect();
    for (e, p) in [(true, false), (false, false), (true, true)] {
        for &c in &culprits {
            let mut faults = vec![Fault::FlipBits(spread_flips()), Fault::RandomCipher, Fault::Withhold];
            if e {
                faults.push(Fault::ForgedPadHash);
                faults.push(match c {
                    Culprit::Client(_) => Fault::BadKappa,
                    Culprit::Guard(_) => Fault::BadSigma,
                });
            }
            for f in faults {
                for cover in COVERS {
                    out.push((c, f.clone(), cover, opts(e, p)));
                }
            }
        }
    }
    out
}

/// Flips only bits that are one in the round's honest output. A probe run
/// on the same seed flips a known set, and the relay's audit of that failed
/// round, with the known flips undone, is the honest output.
fn one_to_zero_verdict(culprit: Culprit, o: ProtocolOptions, seed: u64) -> Result<Verdict, String> {
    let payload = b"\xff\xff\xff\xff\xff\xff\xff\xff scenario";
    let mut probe = LocalSession::<Ristretto>::new(3, 2, o, seed).map_err(|e| e.to_string())?;
    let t = probe.scenario_round();
    probe.prepare_owner_message(t, payload).map_err(|e| e.to_string())?;
    probe.roles.guards[0].add_fault(FaultScript::at(t, Fault::FlipBits(spread_flips()), Cover::Honest));
    probe.step().map_err(|e| e.to_string())?;
    let mut out = probe.roles.relay.audit(t).ok_or("probe round was not audited")?.output.clone();
    for k in spread_flips() {
        out[k / 8] ^= 0x80 >> (k % 8);
    }
    let ones: Vec<usize> = (0..out.len() * 8).filter(|k| out[k / 8] & (0x80 >> (k % 8)) != 0).take(6).collect();
    let mut s = LocalSession::<Ristretto>::new(3, 2, o, seed).map_err(|e| e.to_string())?;
    s.prepare_owner_message(t, payload).map_err(|e| e.to_string())?;
    let script = FaultScript::at(t, Fault::FlipBits(ones), Cover::Honest);
    match culprit {
        Culprit::Client(i) => s.roles.clients[i].add_fault(script),
        Culprit::Guard(j) => s.roles.guards[j].add_fault(script),
    }
    let b = s.run_until_blame(20).map_err(|e| e.to_string())?.ok_or("no blame")?;
    if !s.excluded.is_empty() {
        return Err(format!("excluded {:?}", s.excluded));
    }
    Ok(b.verdict)
}

pub fn blame_suite(seed: u64) -> Check {
    timed(3, "disruption blame", Some(Duration::from_secs(60)), || {
        let matrix = blame_matrix();
        let wrong: Vec<String> = matrix
            .par_iter()
            .enumerate()
            .filter_map(|(k, (c, f, cover, o))| {
                let r = run_fault_scenario::<Ristretto>(3, 2, *o, *c, f.clone(), *cover, seed + k as u64);
                match r {
                    Ok(r) if r.verdict == Verdict::Excluded(r.culprit) => None,
                    Ok(r) => Some(format!("{c:?} {f:?} {cover:?} eq={} pm={}: {}", o.equivocation, o.premask, r.verdict)),
                    Err(e) => Some(format!("{c:?} {f:?} {cover:?}: {e}")),
                }
            })
            .collect();
        let downward: Vec<String> = [Culprit::Client(0), Culprit::Client(2), Culprit::Guard(0), Culprit::Guard(1)]
            .into_iter()
            .flat_map(|c| [(true, false), (false, false), (true, true)].map(|(e, p)| (c, opts(e, p))))
            .collect::<Vec<_>>()
            .par_iter()
            .filter_map(|(c, o)| match one_to_zero_verdict(*c, *o, seed) {
                Ok(Verdict::Untraceable) => None,
                Ok(v) => Some(format!("{c:?} 1->0 eq={} pm={}: {v}", o.equivocation, o.premask)),
                Err(e) => Some(format!("{c:?} 1->0: {e}")),
            })
            .collect();
        (
            wrong.is_empty() && downward.is_empty(),
            format!(
                "{}/{} scripts excluded exactly the culprit; {}/12 pure 1->0 scripts untraceable{}{}",
                matrix.len() - wrong.len(),
                matrix.len(),
                12 - downward.len(),
                first(&wrong),
                first(&downward)
            ),
        )
    })
}

// 4. Premask coverage

pub const PREMASK_TRIALS: usize = 2000;

/// Share of trials convicting the flipper, and whether any honest party
/// was excluded along the way.
pub fn premask_rate(bits: usize, trials: usize, seed: u64) -> (f64, usize) {
    let o = ProtocolOptions {
        cell_len: 128,
        equivocation: false,
        premask: true,
        window: 1,
    };
    let results: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(&[seed, 4, bits as u64, t as u64]);
            let culprit = if rng.gen_bool(0.5) {
                Culprit::Client(rng.gen_range(0..3))
            } else {
                Culprit::Guard(rng.gen_range(0..2))
            };
            let mut all: Vec<usize> = (0..o.cell_len * 8).collect();
            all.shuffle(&mut rng);
            let flips = all[..bits].to_vec();
            let r = run_fault_scenario::<TestGroup>(3, 2, o, culprit, Fault::FlipBits(flips), Cover::Honest, rng.gen())
                .expect("scenario runs");
            let convicted = r.verdict == Verdict::Excluded(r.culprit);
            let framed = matches!(r.verdict, Verdict::Excluded(e) if e != r.culprit);
            (convicted, framed)
        })
        .collect();
    let convicted = results.iter().filter(|r| r.0).count();
    let framed = results.iter().filter(|r| r.1).count();
    (convicted as f64 / trials as f64, framed)
}

pub fn premask_coverage(seed: u64) -> Check {
    timed(4, "premask coverage", None, || {
        let mut pass = true;
        let mut parts = Vec::new();
        for b in [1usize, 2, 4] {
            let (rate, framed) = premask_rate(b, PREMASK_TRIALS, seed);
            let floor = 1.0 - 0.5f64.powi(b as i32) - 0.05;
            pass &= rate >= floor && framed == 0;
            parts.push(format!("b={b}: {rate:.4} (floor {floor:.4}, honest excluded {framed})"));
        }
        (pass, format!("{PREMASK_TRIALS} trials each; {}", parts.join(", ")))
    })
}

// 5. Shuffle integrity

fn tg_dlog(v: u16) -> Option<u64> {
    (0..Q).find(|x| modpow(test_params::GENERATOR as u64, *x, P) == v as u64)
}

struct ShuffleRun {
    transcript: ShuffleTranscript<TestGroup>,
    ephemerals: Vec<u16>,
    guards: Vec<(GuardId, lldc_core::crypto::KeyPair<TestGroup>, lldc_core::setup::GuardShuffleSecret<TestGroup>)>,
}

fn shuffle_once(seed: u64) -> Result<ShuffleRun, SetupError> {
    let mut rng = rng_for(&[seed, 5]);
    let n = rng.gen_range(2..=6);
    let m = rng.gen_range(1..=3);
    let (roster, ck, gk, _) = generate_identities::<TestGroup, _>(n, m, &mut rng);
    let mut relay = RelaySetup::new(roster.clone(), 0);
    let mut ephemerals = Vec::new();
    for (_, lt) in &ck {
        loop {
            let (eph, msg) = client_authenticate(lt, 0, &mut rng);
            match relay.accept_auth(&msg) {
                Ok(_) => {
                    ephemerals.push(eph.public.0);
                    break;
                }
                Err(SetupError::DuplicateEphemeral) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    let mut input = Some(relay.begin_shuffle()?);
    let mut guards = Vec::new();
    while let (Some(gid), Some((keys, base))) = (relay.next_guard(), input.take()) {
        let (link, secret) = guard_shuffle::<TestGroup, _>(gid, &keys, &base, &mut rng)?;
        let kp = gk.iter().find(|(g, _)| *g == gid).expect("guard key").1;
        guards.push((gid, kp, secret));
        input = relay.record_link(link)?;
    }
    Ok(ShuffleRun {
        transcript: relay.transcript().expect("chain complete"),
        ephemerals,
        guards,
    })
}

/// Ways a relay might doctor the transcript, each aimed at guard `j`'s link.
fn tampered(t: &ShuffleTranscript<TestGroup>, j: usize) -> Vec<(&'static str, ShuffleTranscript<TestGroup>)> {
    let mut out = Vec::new();
    let other = |v: lldc_core::crypto::Zp| TestGroup::op(&v, &TestGroup::generator());

    let mut x = t.clone();
    x.links[j].output_keys[0] = other(x.links[j].output_keys[0]);
    out.push(("replaced key", x.clone()));
    // keep the chain consistent by passing the forgery downstream
    if j + 1 < x.links.len() {
        x.links[j + 1].input_keys[0] = x.links[j].output_keys[0];
    } else {
        x.final_schedule[0] = x.links[j].output_keys[0];
    }
    out.push(("replaced key, chain patched", x));

    let mut x = t.clone();
    x.links[j].output_keys.swap(0, 1);
    out.push(("swapped slots", x));

    let mut x = t.clone();
    x.links[j].output_base = other(x.links[j].output_base);
    out.push(("replaced base", x));

    let mut x = t.clone();
    x.links[j].input_keys[0] = other(x.links[j].input_keys[0]);
    out.push(("replaced input", x));

    let mut x = t.clone();
    x.links.remove(j);
    out.push(("dropped link", x));

    let mut x = t.clone();
    let dup = x.links[j].clone();
    x.links.insert(j, dup);
    out.push(("duplicated link", x));
    out
}

pub fn shuffle_integrity(seed: u64) -> Check {
    timed(5, "shuffle integrity", None, || {
        let mut problems = Vec::new();
        let mut tampers = 0;
        for s in 0..100u64 {
            let run = match shuffle_once(seed.wrapping_add(s)) {
                Ok(r) => r,
                Err(e) => {
                    problems.push(format!("setup {s}: {e}"));
                    continue;
                }
            };
            let t = &run.transcript;
            // schedule = { eph^B } where final_base = g^B
            let b = tg_dlog(t.final_base.0).expect("base in the group");
            let mut want: Vec<u64> = run.ephemerals.iter().map(|e| modpow(*e as u64, b, P)).collect();
            let mut got: Vec<u64> = t.final_schedule.iter().map(|e| e.0 as u64).collect();
            want.sort_unstable();
            got.sort_unstable();
            if want != got {
                problems.push(format!("setup {s}: schedule is not a blinded permutation"));
            }
            for (gid, kp, secret) in &run.guards {
                if guard_verify_and_sign(t, *gid, kp, secret).is_err() {
                    problems.push(format!("setup {s}: {gid} rejected an honest transcript"));
                }
            }
            for (j, (gid, kp, secret)) in run.guards.iter().enumerate() {
                for (what, x) in tampered(t, j) {
                    tampers += 1;
                    if guard_verify_and_sign(&x, *gid, kp, secret).is_ok() {
                        problems.push(format!("setup {s}: {gid} accepted {what}"));
                    }
                }
            }
        }
        (
            problems.is_empty(),
            format!(
                "100 setups, dlogs by enumeration; {tampers} tampered transcripts, {} false accepts or other problems{}",
                problems.len(),
                first(&problems)
            ),
        )
    })
}

// 6. Churn counts

/// Availability from scratch: sort the halting instants, sweep once.
fn oracle_availability(times_s: &mut [f64], d: f64, span_s: f64) -> f64 {
    times_s.sort_by(f64::total_cmp);
    let mut down = 0.0;
    let mut covered_to = f64::NEG_INFINITY;
    let mut end = 0.0f64;
    for &t in times_s.iter() {
        let (s, e) = (t.max(covered_to), t + d);
        if e > s {
            down += e - s;
        }
        covered_to = covered_to.max(e);
        end = end.max(e);
    }
    1.0 - down / span_s.max(end)
}

pub fn churn_counts(seed: u64) -> Check {
    timed(6, "churn counts", None, || {
        let d = 0.82;
        let trace = cafe_trace(seed);
        let study = match churn_study(&trace, &Strategy::ALL, (d, DurationSource::Given), 60_000) {
            Ok(s) => s,
            Err(e) => return (false, e.to_string()),
        };
        let get = |s: Strategy| study.reports.iter().find(|r| r.strategy == s).expect("all strategies");
        let (naive, abrupt, graceful) = (get(Strategy::Naive), get(Strategy::Abrupt), get(Strategy::Graceful));
        let mut times: Vec<f64> = trace.events.iter().map(|e| e.time_ms as f64 / 1000.0).collect();
        let oracle = oracle_availability(&mut times, d, trace.span_ms() as f64 / 1000.0);
        let shape = study.associations == 222 && study.disassociations == 32 && study.span_s == 14_400.0;
        let counts = (naive.interruptions, abrupt.interruptions, graceful.interruptions) == (254, 32, 0);
        let graceful_ok = graceful.availability == 1.0 && graceful.max_downtime_s == 0.0;
        let abrupt_ok = (abrupt.max_downtime_s - d).abs() < 1e-9;
        let formula_ok = (naive.availability - oracle).abs() < 1e-12;
        (
            shape && counts && graceful_ok && abrupt_ok && formula_ok,
            format!(
                "interruptions naive={} abrupt={} graceful={}; graceful availability {} max downtime {}; abrupt max downtime {:.2} s; naive availability {:.5}% vs formula {:.5}%",
                naive.interruptions,
                abrupt.interruptions,
                graceful.interruptions,
                graceful.availability,
                graceful.max_downtime_s,
                abrupt.max_downtime_s,
                naive.availability * 100.0,
                oracle * 100.0
            ),
        )
    })
}

// 7. Latency scaling

pub const SWEEP_NS: [usize; 5] = [2, 10, 20, 50, 100];
pub const SWEEP_PINGS: usize = 40;

fn mean(rows: &[SweepRow]) -> Vec<f64> {
    rows.iter().map(|r| r.mean_rtt_ms).collect()
}

pub fn latency_scaling(seed: u64) -> Check {
    timed(7, "latency scaling", None, || {
        let sweep = |p: Preset, w: u64| sweep_latency(&sweep_base(p, 3, w, SWEEP_PINGS, seed), &SWEEP_NS);
        let runs: Vec<_> = [(Preset::LanDefault, 1), (Preset::LocalGuard, 1), (Preset::Vpn, 1), (Preset::LanDefault, 7)]
            .par_iter()
            .map(|&(p, w)| sweep(p, w))
            .collect();
        let [lan, local, vpn, lan7] = match <[_; 4]>::try_from(runs) {
            Ok([Ok(a), Ok(b), Ok(c), Ok(d)]) => [a, b, c, d],
            Ok(r) => {
                let e = r.into_iter().find_map(Result::err).expect("one failed");
                return (false, e.to_string());
            }
            Err(_) => unreachable!(),
        };
        let complete = [&lan, &local, &vpn, &lan7].iter().all(|rs| rs.iter().all(|r| r.pings == SWEEP_PINGS));
        let monotone = monotone_violations(&lan).is_empty();
        let local_wins = lan.iter().zip(&local).all(|(a, b)| b.mean_rtt_ms < a.mean_rtt_ms);
        let vpn_over = vpn.iter().all(|r| r.mean_rtt_ms > 200.0);
        let pipelined = lan.iter().zip(&lan7).all(|(a, b)| b.mean_rtt_ms < a.mean_rtt_ms);
        let fmt = |rs: &[SweepRow]| mean(rs).iter().map(|v| format!("{v:.0}")).collect::<Vec<_>>().join("/");
        (
            complete && monotone && local_wins && vpn_over && pipelined,
            format!(
                "mean RTT ms at n={SWEEP_NS:?}: lan {} | local_guard {} | vpn {} | lan W=7 {}; monotone={monotone} local<lan={local_wins} vpn>200={vpn_over} W7<W1={pipelined}",
                fmt(&lan),
                fmt(&local),
                fmt(&vpn),
                fmt(&lan7)
            ),
        )
    })
}

// 8. Determinism

pub fn determinism(seed: u64) -> Check {
    timed(8, "determinism", None, || {
        let render = || -> Result<Vec<Vec<u8>>, String> {
            let mut bytes = Vec::new();
            for w in [1, 4] {
                let mut e = Experiment::new("determinism", Preset::LanDefault, 6, 2, seed);
                e.window = w;
                e.cell_len = 256;
                e.load = Load::Ping {
                    count: 20,
                    active_fraction: 0.5,
                };
                e.adversaries = vec!["disrupt-client:4:flip0".parse::<AdversarySpec>().map_err(|e| e.to_string())?];
                let r = e.run().map_err(|e| e.to_string())?;
                bytes.extend(render_run(&r).map_err(|e| e.to_string())?.into_iter().map(|f| f.bytes));
            }
            let study = churn_study(&cafe_trace(seed), &Strategy::ALL, (0.82, DurationSource::Given), 60_000)
                .map_err(|e| e.to_string())?;
            bytes.extend(render_churn(&study).map_err(|e| e.to_string())?.into_iter().map(|f| f.bytes));
            let spec = "disrupt-guard:1:flip0".parse::<AdversarySpec>().map_err(|e| e.to_string())?;
            let demo = blame_demo(&spec, 4, 2, seed).map_err(|e| e.to_string())?;
            bytes.extend(render_blame(&demo).map_err(|e| e.to_string())?.into_iter().map(|f| f.bytes));
            Ok(bytes)
        };
        match (render(), render()) {
            (Ok(a), Ok(b)) => {
                let same = a == b;
                let total: usize = a.iter().map(Vec::len).sum();
                (same, format!("{} files, {total} bytes, identical across reruns: {same}", a.len()))
            }
            (Err(e), _) | (_, Err(e)) => (false, e),
        }
    })
}

pub fn all(seed: u64) -> Vec<Check> {
    vec![
        dcnet_correctness(seed),
        equivocation_algebra(seed),
        blame_suite(seed),
        premask_coverage(seed),
        shuffle_integrity(seed),
        churn_counts(seed),
        latency_scaling(seed),
        determinism(seed),
    ]
}

