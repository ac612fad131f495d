//! Declarative misbehaviour specs, as given on the command line.
//!
//! ```text
//! disrupt-client[:I]:FAULT[:COVER][:round=R][:epoch=E]
//! disrupt-guard[:J]:FAULT[:COVER][:round=R][:epoch=E]
//! equivocate-z[:I][:round=R][:epoch=E]
//! ```
//!
//! FAULT is one of `flip0` (a spread of 48 bits, so some zero turns to
//! one), `flip=K[,K...]`, `random`, `bad-kappa`, `bad-sigma`, `forged-hash`
//! or `withhold`. COVER is how the party answers blame: `honest`, `lie`,
//! `refuse`, `forge-proof`, `silent` or `forge-signature`.

use std::fmt;
use std::str::FromStr;

use lldc_core::roles::{Cover, Fault, When};
use lldc_core::session::Culprit;
use lldc_sim::nodes::{Adversary, Target};
use serde::Serialize;
use thiserror::Error;

/// Round a fault fires in unless the spec names one. Round 1 carries data
/// in the harness scenarios, which is what makes a disruption traceable.
pub const DEFAULT_FAULT_ROUND: u64 = 1;
const DEFAULT_EQUIVOCATION_ROUND: u64 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("unknown adversary kind {0:?}")]
    Kind(String),
    #[error("unknown token {0:?}")]
    Token(String),
    #[error("{0} needs a fault")]
    MissingFault(String),
    #[error("fault {fault} does not apply to a {role}")]
    Mismatch { fault: &'static str, role: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum AdversarySpec {
    Party {
        target: Target,
        fault: Fault,
        cover: Cover,
        round: u64,
        epoch: u32,
    },
    EquivocateZ {
        client: usize,
        round: u64,
        epoch: u32,
    },
}

/// 48 positions spaced 11 bits apart from bit 300.
pub fn spread_flips() -> Vec<usize> {
    (0..48).map(|i| 300 + 11 * i).collect()
}

fn fault_token(f: &Fault) -> String {
    match f {
        Fault::FlipBits(ks) if *ks == spread_flips() => "flip0".into(),
        Fault::FlipBits(ks) => format!("flip={}", ks.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        Fault::RandomCipher => "random".into(),
        Fault::BadKappa => "bad-kappa".into(),
        Fault::BadSigma => "bad-sigma".into(),
        Fault::ForgedPadHash => "forged-hash".into(),
        Fault::Withhold => "withhold".into(),
    }
}

fn cover_token(c: Cover) -> &'static str {
    match c {
        Cover::Honest => "honest",
        Cover::Lie => "lie",
        Cover::Refuse => "refuse",
        Cover::ForgeProof => "forge-proof",
        Cover::Silent => "silent",
        Cover::ForgeSignature => "forge-signature",
    }
}

fn parse_fault(tok: &str) -> Option<Fault> {
    Some(match tok {
        "flip0" => Fault::FlipBits(spread_flips()),
        "random" => Fault::RandomCipher,
        "bad-kappa" => Fault::BadKappa,
        "bad-sigma" => Fault::BadSigma,
        "forged-hash" => Fault::ForgedPadHash,
        "withhold" => Fault::Withhold,
        _ => {
            let list = tok.strip_prefix("flip=")?;
            let ks: Result<Vec<usize>, _> = list.split(',').map(str::parse).collect();
            Fault::FlipBits(ks.ok().filter(|v| !v.is_empty())?)
        }
    })
}

fn parse_cover(tok: &str) -> Option<Cover> {
    Some(match tok {
        "honest" => Cover::Honest,
        "lie" => Cover::Lie,
        "refuse" => Cover::Refuse,
        "forge-proof" => Cover::ForgeProof,
        "silent" => Cover::Silent,
        "forge-signature" => Cover::ForgeSignature,
        _ => return None,
    })
}

impl FromStr for AdversarySpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        let mut toks = s.split(':');
        let kind = toks.next().unwrap_or_default();
        let mut index = 0usize;
        let mut fault = None;
        let mut cover = Cover::Honest;
        let mut round = None;
        let mut epoch = 0u32;
        for tok in toks {
            if let Ok(i) = tok.parse::<usize>() {
                index = i;
            } else if let Some(r) = tok.strip_prefix("round=") {
                round = Some(r.parse().map_err(|_| SpecError::Token(tok.into()))?);
            } else if let Some(e) = tok.strip_prefix("epoch=") {
                epoch = e.parse().map_err(|_| SpecError::Token(tok.into()))?;
            } else if let Some(f) = parse_fault(tok) {
                fault = Some(f);
            } else if let Some(c) = parse_cover(tok) {
                cover = c;
            } else {
                return Err(SpecError::Token(tok.into()));
            }
        }
        let target = match kind {
            "disrupt-client" => Target::Client(index),
            "disrupt-guard" => Target::Guard(index),
            "equivocate-z" => {
                return Ok(AdversarySpec::EquivocateZ {
                    client: index,
                    round: round.unwrap_or(DEFAULT_EQUIVOCATION_ROUND),
                    epoch,
                })
            }
            _ => return Err(SpecError::Kind(kind.into())),
        };
        let fault = fault.ok_or_else(|| SpecError::MissingFault(kind.into()))?;
        match (&target, &fault) {
            (Target::Guard(_), Fault::BadKappa) => Err(SpecError::Mismatch {
                fault: "bad-kappa",
                role: "guard",
            }),
            (Target::Client(_), Fault::BadSigma) => Err(SpecError::Mismatch {
                fault: "bad-sigma",
                role: "client",
            }),
            _ => Ok(AdversarySpec::Party {
                target,
                fault,
                cover,
                round: round.unwrap_or(DEFAULT_FAULT_ROUND),
                epoch,
            }),
        }
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversarySpec::Party {
                target,
                fault,
                cover,
                round,
                epoch,
            } => {
                let (role, i) = match target {
                    Target::Client(i) => ("client", i),
                    Target::Guard(j) => ("guard", j),
                };
                write!(
                    f,
                    "disrupt-{role}:{i}:{}:{}:round={round}:epoch={epoch}",
                    fault_token(fault),
                    cover_token(*cover)
                )
            }
            AdversarySpec::EquivocateZ { client, round, epoch } => {
                write!(f, "equivocate-z:{client}:round={round}:epoch={epoch}")
            }
        }
    }
}

impl AdversarySpec {
    pub fn to_sim(&self) -> Adversary {
        match self.clone() {
            AdversarySpec::Party {
                target,
                fault,
                cover,
                round,
                epoch,
            } => Adversary::Party {
                target,
                epoch,
                when: When::At(round),
                fault,
                cover,
            },
            AdversarySpec::EquivocateZ { client, round, epoch } => Adversary::EquivocateZ { epoch, round, client },
        }
    }

    /// The culprit for an in-process blame run, if this is a party fault.
    pub fn culprit(&self) -> Option<(Culprit, Fault, Cover)> {
        match self {
            AdversarySpec::Party {
                target, fault, cover, ..
            } => {
                let c = match target {
                    Target::Client(i) => Culprit::Client(*i),
                    Target::Guard(j) => Culprit::Guard(*j),
                };
                Some((c, fault.clone(), *cover))
            }
            AdversarySpec::EquivocateZ { .. } => None,
        }
    }

    pub fn target(&self) -> Option<Target> {
        match self {
            AdversarySpec::Party { target, .. } => Some(*target),
            AdversarySpec::EquivocateZ { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_flip_defaults() {
        let a: AdversarySpec = "disrupt-guard:flip0".parse().unwrap();
        assert_eq!(
            a,
            AdversarySpec::Party {
                target: Target::Guard(0),
                fault: Fault::FlipBits(spread_flips()),
                cover: Cover::Honest,
                round: DEFAULT_FAULT_ROUND,
                epoch: 0,
            }
        );
    }

    #[test]
    fn full_form() {
        let a: AdversarySpec = "disrupt-client:2:flip=3,9:lie:round=7:epoch=1".parse().unwrap();
        let AdversarySpec::Party {
            target,
            fault,
            cover,
            round,
            epoch,
        } = a
        else {
            panic!()
        };
        assert_eq!((target, fault, cover, round, epoch), (Target::Client(2), Fault::FlipBits(vec![3, 9]), Cover::Lie, 7, 1));
        let z: AdversarySpec = "equivocate-z:3".parse().unwrap();
        assert_eq!(
            z,
            AdversarySpec::EquivocateZ {
                client: 3,
                round: 2,
                epoch: 0
            }
        );
    }

    #[test]
    fn rejects_nonsense() {
        assert_eq!("steal:flip0".parse::<AdversarySpec>(), Err(SpecError::Kind("steal".into())));
        assert_eq!(
            "disrupt-guard:bad-kappa".parse::<AdversarySpec>(),
            Err(SpecError::Mismatch {
                fault: "bad-kappa",
                role: "guard"
            })
        );
        assert!(matches!("disrupt-client:1".parse::<AdversarySpec>(), Err(SpecError::MissingFault(_))));
        assert!(matches!("disrupt-client:flip=".parse::<AdversarySpec>(), Err(SpecError::Token(_))));
    }
}
