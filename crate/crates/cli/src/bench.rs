//! Signature benchmark: per repetition, two fresh key pairs; the first signs
//! 1000 payloads, the second 200, and all 1200 are checked against the
//! first key. The 200 must be rejected.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wotnet_core::keystore::{generate_keypair, verify};
use wotnet_core::model::Algorithm;

pub const VALID_PER_REP: usize = 1000;
pub const INVALID_PER_REP: usize = 200;
pub const DEFAULT_REPS: usize = 15;
const PAYLOAD_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub algorithm: Algorithm,
    pub repetitions: usize,
    /// Mean milliseconds per generated key pair.
    pub keygen_ms: f64,
    /// Mean milliseconds per signature.
    pub sign_ms: f64,
    /// Mean milliseconds per verification.
    pub verify_ms: f64,
    pub valid_verified: usize,
    pub invalid_rejected: usize,
    pub false_results: usize,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs the procedure `reps` times. Payloads are fixed by `seed`; key
/// generation uses OS randomness.
pub fn run_bench(algorithm: Algorithm, reps: usize, seed: u64) -> Result<BenchReport> {
    ensure!(reps > 0, "at least one repetition is needed");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut keygen, mut sign, mut check) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    let (mut valid, mut invalid, mut wrong) = (0, 0, 0);
    for rep in 0..reps {
        let t = Instant::now();
        let kp1 = generate_keypair(algorithm, None)?;
        let kp2 = generate_keypair(algorithm, None)?;
        keygen += t.elapsed();

        let payloads: Vec<Vec<u8>> = (0..VALID_PER_REP + INVALID_PER_REP)
            .map(|_| {
                let mut p = vec![0u8; PAYLOAD_LEN];
                rng.fill_bytes(&mut p);
                p
            })
            .collect();
        let t = Instant::now();
        let sigs: Vec<Vec<u8>> = payloads
            .iter()
            .enumerate()
            .map(|(i, p)| if i < VALID_PER_REP { kp1.sign(p) } else { kp2.sign(p) })
            .collect();
        sign += t.elapsed();

        let t = Instant::now();
        let verdicts: Vec<bool> = payloads.iter().zip(&sigs).map(|(p, s)| verify(kp1.public(), p, s)).collect();
        check += t.elapsed();

        for (i, ok) in verdicts.into_iter().enumerate() {
            match (i < VALID_PER_REP, ok) {
                (true, true) => valid += 1,
                (false, false) => invalid += 1,
                _ => wrong += 1,
            }
        }
        log::debug!("{algorithm} repetition {} done", rep + 1);
    }
    let ops = (reps * (VALID_PER_REP + INVALID_PER_REP)) as f64;
    Ok(BenchReport {
        algorithm,
        repetitions: reps,
        keygen_ms: ms(keygen) / (2 * reps) as f64,
        sign_ms: ms(sign) / ops,
        verify_ms: ms(check) / ops,
        valid_verified: valid,
        invalid_rejected: invalid,
        false_results: wrong,
    })
}

pub fn table(reports: &[BenchReport]) -> String {
    let mut out = format!(
        "{:<11} {:>5} {:>12} {:>10} {:>10} {:>8} {:>8}\n",
        "algorithm", "reps", "keygen_ms", "sign_ms", "verify_ms", "valid", "invalid"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<11} {:>5} {:>12.3} {:>10.4} {:>10.4} {:>8} {:>8}",
            r.algorithm.to_string(),
            r.repetitions,
            r.keygen_ms,
            r.sign_ms,
            r.verify_ms,
            r.valid_verified,
            r.invalid_rejected
        );
    }
    out
}

pub const CSV_HEADER: &str = "algorithm,repetitions,keygen_ms,sign_ms,verify_ms,valid_verified,invalid_rejected";

pub fn to_csv(reports: &[BenchReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{},{}",
            r.algorithm, r.repetitions, r.keygen_ms, r.sign_ms, r.verify_ms, r.valid_verified, r.invalid_rejected
        );
    }
    out
}
