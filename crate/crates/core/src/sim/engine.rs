use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{Calibration, SimConfig};
use super::metrics::{MetricsLog, Sample};
use super::mobility::{contacts, rwp_step, Area, Motion, Pos};
use super::SimError;
use crate::keystore::{generate_keypair, KeyPair};
use crate::model::{CryptoMode, TrustLevel};
use crate::protocol::{commit_sync, handshake_run, prepare_sync, Direct, HonestComparator, Node, PreparedSync};

/// Deterministic per-node seed material, independent streams per purpose.
pub fn derive_seed(seed: u64, node: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(node.to_be_bytes());
    h.update(purpose.as_bytes());
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Sync exchange in flight between two nodes in contact.
struct Transfer {
    completes_at_ms: u64,
    /// `a` pulls from `b`, then `b` pulls from `a`.
    a_from_b: PreparedSync,
    b_from_a: PreparedSync,
}

#[derive(Debug, Default, Clone, Copy)]
struct Totals {
    handshake_bytes: u64,
    query_bytes: u64,
    response_bytes: u64,
    handshakes: u64,
    syncs_completed: u64,
    syncs_aborted: u64,
}

/// A running simulation. Node `i` is the `i`-th device; all randomness
/// derives from the configured seed.
pub struct Simulation {
    config: SimConfig,
    area: Area,
    mobility_rng: ChaCha8Rng,
    nodes: Vec<Node<KeyPair>>,
    motion: Vec<Motion>,
    sent: Vec<u64>,
    received: Vec<u64>,
    /// Handshaken pairs and the time of their next sync.
    next_sync_ms: BTreeMap<(usize, usize), u64>,
    in_flight: BTreeMap<(usize, usize), Transfer>,
    now_ms: u64,
    totals: Totals,
    log: MetricsLog,
}

impl Simulation {
    /// Sets up nodes, keys and sub-keys. Size-model runs need a calibration.
    pub fn new(config: SimConfig, calibration: Option<&Calibration>) -> Result<Self, SimError> {
        config.validate()?;
        let alg = config.trust.signaturealgorithm;
        let sizes = match (config.crypto_mode, calibration) {
            (CryptoMode::SizeModel, None) => return Err(SimError::MissingCalibration),
            (_, c) => c.map(|c| c.get(alg)),
        };
        let make_key = |node: usize, purpose: &str| -> Result<KeyPair, SimError> {
            let seed = derive_seed(config.seed, node as u64, purpose);
            match (config.crypto_mode, sizes) {
                (CryptoMode::SizeModel, Some(s)) => Ok(KeyPair::synthetic(
                    alg,
                    s.public_key_len,
                    s.signature_len,
                    &seed.to_be_bytes(),
                )),
                _ => generate_keypair(alg, Some(seed)).map_err(|e| SimError::InvalidConfig(e.to_string())),
            }
        };

        let mut nodes = Vec::with_capacity(config.num_nodes);
        for i in 0..config.num_nodes {
            let mut node = Node::new(make_key(i, "device")?, config.trust, config.crypto_mode);
            node.buffer_limit = Some(config.buffer_bytes);
            for s in 0..config.trust.maxsubkeys {
                let sub = make_key(i, &format!("subkey-{s}"))?;
                node.register_subkey(sub.public(), &format!("app-{s}"), 0)?;
            }
            nodes.push(node);
        }

        let area = Area {
            width: config.width_m,
            height: config.height_m,
            speed_min: config.speed_min_mps,
            speed_max: config.speed_max_mps,
        };
        let mut mobility_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, "mobility"));
        let motion = (0..config.num_nodes).map(|_| area.spawn(&mut mobility_rng)).collect();
        let n = config.num_nodes;
        let mut sim = Simulation {
            log: MetricsLog::new(config.trust.maxdegree),
            config,
            area,
            mobility_rng,
            nodes,
            motion,
            sent: vec![0; n],
            received: vec![0; n],
            next_sync_ms: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            now_ms: 0,
            totals: Totals::default(),
        };
        let first = sim.sample();
        sim.log.samples.push(first);
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn nodes(&self) -> &[Node<KeyPair>] {
        &self.nodes
    }

    pub fn positions(&self) -> Vec<Pos> {
        self.motion.iter().map(|m| m.pos).collect()
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    /// Bytes each node has put on the air, and bytes each has taken in.
    pub fn traffic(&self) -> (&[u64], &[u64]) {
        (&self.sent, &self.received)
    }

    pub fn finished(&self) -> bool {
        self.now_ms >= self.config.duration_s * 1000
    }

    /// Advances one fixed step: move, detect contacts, settle transfers,
    /// start handshakes and syncs, then sample if due.
    pub fn step(&mut self) -> Result<(), SimError> {
        let step = self.config.step_ms;
        self.now_ms += step;
        let dt = step as f64 / 1000.0;
        for m in &mut self.motion {
            rwp_step(m, &self.area, dt, &mut self.mobility_rng);
        }
        let pairs = contacts(&self.positions(), self.config.tx_range_m);
        let in_contact: BTreeSet<(usize, usize)> = pairs.iter().copied().collect();

        let broken: Vec<(usize, usize)> = self
            .in_flight
            .keys()
            .filter(|p| !in_contact.contains(p))
            .copied()
            .collect();
        for p in broken {
            self.in_flight.remove(&p);
            self.totals.syncs_aborted += 1;
            debug!("t={}ms sync {:?} aborted", self.now_ms, p);
        }

        for &(a, b) in &pairs {
            match self.next_sync_ms.get(&(a, b)).copied() {
                None => self.handshake(a, b)?,
                Some(due) if self.now_ms >= due && !self.in_flight.contains_key(&(a, b)) => self.start_sync(a, b)?,
                _ => {}
            }
        }

        let done: Vec<(usize, usize)> = self
            .in_flight
            .iter()
            .filter(|(_, t)| t.completes_at_ms <= self.now_ms + step)
            .map(|(p, _)| *p)
            .collect();
        for p in done {
            let t = self.in_flight.remove(&p).expect("in flight");
            self.finish_sync(p, t)?;
        }

        let sample_ms = self.config.sample_interval_s * 1000;
        if self.now_ms % sample_ms == 0 {
            let s = self.sample();
            self.log.samples.push(s);
        }
        Ok(())
    }

    fn handshake(&mut self, a: usize, b: usize) -> Result<(), SimError> {
        let (x, y) = two(&mut self.nodes, a, b);
        let out = handshake_run(x, y, &mut HonestComparator, &mut Direct, self.now_ms / 1000)?;
        self.sent[a] += out.bytes_forward;
        self.received[b] += out.bytes_forward;
        self.sent[b] += out.bytes_backward;
        self.received[a] += out.bytes_backward;
        self.totals.handshake_bytes += out.total_bytes();
        self.totals.handshakes += 1;
        // first sync is due at once, i.e. at the next step together
        self.next_sync_ms.insert((a, b), self.now_ms);
        Ok(())
    }

    fn start_sync(&mut self, a: usize, b: usize) -> Result<(), SimError> {
        let a_from_b = prepare_sync(&self.nodes[a], &self.nodes[b], &mut Direct)?;
        let b_from_a = prepare_sync(&self.nodes[b], &self.nodes[a], &mut Direct)?;
        let a_out = a_from_b.query_bytes + b_from_a.response_bytes;
        let b_out = b_from_a.query_bytes + a_from_b.response_bytes;
        self.sent[a] += a_out;
        self.received[b] += a_out;
        self.sent[b] += b_out;
        self.received[a] += b_out;
        self.totals.query_bytes += a_from_b.query_bytes + b_from_a.query_bytes;
        self.totals.response_bytes += a_from_b.response_bytes + b_from_a.response_bytes;
        let bits = (a_out + b_out) * 8;
        let duration_ms = (bits * 1000).div_ceil(self.config.tx_rate_bps);
        self.in_flight.insert(
            (a, b),
            Transfer {
                completes_at_ms: self.now_ms + duration_ms,
                a_from_b,
                b_from_a,
            },
        );
        // a pair that was apart catches up one sync per step
        *self.next_sync_ms.get_mut(&(a, b)).expect("handshaken") += self.config.sync_interval_s * 1000;
        Ok(())
    }

    fn finish_sync(&mut self, (a, b): (usize, usize), t: Transfer) -> Result<(), SimError> {
        let (x, y) = two(&mut self.nodes, a, b);
        commit_sync(x, y, t.a_from_b)?;
        commit_sync(y, x, t.b_from_a)?;
        self.totals.syncs_completed += 1;
        Ok(())
    }

    /// Network-wide metrics at the current instant.
    pub fn sample(&self) -> Sample {
        let depths = self.log.max_depth.max(2) as usize - 1;
        let mut s = Sample {
            time_s: self.now_ms / 1000,
            known_by_depth: vec![0; depths],
            handshake_bytes: self.totals.handshake_bytes,
            sync_query_bytes: self.totals.query_bytes,
            sync_response_bytes: self.totals.response_bytes,
            handshakes: self.totals.handshakes,
            syncs_completed: self.totals.syncs_completed,
            syncs_aborted: self.totals.syncs_aborted,
            ..Sample::default()
        };
        let mut repo_total = 0u64;
        for node in &self.nodes {
            let view = node.repo.evaluate();
            s.direct_relations += view.count(TrustLevel::Trusted) as u64;
            for (d, n) in view.known_by_depth() {
                s.known_by_depth[d as usize - 2] += n as u64;
            }
            s.sign_ops += node.sign_ops;
            s.verify_ops += node.total_verify_ops();
            s.buffer_rejections += node.buffer_rejections;
            let size = node.repo.repo_size_bytes();
            repo_total += size;
            s.repo_bytes_max = s.repo_bytes_max.max(size);
        }
        s.repo_bytes_mean = repo_total as f64 / self.nodes.len() as f64;
        s
    }

    /// Steps until the configured duration and returns the metrics.
    pub fn run_to_end(mut self) -> Result<MetricsLog, SimError> {
        while !self.finished() {
            self.step()?;
        }
        if let Some(last) = self.log.last() {
            info!(
                "seed {} finished: {} direct, {} known, {} bytes",
                self.config.seed,
                last.direct_relations,
                last.known_total(),
                last.total_bytes()
            );
        }
        Ok(self.log)
    }
}

fn two<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    debug_assert!(i < j);
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

/// Runs one simulation to completion.
pub fn run(config: &SimConfig, calibration: Option<&Calibration>) -> Result<MetricsLog, SimError> {
    Simulation::new(config.clone(), calibration)?.run_to_end()
}
