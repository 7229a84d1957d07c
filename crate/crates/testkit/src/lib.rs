//! Independent oracles and fixtures shared by the integration and acceptance
//! tests. Nothing here is used by production code.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use wotnet_core::keystore::{generate_keypair, issue_certificate, KeyPair};
use wotnet_core::model::{Algorithm, Certificate, CryptoMode, Fingerprint, TrustConfig, TrustLevel};
use wotnet_core::protocol::{handshake_run, sync_run, Direct, HonestComparator, Node};
use wotnet_core::trust::{MergeItem, MergeReport, TrustAssessment, TrustRepository};

/// Brute-force trust evaluation.
///
/// The set of Known keys is computed as the intersection of every set `S`
/// that is closed under one application of the trust rules (the least fixed
/// point by Knaster-Tarski), enumerating all subsets of candidate keys.
/// Distances are found by enumerating every simple certification path from
/// the owner whose intermediate keys are Trusted or in `S`.
///
/// Returns level and depth (None for Unknown) for every node.
pub fn oracle<T: Ord + Copy>(
    owner: T,
    config: &TrustConfig,
    nodes: &[T],
    edges: &[(T, T)],
) -> BTreeMap<T, (TrustLevel, Option<u32>)> {
    let mut all: BTreeSet<T> = nodes.iter().copied().collect();
    all.insert(owner);
    for (a, b) in edges {
        all.insert(*a);
        all.insert(*b);
    }
    let edges: BTreeSet<(T, T)> = edges.iter().copied().filter(|(a, b)| a != b).collect();
    let trusted: BTreeSet<T> = all
        .iter()
        .copied()
        .filter(|k| *k != owner && edges.contains(&(owner, *k)))
        .collect();
    let candidates: Vec<T> = all
        .iter()
        .copied()
        .filter(|k| *k != owner && !trusted.contains(k))
        .collect();
    assert!(candidates.len() <= 20, "oracle is exponential in candidate count");

    let maxdegree = config.maxdegree;
    let numknown = config.numknown as usize;

    // Shortest simple path length from owner to each vertex, intermediates
    // restricted to `allowed`, by exhaustive path enumeration up to `limit`.
    let shortest = |allowed: &BTreeSet<T>, limit: u32| -> BTreeMap<T, u32> {
        let mut best: BTreeMap<T, u32> = BTreeMap::new();
        let mut stack: Vec<(Vec<T>, u32)> = vec![(vec![owner], 0)];
        while let Some((path, len)) = stack.pop() {
            let last = *path.last().unwrap();
            let e = best.entry(last).or_insert(u32::MAX);
            *e = (*e).min(len);
            if len >= limit || (last != owner && !allowed.contains(&last)) {
                continue;
            }
            for (a, b) in &edges {
                if *a == last && !path.contains(b) {
                    let mut next = path.clone();
                    next.push(*b);
                    stack.push((next, len + 1));
                }
            }
        }
        best
    };

    let step = |set: &BTreeSet<T>| -> BTreeSet<T> {
        let allowed: BTreeSet<T> = trusted.union(set).copied().collect();
        let dist = shortest(&allowed, maxdegree);
        let mut out = BTreeSet::new();
        for &k in &candidates {
            let via_trusted = maxdegree >= 2 && trusted.iter().any(|t| edges.contains(&(*t, k)));
            let known_issuers: Vec<T> = set.iter().copied().filter(|i| edges.contains(&(*i, k))).collect();
            let via_known = known_issuers.len() >= numknown
                && known_issuers
                    .iter()
                    .filter_map(|i| dist.get(i))
                    .any(|d| d.saturating_add(1) <= maxdegree);
            if via_trusted || via_known {
                out.insert(k);
            }
        }
        out
    };

    let mut least: BTreeSet<T> = candidates.iter().copied().collect();
    for mask in 0u32..(1u32 << candidates.len()) {
        let set: BTreeSet<T> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, k)| *k)
            .collect();
        if step(&set).is_subset(&set) {
            least = least.intersection(&set).copied().collect();
        }
    }

    let allowed: BTreeSet<T> = trusted.union(&least).copied().collect();
    let dist = shortest(&allowed, maxdegree);
    let mut out = BTreeMap::new();
    for &k in &all {
        let entry = if k == owner {
            (TrustLevel::Ultimate, Some(0))
        } else if trusted.contains(&k) {
            (TrustLevel::Trusted, Some(1))
        } else if least.contains(&k) {
            // last hop must leave from a Trusted or Known issuer
            let mut d = u32::MAX;
            for (a, b) in &edges {
                if *b == k && (trusted.contains(a) || least.contains(a)) {
                    d = d.min(dist[a] + 1);
                }
            }
            (TrustLevel::Known, Some(d))
        } else {
            (TrustLevel::Unknown, None)
        };
        out.insert(k, entry);
    }
    out
}

/// Compares an assessment with the oracle over the repository's own certificates.
pub fn oracle_for_repo(repo: &TrustRepository) -> BTreeMap<Fingerprint, (TrustLevel, Option<u32>)> {
    let nodes: Vec<Fingerprint> = repo.fingerprints().copied().collect();
    let edges: Vec<(Fingerprint, Fingerprint)> = repo
        .records()
        .flat_map(|r| r.certificates().map(|c| (c.issuer_fp, c.subject_fp)))
        .collect();
    oracle(repo.owner_fp(), repo.config(), &nodes, &edges)
}

/// Polynomial oracle for `numknown == 1`: levels follow breadth-first
/// distance from the owner along certificate edges, cut at `maxdegree`.
/// Usable on repositories far too large for [`oracle`].
pub fn bfs_oracle(repo: &TrustRepository) -> BTreeMap<Fingerprint, (TrustLevel, Option<u32>)> {
    assert_eq!(repo.config().numknown, 1, "distance oracle only covers numknown = 1");
    let mut out = BTreeMap::new();
    let mut adj: BTreeMap<Fingerprint, Vec<Fingerprint>> = BTreeMap::new();
    for rec in repo.records() {
        out.insert(rec.fingerprint(), (TrustLevel::Unknown, None));
        for c in rec.certificates() {
            adj.entry(c.issuer_fp).or_default().push(c.subject_fp);
        }
    }
    let owner = repo.owner_fp();
    let mut frontier = vec![owner];
    let mut dist = BTreeMap::from([(owner, 0u32)]);
    for d in 1..=repo.config().maxdegree {
        let mut next = Vec::new();
        for u in &frontier {
            for v in adj.get(u).into_iter().flatten() {
                if !dist.contains_key(v) {
                    dist.insert(*v, d);
                    next.push(*v);
                }
            }
        }
        frontier = next;
    }
    for (fp, d) in dist {
        let level = match d {
            0 => TrustLevel::Ultimate,
            1 => TrustLevel::Trusted,
            _ => TrustLevel::Known,
        };
        out.insert(fp, (level, Some(d)));
    }
    out
}

pub fn assessment_map(a: &TrustAssessment) -> BTreeMap<Fingerprint, (TrustLevel, Option<u32>)> {
    a.levels().iter().map(|(fp, l)| (*fp, (*l, a.depth(fp)))).collect()
}

/// A set of device keys indexed by position.
pub struct KeyPool {
    pub keys: Vec<KeyPair>,
    pub mode: CryptoMode,
}

impl KeyPool {
    pub fn real(n: usize, algorithm: Algorithm, seed: u64) -> Self {
        let keys = (0..n)
            .map(|i| generate_keypair(algorithm, Some(seed.wrapping_mul(1000).wrapping_add(i as u64))).unwrap())
            .collect();
        KeyPool {
            keys,
            mode: CryptoMode::Real,
        }
    }

    /// Placeholder keys with the real encoded lengths of each algorithm.
    pub fn synthetic(n: usize, algorithm: Algorithm, seed: u64) -> Self {
        let (pk, sig) = match algorithm {
            Algorithm::Rsa2048 => (295, 256),
            Algorithm::EcdsaP256 => (92, 64),
        };
        let keys = (0..n)
            .map(|i| KeyPair::synthetic(algorithm, pk, sig, format!("pool-{seed}-{i}").as_bytes()))
            .collect();
        KeyPool {
            keys,
            mode: CryptoMode::SizeModel,
        }
    }

    pub fn fp(&self, i: usize) -> Fingerprint {
        self.keys[i].public().fingerprint()
    }

    pub fn cert(&self, issuer: usize, subject: usize, at: u64) -> Certificate {
        issue_certificate(&self.keys[issuer], self.keys[subject].public(), at).unwrap()
    }

    pub fn empty_repo(&self, owner: usize, config: TrustConfig) -> TrustRepository {
        TrustRepository::with_mode(self.keys[owner].public().clone(), config, self.mode)
    }
}

/// Random certification graph over `devices` keys; device 0 is the owner.
#[derive(Debug, Clone)]
pub struct Topology {
    pub devices: usize,
    pub edges: Vec<(usize, usize)>,
    pub config: TrustConfig,
}

pub fn random_topology<R: Rng>(rng: &mut R, max_devices: usize, max_certs: usize) -> Topology {
    let devices = rng.gen_range(1..=max_devices);
    let mut edges = BTreeSet::new();
    if devices > 1 {
        let target = rng.gen_range(0..=max_certs.min(devices * (devices - 1)));
        while edges.len() < target {
            let a = rng.gen_range(0..devices);
            let b = rng.gen_range(0..devices);
            if a != b {
                edges.insert((a, b));
            }
        }
    }
    Topology {
        devices,
        edges: edges.into_iter().collect(),
        config: TrustConfig {
            maxdegree: rng.gen_range(1..=3),
            numknown: rng.gen_range(1..=2),
            ..TrustConfig::default()
        },
    }
}

impl Topology {
    pub fn items(&self, pool: &KeyPool, at: u64) -> Vec<MergeItem> {
        let mut items: Vec<MergeItem> = (0..self.devices)
            .map(|i| MergeItem::Key(pool.keys[i].public().clone()))
            .collect();
        items.extend(
            self.edges
                .iter()
                .map(|(a, b)| MergeItem::Certificate(pool.cert(*a, *b, at))),
        );
        items
    }

    /// Builds device 0's repository by merging all keys and certificates.
    pub fn build(&self, pool: &KeyPool) -> (TrustRepository, MergeReport) {
        let mut repo = pool.empty_repo(0, self.config);
        let report = repo.merge(self.items(pool, 1_000));
        (repo, report)
    }

    /// Oracle over the full topology, keyed by fingerprint.
    pub fn oracle(&self, pool: &KeyPool) -> BTreeMap<Fingerprint, (TrustLevel, Option<u32>)> {
        let nodes: Vec<usize> = (0..self.devices).collect();
        oracle(0, &self.config, &nodes, &self.edges)
            .into_iter()
            .map(|(i, v)| (pool.fp(i), v))
            .collect()
    }
}

/// Two distinct mutable elements of a slice.
pub fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j);
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

/// A handful of protocol nodes connected by completed handshakes.
pub struct World {
    pub nodes: Vec<Node<KeyPair>>,
    pub edges: Vec<(usize, usize)>,
    pub config: TrustConfig,
}

/// Random world of `n` nodes: a random non-empty set of handshakes, random
/// trust parameters and up to `maxsubkeys` sub-keys per node, registered
/// before any handshake.
pub fn random_world<R: Rng>(rng: &mut R, n: usize, tag: u64) -> World {
    let config = TrustConfig {
        maxdegree: rng.gen_range(1..=3),
        numknown: rng.gen_range(1..=2),
        ..TrustConfig::default()
    };
    let mut nodes: Vec<Node<KeyPair>> = (0..n)
        .map(|i| {
            let key = KeyPair::synthetic(Algorithm::EcdsaP256, 92, 64, format!("world-{tag}-{i}").as_bytes());
            Node::new(key, config, CryptoMode::SizeModel)
        })
        .collect();
    for (i, node) in nodes.iter_mut().enumerate() {
        for s in 0..rng.gen_range(0..=config.maxsubkeys) {
            let sub = KeyPair::synthetic(Algorithm::EcdsaP256, 92, 64, format!("sub-{tag}-{i}-{s}").as_bytes());
            node.register_subkey(sub.public(), "app", 1).unwrap();
        }
    }
    let all: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut edges = Vec::new();
    while edges.is_empty() {
        edges = all.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    }
    for (t, (a, b)) in edges.iter().enumerate() {
        let (x, y) = pair_mut(&mut nodes, *a, *b);
        handshake_run(x, y, &mut HonestComparator, &mut Direct, 10 + t as u64).unwrap();
    }
    World { nodes, edges, config }
}

impl World {
    /// Every linked pair syncs once in each direction; returns items merged.
    pub fn sync_round(&mut self) -> usize {
        let mut merged = 0;
        for (a, b) in self.edges.clone() {
            for (rq, rs) in [(a, b), (b, a)] {
                let (x, y) = pair_mut(&mut self.nodes, rq, rs);
                merged += sync_run(x, y, &mut Direct).unwrap().items_merged;
            }
        }
        merged
    }

    /// Oracle view of node `i` over the union of every certificate in the world.
    pub fn global_oracle(&self, i: usize) -> BTreeMap<Fingerprint, (TrustLevel, Option<u32>)> {
        let fps: Vec<Fingerprint> = self.nodes.iter().map(|n| n.fingerprint()).collect();
        let mut edges = Vec::new();
        for (a, b) in &self.edges {
            edges.push((fps[*a], fps[*b]));
            edges.push((fps[*b], fps[*a]));
        }
        oracle(fps[i], &self.config, &fps, &edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(maxdegree: u32, numknown: u32) -> TrustConfig {
        TrustConfig {
            maxdegree,
            numknown,
            ..TrustConfig::default()
        }
    }

    #[test]
    fn oracle_chain() {
        let r = oracle(0, &cfg(3, 1), &[], &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(r[&1], (TrustLevel::Trusted, Some(1)));
        assert_eq!(r[&2], (TrustLevel::Known, Some(2)));
        assert_eq!(r[&3], (TrustLevel::Known, Some(3)));
        let r = oracle(0, &cfg(2, 1), &[], &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(r[&3], (TrustLevel::Unknown, None));
    }

    #[test]
    fn oracle_numknown() {
        let base = vec![(0, 1), (0, 2), (1, 10), (2, 11), (10, 20)];
        let r = oracle(0, &cfg(3, 2), &[], &base);
        assert_eq!(r[&20].0, TrustLevel::Unknown);
        let mut both = base.clone();
        both.push((11, 20));
        let r = oracle(0, &cfg(3, 2), &[], &both);
        assert_eq!(r[&20], (TrustLevel::Known, Some(3)));
    }

    #[test]
    fn oracle_rejects_self_supporting_cycle() {
        let r = oracle(0, &cfg(3, 2), &[], &[(0, 1), (1, 10), (10, 20), (10, 21), (20, 21), (21, 20)]);
        assert_eq!(r[&20].0, TrustLevel::Unknown);
        assert_eq!(r[&21].0, TrustLevel::Unknown);
    }
}
