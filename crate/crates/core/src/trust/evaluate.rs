use std::collections::{BTreeMap, HashMap};

use crate::model::{Fingerprint, TrustConfig, TrustLevel};

/// Trust level and minimal certification-path depth of every key in a
/// repository, relative to its owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustAssessment {
    owner: Fingerprint,
    levels: BTreeMap<Fingerprint, TrustLevel>,
    depth: BTreeMap<Fingerprint, u32>,
}

impl TrustAssessment {
    pub fn owner(&self) -> Fingerprint {
        self.owner
    }

    /// Level of `fp`; keys the repository does not hold are `Unknown`.
    pub fn level(&self, fp: &Fingerprint) -> TrustLevel {
        self.levels.get(fp).copied().unwrap_or(TrustLevel::Unknown)
    }

    /// Depth of `fp`, or `None` for `Unknown` keys.
    pub fn depth(&self, fp: &Fingerprint) -> Option<u32> {
        self.depth.get(fp).copied()
    }

    pub fn levels(&self) -> &BTreeMap<Fingerprint, TrustLevel> {
        &self.levels
    }

    pub fn depths(&self) -> &BTreeMap<Fingerprint, u32> {
        &self.depth
    }

    pub fn count(&self, level: TrustLevel) -> usize {
        self.levels.values().filter(|l| **l == level).count()
    }

    /// Number of `Known` keys at each depth.
    pub fn known_by_depth(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for (fp, level) in &self.levels {
            if *level == TrustLevel::Known {
                *out.entry(self.depth[fp]).or_insert(0) += 1;
            }
        }
        out
    }
}

/// Computes the least fixed point of the trust rules over a certificate
/// graph. `edges` are `(issuer, subject)` pairs of valid certificates;
/// `nodes` are all keys held (the owner is added if missing).
///
/// Rules: the owner is Ultimate at depth 0; a key certified by the owner is
/// Trusted at depth 1; any other key is Known when a Trusted key certifies it
/// (depth 2, needs `maxdegree >= 2`) or when at least `numknown` distinct
/// Known keys certify it and the shallowest of them plus one stays within
/// `maxdegree`. Iteration only ever raises levels and lowers depths, so it
/// terminates on cyclic graphs.
pub fn evaluate_graph<'a>(
    owner: Fingerprint,
    config: &TrustConfig,
    nodes: impl IntoIterator<Item = &'a Fingerprint>,
    edges: impl IntoIterator<Item = (&'a Fingerprint, &'a Fingerprint)>,
) -> TrustAssessment {
    let mut ids: Vec<Fingerprint> = vec![owner];
    let mut index: HashMap<Fingerprint, usize> = HashMap::from([(owner, 0)]);
    let mut intern = |fp: &Fingerprint, ids: &mut Vec<Fingerprint>| {
        *index.entry(*fp).or_insert_with(|| {
            ids.push(*fp);
            ids.len() - 1
        })
    };
    for fp in nodes {
        intern(fp, &mut ids);
    }
    let mut incoming: Vec<Vec<usize>> = Vec::new();
    let mut pairs = Vec::new();
    for (issuer, subject) in edges {
        if issuer == subject {
            continue;
        }
        let i = intern(issuer, &mut ids);
        let s = intern(subject, &mut ids);
        pairs.push((i, s));
    }
    incoming.resize(ids.len(), Vec::new());
    for (i, s) in pairs {
        incoming[s].push(i);
    }
    for list in &mut incoming {
        list.sort_unstable();
        list.dedup();
    }

    const NONE: u32 = u32::MAX;
    let n = ids.len();
    let mut level = vec![TrustLevel::Unknown; n];
    let mut depth = vec![NONE; n];
    level[0] = TrustLevel::Ultimate;
    depth[0] = 0;
    for k in 1..n {
        if incoming[k].contains(&0) {
            level[k] = TrustLevel::Trusted;
            depth[k] = 1;
        }
    }

    let maxdegree = config.maxdegree;
    let numknown = config.numknown as usize;
    let mut changed = true;
    while changed {
        changed = false;
        for k in 1..n {
            if level[k] == TrustLevel::Trusted {
                continue;
            }
            let mut candidate = NONE;
            if maxdegree >= 2 && incoming[k].iter().any(|&i| level[i] == TrustLevel::Trusted) {
                candidate = 2;
            }
            let mut known_issuers = 0usize;
            let mut shallowest = NONE;
            for &i in &incoming[k] {
                if level[i] == TrustLevel::Known {
                    known_issuers += 1;
                    shallowest = shallowest.min(depth[i]);
                }
            }
            if known_issuers >= numknown && shallowest + 1 <= maxdegree {
                candidate = candidate.min(shallowest + 1);
            }
            if candidate != NONE && (level[k] != TrustLevel::Known || candidate < depth[k]) {
                level[k] = TrustLevel::Known;
                depth[k] = candidate;
                changed = true;
            }
        }
    }

    let mut levels = BTreeMap::new();
    let mut depths = BTreeMap::new();
    for (k, fp) in ids.iter().enumerate() {
        levels.insert(*fp, level[k]);
        if depth[k] != NONE {
            depths.insert(*fp, depth[k]);
        }
    }
    TrustAssessment {
        owner,
        levels,
        depth: depths,
    }
}
