use std::collections::{BTreeMap, BTreeSet};

use log::debug;

use super::evaluate::{evaluate_graph, TrustAssessment};
use crate::keystore::{verify_certificate, verify_subkey_certificate};
use crate::model::{
    Certificate, CryptoMode, Fingerprint, PublicKeyBytes, SubKeyCertificate, TrustConfig, TrustLevel,
};

/// Length of the Base64 (padded) rendering of `n` bytes.
pub(crate) fn b64_len(n: usize) -> u64 {
    (n.div_ceil(3) * 4) as u64
}

#[derive(Debug, Clone)]
pub(crate) struct Stamped<T> {
    pub(crate) item: T,
    pub(crate) seq: u64,
}

/// Everything a repository holds about one subject key.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    subject_key: PublicKeyBytes,
    certificates: BTreeMap<Fingerprint, Stamped<Certificate>>,
    subkeys: BTreeMap<Fingerprint, Stamped<SubKeyCertificate>>,
}

impl PartialEq for SubjectRecord {
    fn eq(&self, other: &Self) -> bool {
        self.subject_key == other.subject_key
            && self.certificates().eq(other.certificates())
            && self.subkeys().eq(other.subkeys())
    }
}

impl SubjectRecord {
    pub(crate) fn new(subject_key: PublicKeyBytes) -> Self {
        SubjectRecord {
            subject_key,
            certificates: BTreeMap::new(),
            subkeys: BTreeMap::new(),
        }
    }

    pub fn subject_key(&self) -> &PublicKeyBytes {
        &self.subject_key
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.subject_key.fingerprint()
    }

    /// Certificates over this subject, ordered by issuer fingerprint.
    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.values().map(|s| &s.item)
    }

    pub fn certificate_from(&self, issuer: &Fingerprint) -> Option<&Certificate> {
        self.certificates.get(issuer).map(|s| &s.item)
    }

    /// Sub-key certificates issued by this subject, ordered by sub-key fingerprint.
    pub fn subkeys(&self) -> impl Iterator<Item = &SubKeyCertificate> {
        self.subkeys.values().map(|s| &s.item)
    }

    pub(crate) fn certificates_since(&self, seq: u64) -> impl Iterator<Item = &Certificate> {
        self.certificates.values().filter(move |s| s.seq > seq).map(|s| &s.item)
    }

    pub(crate) fn subkeys_since(&self, seq: u64) -> impl Iterator<Item = &SubKeyCertificate> {
        self.subkeys.values().filter(move |s| s.seq > seq).map(|s| &s.item)
    }

    pub(crate) fn insert_certificate(&mut self, cert: Certificate, seq: u64) {
        self.certificates.insert(cert.issuer_fp, Stamped { item: cert, seq });
    }

    pub(crate) fn insert_subkey(&mut self, cert: SubKeyCertificate, seq: u64) {
        self.subkeys.insert(cert.subkey_fp(), Stamped { item: cert, seq });
    }

    /// Persisted footprint of this record in bytes.
    pub fn size_bytes(&self) -> u64 {
        b64_len(self.subject_key.len())
            + self.certificates().map(cert_size).sum::<u64>()
            + self.subkeys().map(subkey_size).sum::<u64>()
    }
}

/// Same precedence as [`Certificate::supersedes`].
fn subkey_supersedes(a: &SubKeyCertificate, b: &SubKeyCertificate) -> bool {
    a.issued_at > b.issued_at || (a.issued_at == b.issued_at && a.sig < b.sig)
}

fn cert_size(c: &Certificate) -> u64 {
    b64_len(c.encode().len())
}

fn subkey_size(c: &SubKeyCertificate) -> u64 {
    b64_len(c.subkey.len()) + b64_len(c.encode().len())
}

/// One unit of incoming trust material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergeItem {
    Key(PublicKeyBytes),
    Certificate(Certificate),
    SubkeyCertificate(SubKeyCertificate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Key,
    Certificate,
    SubkeyCertificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Issuer, subject or issuing device key is not held.
    MissingKey,
    /// The signature does not verify under the issuer's key.
    BadSignature,
    /// Fingerprint or key id do not match the subject key.
    SubjectMismatch,
    SelfCertificate,
    /// A certificate from the same issuer with precedence is already held.
    Superseded,
    /// Cannot contribute to any trust decision within `maxdegree`.
    Unreachable,
    /// Placeholder key offered to a repository using real cryptography.
    SyntheticKey,
    SubkeyLimit,
    /// Applying the merge would exceed the storage cap.
    OverCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rejection {
    pub kind: ItemKind,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeReport {
    pub accepted: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub reasons: Vec<Rejection>,
    /// Signature verifications performed by this merge.
    pub verify_ops: u64,
    pub over_capacity: bool,
}

impl MergeReport {
    fn reject(&mut self, kind: ItemKind, reason: RejectReason) {
        self.rejected += 1;
        self.reasons.push(Rejection { kind, reason });
    }

    pub fn rejected_for(&self, reason: RejectReason) -> usize {
        self.reasons.iter().filter(|r| r.reason == reason).count()
    }
}

/// A device's local trust repository.
#[derive(Debug, Clone)]
pub struct TrustRepository {
    owner_fp: Fingerprint,
    config: TrustConfig,
    mode: CryptoMode,
    records: BTreeMap<Fingerprint, SubjectRecord>,
    seq: u64,
    size_bytes: u64,
    verify_ops: u64,
}

impl TrustRepository {
    pub fn new(owner_key: PublicKeyBytes, config: TrustConfig) -> Self {
        Self::with_mode(owner_key, config, CryptoMode::Real)
    }

    pub fn with_mode(owner_key: PublicKeyBytes, config: TrustConfig, mode: CryptoMode) -> Self {
        let owner_fp = owner_key.fingerprint();
        let record = SubjectRecord::new(owner_key);
        let size_bytes = record.size_bytes();
        TrustRepository {
            owner_fp,
            config,
            mode,
            records: BTreeMap::from([(owner_fp, record)]),
            seq: 1,
            size_bytes,
            verify_ops: 0,
        }
    }

    pub fn owner_fp(&self) -> Fingerprint {
        self.owner_fp
    }

    pub fn owner_key(&self) -> &PublicKeyBytes {
        &self.records[&self.owner_fp].subject_key
    }

    pub fn config(&self) -> &TrustConfig {
        &self.config
    }

    pub fn mode(&self) -> CryptoMode {
        self.mode
    }

    pub fn records(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.values()
    }

    pub fn record(&self, fp: &Fingerprint) -> Option<&SubjectRecord> {
        self.records.get(fp)
    }

    pub fn contains(&self, fp: &Fingerprint) -> bool {
        self.records.contains_key(fp)
    }

    /// Fingerprints of every subject held, in ascending order.
    pub fn fingerprints(&self) -> impl Iterator<Item = &Fingerprint> {
        self.records.keys()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn certificate_count(&self) -> usize {
        self.records.values().map(|r| r.certificates.len()).sum()
    }

    /// Cumulative signature verifications performed by merges.
    pub fn verify_ops(&self) -> u64 {
        self.verify_ops
    }

    /// Current change sequence; every stored item carries the sequence
    /// number at which it was inserted.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Sum of the Base64-encoded sizes of every persisted file, excluding the
    /// repository header.
    pub fn repo_size_bytes(&self) -> u64 {
        self.size_bytes
    }

    pub(crate) fn recompute_size(&self) -> u64 {
        self.records.values().map(SubjectRecord::size_bytes).sum()
    }

    /// Observational equality: same subjects, certificates and sub-keys.
    pub fn same_contents(&self, other: &TrustRepository) -> bool {
        self.owner_fp == other.owner_fp && self.config == other.config && self.records == other.records
    }

    pub fn evaluate(&self) -> TrustAssessment {
        evaluate_graph(
            self.owner_fp,
            &self.config,
            self.records.keys(),
            self.records
                .values()
                .flat_map(|r| r.certificates.values().map(|c| (&c.item.issuer_fp, &c.item.subject_fp))),
        )
    }

    /// Sub-key certificates of `device` an application may rely on: those
    /// whose issuing device is Trusted or Known (or is the owner).
    pub fn validated_subkeys<'a>(&'a self, assessment: &TrustAssessment, device: &Fingerprint) -> Vec<&'a SubKeyCertificate> {
        match self.records.get(device) {
            Some(r) if assessment.level(device) != TrustLevel::Unknown => r.subkeys().collect(),
            _ => Vec::new(),
        }
    }

    pub fn merge(&mut self, items: impl IntoIterator<Item = MergeItem>) -> MergeReport {
        self.merge_with_limit(items, None)
    }

    /// Verifies and merges incoming material.
    ///
    /// Keys are considered first. A certificate is kept when both of its keys
    /// are held, its signature verifies, and either its subject is not
    /// `Unknown` in the evaluation of the repository plus every valid incoming
    /// certificate, or its issuer is not `Unknown` there and sits strictly
    /// below `maxdegree`. New keys are kept only when an accepted or stored
    /// certificate references them. Sub-key certificates need the device key
    /// and a valid signature, within `maxsubkeys` per device.
    ///
    /// When `max_bytes` is given and the merged repository would exceed it,
    /// nothing is applied and every otherwise-accepted item is rejected with
    /// [`RejectReason::OverCapacity`].
    pub fn merge_with_limit(&mut self, items: impl IntoIterator<Item = MergeItem>, max_bytes: Option<u64>) -> MergeReport {
        let mut report = MergeReport::default();
        let mut keys = Vec::new();
        let mut certs = Vec::new();
        let mut subkeys = Vec::new();
        for item in items {
            match item {
                MergeItem::Key(k) => keys.push(k),
                MergeItem::Certificate(c) => certs.push(c),
                MergeItem::SubkeyCertificate(s) => subkeys.push(s),
            }
        }

        let mut new_keys: BTreeMap<Fingerprint, PublicKeyBytes> = BTreeMap::new();
        for key in keys {
            let fp = key.fingerprint();
            if self.records.contains_key(&fp) || new_keys.contains_key(&fp) {
                report.duplicates += 1;
            } else if key.is_synthetic() && self.mode == CryptoMode::Real {
                report.reject(ItemKind::Key, RejectReason::SyntheticKey);
            } else {
                new_keys.insert(fp, key);
            }
        }

        // Deterministic processing order regardless of arrival order.
        certs.sort_by(|a, b| {
            (a.subject_fp, a.issuer_fp, std::cmp::Reverse(a.issued_at), &a.sig).cmp(&(
                b.subject_fp,
                b.issuer_fp,
                std::cmp::Reverse(b.issued_at),
                &b.sig,
            ))
        });
        let mut candidates: BTreeMap<(Fingerprint, Fingerprint), Certificate> = BTreeMap::new();
        for cert in certs {
            if cert.issuer_fp == cert.subject_fp {
                report.reject(ItemKind::Certificate, RejectReason::SelfCertificate);
                continue;
            }
            let (Some(subject_key), Some(issuer_key)) = (
                self.key_of(&new_keys, &cert.subject_fp),
                self.key_of(&new_keys, &cert.issuer_fp),
            ) else {
                report.reject(ItemKind::Certificate, RejectReason::MissingKey);
                continue;
            };
            if !cert.matches_subject(subject_key) {
                report.reject(ItemKind::Certificate, RejectReason::SubjectMismatch);
                continue;
            }
            let pair = (cert.subject_fp, cert.issuer_fp);
            let stored = self
                .records
                .get(&cert.subject_fp)
                .and_then(|r| r.certificate_from(&cert.issuer_fp));
            if stored == Some(&cert) || candidates.get(&pair) == Some(&cert) {
                report.duplicates += 1;
                continue;
            }
            if stored.is_some_and(|s| s.supersedes(&cert)) || candidates.get(&pair).is_some_and(|c| c.supersedes(&cert)) {
                report.reject(ItemKind::Certificate, RejectReason::Superseded);
                continue;
            }
            report.verify_ops += 1;
            if !verify_certificate(self.mode, &cert, issuer_key, subject_key) {
                report.reject(ItemKind::Certificate, RejectReason::BadSignature);
                continue;
            }
            if candidates.insert(pair, cert).is_some() {
                // sorted order puts the winner first, so this cannot happen
                report.reject(ItemKind::Certificate, RejectReason::Superseded);
            }
        }

        let union = evaluate_graph(
            self.owner_fp,
            &self.config,
            self.records.keys().chain(new_keys.keys()),
            self.records
                .values()
                .flat_map(|r| r.certificates.values().map(|c| (&c.item.issuer_fp, &c.item.subject_fp)))
                .chain(candidates.values().map(|c| (&c.issuer_fp, &c.subject_fp))),
        );
        let contributes = |c: &Certificate| {
            union.level(&c.subject_fp) != TrustLevel::Unknown
                || union.depth(&c.issuer_fp).is_some_and(|d| d < self.config.maxdegree)
        };
        let mut accepted_certs = Vec::new();
        for cert in candidates.into_values() {
            if contributes(&cert) {
                accepted_certs.push(cert);
            } else {
                report.reject(ItemKind::Certificate, RejectReason::Unreachable);
            }
        }

        let mut referenced: BTreeSet<Fingerprint> = BTreeSet::new();
        for c in &accepted_certs {
            referenced.insert(c.issuer_fp);
            referenced.insert(c.subject_fp);
        }
        let mut accepted_keys = Vec::new();
        for (fp, key) in new_keys {
            if referenced.contains(&fp) {
                accepted_keys.push(key);
            } else {
                report.reject(ItemKind::Key, RejectReason::Unreachable);
            }
        }
        let accepted_key_map: BTreeMap<Fingerprint, &PublicKeyBytes> =
            accepted_keys.iter().map(|k| (k.fingerprint(), k)).collect();

        subkeys.sort_by(|a, b| {
            (a.device_fp, a.issued_at, a.subkey_fp(), &a.sig).cmp(&(b.device_fp, b.issued_at, b.subkey_fp(), &b.sig))
        });
        let mut accepted_subkeys: Vec<SubKeyCertificate> = Vec::new();
        for sk in subkeys {
            let device_key = self
                .records
                .get(&sk.device_fp)
                .map(|r| &r.subject_key)
                .or_else(|| accepted_key_map.get(&sk.device_fp).copied());
            let Some(device_key) = device_key else {
                report.reject(ItemKind::SubkeyCertificate, RejectReason::MissingKey);
                continue;
            };
            let subkey_fp = sk.subkey_fp();
            let stored = self.records.get(&sk.device_fp).and_then(|r| r.subkeys.get(&subkey_fp)).map(|s| &s.item);
            let pending = accepted_subkeys
                .iter()
                .position(|a| a.device_fp == sk.device_fp && a.subkey_fp() == subkey_fp);
            if stored == Some(&sk) || pending.is_some_and(|p| accepted_subkeys[p] == sk) {
                report.duplicates += 1;
                continue;
            }
            if stored.is_some_and(|s| subkey_supersedes(s, &sk))
                || pending.is_some_and(|p| subkey_supersedes(&accepted_subkeys[p], &sk))
            {
                report.reject(ItemKind::SubkeyCertificate, RejectReason::Superseded);
                continue;
            }
            let replaces = stored.is_some() || pending.is_some();
            if !replaces {
                let held = self.records.get(&sk.device_fp).map_or(0, |r| r.subkeys.len())
                    + accepted_subkeys.iter().filter(|a| a.device_fp == sk.device_fp).count();
                if held >= self.config.maxsubkeys as usize {
                    report.reject(ItemKind::SubkeyCertificate, RejectReason::SubkeyLimit);
                    continue;
                }
            }
            report.verify_ops += 1;
            if !verify_subkey_certificate(self.mode, &sk, device_key) {
                report.reject(ItemKind::SubkeyCertificate, RejectReason::BadSignature);
                continue;
            }
            match pending {
                Some(p) => accepted_subkeys[p] = sk,
                None => accepted_subkeys.push(sk),
            }
        }

        self.verify_ops += report.verify_ops;
        let accepted = accepted_keys.len() + accepted_certs.len() + accepted_subkeys.len();
        if let Some(limit) = max_bytes {
            let projected = self.projected_size(&accepted_keys, &accepted_certs, &accepted_subkeys);
            if projected > limit {
                debug!("merge rejected: {projected} bytes would exceed cap of {limit}");
                report.over_capacity = true;
                for kind in std::iter::repeat_n(ItemKind::Key, accepted_keys.len())
                    .chain(std::iter::repeat_n(ItemKind::Certificate, accepted_certs.len()))
                    .chain(std::iter::repeat_n(ItemKind::SubkeyCertificate, accepted_subkeys.len()))
                {
                    report.reject(kind, RejectReason::OverCapacity);
                }
                return report;
            }
        }

        self.seq += 1;
        let seq = self.seq;
        for key in accepted_keys {
            let rec = SubjectRecord::new(key);
            self.size_bytes += rec.size_bytes();
            self.records.insert(rec.fingerprint(), rec);
        }
        for cert in accepted_certs {
            let rec = self.records.get_mut(&cert.subject_fp).expect("subject key present");
            let added = cert_size(&cert);
            if let Some(old) = rec.certificate_from(&cert.issuer_fp) {
                self.size_bytes -= cert_size(old);
            }
            self.size_bytes += added;
            rec.insert_certificate(cert, seq);
        }
        for sk in accepted_subkeys {
            let rec = self.records.get_mut(&sk.device_fp).expect("device key present");
            if let Some(old) = rec.subkeys.get(&sk.subkey_fp()) {
                self.size_bytes -= subkey_size(&old.item);
            }
            self.size_bytes += subkey_size(&sk);
            rec.insert_subkey(sk, seq);
        }
        report.accepted = accepted;
        debug_assert_eq!(self.size_bytes, self.recompute_size());
        report
    }

    fn key_of<'a>(&'a self, new_keys: &'a BTreeMap<Fingerprint, PublicKeyBytes>, fp: &Fingerprint) -> Option<&'a PublicKeyBytes> {
        self.records
            .get(fp)
            .map(|r| &r.subject_key)
            .or_else(|| new_keys.get(fp))
    }

    fn projected_size(&self, keys: &[PublicKeyBytes], certs: &[Certificate], subkeys: &[SubKeyCertificate]) -> u64 {
        let mut size = self.size_bytes;
        size += keys.iter().map(|k| b64_len(k.len())).sum::<u64>();
        for c in certs {
            if let Some(old) = self.records.get(&c.subject_fp).and_then(|r| r.certificate_from(&c.issuer_fp)) {
                size -= cert_size(old);
            }
            size += cert_size(c);
        }
        for s in subkeys {
            if let Some(old) = self.records.get(&s.device_fp).and_then(|r| r.subkeys.get(&s.subkey_fp())) {
                size -= subkey_size(&old.item);
            }
            size += subkey_size(s);
        }
        size
    }

    /// Inserts already-verified material without the reachability filter.
    /// Used when restoring a persisted repository.
    pub(crate) fn insert_loaded(&mut self, record: SubjectRecord) {
        self.seq += 1;
        let seq = self.seq;
        let mut rec = SubjectRecord::new(record.subject_key);
        for (_, c) in record.certificates {
            rec.insert_certificate(c.item, seq);
        }
        for (_, s) in record.subkeys {
            rec.insert_subkey(s.item, seq);
        }
        let fp = rec.fingerprint();
        if let Some(old) = self.records.remove(&fp) {
            self.size_bytes -= old.size_bytes();
        }
        self.size_bytes += rec.size_bytes();
        self.records.insert(fp, rec);
    }
}

/// Free-function form of [`TrustRepository::evaluate`].
pub fn evaluate(repo: &TrustRepository) -> TrustAssessment {
    repo.evaluate()
}

/// Free-function form of [`TrustRepository::merge`].
pub fn merge(repo: &mut TrustRepository, incoming: impl IntoIterator<Item = MergeItem>) -> MergeReport {
    repo.merge(incoming)
}

pub fn repo_size_bytes(repo: &TrustRepository) -> u64 {
    repo.repo_size_bytes()
}
