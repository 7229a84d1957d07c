//! Device-to-device protocols: the proximity handshake that bootstraps
//! direct trust, and the pairwise synchronization that propagates
//! certificates. Both run over framed byte messages so every transferred
//! byte can be accounted for.

mod handshake;
mod message;
mod stream;
mod sync;

use std::collections::{BTreeMap, HashSet};

use sha2::{Digest, Sha256};

use thiserror::Error;

use crate::keystore::{register_subkey, KeystoreError, Signer};
use crate::model::{CryptoMode, EncodingError, Fingerprint, PublicKeyBytes, SubKeyCertificate, TrustConfig};
use crate::trust::{MergeItem, MergeReport, TrustRepository};

pub use handshake::{
    handshake_run, AlwaysAccept, AlwaysReject, HandshakeOutcome, HandshakeSession, HonestComparator, OoBVerifier, Phase,
};
pub use message::{
    decode_message, encode_message, read_message, write_message, FrameError, Message, Subject, SyncRecord,
    HEADER_LEN, MAX_PAYLOAD, WIRE_VERSION,
};
pub use stream::{answer_sync_stream, handshake_stream, request_sync_stream};
pub use sync::{apply_response, build_query, build_response, commit_sync, prepare_sync, sync_run, PreparedSync, SyncOutcome};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("out-of-band verification rejected the peer's key")]
    OoBRejected,
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("no prior handshake with this peer")]
    NoPriorRelationship,
    #[error(transparent)]
    Malformed(#[from] EncodingError),
    #[error(transparent)]
    Keystore(#[from] KeystoreError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Direction of a frame relative to the party that opened the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// The byte channel between two parties. Implementations may delay nothing
/// and must return the frame as it arrives at the other end, which lets
/// tests substitute or corrupt traffic.
pub trait Transport {
    fn carry(&mut self, dir: Direction, frame: Vec<u8>) -> Vec<u8>;
}

/// Lossless in-memory channel.
#[derive(Debug, Default, Clone, Copy)]
pub struct Direct;

impl Transport for Direct {
    fn carry(&mut self, _dir: Direction, frame: Vec<u8>) -> Vec<u8> {
        frame
    }
}

impl<F: FnMut(Direction, Vec<u8>) -> Vec<u8>> Transport for F {
    fn carry(&mut self, dir: Direction, frame: Vec<u8>) -> Vec<u8> {
        self(dir, frame)
    }
}

/// What a node remembers about a peer it has shaken hands with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerLink {
    pub since: u64,
    /// Repository sequence number up to which this node has already sent
    /// material about subjects the peer holds.
    pub watermark: u64,
}

fn sig_digest(sig: &[u8]) -> [u8; 32] {
    Sha256::digest(sig).into()
}

/// One device taking part in the protocols.
#[derive(Debug)]
pub struct Node<S> {
    pub signer: S,
    pub repo: TrustRepository,
    peers: BTreeMap<Fingerprint, PeerLink>,
    /// Digests of signatures each peer has already sent us; never echoed back.
    heard: BTreeMap<Fingerprint, HashSet<[u8; 32]>>,
    subkeys_issued: u32,
    pub sign_ops: u64,
    /// Verifications performed outside repository merges.
    pub verify_ops: u64,
    /// Storage cap on the repository; merges that would exceed it are refused.
    pub buffer_limit: Option<u64>,
    pub buffer_rejections: u64,
}

impl<S: Signer> Node<S> {
    pub fn new(signer: S, config: TrustConfig, mode: CryptoMode) -> Self {
        let repo = TrustRepository::with_mode(signer.public_key().clone(), config, mode);
        Self::with_repo(signer, repo)
    }

    /// Wraps an existing repository, e.g. one loaded from disk.
    pub fn with_repo(signer: S, repo: TrustRepository) -> Self {
        assert_eq!(signer.fingerprint(), repo.owner_fp(), "repository belongs to another key");
        Node {
            signer,
            repo,
            peers: BTreeMap::new(),
            heard: BTreeMap::new(),
            subkeys_issued: 0,
            sign_ops: 0,
            verify_ops: 0,
            buffer_limit: None,
            buffer_rejections: 0,
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.repo.owner_fp()
    }

    pub fn public_key(&self) -> &PublicKeyBytes {
        self.signer.public_key()
    }

    /// Every signature verification this node has performed.
    pub fn total_verify_ops(&self) -> u64 {
        self.verify_ops + self.repo.verify_ops()
    }

    pub fn peer(&self, fp: &Fingerprint) -> Option<&PeerLink> {
        self.peers.get(fp)
    }

    pub fn peers(&self) -> impl Iterator<Item = (&Fingerprint, &PeerLink)> {
        self.peers.iter()
    }

    pub fn link(&mut self, fp: Fingerprint, now: u64) {
        self.peers.entry(fp).or_insert(PeerLink { since: now, watermark: 0 });
    }

    pub(crate) fn peer_mut(&mut self, fp: &Fingerprint) -> Option<&mut PeerLink> {
        self.peers.get_mut(fp)
    }

    /// Whether `peer` itself sent us the item carrying `sig`.
    pub fn heard_from(&self, peer: &Fingerprint, sig: &[u8]) -> bool {
        self.heard.get(peer).is_some_and(|h| h.contains(&sig_digest(sig)))
    }

    pub(crate) fn note_heard<'a>(&mut self, peer: Fingerprint, sigs: impl IntoIterator<Item = &'a [u8]>) {
        self.heard.entry(peer).or_default().extend(sigs.into_iter().map(sig_digest));
    }

    /// Merges into the local repository under the node's storage cap.
    pub fn merge(&mut self, items: Vec<MergeItem>) -> MergeReport {
        let report = self.repo.merge_with_limit(items, self.buffer_limit);
        if report.over_capacity {
            self.buffer_rejections += 1;
        }
        report
    }

    /// Certifies an application sub-key with the device key and stores the
    /// certificate in the node's own record.
    pub fn register_subkey(
        &mut self,
        subkey: &PublicKeyBytes,
        app_tag: &str,
        now: u64,
    ) -> Result<SubKeyCertificate, ProtocolError> {
        let max = self.repo.config().maxsubkeys;
        let cert = register_subkey(&self.signer, &mut self.subkeys_issued, max, subkey, app_tag, now)?;
        self.sign_ops += 1;
        self.merge(vec![MergeItem::SubkeyCertificate(cert.clone())]);
        Ok(cert)
    }
}
