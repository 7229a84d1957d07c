use std::collections::BTreeSet;

use super::message::{decode_message, encode_message, Message, Subject, SyncRecord};
use super::{Direction, Node, ProtocolError, Transport};
use crate::keystore::Signer;
use crate::model::Fingerprint;
use crate::trust::{MergeItem, MergeReport};

/// The requester's announcement: every subject fingerprint it holds.
pub fn build_query<S: Signer>(requester: &Node<S>) -> Message {
    Message::SyncQuery {
        known_fps: requester.repo.fingerprints().copied().collect(),
    }
}

/// The responder's answer to `known_fps` from `peer`: full records for
/// subjects the peer lacks, and for subjects it holds only the
/// certificates and sub-key certificates added since the last delivery to
/// that peer. Items the peer itself sent are never echoed. Returns the
/// response and the responder's sequence number it reflects.
pub fn build_response<S: Signer>(responder: &Node<S>, peer: &Fingerprint, known_fps: &[Fingerprint]) -> (Message, u64) {
    let listed: BTreeSet<&Fingerprint> = known_fps.iter().collect();
    let watermark = responder.peer(peer).map_or(0, |p| p.watermark);
    let mut records = Vec::new();
    for rec in responder.repo.records() {
        let fp = rec.fingerprint();
        let fresh = |sig: &[u8]| !responder.heard_from(peer, sig);
        let record = if listed.contains(&fp) {
            SyncRecord {
                subject: Subject::Ref(fp),
                certificates: rec.certificates_since(watermark).filter(|c| fresh(&c.sig)).cloned().collect(),
                subkeys: rec.subkeys_since(watermark).filter(|c| fresh(&c.sig)).cloned().collect(),
            }
        } else {
            SyncRecord {
                subject: Subject::Key(rec.subject_key().clone()),
                certificates: rec.certificates().filter(|c| fresh(&c.sig)).cloned().collect(),
                subkeys: rec.subkeys().filter(|c| fresh(&c.sig)).cloned().collect(),
            }
        };
        if record.item_count() > 0 {
            records.push(record);
        }
    }
    (Message::SyncResponse { records }, responder.repo.seq())
}

/// Merges a sync response into the requester's repository.
pub fn apply_response<S: Signer>(requester: &mut Node<S>, response: Message) -> Result<MergeReport, ProtocolError> {
    let Message::SyncResponse { records } = response else {
        return Err(ProtocolError::ProtocolViolation("expected SYNC_RESPONSE"));
    };
    let mut items = Vec::new();
    for rec in records {
        if let Subject::Key(k) = rec.subject {
            items.push(MergeItem::Key(k));
        }
        items.extend(rec.certificates.into_iter().map(MergeItem::Certificate));
        items.extend(rec.subkeys.into_iter().map(MergeItem::SubkeyCertificate));
    }
    Ok(requester.merge(items))
}

/// A sync whose messages have been produced but not yet applied. The
/// simulator holds one while the bytes are in flight.
#[derive(Debug, Clone)]
pub struct PreparedSync {
    pub requester: Fingerprint,
    pub responder: Fingerprint,
    pub query_bytes: u64,
    pub response_bytes: u64,
    response: Message,
    responder_seq: u64,
}

impl PreparedSync {
    pub fn total_bytes(&self) -> u64 {
        self.query_bytes + self.response_bytes
    }

    pub fn response(&self) -> &Message {
        &self.response
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncOutcome {
    pub query_bytes: u64,
    pub response_bytes: u64,
    pub items_merged: usize,
    pub report: MergeReport,
}

/// Builds the query and response without changing either node.
pub fn prepare_sync<A: Signer, B: Signer>(
    requester: &Node<A>,
    responder: &Node<B>,
    transport: &mut dyn Transport,
) -> Result<PreparedSync, ProtocolError> {
    let (rq, rs) = (requester.fingerprint(), responder.fingerprint());
    if requester.peer(&rs).is_none() || responder.peer(&rq).is_none() {
        return Err(ProtocolError::NoPriorRelationship);
    }
    let query = encode_message(&build_query(requester));
    let query_bytes = query.len() as u64;
    let Message::SyncQuery { known_fps } = decode_message(&transport.carry(Direction::Forward, query))? else {
        return Err(ProtocolError::ProtocolViolation("expected SYNC_QUERY"));
    };
    let (response, responder_seq) = build_response(responder, &rq, &known_fps);
    let frame = encode_message(&response);
    let response_bytes = frame.len() as u64;
    let response = decode_message(&transport.carry(Direction::Backward, frame))?;
    Ok(PreparedSync {
        requester: rq,
        responder: rs,
        query_bytes,
        response_bytes,
        response,
        responder_seq,
    })
}

/// Applies a prepared sync: the requester merges, and the responder
/// advances its delivery watermark for the requester.
pub fn commit_sync<A: Signer, B: Signer>(
    requester: &mut Node<A>,
    responder: &mut Node<B>,
    prepared: PreparedSync,
) -> Result<SyncOutcome, ProtocolError> {
    if prepared.requester != requester.fingerprint() || prepared.responder != responder.fingerprint() {
        return Err(ProtocolError::ProtocolViolation("prepared sync belongs to other nodes"));
    }
    if let Message::SyncResponse { records } = &prepared.response {
        let sigs = records.iter().flat_map(|r| {
            r.certificates.iter().map(|c| c.sig.as_slice()).chain(r.subkeys.iter().map(|c| c.sig.as_slice()))
        });
        requester.note_heard(prepared.responder, sigs);
    }
    let report = apply_response(requester, prepared.response)?;
    if !report.over_capacity {
        if let Some(link) = responder.peer_mut(&prepared.requester) {
            link.watermark = link.watermark.max(prepared.responder_seq);
        }
    }
    Ok(SyncOutcome {
        query_bytes: prepared.query_bytes,
        response_bytes: prepared.response_bytes,
        items_merged: report.accepted,
        report,
    })
}

/// One unidirectional synchronization: `requester` pulls from `responder`.
pub fn sync_run<A: Signer, B: Signer>(
    requester: &mut Node<A>,
    responder: &mut Node<B>,
    transport: &mut dyn Transport,
) -> Result<SyncOutcome, ProtocolError> {
    let prepared = prepare_sync(requester, responder, transport)?;
    commit_sync(requester, responder, prepared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystore::KeyPair;
    use crate::model::{Algorithm, CryptoMode, TrustConfig, TrustLevel};
    use crate::protocol::HEADER_LEN;
    use crate::protocol::{handshake_run, Direct, HonestComparator};

    fn node(tag: &[u8]) -> Node<KeyPair> {
        let k = KeyPair::synthetic(Algorithm::EcdsaP256, 92, 64, tag);
        Node::new(k, TrustConfig::default(), CryptoMode::SizeModel)
    }

    #[test]
    fn sync_requires_a_prior_handshake() {
        let (mut a, mut b) = (node(b"a"), node(b"b"));
        assert!(matches!(sync_run(&mut a, &mut b, &mut Direct), Err(ProtocolError::NoPriorRelationship)));
    }

    #[test]
    fn two_hop_propagation_and_fixpoint() {
        let (mut a, mut b, mut c) = (node(b"a"), node(b"b"), node(b"c"));
        handshake_run(&mut a, &mut b, &mut HonestComparator, &mut Direct, 1).unwrap();
        handshake_run(&mut b, &mut c, &mut HonestComparator, &mut Direct, 2).unwrap();
        let first = sync_run(&mut a, &mut b, &mut Direct).unwrap();
        assert!(first.items_merged > 0);
        let view = a.repo.evaluate();
        assert_eq!((view.level(&c.fingerprint()), view.depth(&c.fingerprint())), (TrustLevel::Known, Some(2)));
        let second = sync_run(&mut a, &mut b, &mut Direct).unwrap();
        assert_eq!(second.items_merged, 0);
        assert_eq!(second.response_bytes, HEADER_LEN as u64 + 4);
    }
}
