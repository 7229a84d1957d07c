//! One side of each protocol over a real byte stream, for devices that run
//! in separate processes.

use std::io::{Read, Write};

use super::message::{read_message, write_message, Message};
use super::sync::{apply_response, build_query, build_response};
use super::{HandshakeSession, Node, OoBVerifier, ProtocolError, SyncOutcome};
use crate::keystore::Signer;
use crate::model::Fingerprint;
use crate::trust::MergeItem;

/// Runs our half of a handshake. Both sides send their offer first, so
/// either may be the one that connected.
///
/// The verifier stands in for the operator: it receives the fingerprint
/// that came over the stream as both `presented` and `received` and must
/// decide from the peer's screen whether they really match.
pub fn handshake_stream<S: Signer, T: Read + Write>(
    node: &mut Node<S>,
    stream: &mut T,
    oob: &mut dyn OoBVerifier,
    now: u64,
) -> Result<Fingerprint, ProtocolError> {
    let mut session = HandshakeSession::new(node.public_key().clone(), node.repo.mode());
    write_message(stream, &session.offer()?)?;
    session.receive_offer(read_message(stream)?.0)?;
    let peer_fp = session.peer_fp().expect("offer received");
    let issued = session.confirm(oob, &peer_fp, &node.signer, now)?;
    node.sign_ops += 1;
    write_message(
        stream,
        &Message::CertExchange {
            certificate: issued.clone(),
        },
    )?;
    let received = session.receive_certificate(read_message(stream)?.0)?;
    node.verify_ops += 1;
    let peer_key = session.peer_key().expect("done").clone();
    node.merge(vec![
        MergeItem::Key(peer_key),
        MergeItem::Certificate(issued),
        MergeItem::Certificate(received),
    ]);
    node.link(peer_fp, now);
    Ok(peer_fp)
}

/// Pulls from `peer`: sends our query and merges the answer.
pub fn request_sync_stream<S: Signer, T: Read + Write>(
    node: &mut Node<S>,
    peer: Fingerprint,
    stream: &mut T,
) -> Result<SyncOutcome, ProtocolError> {
    if node.peer(&peer).is_none() {
        return Err(ProtocolError::NoPriorRelationship);
    }
    let query_bytes = write_message(stream, &build_query(node))? as u64;
    let (response, response_bytes) = read_message(stream)?;
    if let Message::SyncResponse { records } = &response {
        let sigs = records.iter().flat_map(|r| {
            r.certificates.iter().map(|c| c.sig.as_slice()).chain(r.subkeys.iter().map(|c| c.sig.as_slice()))
        });
        node.note_heard(peer, sigs);
    }
    let report = apply_response(node, response)?;
    Ok(SyncOutcome {
        query_bytes,
        response_bytes: response_bytes as u64,
        items_merged: report.accepted,
        report,
    })
}

/// Answers one query from `peer`. The stream is reliable, so delivery is
/// assumed once the response is written. Returns the response size.
pub fn answer_sync_stream<S: Signer, T: Read + Write>(
    node: &mut Node<S>,
    peer: Fingerprint,
    stream: &mut T,
) -> Result<u64, ProtocolError> {
    if node.peer(&peer).is_none() {
        return Err(ProtocolError::NoPriorRelationship);
    }
    let Message::SyncQuery { known_fps } = read_message(stream)?.0 else {
        return Err(ProtocolError::ProtocolViolation("expected SYNC_QUERY"));
    };
    let (response, seq) = build_response(node, &peer, &known_fps);
    let n = write_message(stream, &response)? as u64;
    if let Some(link) = node.peer_mut(&peer) {
        link.watermark = link.watermark.max(seq);
    }
    Ok(n)
}
