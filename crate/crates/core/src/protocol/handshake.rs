use log::debug;

use super::message::{decode_message, encode_message, Message};
use super::{Direction, Node, ProtocolError, Transport};
use crate::keystore::{issue_certificate, verify_certificate, Signer};
use crate::model::{Certificate, CryptoMode, Fingerprint, PublicKeyBytes};
use crate::trust::MergeItem;

/// Out-of-band confirmation that the key received over the channel is the
/// key the peer device actually presents (e.g. on its screen).
pub trait OoBVerifier {
    fn verify(&mut self, local_fp: &Fingerprint, presented: &Fingerprint, received: &Fingerprint) -> bool;
}

/// Accepts exactly when the presented and received fingerprints agree.
#[derive(Debug, Default, Clone, Copy)]
pub struct HonestComparator;

impl OoBVerifier for HonestComparator {
    fn verify(&mut self, _local: &Fingerprint, presented: &Fingerprint, received: &Fingerprint) -> bool {
        presented == received
    }
}

/// Accepts everything; models a careless user.
#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysAccept;

impl OoBVerifier for AlwaysAccept {
    fn verify(&mut self, _: &Fingerprint, _: &Fingerprint, _: &Fingerprint) -> bool {
        true
    }
}

/// Rejects everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysReject;

impl OoBVerifier for AlwaysReject {
    fn verify(&mut self, _: &Fingerprint, _: &Fingerprint, _: &Fingerprint) -> bool {
        false
    }
}

impl<F: FnMut(&Fingerprint, &Fingerprint, &Fingerprint) -> bool> OoBVerifier for F {
    fn verify(&mut self, local: &Fingerprint, presented: &Fingerprint, received: &Fingerprint) -> bool {
        self(local, presented, received)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SentKey,
    AwaitOoB,
    AwaitCert,
    Done,
    Failed,
}

/// One side of a handshake. Steps must be called in order
/// (`offer`, `receive_offer`, `confirm`, `receive_certificate`); anything
/// else moves the session to `Failed`.
#[derive(Debug, Clone)]
pub struct HandshakeSession {
    phase: Phase,
    local_key: PublicKeyBytes,
    mode: CryptoMode,
    peer_key: Option<PublicKeyBytes>,
}

impl HandshakeSession {
    pub fn new(local_key: PublicKeyBytes, mode: CryptoMode) -> Self {
        HandshakeSession {
            phase: Phase::Idle,
            local_key,
            mode,
            peer_key: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn peer_key(&self) -> Option<&PublicKeyBytes> {
        self.peer_key.as_ref()
    }

    pub fn peer_fp(&self) -> Option<Fingerprint> {
        self.peer_key.as_ref().map(PublicKeyBytes::fingerprint)
    }

    fn expect(&mut self, phase: Phase) -> Result<(), ProtocolError> {
        if self.phase == phase {
            Ok(())
        } else {
            self.fail("message out of order")
        }
    }

    fn fail<T>(&mut self, why: &'static str) -> Result<T, ProtocolError> {
        self.phase = Phase::Failed;
        Err(ProtocolError::ProtocolViolation(why))
    }

    pub fn offer(&mut self) -> Result<Message, ProtocolError> {
        self.expect(Phase::Idle)?;
        self.phase = Phase::SentKey;
        Ok(Message::KeyOffer {
            sender_fp: self.local_key.fingerprint(),
            sender_key: self.local_key.clone(),
        })
    }

    pub fn receive_offer(&mut self, msg: Message) -> Result<(), ProtocolError> {
        self.expect(Phase::SentKey)?;
        let Message::KeyOffer { sender_fp, sender_key } = msg else {
            return self.fail("expected KEY_OFFER");
        };
        if sender_key.fingerprint() != sender_fp {
            return self.fail("offered fingerprint does not match offered key");
        }
        if sender_fp == self.local_key.fingerprint() {
            return self.fail("peer offered our own key");
        }
        if sender_key.is_synthetic() && self.mode == CryptoMode::Real {
            return self.fail("placeholder key in real mode");
        }
        self.peer_key = Some(sender_key);
        self.phase = Phase::AwaitOoB;
        Ok(())
    }

    /// Runs the out-of-band check and, on success, certifies the peer key.
    /// `presented` is the fingerprint the peer shows through the OoB channel.
    pub fn confirm<S: Signer + ?Sized>(
        &mut self,
        oob: &mut dyn OoBVerifier,
        presented: &Fingerprint,
        signer: &S,
        now: u64,
    ) -> Result<Certificate, ProtocolError> {
        self.expect(Phase::AwaitOoB)?;
        let received = self.peer_fp().expect("peer key set in AwaitOoB");
        if !oob.verify(&self.local_key.fingerprint(), presented, &received) {
            self.phase = Phase::Failed;
            return Err(ProtocolError::OoBRejected);
        }
        let cert = match issue_certificate(signer, self.peer_key.as_ref().expect("peer key"), now) {
            Ok(c) => c,
            Err(e) => {
                self.phase = Phase::Failed;
                return Err(e.into());
            }
        };
        self.phase = Phase::AwaitCert;
        Ok(cert)
    }

    /// Accepts the peer's certificate over the local key.
    pub fn receive_certificate(&mut self, msg: Message) -> Result<Certificate, ProtocolError> {
        self.expect(Phase::AwaitCert)?;
        let Message::CertExchange { certificate } = msg else {
            return self.fail("expected CERT_EXCHANGE");
        };
        let peer_key = self.peer_key.as_ref().expect("peer key");
        if certificate.issuer_fp != peer_key.fingerprint() || !certificate.matches_subject(&self.local_key) {
            return self.fail("certificate does not bind this key pair");
        }
        if !verify_certificate(self.mode, &certificate, peer_key, &self.local_key) {
            return self.fail("certificate signature does not verify");
        }
        self.phase = Phase::Done;
        Ok(certificate)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HandshakeOutcome {
    pub bytes_forward: u64,
    pub bytes_backward: u64,
    /// Certificate issued by the initiator over the responder's key.
    pub forward_certificate: Option<Certificate>,
    /// Certificate issued by the responder over the initiator's key.
    pub backward_certificate: Option<Certificate>,
}

impl HandshakeOutcome {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_forward + self.bytes_backward
    }
}

fn send(
    transport: &mut dyn Transport,
    dir: Direction,
    msg: &Message,
    counter: &mut u64,
) -> Result<Message, ProtocolError> {
    let frame = encode_message(msg);
    *counter += frame.len() as u64;
    Ok(decode_message(&transport.carry(dir, frame))?)
}

/// Runs a complete handshake between `a` (initiator) and `b`.
///
/// Each side checks the received key out of band against the key the other
/// device really holds. On success each side stores the other's key, the
/// certificate it issued and the one it received, and records the peer
/// relationship. On failure neither repository changes.
pub fn handshake_run<A: Signer, B: Signer>(
    a: &mut Node<A>,
    b: &mut Node<B>,
    oob: &mut dyn OoBVerifier,
    transport: &mut dyn Transport,
    now: u64,
) -> Result<HandshakeOutcome, ProtocolError> {
    let mut out = HandshakeOutcome::default();
    let mut sa = HandshakeSession::new(a.public_key().clone(), a.repo.mode());
    let mut sb = HandshakeSession::new(b.public_key().clone(), b.repo.mode());

    let offer_a = sa.offer()?;
    let offer_b = sb.offer()?;
    sb.receive_offer(send(transport, Direction::Forward, &offer_a, &mut out.bytes_forward)?)?;
    sa.receive_offer(send(transport, Direction::Backward, &offer_b, &mut out.bytes_backward)?)?;

    let (a_fp, b_fp) = (a.fingerprint(), b.fingerprint());
    let cert_ab = sa.confirm(oob, &b_fp, &a.signer, now);
    let cert_ba = sb.confirm(oob, &a_fp, &b.signer, now);
    let (cert_ab, cert_ba) = match (cert_ab, cert_ba) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => {
            debug!("handshake {a_fp} <-> {b_fp} failed: {e}");
            return Err(e);
        }
    };
    a.sign_ops += 1;
    b.sign_ops += 1;

    let got_b = sb.receive_certificate(send(
        transport,
        Direction::Forward,
        &Message::CertExchange {
            certificate: cert_ab.clone(),
        },
        &mut out.bytes_forward,
    )?)?;
    let got_a = sa.receive_certificate(send(
        transport,
        Direction::Backward,
        &Message::CertExchange {
            certificate: cert_ba.clone(),
        },
        &mut out.bytes_backward,
    )?)?;

    a.verify_ops += 1;
    b.verify_ops += 1;

    let peer_b = sa.peer_key().expect("done").clone();
    let peer_a = sb.peer_key().expect("done").clone();
    a.merge(vec![
        MergeItem::Key(peer_b),
        MergeItem::Certificate(cert_ab.clone()),
        MergeItem::Certificate(got_a),
    ]);
    b.merge(vec![
        MergeItem::Key(peer_a),
        MergeItem::Certificate(cert_ba.clone()),
        MergeItem::Certificate(got_b),
    ]);
    a.link(b_fp, now);
    b.link(a_fp, now);
    out.forward_certificate = Some(cert_ab);
    out.backward_certificate = Some(cert_ba);
    Ok(out)
}
