//! Wire messages.
//!
//! Every message is one frame:
//!
//! ```text
//! version   u8      = 1
//! type      u8      0x01 KEY_OFFER, 0x02 CERT_EXCHANGE, 0x03 SYNC_QUERY, 0x04 SYNC_RESPONSE
//! length    u32 BE  payload length in bytes
//! payload   [length]
//! ```
//!
//! Payloads (integers big-endian, `bytes16` = u16 length + bytes):
//!
//! ```text
//! KEY_OFFER      sender_fp[32] | bytes16 sender_key
//! CERT_EXCHANGE  bytes16 certificate
//! SYNC_QUERY     fp[32] * k                     (k = length / 32)
//! SYNC_RESPONSE  u32 record_count | record * record_count
//!   record       u8 subject_kind
//!                  0: bytes16 subject_key       full key, subject new to the requester
//!                  1: subject_fp[32]            subject already held by the requester
//!                u16 cert_count   | bytes16 certificate * cert_count
//!                u16 subkey_count | bytes16 subkey_certificate * subkey_count
//! ```
//!
//! Certificates and keys use their canonical encodings.

use std::io::{Read, Write};

use crate::model::codec::{put_bytes_u16, Reader};
use crate::model::{Certificate, EncodingError, Fingerprint, PublicKeyBytes, SubKeyCertificate};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
/// Frames larger than this are refused by [`read_message`].
pub const MAX_PAYLOAD: u32 = 64 << 20;

const KEY_OFFER: u8 = 0x01;
const CERT_EXCHANGE: u8 = 0x02;
const SYNC_QUERY: u8 = 0x03;
const SYNC_RESPONSE: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subject {
    Key(PublicKeyBytes),
    Ref(Fingerprint),
}

impl Subject {
    pub fn fingerprint(&self) -> Fingerprint {
        match self {
            Subject::Key(k) => k.fingerprint(),
            Subject::Ref(fp) => *fp,
        }
    }
}

/// One subject's worth of material inside a sync response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncRecord {
    pub subject: Subject,
    pub certificates: Vec<Certificate>,
    pub subkeys: Vec<SubKeyCertificate>,
}

impl SyncRecord {
    pub fn item_count(&self) -> usize {
        usize::from(matches!(self.subject, Subject::Key(_))) + self.certificates.len() + self.subkeys.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    KeyOffer {
        sender_fp: Fingerprint,
        sender_key: PublicKeyBytes,
    },
    CertExchange {
        certificate: Certificate,
    },
    SyncQuery {
        known_fps: Vec<Fingerprint>,
    },
    SyncResponse {
        records: Vec<SyncRecord>,
    },
}

impl Message {
    pub fn type_tag(&self) -> u8 {
        match self {
            Message::KeyOffer { .. } => KEY_OFFER,
            Message::CertExchange { .. } => CERT_EXCHANGE,
            Message::SyncQuery { .. } => SYNC_QUERY,
            Message::SyncResponse { .. } => SYNC_RESPONSE,
        }
    }
}

pub fn encode_message(m: &Message) -> Vec<u8> {
    let mut payload = Vec::new();
    match m {
        Message::KeyOffer { sender_fp, sender_key } => {
            payload.extend_from_slice(sender_fp.as_bytes());
            put_bytes_u16(&mut payload, sender_key.encoded());
        }
        Message::CertExchange { certificate } => put_bytes_u16(&mut payload, &certificate.encode()),
        Message::SyncQuery { known_fps } => {
            payload.reserve(32 * known_fps.len());
            for fp in known_fps {
                payload.extend_from_slice(fp.as_bytes());
            }
        }
        Message::SyncResponse { records } => {
            payload.extend_from_slice(&(records.len() as u32).to_be_bytes());
            for rec in records {
                match &rec.subject {
                    Subject::Key(k) => {
                        payload.push(0);
                        put_bytes_u16(&mut payload, k.encoded());
                    }
                    Subject::Ref(fp) => {
                        payload.push(1);
                        payload.extend_from_slice(fp.as_bytes());
                    }
                }
                payload.extend_from_slice(&(rec.certificates.len() as u16).to_be_bytes());
                for c in &rec.certificates {
                    put_bytes_u16(&mut payload, &c.encode());
                }
                payload.extend_from_slice(&(rec.subkeys.len() as u16).to_be_bytes());
                for s in &rec.subkeys {
                    put_bytes_u16(&mut payload, &s.encode());
                }
            }
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.push(WIRE_VERSION);
    out.push(m.type_tag());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode_message(bytes: &[u8]) -> Result<Message, EncodingError> {
    let mut r = Reader::new(bytes);
    let (tag, len) = header(&mut r)?;
    let payload = r.take(len as usize)?;
    r.finish()?;
    decode_payload(tag, payload)
}

fn header(r: &mut Reader<'_>) -> Result<(u8, u32), EncodingError> {
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(EncodingError::UnsupportedVersion(version));
    }
    let tag = r.u8()?;
    let len = r.u32()?;
    Ok((tag, len))
}

fn decode_payload(tag: u8, payload: &[u8]) -> Result<Message, EncodingError> {
    let mut r = Reader::new(payload);
    let m = match tag {
        KEY_OFFER => Message::KeyOffer {
            sender_fp: Fingerprint(r.array()?),
            sender_key: PublicKeyBytes::from_encoded(r.bytes_u16()?)?,
        },
        CERT_EXCHANGE => Message::CertExchange {
            certificate: Certificate::decode(r.bytes_u16()?)?,
        },
        SYNC_QUERY => {
            if payload.len() % 32 != 0 {
                return Err(EncodingError::Invalid("query length is not a multiple of 32"));
            }
            let mut known_fps = Vec::with_capacity(payload.len() / 32);
            while r.remaining() > 0 {
                known_fps.push(Fingerprint(r.array()?));
            }
            Message::SyncQuery { known_fps }
        }
        SYNC_RESPONSE => {
            let n = r.u32()?;
            let mut records = Vec::new();
            for _ in 0..n {
                let subject = match r.u8()? {
                    0 => Subject::Key(PublicKeyBytes::from_encoded(r.bytes_u16()?)?),
                    1 => Subject::Ref(Fingerprint(r.array()?)),
                    _ => return Err(EncodingError::Invalid("subject kind")),
                };
                let nc = r.u16()?;
                let mut certificates = Vec::with_capacity(nc as usize);
                for _ in 0..nc {
                    certificates.push(Certificate::decode(r.bytes_u16()?)?);
                }
                let ns = r.u16()?;
                let mut subkeys = Vec::with_capacity(ns as usize);
                for _ in 0..ns {
                    subkeys.push(SubKeyCertificate::decode(r.bytes_u16()?)?);
                }
                records.push(SyncRecord {
                    subject,
                    certificates,
                    subkeys,
                });
            }
            Message::SyncResponse { records }
        }
        _ => return Err(EncodingError::Invalid("unknown message type")),
    };
    r.finish()?;
    Ok(m)
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Malformed(#[from] EncodingError),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
}

/// Writes one frame and returns its length.
pub fn write_message(w: &mut impl Write, m: &Message) -> Result<usize, FrameError> {
    let bytes = encode_message(m);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

/// Reads one frame from a byte stream and returns it with its length.
pub fn read_message(r: &mut impl Read) -> Result<(Message, usize), FrameError> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    let (tag, len) = header(&mut Reader::new(&head))?;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok((decode_payload(tag, &payload)?, HEADER_LEN + payload.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystore::{issue_certificate, register_subkey, KeyPair};
    use crate::model::Algorithm;

    fn samples() -> Vec<Message> {
        let a = KeyPair::synthetic(Algorithm::EcdsaP256, 92, 64, b"a");
        let b = KeyPair::synthetic(Algorithm::EcdsaP256, 92, 64, b"b");
        let cert = issue_certificate(&a, b.public(), 7).unwrap();
        let mut n = 0;
        let sk = register_subkey(&a, &mut n, 3, b.public(), "chat", 9).unwrap();
        vec![
            Message::KeyOffer {
                sender_fp: a.public().fingerprint(),
                sender_key: a.public().clone(),
            },
            Message::CertExchange {
                certificate: cert.clone(),
            },
            Message::SyncQuery { known_fps: vec![] },
            Message::SyncQuery {
                known_fps: vec![a.public().fingerprint(), b.public().fingerprint()],
            },
            Message::SyncResponse { records: vec![] },
            Message::SyncResponse {
                records: vec![
                    SyncRecord {
                        subject: Subject::Key(b.public().clone()),
                        certificates: vec![cert],
                        subkeys: vec![],
                    },
                    SyncRecord {
                        subject: Subject::Ref(a.public().fingerprint()),
                        certificates: vec![],
                        subkeys: vec![sk],
                    },
                ],
            },
        ]
    }

    #[test]
    fn every_variant_round_trips() {
        for m in samples() {
            let bytes = encode_message(&m);
            assert_eq!(bytes[0], WIRE_VERSION);
            assert_eq!(bytes[1], m.type_tag());
            assert_eq!(decode_message(&bytes).unwrap(), m);
            let (again, len) = read_message(&mut bytes.as_slice()).unwrap();
            assert_eq!((again, len), (m, bytes.len()));
        }
    }

    #[test]
    fn query_size_is_header_plus_32_per_fingerprint() {
        for k in [0usize, 1, 5, 100] {
            let m = Message::SyncQuery {
                known_fps: (0..k).map(|i| Fingerprint([i as u8; 32])).collect(),
            };
            assert_eq!(encode_message(&m).len(), HEADER_LEN + 32 * k);
        }
    }

    #[test]
    fn truncation_and_garbage_are_errors() {
        for m in samples() {
            let bytes = encode_message(&m);
            for cut in 0..bytes.len() {
                assert!(decode_message(&bytes[..cut]).is_err());
            }
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(decode_message(&extra).is_err());
        }
        assert!(decode_message(&[1, 0x09, 0, 0, 0, 0]).is_err());
        assert!(decode_message(&[2, 0x01, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn frames_concatenate_on_one_stream() {
        let msgs = samples();
        let mut stream = Vec::new();
        for m in &msgs {
            write_message(&mut stream, m).unwrap();
        }
        let mut r = stream.as_slice();
        for m in &msgs {
            assert_eq!(&read_message(&mut r).unwrap().0, m);
        }
        assert!(r.is_empty());
    }
}
