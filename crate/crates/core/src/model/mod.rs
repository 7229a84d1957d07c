//! Domain types shared by every layer: public keys and their identifiers,
//! certificates, sub-key certificates, trust levels and trust configuration,
//! together with their canonical byte encodings.
//!
//! Canonical encodings are deterministic and length-prefixed so that byte
//! counts taken from them are exact and two different values never encode to
//! the same bytes.

pub(crate) mod codec;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use codec::{put_bytes_u16, put_bytes_u32, put_bytes_u8, Reader};

/// Errors raised while decoding canonical byte encodings.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodingError {
    #[error("malformed encoding: input truncated")]
    Truncated,
    #[error("malformed encoding: {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed encoding: bad magic")]
    BadMagic,
    #[error("malformed encoding: unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed encoding: unknown algorithm tag {0:#04x}")]
    UnknownAlgorithm(u8),
    #[error("encoding too short for a key id: {0} bytes, need at least 8")]
    EncodingTooShort(usize),
    #[error("application tag is {0} bytes, limit is {MAX_APP_TAG_LEN}")]
    AppTagTooLong(usize),
    #[error("malformed encoding: application tag is not UTF-8")]
    InvalidUtf8,
    #[error("malformed encoding: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("maxdegree must be at least 1")]
    ZeroDegree,
    #[error("numknown must be at least 1")]
    ZeroNumKnown,
    #[error("unknown signature algorithm `{0}` (expected rsa2048 or ecdsa-p256)")]
    UnknownAlgorithm(String),
    #[error("unknown crypto mode `{0}` (expected real or size-model)")]
    UnknownCryptoMode(String),
}

/// Signature algorithm of a device or sub-key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "rsa2048")]
    Rsa2048,
    #[serde(rename = "ecdsa-p256")]
    EcdsaP256,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Rsa2048, Algorithm::EcdsaP256];

    pub fn tag(self) -> u8 {
        match self {
            Algorithm::Rsa2048 => 0x01,
            Algorithm::EcdsaP256 => 0x02,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rsa2048 => "rsa2048",
            Algorithm::EcdsaP256 => "ecdsa-p256",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rsa2048" | "rsa" | "rsa-2048" => Ok(Algorithm::Rsa2048),
            "ecdsa-p256" | "ecdsa" | "ecdsa_p256" | "p256" => Ok(Algorithm::EcdsaP256),
            _ => Err(ConfigError::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Whether signatures are real cryptography or calibrated-length placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CryptoMode {
    #[default]
    #[serde(rename = "real")]
    Real,
    #[serde(rename = "size-model")]
    SizeModel,
}

impl FromStr for CryptoMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(CryptoMode::Real),
            "size-model" | "sizemodel" | "size_model" => Ok(CryptoMode::SizeModel),
            _ => Err(ConfigError::UnknownCryptoMode(s.to_string())),
        }
    }
}

impl fmt::Display for CryptoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CryptoMode::Real => "real",
            CryptoMode::SizeModel => "size-model",
        })
    }
}

/// Placeholder keys used by the size model carry this bit in their tag byte.
pub const SYNTHETIC_TAG_BIT: u8 = 0x80;

/// Canonical public key: one algorithm tag byte followed by the
/// SubjectPublicKeyInfo DER body (or a placeholder body of calibrated length
/// for size-model keys).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKeyBytes {
    algorithm: Algorithm,
    encoded: Vec<u8>,
}

impl PublicKeyBytes {
    /// Wraps a SubjectPublicKeyInfo DER body.
    pub fn from_spki_der(algorithm: Algorithm, der: &[u8]) -> Self {
        let mut encoded = Vec::with_capacity(der.len() + 1);
        encoded.push(algorithm.tag());
        encoded.extend_from_slice(der);
        PublicKeyBytes { algorithm, encoded }
    }

    pub(crate) fn synthetic(algorithm: Algorithm, body: &[u8]) -> Self {
        let mut encoded = Vec::with_capacity(body.len() + 1);
        encoded.push(algorithm.tag() | SYNTHETIC_TAG_BIT);
        encoded.extend_from_slice(body);
        PublicKeyBytes { algorithm, encoded }
    }

    /// Parses a canonical encoding. Only the tag and the minimum length are
    /// checked here; the DER body is parsed when the key is used.
    pub fn from_encoded(encoded: &[u8]) -> Result<Self, EncodingError> {
        let tag = *encoded.first().ok_or(EncodingError::Truncated)?;
        let algorithm = Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == tag & !SYNTHETIC_TAG_BIT)
            .ok_or(EncodingError::UnknownAlgorithm(tag))?;
        if encoded.len() <= KeyId::LEN {
            return Err(EncodingError::EncodingTooShort(encoded.len()));
        }
        Ok(PublicKeyBytes {
            algorithm,
            encoded: encoded.to_vec(),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn encoded(&self) -> &[u8] {
        &self.encoded
    }

    /// DER body without the tag byte.
    pub fn body(&self) -> &[u8] {
        &self.encoded[1..]
    }

    pub fn is_synthetic(&self) -> bool {
        self.encoded[0] & SYNTHETIC_TAG_BIT != 0
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(self)
    }

    pub fn key_id(&self) -> KeyId {
        KeyId::from_encoding(&self.encoded).expect("validated at construction")
    }

    pub fn len(&self) -> usize {
        self.encoded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoded.is_empty()
    }
}

impl fmt::Debug for PublicKeyBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PublicKeyBytes({}, {} bytes, {})",
            self.algorithm,
            self.encoded.len(),
            self.key_id()
        )
    }
}

/// SHA-256 of a canonical public-key encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub const LEN: usize = 32;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({}…)", &self.to_hex()[..16])
    }
}

impl FromStr for Fingerprint {
    type Err = EncodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| EncodingError::Invalid("fingerprint hex"))?;
        Ok(Fingerprint(out))
    }
}

pub fn fingerprint(key: &PublicKeyBytes) -> Fingerprint {
    Fingerprint(Sha256::digest(key.encoded()).into())
}

/// Trailing 8 bytes of a canonical public-key encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(pub [u8; 8]);

impl KeyId {
    pub const LEN: usize = 8;

    pub fn from_encoding(encoded: &[u8]) -> Result<Self, EncodingError> {
        if encoded.len() < Self::LEN {
            return Err(EncodingError::EncodingTooShort(encoded.len()));
        }
        let mut id = [0u8; 8];
        id.copy_from_slice(&encoded[encoded.len() - Self::LEN..]);
        Ok(KeyId(id))
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode_upper(self.0))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({self})")
    }
}

pub fn key_id(encoded: &[u8]) -> Result<KeyId, EncodingError> {
    KeyId::from_encoding(encoded)
}

/// Trust lattice. Ordering follows trust: `Unknown < Known < Trusted < Ultimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrustLevel {
    Unknown,
    Known,
    Trusted,
    Ultimate,
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustLevel::Unknown => "Unknown",
            TrustLevel::Known => "Known",
            TrustLevel::Trusted => "Trusted",
            TrustLevel::Ultimate => "Ultimate",
        })
    }
}

const CERT_MAGIC: &[u8; 2] = b"WC";
const SUBKEY_CERT_MAGIC: &[u8; 2] = b"WS";
const FORMAT_VERSION: u8 = 1;

const CERT_DOMAIN: u8 = b'C';
const SUBKEY_DOMAIN: u8 = b'S';

pub const MAX_APP_TAG_LEN: usize = 64;

/// `signature[issuer, subject]`: the issuer's signature over the subject's
/// public key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub issuer_fp: Fingerprint,
    pub subject_fp: Fingerprint,
    pub subject_keyid: KeyId,
    pub issued_at: u64,
    pub sig: Vec<u8>,
}

impl Certificate {
    /// Bytes covered by the issuer's signature.
    pub fn signing_payload(subject_key: &PublicKeyBytes, issuer_fp: &Fingerprint, issued_at: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(subject_key.len() + 48);
        out.push(CERT_DOMAIN);
        put_bytes_u32(&mut out, subject_key.encoded());
        put_bytes_u32(&mut out, issuer_fp.as_bytes());
        out.extend_from_slice(&issued_at.to_be_bytes());
        out
    }

    /// Whether this certificate binds `subject_key` (fingerprint and key id agree).
    pub fn matches_subject(&self, subject_key: &PublicKeyBytes) -> bool {
        self.subject_fp == subject_key.fingerprint() && self.subject_keyid == subject_key.key_id()
    }

    /// Ordering used to pick one certificate per issuer: newest `issued_at`
    /// wins, equal timestamps keep the lexicographically smaller signature.
    pub fn supersedes(&self, other: &Certificate) -> bool {
        self.issued_at > other.issued_at || (self.issued_at == other.issued_at && self.sig < other.sig)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(85 + self.sig.len());
        out.extend_from_slice(CERT_MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(self.issuer_fp.as_bytes());
        out.extend_from_slice(self.subject_fp.as_bytes());
        out.extend_from_slice(&self.subject_keyid.0);
        out.extend_from_slice(&self.issued_at.to_be_bytes());
        put_bytes_u16(&mut out, &self.sig);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EncodingError> {
        let mut r = Reader::new(bytes);
        if r.take(2)? != CERT_MAGIC {
            return Err(EncodingError::BadMagic);
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(EncodingError::UnsupportedVersion(version));
        }
        let cert = Certificate {
            issuer_fp: Fingerprint(r.array()?),
            subject_fp: Fingerprint(r.array()?),
            subject_keyid: KeyId(r.array()?),
            issued_at: r.u64()?,
            sig: r.bytes_u16()?.to_vec(),
        };
        r.finish()?;
        Ok(cert)
    }
}

pub fn encode_certificate(c: &Certificate) -> Vec<u8> {
    c.encode()
}

pub fn decode_certificate(bytes: &[u8]) -> Result<Certificate, EncodingError> {
    Certificate::decode(bytes)
}

/// A device's certification of an application sub-key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubKeyCertificate {
    pub device_fp: Fingerprint,
    pub subkey: PublicKeyBytes,
    pub app_tag: String,
    pub issued_at: u64,
    pub sig: Vec<u8>,
}

impl SubKeyCertificate {
    pub fn signing_payload(subkey: &PublicKeyBytes, app_tag: &str, issued_at: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(subkey.len() + app_tag.len() + 17);
        out.push(SUBKEY_DOMAIN);
        put_bytes_u32(&mut out, subkey.encoded());
        put_bytes_u32(&mut out, app_tag.as_bytes());
        out.extend_from_slice(&issued_at.to_be_bytes());
        out
    }

    pub fn subkey_fp(&self) -> Fingerprint {
        self.subkey.fingerprint()
    }

    pub fn check_app_tag(app_tag: &str) -> Result<(), EncodingError> {
        if app_tag.len() > MAX_APP_TAG_LEN {
            Err(EncodingError::AppTagTooLong(app_tag.len()))
        } else {
            Ok(())
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.subkey.len() + self.app_tag.len() + self.sig.len());
        out.extend_from_slice(SUBKEY_CERT_MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(self.device_fp.as_bytes());
        put_bytes_u16(&mut out, self.subkey.encoded());
        put_bytes_u8(&mut out, self.app_tag.as_bytes());
        out.extend_from_slice(&self.issued_at.to_be_bytes());
        put_bytes_u16(&mut out, &self.sig);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EncodingError> {
        let mut r = Reader::new(bytes);
        if r.take(2)? != SUBKEY_CERT_MAGIC {
            return Err(EncodingError::BadMagic);
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(EncodingError::UnsupportedVersion(version));
        }
        let device_fp = Fingerprint(r.array()?);
        let subkey = PublicKeyBytes::from_encoded(r.bytes_u16()?)?;
        let tag = r.bytes_u8()?;
        Self::check_app_tag_len(tag.len())?;
        let app_tag = std::str::from_utf8(tag)
            .map_err(|_| EncodingError::InvalidUtf8)?
            .to_string();
        let cert = SubKeyCertificate {
            device_fp,
            subkey,
            app_tag,
            issued_at: r.u64()?,
            sig: r.bytes_u16()?.to_vec(),
        };
        r.finish()?;
        Ok(cert)
    }

    fn check_app_tag_len(len: usize) -> Result<(), EncodingError> {
        if len > MAX_APP_TAG_LEN {
            Err(EncodingError::AppTagTooLong(len))
        } else {
            Ok(())
        }
    }
}

/// User-tunable trust parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustConfig {
    /// Longest certification path (owner = 0, direct = 1) still accepted.
    pub maxdegree: u32,
    /// Distinct Known issuers needed to validate a key through Known chains.
    pub numknown: u32,
    /// Sub-key certificates a device may issue over its lifetime.
    pub maxsubkeys: u32,
    pub signaturealgorithm: Algorithm,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            maxdegree: 3,
            numknown: 1,
            maxsubkeys: 3,
            signaturealgorithm: Algorithm::EcdsaP256,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.maxdegree == 0 {
            return Err(ConfigError::ZeroDegree);
        }
        if self.numknown == 0 {
            return Err(ConfigError::ZeroNumKnown);
        }
        Ok(())
    }
}
