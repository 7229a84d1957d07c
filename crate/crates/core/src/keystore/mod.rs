//! Key management: device key pairs, the PIN-sealed software keystore, and
//! issuance of device certificates and sub-key certificates.

mod keys;
mod software;

use thiserror::Error;

use crate::model::{Certificate, CryptoMode, EncodingError, Fingerprint, PublicKeyBytes, SubKeyCertificate};

pub use keys::{generate_keypair, verify, verify_in_mode, KeyPair};
pub use software::{KdfParams, LockState, SoftwareKeystore};

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("unsupported algorithm for this operation")]
    UnsupportedAlgorithm,
    #[error("wrong PIN")]
    WrongPin,
    #[error("keystore is corrupt: {0}")]
    StoreCorrupt(String),
    #[error("keystore is locked")]
    StoreLocked,
    #[error("refusing to certify the device's own key")]
    SelfCertificateRejected,
    #[error("sub-key limit of {max} reached")]
    SubkeyLimitReached { max: u32 },
    #[error("crypto failure: {0}")]
    Crypto(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("keystore I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can produce signatures under a device authentication key.
pub trait Signer {
    fn public_key(&self) -> &PublicKeyBytes;

    fn sign(&self, payload: &[u8]) -> Result<Vec<u8>, KeystoreError>;

    fn fingerprint(&self) -> Fingerprint {
        self.public_key().fingerprint()
    }
}

impl Signer for KeyPair {
    fn public_key(&self) -> &PublicKeyBytes {
        self.public()
    }

    fn sign(&self, payload: &[u8]) -> Result<Vec<u8>, KeystoreError> {
        Ok(KeyPair::sign(self, payload))
    }
}

impl<S: Signer + ?Sized> Signer for &S {
    fn public_key(&self) -> &PublicKeyBytes {
        (**self).public_key()
    }

    fn sign(&self, payload: &[u8]) -> Result<Vec<u8>, KeystoreError> {
        (**self).sign(payload)
    }
}

/// Issues `signature[signer, subject]`.
pub fn issue_certificate<S: Signer + ?Sized>(
    signer: &S,
    subject_key: &PublicKeyBytes,
    now: u64,
) -> Result<Certificate, KeystoreError> {
    let issuer_fp = signer.fingerprint();
    let subject_fp = subject_key.fingerprint();
    if issuer_fp == subject_fp {
        return Err(KeystoreError::SelfCertificateRejected);
    }
    let payload = Certificate::signing_payload(subject_key, &issuer_fp, now);
    Ok(Certificate {
        issuer_fp,
        subject_fp,
        subject_keyid: subject_key.key_id(),
        issued_at: now,
        sig: signer.sign(&payload)?,
    })
}

/// Certifies an application sub-key. `issued` is the lifetime count of
/// sub-key certificates this device has issued and is incremented on success.
pub fn register_subkey<S: Signer + ?Sized>(
    signer: &S,
    issued: &mut u32,
    maxsubkeys: u32,
    subkey_public: &PublicKeyBytes,
    app_tag: &str,
    now: u64,
) -> Result<SubKeyCertificate, KeystoreError> {
    if *issued >= maxsubkeys {
        return Err(KeystoreError::SubkeyLimitReached { max: maxsubkeys });
    }
    SubKeyCertificate::check_app_tag(app_tag)?;
    let payload = SubKeyCertificate::signing_payload(subkey_public, app_tag, now);
    let cert = SubKeyCertificate {
        device_fp: signer.fingerprint(),
        subkey: subkey_public.clone(),
        app_tag: app_tag.to_string(),
        issued_at: now,
        sig: signer.sign(&payload)?,
    };
    *issued += 1;
    Ok(cert)
}

/// Checks a certificate against the issuer and subject keys.
pub fn verify_certificate(
    mode: CryptoMode,
    cert: &Certificate,
    issuer_key: &PublicKeyBytes,
    subject_key: &PublicKeyBytes,
) -> bool {
    if cert.issuer_fp != issuer_key.fingerprint() || !cert.matches_subject(subject_key) {
        return false;
    }
    let payload = Certificate::signing_payload(subject_key, &cert.issuer_fp, cert.issued_at);
    verify_in_mode(mode, issuer_key, &payload, &cert.sig)
}

pub fn verify_subkey_certificate(mode: CryptoMode, cert: &SubKeyCertificate, device_key: &PublicKeyBytes) -> bool {
    if cert.device_fp != device_key.fingerprint() || cert.app_tag.len() > crate::model::MAX_APP_TAG_LEN {
        return false;
    }
    let payload = SubKeyCertificate::signing_payload(&cert.subkey, &cert.app_tag, cert.issued_at);
    verify_in_mode(mode, device_key, &payload, &cert.sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Algorithm;

    #[test]
    fn issued_certificate_verifies() {
        let a = generate_keypair(Algorithm::EcdsaP256, Some(1)).unwrap();
        let b = generate_keypair(Algorithm::EcdsaP256, Some(2)).unwrap();
        let cert = issue_certificate(&a, b.public(), 1000).unwrap();
        assert_eq!(cert.issuer_fp, a.public().fingerprint());
        assert_eq!(cert.subject_fp, b.public().fingerprint());
        assert!(verify_certificate(CryptoMode::Real, &cert, a.public(), b.public()));
        assert!(!verify_certificate(CryptoMode::Real, &cert, b.public(), a.public()));
        let mut later = cert.clone();
        later.issued_at += 1;
        assert!(!verify_certificate(CryptoMode::Real, &later, a.public(), b.public()));
    }

    #[test]
    fn self_certificate_rejected() {
        let a = generate_keypair(Algorithm::EcdsaP256, Some(1)).unwrap();
        assert!(matches!(
            issue_certificate(&a, a.public(), 0),
            Err(KeystoreError::SelfCertificateRejected)
        ));
    }

    #[test]
    fn subkey_budget_is_enforced() {
        let dev = generate_keypair(Algorithm::EcdsaP256, Some(1)).unwrap();
        let mut issued = 0;
        for i in 0..3 {
            let sk = generate_keypair(Algorithm::EcdsaP256, Some(100 + i)).unwrap();
            let cert = register_subkey(&dev, &mut issued, 3, sk.public(), "app1", 5).unwrap();
            assert!(verify_subkey_certificate(CryptoMode::Real, &cert, dev.public()));
        }
        let sk = generate_keypair(Algorithm::EcdsaP256, Some(200)).unwrap();
        assert!(matches!(
            register_subkey(&dev, &mut issued, 3, sk.public(), "app1", 5),
            Err(KeystoreError::SubkeyLimitReached { max: 3 })
        ));
        assert_eq!(issued, 3);
    }

    #[test]
    fn subkey_certificate_bound_to_tag() {
        let dev = generate_keypair(Algorithm::EcdsaP256, Some(1)).unwrap();
        let sk = generate_keypair(Algorithm::EcdsaP256, Some(2)).unwrap();
        let mut issued = 0;
        let mut cert = register_subkey(&dev, &mut issued, 3, sk.public(), "mail", 5).unwrap();
        cert.app_tag = "chat".into();
        assert!(!verify_subkey_certificate(CryptoMode::Real, &cert, dev.public()));
    }
}
