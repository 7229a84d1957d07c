use p256::ecdsa::signature::{Signer as _, Verifier as _};
use p256::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rsa::pkcs1v15;
use rsa::signature::SignatureEncoding;
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};

use super::KeystoreError;
use crate::model::{Algorithm, CryptoMode, PublicKeyBytes};

const RSA_BITS: usize = 2048;

enum Secret {
    Rsa(Box<pkcs1v15::SigningKey<Sha256>>, Box<RsaPrivateKey>),
    Ecdsa(p256::ecdsa::SigningKey),
    /// Size-model placeholder: signatures are a keyed expansion of the payload
    /// with the given length.
    Synthetic { sig_len: usize },
}

/// An asymmetric key pair held in memory.
pub struct KeyPair {
    public: PublicKeyBytes,
    secret: Secret,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

/// Generates a fresh key pair. With a seed the result is fully deterministic;
/// without one the system entropy source is used.
pub fn generate_keypair(algorithm: Algorithm, rng_seed: Option<u64>) -> Result<KeyPair, KeystoreError> {
    match rng_seed {
        Some(seed) => KeyPair::generate_with(algorithm, &mut ChaCha20Rng::seed_from_u64(seed)),
        None => KeyPair::generate_with(algorithm, &mut OsRng),
    }
}

impl KeyPair {
    pub fn generate_with<R: RngCore + CryptoRng>(algorithm: Algorithm, rng: &mut R) -> Result<Self, KeystoreError> {
        match algorithm {
            Algorithm::Rsa2048 => {
                let private = RsaPrivateKey::new(rng, RSA_BITS).map_err(|e| KeystoreError::Crypto(e.to_string()))?;
                Self::from_rsa(private)
            }
            Algorithm::EcdsaP256 => Self::from_ecdsa(p256::ecdsa::SigningKey::random(rng)),
        }
    }

    fn from_rsa(private: RsaPrivateKey) -> Result<Self, KeystoreError> {
        let der = RsaPublicKey::from(&private)
            .to_public_key_der()
            .map_err(|e| KeystoreError::Crypto(e.to_string()))?;
        Ok(KeyPair {
            public: PublicKeyBytes::from_spki_der(Algorithm::Rsa2048, der.as_bytes()),
            secret: Secret::Rsa(Box::new(pkcs1v15::SigningKey::new(private.clone())), Box::new(private)),
        })
    }

    fn from_ecdsa(signing: p256::ecdsa::SigningKey) -> Result<Self, KeystoreError> {
        let der = signing
            .verifying_key()
            .to_public_key_der()
            .map_err(|e| KeystoreError::Crypto(e.to_string()))?;
        Ok(KeyPair {
            public: PublicKeyBytes::from_spki_der(Algorithm::EcdsaP256, der.as_bytes()),
            secret: Secret::Ecdsa(signing),
        })
    }

    /// Placeholder key pair for the size model. The public key is
    /// `public_len` bytes long (tag included) and derived from `seed_material`.
    pub fn synthetic(algorithm: Algorithm, public_len: usize, sig_len: usize, seed_material: &[u8]) -> Self {
        let body = expand(b"wotnet/synthetic-key", &[seed_material], public_len.saturating_sub(1).max(9));
        KeyPair {
            public: PublicKeyBytes::synthetic(algorithm, &body),
            secret: Secret::Synthetic { sig_len },
        }
    }

    pub fn public(&self) -> &PublicKeyBytes {
        &self.public
    }

    pub fn algorithm(&self) -> Algorithm {
        self.public.algorithm()
    }

    pub fn sign(&self, payload: &[u8]) -> Vec<u8> {
        match &self.secret {
            Secret::Rsa(key, _) => key.sign(payload).to_vec(),
            Secret::Ecdsa(key) => {
                let sig: p256::ecdsa::Signature = key.sign(payload);
                sig.to_bytes().to_vec()
            }
            Secret::Synthetic { sig_len } => synthetic_signature(&self.public, payload, *sig_len),
        }
    }

    /// PKCS#8 DER of the private key. Only used to seal the key at rest.
    pub(crate) fn private_pkcs8_der(&self) -> Result<Vec<u8>, KeystoreError> {
        let doc = match &self.secret {
            Secret::Rsa(_, private) => private.to_pkcs8_der(),
            Secret::Ecdsa(key) => key.to_pkcs8_der(),
            Secret::Synthetic { .. } => return Err(KeystoreError::UnsupportedAlgorithm),
        };
        doc.map(|d| d.as_bytes().to_vec())
            .map_err(|e| KeystoreError::Crypto(e.to_string()))
    }

    pub(crate) fn from_private_pkcs8_der(algorithm: Algorithm, der: &[u8]) -> Result<Self, KeystoreError> {
        let corrupt = |e: String| KeystoreError::StoreCorrupt(format!("private key: {e}"));
        match algorithm {
            Algorithm::Rsa2048 => Self::from_rsa(RsaPrivateKey::from_pkcs8_der(der).map_err(|e| corrupt(e.to_string()))?),
            Algorithm::EcdsaP256 => {
                Self::from_ecdsa(p256::ecdsa::SigningKey::from_pkcs8_der(der).map_err(|e| corrupt(e.to_string()))?)
            }
        }
    }
}

/// Verifies a real signature. Placeholder keys never verify here.
///
/// Total over arbitrary input: malformed keys or signatures yield `false`.
pub fn verify(key: &PublicKeyBytes, payload: &[u8], sig: &[u8]) -> bool {
    if key.is_synthetic() {
        return false;
    }
    match key.algorithm() {
        Algorithm::Rsa2048 => {
            let Ok(public) = RsaPublicKey::from_public_key_der(key.body()) else {
                return false;
            };
            let Ok(sig) = pkcs1v15::Signature::try_from(sig) else {
                return false;
            };
            pkcs1v15::VerifyingKey::<Sha256>::new(public).verify(payload, &sig).is_ok()
        }
        Algorithm::EcdsaP256 => {
            let Ok(public) = p256::ecdsa::VerifyingKey::from_public_key_der(key.body()) else {
                return false;
            };
            let Ok(sig) = p256::ecdsa::Signature::from_slice(sig) else {
                return false;
            };
            public.verify(payload, &sig).is_ok()
        }
    }
}

/// Like [`verify`], but in size-model mode placeholder keys are checked
/// against their deterministic placeholder signatures.
pub fn verify_in_mode(mode: CryptoMode, key: &PublicKeyBytes, payload: &[u8], sig: &[u8]) -> bool {
    if key.is_synthetic() {
        mode == CryptoMode::SizeModel && !sig.is_empty() && synthetic_signature(key, payload, sig.len()) == sig
    } else {
        verify(key, payload, sig)
    }
}

fn synthetic_signature(public: &PublicKeyBytes, payload: &[u8], len: usize) -> Vec<u8> {
    expand(b"wotnet/synthetic-sig", &[public.encoded(), payload], len)
}

/// SHA-256 in counter mode over the length-prefixed parts.
fn expand(domain: &[u8], parts: &[&[u8]], len: usize) -> Vec<u8> {
    let mut base = Sha256::new();
    base.update(domain);
    for part in parts {
        base.update((part.len() as u64).to_be_bytes());
        base.update(part);
    }
    let mut out = Vec::with_capacity(len + 32);
    let mut counter = 0u32;
    while out.len() < len {
        let mut h = base.clone();
        h.update(counter.to_be_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_deterministic() {
        for alg in Algorithm::ALL {
            let a = generate_keypair(alg, Some(7)).unwrap();
            let b = generate_keypair(alg, Some(7)).unwrap();
            assert_eq!(a.public(), b.public());
        }
    }

    #[test]
    fn unseeded_generation_is_unique() {
        let a = generate_keypair(Algorithm::EcdsaP256, None).unwrap();
        let b = generate_keypair(Algorithm::EcdsaP256, None).unwrap();
        assert_ne!(a.public().fingerprint(), b.public().fingerprint());
    }

    #[test]
    fn encoding_lengths() {
        let rsa = generate_keypair(Algorithm::Rsa2048, Some(1)).unwrap();
        let ec = generate_keypair(Algorithm::EcdsaP256, Some(1)).unwrap();
        assert_eq!(rsa.public().len(), 295);
        assert_eq!(ec.public().len(), 92);
        assert!(ec.public().len() < rsa.public().len());
        assert_eq!(rsa.sign(b"x").len(), 256);
        assert_eq!(ec.sign(b"x").len(), 64);
    }

    #[test]
    fn sign_verify_both_algorithms() {
        for alg in Algorithm::ALL {
            let kp = generate_keypair(alg, Some(3)).unwrap();
            let other = generate_keypair(alg, Some(4)).unwrap();
            let sig = kp.sign(b"payload");
            assert!(verify(kp.public(), b"payload", &sig));
            assert!(!verify(other.public(), b"payload", &sig));
            assert!(!verify(kp.public(), b"payloae", &sig));
            let mut bad = sig.clone();
            bad[5] ^= 1;
            assert!(!verify(kp.public(), b"payload", &bad));
        }
    }

    #[test]
    fn ecdsa_signatures_verify_each_time() {
        let kp = generate_keypair(Algorithm::EcdsaP256, None).unwrap();
        let a = kp.sign(b"same");
        let b = kp.sign(b"same");
        assert!(verify(kp.public(), b"same", &a));
        assert!(verify(kp.public(), b"same", &b));
    }

    #[test]
    fn verify_is_total_on_garbage() {
        let kp = generate_keypair(Algorithm::EcdsaP256, Some(9)).unwrap();
        for sig in [&[][..], &[0u8; 1][..], &[0xff; 64][..], &[0u8; 300][..]] {
            assert!(!verify(kp.public(), b"p", sig));
        }
        let junk = PublicKeyBytes::from_encoded(&[0x01, 9, 9, 9, 9, 9, 9, 9, 9, 9]).unwrap();
        assert!(!verify(&junk, b"p", &[1, 2, 3]));
        let junk = PublicKeyBytes::from_encoded(&[0x02; 40]).unwrap();
        assert!(!verify(&junk, b"p", &[1; 64]));
    }

    #[test]
    fn synthetic_keys_verify_only_in_size_model() {
        let kp = KeyPair::synthetic(Algorithm::EcdsaP256, 92, 64, b"node-1");
        assert_eq!(kp.public().len(), 92);
        let sig = kp.sign(b"m");
        assert_eq!(sig.len(), 64);
        assert!(verify_in_mode(CryptoMode::SizeModel, kp.public(), b"m", &sig));
        assert!(!verify_in_mode(CryptoMode::SizeModel, kp.public(), b"n", &sig));
        assert!(!verify_in_mode(CryptoMode::Real, kp.public(), b"m", &sig));
        assert!(!verify(kp.public(), b"m", &sig));
    }

    #[test]
    fn pkcs8_round_trip() {
        for alg in Algorithm::ALL {
            let kp = generate_keypair(alg, Some(11)).unwrap();
            let der = kp.private_pkcs8_der().unwrap();
            let back = KeyPair::from_private_pkcs8_der(alg, &der).unwrap();
            assert_eq!(back.public(), kp.public());
        }
    }
}
