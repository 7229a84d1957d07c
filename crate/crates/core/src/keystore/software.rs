//! File-backed keystore whose private key is sealed under a PIN.
//!
//! On-disk form is a single Base64 (standard alphabet, padded) line encoding:
//!
//! ```text
//! magic "WKST" | version u8 | algorithm tag u8 | kdf id u8 | iterations u32
//! | salt [16] | nonce [12] | pin check [16] | public key (u16 len + bytes)
//! | sub-keys issued u32 | sealed private key (u32 len + bytes)
//! ```
//!
//! The KDF is PBKDF2-HMAC-SHA256 (kdf id 1). The private key (PKCS#8 DER) is
//! sealed with AES-256-GCM; every header field before the sub-key counter is
//! bound as associated data.

use std::fs;
use std::path::{Path, PathBuf};

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::keys::{generate_keypair, KeyPair};
use super::{register_subkey, KeystoreError, Signer};
use crate::model::codec::{put_bytes_u16, put_bytes_u32, Reader};
use crate::model::{Algorithm, Certificate, PublicKeyBytes, SubKeyCertificate};

const MAGIC: &[u8; 4] = b"WKST";
const VERSION: u8 = 1;
const KDF_PBKDF2_SHA256: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub salt: [u8; 16],
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockState {
    Locked,
    Unlocked,
}

#[derive(Debug, Clone)]
struct Header {
    algorithm: Algorithm,
    kdf: KdfParams,
    nonce: [u8; 12],
    pin_check: [u8; 16],
    public: PublicKeyBytes,
}

impl Header {
    fn associated_data(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.public.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.algorithm.tag());
        out.push(KDF_PBKDF2_SHA256);
        out.extend_from_slice(&self.kdf.iterations.to_be_bytes());
        out.extend_from_slice(&self.kdf.salt);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.pin_check);
        put_bytes_u16(&mut out, self.public.encoded());
        out
    }
}

pub struct SoftwareKeystore {
    path: PathBuf,
    header: Header,
    sealed_blob: Vec<u8>,
    subkeys_issued: u32,
    unlocked: Option<KeyPair>,
}

impl std::fmt::Debug for SoftwareKeystore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SoftwareKeystore")
            .field("path", &self.path)
            .field("algorithm", &self.header.algorithm)
            .field("state", &self.lock_state())
            .finish()
    }
}

fn derive_key(pin: &str, kdf: &KdfParams) -> [u8; 32] {
    let mut key = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(pin.as_bytes(), &kdf.salt, kdf.iterations, &mut key);
    key
}

fn pin_check(key: &[u8; 32]) -> [u8; 16] {
    let digest = Sha256::new().chain_update(b"wotnet/pin-check").chain_update(key).finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out
}

impl SoftwareKeystore {
    pub const DEFAULT_ITERATIONS: u32 = 100_000;

    /// Generates a device key, seals it under `pin` and writes the store to
    /// `path`. The returned store is locked.
    ///
    /// `seed` selects the deterministic test path for key, salt and nonce.
    pub fn create(
        path: impl AsRef<Path>,
        algorithm: Algorithm,
        pin: &str,
        iterations: u32,
        seed: Option<u64>,
    ) -> Result<Self, KeystoreError> {
        let keypair = generate_keypair(algorithm, seed)?;
        let mut salt = [0u8; 16];
        let mut nonce = [0u8; 12];
        match seed {
            Some(s) => {
                let mut rng = ChaCha20Rng::seed_from_u64(s ^ 0x5eed_5a17);
                rng.fill_bytes(&mut salt);
                rng.fill_bytes(&mut nonce);
            }
            None => {
                OsRng.fill_bytes(&mut salt);
                OsRng.fill_bytes(&mut nonce);
            }
        }
        let kdf = KdfParams {
            salt,
            iterations: iterations.max(1),
        };
        let key = derive_key(pin, &kdf);
        let header = Header {
            algorithm,
            kdf,
            nonce,
            pin_check: pin_check(&key),
            public: keypair.public().clone(),
        };
        let plaintext = keypair.private_pkcs8_der()?;
        let cipher = Aes256Gcm::new_from_slice(&key).map_err(|e| KeystoreError::Crypto(e.to_string()))?;
        let sealed_blob = cipher
            .encrypt(
                &Nonce::from(nonce),
                Payload {
                    msg: &plaintext,
                    aad: &header.associated_data(),
                },
            )
            .map_err(|e| KeystoreError::Crypto(e.to_string()))?;
        let store = SoftwareKeystore {
            path: path.as_ref().to_path_buf(),
            header,
            sealed_blob,
            subkeys_issued: 0,
            unlocked: None,
        };
        store.save()?;
        Ok(store)
    }

    /// Opens an existing store in the locked state.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, KeystoreError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let raw = STANDARD
            .decode(text.trim())
            .map_err(|e| KeystoreError::StoreCorrupt(format!("base64: {e}")))?;
        let (header, subkeys_issued, sealed_blob) =
            Self::decode(&raw).map_err(|e| KeystoreError::StoreCorrupt(e.to_string()))?;
        Ok(SoftwareKeystore {
            path: path.to_path_buf(),
            header,
            sealed_blob,
            subkeys_issued,
            unlocked: None,
        })
    }

    fn decode(raw: &[u8]) -> Result<(Header, u32, Vec<u8>), KeystoreError> {
        let mut r = Reader::new(raw);
        if r.take(4)? != MAGIC {
            return Err(KeystoreError::StoreCorrupt("bad magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(KeystoreError::StoreCorrupt(format!("unsupported version {version}")));
        }
        let tag = r.u8()?;
        let algorithm = Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == tag)
            .ok_or(KeystoreError::UnsupportedAlgorithm)?;
        if r.u8()? != KDF_PBKDF2_SHA256 {
            return Err(KeystoreError::StoreCorrupt("unknown kdf".into()));
        }
        let iterations = r.u32()?;
        let kdf = KdfParams {
            salt: r.array()?,
            iterations,
        };
        let nonce = r.array()?;
        let pin_check = r.array()?;
        let public = PublicKeyBytes::from_encoded(r.bytes_u16()?)?;
        let subkeys_issued = r.u32()?;
        let n = r.u32()? as usize;
        let sealed = r.take(n)?.to_vec();
        r.finish()?;
        Ok((
            Header {
                algorithm,
                kdf,
                nonce,
                pin_check,
                public,
            },
            subkeys_issued,
            sealed,
        ))
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = self.header.associated_data();
        out.extend_from_slice(&self.subkeys_issued.to_be_bytes());
        put_bytes_u32(&mut out, &self.sealed_blob);
        out
    }

    fn save(&self) -> Result<(), KeystoreError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&self.path, STANDARD.encode(self.encode()))?;
        Ok(())
    }

    pub fn unlock(&mut self, pin: &str) -> Result<(), KeystoreError> {
        let key = derive_key(pin, &self.header.kdf);
        if pin_check(&key) != self.header.pin_check {
            return Err(KeystoreError::WrongPin);
        }
        let cipher = Aes256Gcm::new_from_slice(&key).map_err(|e| KeystoreError::Crypto(e.to_string()))?;
        let plaintext = cipher
            .decrypt(
                &Nonce::from(self.header.nonce),
                Payload {
                    msg: &self.sealed_blob,
                    aad: &self.header.associated_data(),
                },
            )
            .map_err(|_| KeystoreError::StoreCorrupt("sealed key fails authentication".into()))?;
        let keypair = KeyPair::from_private_pkcs8_der(self.header.algorithm, &plaintext)?;
        if keypair.public() != &self.header.public {
            return Err(KeystoreError::StoreCorrupt("public key does not match sealed key".into()));
        }
        self.unlocked = Some(keypair);
        Ok(())
    }

    pub fn lock(&mut self) {
        self.unlocked = None;
    }

    pub fn lock_state(&self) -> LockState {
        if self.unlocked.is_some() {
            LockState::Unlocked
        } else {
            LockState::Locked
        }
    }

    pub fn is_unlocked(&self) -> bool {
        self.unlocked.is_some()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn algorithm(&self) -> Algorithm {
        self.header.algorithm
    }

    pub fn kdf_params(&self) -> KdfParams {
        self.header.kdf
    }

    pub fn subkeys_issued(&self) -> u32 {
        self.subkeys_issued
    }

    pub fn sealed_blob(&self) -> &[u8] {
        &self.sealed_blob
    }

    fn keypair(&self) -> Result<&KeyPair, KeystoreError> {
        self.unlocked.as_ref().ok_or(KeystoreError::StoreLocked)
    }

    pub fn issue_certificate(&self, subject_key: &PublicKeyBytes, now: u64) -> Result<Certificate, KeystoreError> {
        super::issue_certificate(self, subject_key, now)
    }

    /// Certifies an application sub-key; the lifetime issuance count is
    /// persisted with the store.
    pub fn register_subkey(
        &mut self,
        subkey_public: &PublicKeyBytes,
        app_tag: &str,
        now: u64,
        maxsubkeys: u32,
    ) -> Result<SubKeyCertificate, KeystoreError> {
        let keypair = self.unlocked.as_ref().ok_or(KeystoreError::StoreLocked)?;
        let mut issued = self.subkeys_issued;
        let cert = register_subkey(keypair, &mut issued, maxsubkeys, subkey_public, app_tag, now)?;
        self.subkeys_issued = issued;
        self.save()?;
        Ok(cert)
    }
}

impl Signer for SoftwareKeystore {
    fn public_key(&self) -> &PublicKeyBytes {
        &self.header.public
    }

    fn sign(&self, payload: &[u8]) -> Result<Vec<u8>, KeystoreError> {
        Ok(self.keypair()?.sign(payload))
    }
}
