//! On-disk layout of a trust repository.
//!
//! ```text
//! <root>/repo.toml                         owner fingerprint, crypto mode, trust config
//! <root>/<subject fp hex>/pubkey.b64       canonical subject public key
//! <root>/<subject fp hex>/cert_<issuer fp hex>.b64
//! <root>/<subject fp hex>/subkey_<sub-key fp hex>.b64
//! <root>/<subject fp hex>/subkeycert_<sub-key fp hex>.b64
//! ```
//!
//! Every `.b64` file holds the Base64 (standard alphabet, padded, no trailing
//! newline) rendering of the corresponding canonical encoding.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use log::warn;
use serde::{Deserialize, Serialize};

use super::repository::{SubjectRecord, TrustRepository};
use super::TrustError;
use crate::keystore::{verify_certificate, verify_subkey_certificate};
use crate::model::{Certificate, CryptoMode, Fingerprint, PublicKeyBytes, SubKeyCertificate, TrustConfig};

pub const HEADER_FILE: &str = "repo.toml";
const PUBKEY_FILE: &str = "pubkey.b64";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoHeader {
    pub format: u32,
    pub owner: String,
    pub mode: CryptoMode,
    pub config: TrustConfig,
}

/// Outcome of checking one persisted file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileVerdict {
    pub path: PathBuf,
    pub problem: Option<String>,
}

impl FileVerdict {
    pub fn ok(&self) -> bool {
        self.problem.is_none()
    }
}

pub fn persist(repo: &TrustRepository, root: impl AsRef<Path>) -> Result<(), TrustError> {
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let header = RepoHeader {
        format: FORMAT,
        owner: repo.owner_fp().to_hex(),
        mode: repo.mode(),
        config: *repo.config(),
    };
    let text = toml::to_string(&header).map_err(|e| TrustError::CorruptRepository(e.to_string()))?;
    fs::write(root.join(HEADER_FILE), text)?;
    for record in repo.records() {
        let dir = root.join(record.fingerprint().to_hex());
        fs::create_dir_all(&dir)?;
        write_b64(&dir.join(PUBKEY_FILE), record.subject_key().encoded())?;
        for cert in record.certificates() {
            write_b64(&dir.join(format!("cert_{}.b64", cert.issuer_fp.to_hex())), &cert.encode())?;
        }
        for sk in record.subkeys() {
            let name = sk.subkey_fp().to_hex();
            write_b64(&dir.join(format!("subkey_{name}.b64")), sk.subkey.encoded())?;
            write_b64(&dir.join(format!("subkeycert_{name}.b64")), &sk.encode())?;
        }
    }
    Ok(())
}

fn write_b64(path: &Path, bytes: &[u8]) -> Result<(), TrustError> {
    fs::write(path, STANDARD.encode(bytes))?;
    Ok(())
}

fn read_b64(path: &Path) -> Result<Vec<u8>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    STANDARD.decode(text.trim_end()).map_err(|e| format!("bad base64: {e}"))
}

pub fn read_header(root: impl AsRef<Path>) -> Result<RepoHeader, TrustError> {
    let path = root.as_ref().join(HEADER_FILE);
    let text = fs::read_to_string(&path)?;
    let header: RepoHeader =
        toml::from_str(&text).map_err(|e| TrustError::CorruptRepository(format!("{}: {e}", path.display())))?;
    if header.format != FORMAT {
        return Err(TrustError::CorruptRepository(format!("unsupported format {}", header.format)));
    }
    Ok(header)
}

struct Scan {
    header: RepoHeader,
    owner: Fingerprint,
    records: BTreeMap<Fingerprint, SubjectRecord>,
    verdicts: Vec<FileVerdict>,
}

/// Reads and checks every file under `root`. Files that fail any check are
/// reported and left out of the scanned records.
fn scan(root: &Path) -> Result<Scan, TrustError> {
    let header = read_header(root)?;
    let owner: Fingerprint = header
        .owner
        .parse()
        .map_err(|_| TrustError::CorruptRepository("owner fingerprint in header".into()))?;
    let mode = header.mode;
    let mut verdicts = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    // Keys first: certificates need both endpoints.
    let mut keys: BTreeMap<Fingerprint, (PathBuf, PublicKeyBytes)> = BTreeMap::new();
    for dir in &dirs {
        let Some(dir_fp) = dir.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<Fingerprint>().ok()) else {
            continue;
        };
        let path = dir.join(PUBKEY_FILE);
        let parsed = read_b64(&path).and_then(|b| PublicKeyBytes::from_encoded(&b).map_err(|e| e.to_string()));
        let problem = match parsed {
            Ok(key) if key.fingerprint() == dir_fp => {
                keys.insert(dir_fp, (dir.clone(), key));
                None
            }
            Ok(_) => Some("fingerprint does not match directory name".to_string()),
            Err(e) => Some(e),
        };
        verdicts.push(FileVerdict { path, problem });
    }

    let mut records: BTreeMap<Fingerprint, SubjectRecord> = keys
        .iter()
        .map(|(fp, (_, key))| (*fp, SubjectRecord::new(key.clone())))
        .collect();

    for (subject_fp, (dir, subject_key)) in &keys {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        files.sort();
        for path in files {
            let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            if let Some(issuer_hex) = name.strip_prefix("cert_").and_then(|n| n.strip_suffix(".b64")) {
                let problem = check_certificate(mode, &path, issuer_hex, subject_key, &keys)
                    .map(|cert| records.get_mut(subject_fp).expect("record").insert_certificate(cert, 0))
                    .err();
                verdicts.push(FileVerdict { path, problem });
            } else if let Some(sk_hex) = name.strip_prefix("subkeycert_").and_then(|n| n.strip_suffix(".b64")) {
                let key_file = dir.join(format!("subkey_{sk_hex}.b64"));
                let problem = check_subkey(mode, &path, &key_file, sk_hex, subject_key)
                    .map(|cert| records.get_mut(subject_fp).expect("record").insert_subkey(cert, 0))
                    .err();
                verdicts.push(FileVerdict {
                    path: key_file,
                    problem: problem.clone(),
                });
                verdicts.push(FileVerdict { path, problem });
            }
        }
        // sub-key public keys without a certificate file
        for entry in fs::read_dir(dir)?.filter_map(|e| e.ok()) {
            let name = entry.file_name().to_string_lossy().to_string();
            if let Some(sk_hex) = name.strip_prefix("subkey_").and_then(|n| n.strip_suffix(".b64")) {
                if !dir.join(format!("subkeycert_{sk_hex}.b64")).exists() {
                    verdicts.push(FileVerdict {
                        path: entry.path(),
                        problem: Some("sub-key without certificate".into()),
                    });
                }
            }
        }
    }
    verdicts.sort_by(|a, b| a.path.cmp(&b.path));
    verdicts.dedup_by(|a, b| a.path == b.path);
    Ok(Scan {
        header,
        owner,
        records,
        verdicts,
    })
}

fn check_certificate(
    mode: CryptoMode,
    path: &Path,
    issuer_hex: &str,
    subject_key: &PublicKeyBytes,
    keys: &BTreeMap<Fingerprint, (PathBuf, PublicKeyBytes)>,
) -> Result<Certificate, String> {
    let cert = Certificate::decode(&read_b64(path)?).map_err(|e| e.to_string())?;
    if cert.issuer_fp.to_hex() != issuer_hex {
        return Err("issuer does not match file name".into());
    }
    let Some((_, issuer_key)) = keys.get(&cert.issuer_fp) else {
        return Err("issuer key not in repository".into());
    };
    if !verify_certificate(mode, &cert, issuer_key, subject_key) {
        return Err("signature does not verify".into());
    }
    Ok(cert)
}

fn check_subkey(
    mode: CryptoMode,
    cert_path: &Path,
    key_path: &Path,
    sk_hex: &str,
    device_key: &PublicKeyBytes,
) -> Result<SubKeyCertificate, String> {
    let cert = SubKeyCertificate::decode(&read_b64(cert_path)?).map_err(|e| e.to_string())?;
    let key = PublicKeyBytes::from_encoded(&read_b64(key_path)?).map_err(|e| e.to_string())?;
    if key != cert.subkey || key.fingerprint().to_hex() != sk_hex {
        return Err("sub-key file does not match its certificate".into());
    }
    if !verify_subkey_certificate(mode, &cert, device_key) {
        return Err("signature does not verify".into());
    }
    Ok(cert)
}

/// Loads a repository. Files failing verification are dropped with a
/// warning and returned alongside the repository; a missing owner record or
/// header is fatal.
pub fn load(root: impl AsRef<Path>, config: TrustConfig) -> Result<(TrustRepository, Vec<FileVerdict>), TrustError> {
    let Scan {
        header,
        owner,
        mut records,
        verdicts,
    } = scan(root.as_ref())?;
    let owner_record = records
        .remove(&owner)
        .ok_or_else(|| TrustError::CorruptRepository("owner record missing or invalid".into()))?;
    let mut repo = TrustRepository::with_mode(owner_record.subject_key().clone(), config, header.mode);
    repo.insert_loaded(owner_record);
    for (_, record) in records {
        repo.insert_loaded(record);
    }
    let failures: Vec<FileVerdict> = verdicts.into_iter().filter(|v| !v.ok()).collect();
    for f in &failures {
        warn!("dropped {}: {}", f.path.display(), f.problem.as_deref().unwrap_or_default());
    }
    Ok((repo, failures))
}

/// Re-checks every file of a persisted repository.
pub fn verify_dir(root: impl AsRef<Path>) -> Result<Vec<FileVerdict>, TrustError> {
    Ok(scan(root.as_ref())?.verdicts)
}

/// Total size of the subject files under `root`, as stored on disk.
pub fn disk_usage(root: impl AsRef<Path>) -> Result<u64, TrustError> {
    let mut total = 0;
    for dir in fs::read_dir(root)?.filter_map(|e| e.ok()).filter(|e| e.path().is_dir()) {
        for file in fs::read_dir(dir.path())?.filter_map(|e| e.ok()) {
            total += file.metadata()?.len();
        }
    }
    Ok(total)
}
