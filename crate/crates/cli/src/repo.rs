//! `repo show` and `repo verify`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use wotnet_core::model::{Fingerprint, TrustLevel};
use wotnet_core::trust::{load, read_header, verify_dir, FileVerdict};

fn short(fp: &Fingerprint) -> String {
    fp.to_hex()[..16].to_string()
}

/// One block per subject, owner first.
pub fn show(dir: &Path) -> Result<String> {
    let header = read_header(dir).with_context(|| format!("reading {}", dir.display()))?;
    let (repo, dropped) = load(dir, header.config)?;
    let view = repo.evaluate();
    let cfg = repo.config();
    let mut out = format!(
        "repository {} ({} mode, maxdegree {}, numknown {}, {})\n",
        dir.display(),
        repo.mode(),
        cfg.maxdegree,
        cfg.numknown,
        cfg.signaturealgorithm
    );
    let owner = repo.owner_fp();
    let mut records: Vec<_> = repo.records().collect();
    records.sort_by_key(|r| (r.fingerprint() != owner, std::cmp::Reverse(view.level(&r.fingerprint())), r.fingerprint()));
    for rec in records {
        let fp = rec.fingerprint();
        let level = view.level(&fp);
        let depth = view.depth(&fp).map_or("-".to_string(), |d| d.to_string());
        let _ = writeln!(out, "{fp}");
        let _ = writeln!(out, "  key id   {}", rec.subject_key().key_id());
        let _ = writeln!(out, "  level    {level}, depth {depth}");
        let issuers: Vec<String> = rec.certificates().map(|c| short(&c.issuer_fp)).collect();
        if !issuers.is_empty() {
            let _ = writeln!(out, "  issuers  {}", issuers.join(" "));
        }
        for sk in rec.subkeys() {
            let usable = if level == TrustLevel::Unknown { "" } else { " (valid)" };
            let _ = writeln!(out, "  sub-key  {} {}{usable}", sk.app_tag, sk.subkey.key_id());
        }
    }
    for d in &dropped {
        let _ = writeln!(out, "dropped {}: {}", d.path.display(), d.problem.as_deref().unwrap_or_default());
    }
    Ok(out)
}

/// Checks every stored file; returns the report and the failing verdicts.
pub fn verify(dir: &Path) -> Result<(String, Vec<FileVerdict>)> {
    let verdicts = verify_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut out = String::new();
    let mut failed = Vec::new();
    for v in verdicts {
        let rel = v.path.strip_prefix(dir).unwrap_or(&v.path).display().to_string();
        match &v.problem {
            None => {
                let _ = writeln!(out, "ok    {rel}");
            }
            Some(p) => {
                let _ = writeln!(out, "FAIL  {rel}: {p}");
                failed.push(v);
            }
        }
    }
    Ok((out, failed))
}
