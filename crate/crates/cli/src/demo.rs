//! Two-device demo: handshake with a terminal fingerprint comparison, one
//! sync in each direction, a demo sub-key, and persisted repositories.

use std::io::{self, BufRead, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use wotnet_core::keystore::{generate_keypair, SoftwareKeystore};
use wotnet_core::model::{Algorithm, CryptoMode, Fingerprint, TrustConfig};
use wotnet_core::protocol::{
    answer_sync_stream, handshake_stream, request_sync_stream, FrameError, Node, ProtocolError,
};
use wotnet_core::trust::{load, persist, read_header, MergeItem, TrustRepository, HEADER_FILE};

pub const DEMO_APP: &str = "demo-app";
const KEYSTORE_FILE: &str = "device.key";
const REPO_DIR: &str = "repo";

/// Which end of the connection this device is. The connecting side pulls
/// first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Connect,
    Listen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoOutcome {
    pub peer: Fingerprint,
    pub merged_from_peer: usize,
    pub sent_bytes: u64,
}

pub fn repo_dir(home: &Path) -> PathBuf {
    home.join(REPO_DIR)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Opens (or creates) the device keystore under `home`, unlocks it and
/// loads the device's repository.
pub fn open_device(home: &Path, pin: &str, algorithm: Algorithm) -> Result<Node<SoftwareKeystore>> {
    std::fs::create_dir_all(home).with_context(|| format!("creating {}", home.display()))?;
    let path = home.join(KEYSTORE_FILE);
    let mut store = if path.exists() {
        SoftwareKeystore::open(&path)?
    } else {
        log::info!("creating {algorithm} device key in {}", path.display());
        SoftwareKeystore::create(&path, algorithm, pin, SoftwareKeystore::DEFAULT_ITERATIONS, None)?
    };
    store.unlock(pin).context("unlocking the keystore")?;
    let dir = repo_dir(home);
    let repo = if dir.join(HEADER_FILE).exists() {
        let header = read_header(&dir)?;
        let (repo, dropped) = load(&dir, header.config)?;
        if !dropped.is_empty() {
            eprintln!("warning: {} damaged repository files ignored", dropped.len());
        }
        repo
    } else {
        let config = TrustConfig {
            signaturealgorithm: store.algorithm(),
            ..TrustConfig::default()
        };
        TrustRepository::with_mode(wotnet_core::keystore::Signer::public_key(&store).clone(), config, CryptoMode::Real)
    };
    Ok(Node::with_repo(store, repo))
}

/// Certifies a fresh application sub-key unless the device already has one
/// for the demo app.
pub fn ensure_demo_subkey(node: &mut Node<SoftwareKeystore>) -> Result<()> {
    let own = node.fingerprint();
    let present = node
        .repo
        .record(&own)
        .is_some_and(|r| r.subkeys().any(|s| s.app_tag == DEMO_APP));
    if present {
        return Ok(());
    }
    let sub = generate_keypair(node.signer.algorithm(), None)?;
    let max = node.repo.config().maxsubkeys;
    let cert = node.signer.register_subkey(sub.public(), DEMO_APP, now(), max)?;
    node.sign_ops += 1;
    node.merge(vec![MergeItem::SubkeyCertificate(cert)]);
    Ok(())
}

/// Operator prompt for the fingerprint comparison.
pub fn ask_operator<R: BufRead, W: Write>(
    input: &mut R,
    output: &mut W,
    name: &str,
    local: &Fingerprint,
    received: &Fingerprint,
) -> bool {
    let _ = writeln!(output, "[{name}] this device:  {local}");
    let _ = writeln!(output, "[{name}] peer claims:  {received}");
    let _ = write!(output, "[{name}] does the other screen show the same peer fingerprint? [y/n] ");
    let _ = output.flush();
    let mut line = String::new();
    match input.read_line(&mut line) {
        Ok(n) if n > 0 => matches!(line.trim(), "y" | "Y" | "yes"),
        _ => false,
    }
}

fn stdin_operator(name: String) -> impl FnMut(&Fingerprint, &Fingerprint, &Fingerprint) -> bool {
    move |local, _presented, received| {
        let stdin = io::stdin();
        let mut lock = stdin.lock();
        ask_operator(&mut lock, &mut io::stdout(), &name, local, received)
    }
}

/// Runs one device's side of the demo over `stream` and persists its
/// repository afterwards.
pub fn run_side(
    node: &mut Node<SoftwareKeystore>,
    home: &Path,
    stream: &mut TcpStream,
    role: Role,
    name: &str,
) -> Result<DemoOutcome> {
    let mut oob = stdin_operator(name.to_string());
    let peer = match handshake_stream(node, stream, &mut oob, now()) {
        Ok(p) => p,
        Err(ProtocolError::OoBRejected) => bail!("fingerprint comparison rejected; nothing stored"),
        Err(ProtocolError::Frame(FrameError::Io(e))) if e.kind() == io::ErrorKind::UnexpectedEof => {
            bail!("peer hung up during the handshake (comparison rejected there?); nothing stored")
        }
        Err(e) => return Err(anyhow!(e).context("handshake failed; nothing stored")),
    };
    println!("[{name}] handshake complete with {peer}");
    let (merged, sent) = match role {
        Role::Connect => {
            let got = request_sync_stream(node, peer, stream)?;
            let sent = answer_sync_stream(node, peer, stream)?;
            (got.items_merged, sent + got.query_bytes)
        }
        Role::Listen => {
            let sent = answer_sync_stream(node, peer, stream)?;
            let got = request_sync_stream(node, peer, stream)?;
            (got.items_merged, sent + got.query_bytes)
        }
    };
    persist(&node.repo, repo_dir(home))?;
    let view = node.repo.evaluate();
    let peer_subkeys = node.repo.validated_subkeys(&view, &peer).len();
    println!(
        "[{name}] sync merged {merged} new items; peer is {} with {peer_subkeys} usable sub-key(s); repository saved to {}",
        view.level(&peer),
        repo_dir(home).display()
    );
    Ok(DemoOutcome {
        peer,
        merged_from_peer: merged,
        sent_bytes: sent,
    })
}

pub fn listen(home: &Path, pin: &str, algorithm: Algorithm, addr: &str) -> Result<DemoOutcome> {
    let mut node = open_device(home, pin, algorithm)?;
    ensure_demo_subkey(&mut node)?;
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    println!("listening on {}", listener.local_addr()?);
    let (mut stream, from) = listener.accept()?;
    println!("connection from {from}");
    run_side(&mut node, home, &mut stream, Role::Listen, "listen")
}

pub fn connect(home: &Path, pin: &str, algorithm: Algorithm, addr: &str) -> Result<DemoOutcome> {
    let mut node = open_device(home, pin, algorithm)?;
    ensure_demo_subkey(&mut node)?;
    let mut stream = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
    run_side(&mut node, home, &mut stream, Role::Connect, "connect")
}

/// Both devices in one process over a local TCP connection. Each operator
/// prompt reads one line from stdin.
pub fn loopback(home: &Path, peer_home: &Path, pin: &str, algorithm: Algorithm) -> Result<(DemoOutcome, DemoOutcome)> {
    let mut a = open_device(home, pin, algorithm)?;
    let mut b = open_device(peer_home, pin, algorithm)?;
    ensure_demo_subkey(&mut a)?;
    ensure_demo_subkey(&mut b)?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::scope(|s| {
        let server = s.spawn(move || -> Result<DemoOutcome> {
            let (mut stream, _) = listener.accept()?;
            run_side(&mut b, peer_home, &mut stream, Role::Listen, "peer")
        });
        let client = TcpStream::connect(addr)
            .map_err(anyhow::Error::from)
            .and_then(|mut stream| run_side(&mut a, home, &mut stream, Role::Connect, "device"));
        let server = server.join().map_err(|_| anyhow!("peer thread panicked"))?;
        match (client, server) {
            (Ok(c), Ok(s)) => Ok((c, s)),
            (Err(c), Err(s)) => bail!("device: {c:#}; peer: {s:#}"),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })
}
