use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{error::ErrorKind, Parser, Subcommand};
use wotnet_cli::{bench, default_out_dir, demo, repo, sim};
use wotnet_core::model::Algorithm;
use wotnet_core::sim::Calibration;

/// Device-to-device web of trust: simulator, benchmark and tools.
///
/// Generated files go to $WOTNET_OUT_DIR (default: current directory)
/// unless a path is given. Results are printed to stdout, diagnostics to
/// stderr; set RUST_LOG for more detail. Exit status: 0 success, 1 usage
/// error, 2 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "wotnet", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the mobility simulation and write its metrics as CSV.
    Sim(sim::SimArgs),
    /// Time key generation, signing and verification.
    Bench {
        /// Only this algorithm (default: both).
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long, default_value_t = bench::DEFAULT_REPS)]
        reps: usize,
        /// Also write the results as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Inspect a persisted repository.
    Repo {
        #[command(subcommand)]
        action: RepoCmd,
    },
    /// Measure key and signature sizes for size-model simulations.
    Calibrate {
        /// Destination, `-` for stdout (default: calibration.toml in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Handshake and sync between two devices over TCP.
    Demo(DemoArgs),
}

#[derive(Debug, Subcommand)]
enum RepoCmd {
    /// List subjects with trust level, depth, issuers and sub-keys.
    Show { dir: PathBuf },
    /// Re-check every stored signature.
    Verify { dir: PathBuf },
}

#[derive(Debug, clap::Args)]
struct DemoArgs {
    /// Wait for the peer on this address, e.g. 0.0.0.0:7878.
    #[arg(long, group = "mode")]
    listen: Option<String>,
    /// Connect to a listening peer.
    #[arg(long, group = "mode")]
    connect: Option<String>,
    /// Run both devices in this process.
    #[arg(long, group = "mode")]
    loopback: bool,
    /// Device directory holding the keystore and repository
    /// (default: device/ in the output directory).
    #[arg(long)]
    home: Option<PathBuf>,
    /// Second device directory for --loopback (default: peer/).
    #[arg(long)]
    peer_home: Option<PathBuf>,
    /// Keystore PIN.
    #[arg(long, env = "WOTNET_PIN", hide_env_values = true)]
    pin: String,
    /// Algorithm for newly created device keys.
    #[arg(long, default_value = "ecdsa-p256")]
    algo: Algorithm,
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out_dir = default_out_dir();
    match cli.cmd {
        Cmd::Sim(args) => sim::cmd_sim(&args, &out_dir)?,
        Cmd::Bench { algo, reps, csv } => {
            let algos = algo.map_or_else(|| vec![Algorithm::EcdsaP256, Algorithm::Rsa2048], |a| vec![a]);
            let mut reports = Vec::new();
            for a in algos {
                let r = bench::run_bench(a, reps, 1)?;
                if r.false_results > 0 {
                    bail!("{a}: {} wrong verification results", r.false_results);
                }
                reports.push(r);
            }
            print!("{}", bench::table(&reports));
            if let Some(path) = csv {
                std::fs::write(&path, bench::to_csv(&reports))?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Repo { action } => match action {
            RepoCmd::Show { dir } => print!("{}", repo::show(&dir)?),
            RepoCmd::Verify { dir } => {
                let (report, failed) = repo::verify(&dir)?;
                print!("{report}");
                if !failed.is_empty() {
                    eprintln!("{} file(s) failed verification", failed.len());
                    return Ok(ExitCode::from(2));
                }
            }
        },
        Cmd::Calibrate { out } => {
            let path = out.unwrap_or_else(|| out_dir.join("calibration.toml"));
            let cal = Calibration::measure()?;
            if path.as_os_str() == "-" {
                print!("{}", cal.to_toml());
            } else {
                cal.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Demo(d) => {
            let home = d.home.unwrap_or_else(|| out_dir.join("device"));
            match (d.listen, d.connect, d.loopback) {
                (Some(addr), None, false) => {
                    demo::listen(&home, &d.pin, d.algo, &addr)?;
                }
                (None, Some(addr), false) => {
                    demo::connect(&home, &d.pin, d.algo, &addr)?;
                }
                (None, None, true) => {
                    let peer = d.peer_home.unwrap_or_else(|| out_dir.join("peer"));
                    demo::loopback(&home, &peer, &d.pin, d.algo)?;
                }
                _ => {
                    eprintln!("error: choose one of --listen, --connect or --loopback");
                    return Ok(ExitCode::from(1));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
