//! The `sim` command: flag handling, single and batch runs.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, Context, Result};
use clap::Args;
use wotnet_core::model::{Algorithm, CryptoMode};
use wotnet_core::sim::{export_metrics, run, Calibration, MetricsLog, SimConfig};

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Scenario file (TOML, keys as in the configuration); flags override it.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Start from the scaled-down desk scenario instead of the full one.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Several seeds run in parallel, e.g. `1..5` or `1,3,7`.
    #[arg(long, value_parser = parse_seeds, conflicts_with = "seed")]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub numknown: Option<u32>,
    #[arg(long)]
    pub maxsubkeys: Option<u32>,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    #[arg(long)]
    pub crypto_mode: Option<CryptoMode>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Simulated seconds.
    #[arg(long)]
    pub duration: Option<u64>,
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub height: Option<f64>,
    #[arg(long)]
    pub sync_interval: Option<u64>,
    #[arg(long)]
    pub buffer_bytes: Option<u64>,
    /// Size calibration for size-model runs; measured on the spot if absent.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// CSV destination: a file, `-` for stdout, or a directory with `--seeds`.
    /// Defaults to a generated name under the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim(), b.trim().trim_start_matches('='));
        let range: RangeInclusive<u64> =
            a.parse().map_err(|_| format!("bad seed `{a}`"))?..=b.parse().map_err(|_| format!("bad seed `{b}`"))?;
        range.collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| format!("bad seed `{t}`")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(SeedList(seeds))
}

impl SimArgs {
    pub fn config(&self) -> Result<SimConfig> {
        let mut c = match &self.scenario {
            Some(p) => SimConfig::load(p)?,
            None if self.desk => SimConfig::desk(),
            None => SimConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            seed => seed,
            degree => trust.maxdegree,
            numknown => trust.numknown,
            maxsubkeys => trust.maxsubkeys,
            algo => trust.signaturealgorithm,
            crypto_mode => crypto_mode,
            nodes => num_nodes,
            duration => duration_s,
            width => width_m,
            height => height_m,
            sync_interval => sync_interval_s,
            buffer_bytes => buffer_bytes,
        );
        c.validate()?;
        Ok(c)
    }
}

pub fn default_name(c: &SimConfig) -> String {
    format!(
        "sim_{}_deg{}_n{}_seed{}.csv",
        c.trust.signaturealgorithm, c.trust.maxdegree, c.trust.numknown, c.seed
    )
}

pub fn summary(c: &SimConfig, log: &MetricsLog) -> String {
    let Some(s) = log.last() else {
        return format!("seed {}: no samples", c.seed);
    };
    let by_depth: Vec<String> = (2..=log.max_depth).map(|d| format!("d{d}={}", s.known_at(d))).collect();
    format!(
        "seed {} degree {} {}: direct {} known {} ({}) total {} relations; bytes handshake {} query {} response {} total {}",
        c.seed,
        c.trust.maxdegree,
        c.trust.signaturealgorithm,
        s.direct_relations,
        s.known_total(),
        by_depth.join(" "),
        s.total_relations(),
        s.handshake_bytes,
        s.sync_query_bytes,
        s.sync_response_bytes,
        s.total_bytes()
    )
}

fn calibration(args: &SimArgs, c: &SimConfig) -> Result<Option<Calibration>> {
    match (&args.calibration, c.crypto_mode) {
        (Some(p), _) => Ok(Some(
            Calibration::load(p).with_context(|| format!("calibration {}", p.display()))?,
        )),
        (None, CryptoMode::SizeModel) => {
            log::info!("no calibration file given, measuring sizes with real keys");
            Ok(Some(Calibration::measure()?))
        }
        (None, CryptoMode::Real) => Ok(None),
    }
}

/// Runs the configured simulation(s), writes CSV and prints one summary
/// line per run.
pub fn cmd_sim(args: &SimArgs, out_dir: &Path) -> Result<()> {
    let base = args.config()?;
    let cal = calibration(args, &base)?;
    match &args.seeds {
        None => {
            let log = run(&base, cal.as_ref())?;
            let line = summary(&base, &log);
            match args.out.as_deref() {
                Some(p) if p == Path::new("-") => {
                    print!("{}", log.to_csv());
                    eprintln!("{line}");
                }
                other => {
                    let path = other.map_or_else(|| out_dir.join(default_name(&base)), Path::to_path_buf);
                    write_csv(&log, &path)?;
                    println!("{line}");
                    println!("wrote {}", path.display());
                }
            }
        }
        Some(SeedList(seeds)) => {
            let dir = args.out.clone().unwrap_or_else(|| out_dir.to_path_buf());
            if dir == Path::new("-") {
                bail!("--out - is not available with --seeds");
            }
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let configs: Vec<SimConfig> = seeds.iter().map(|&seed| SimConfig { seed, ..base.clone() }).collect();
            let results: Vec<Result<MetricsLog>> = thread::scope(|s| {
                let handles: Vec<_> = configs
                    .iter()
                    .map(|c| s.spawn(|| run(c, cal.as_ref()).map_err(anyhow::Error::from)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("simulation worker panicked")).collect()
            });
            for (c, log) in configs.iter().zip(results) {
                let log = log?;
                let path = dir.join(default_name(c));
                write_csv(&log, &path)?;
                println!("{}", summary(c, &log));
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn write_csv(log: &MetricsLog, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    export_metrics(log, path).with_context(|| format!("writing {}", path.display()))
}
