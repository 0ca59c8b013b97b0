//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Args, Parser, Subcommand};

use crate::config::SimConfig;
use crate::engine::LinkKind;
use crate::metrics::{render_reports, write_files, MetricsBundle};
use crate::model::UserClass;
use crate::sim::{build_world, run_with, RunOptions};

const EXIT_FAILURE: i32 = 1;
const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vodsim", about = "Proxy-ring video-on-demand bandwidth simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single simulation.
    Run {
        #[command(flatten)]
        common: Common,
        /// Serve every miss from the central server.
        #[arg(long)]
        no_psg: bool,
    },
    /// Run the same seed with and without neighbour sharing.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the total arrival rate.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated total arrival rates, requests/s.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
        /// Replications per rate, seeds `seed..seed+seeds`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override `total_arrival_rate`.
    #[arg(long)]
    rate: Option<f64>,
    /// Override `horizon`.
    #[arg(long)]
    horizon: Option<f64>,
    /// Also write the catalog, placement dumps, agent log and link ledger.
    #[arg(long)]
    audit: bool,
}

impl Common {
    fn load(&self) -> Result<SimConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::from_file(path).map_err(|e| e.to_string())?,
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(rate) = self.rate {
            cfg.total_arrival_rate = rate;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn audit_files(cfg: &SimConfig, bundle: &MetricsBundle) -> Result<Vec<(String, String)>, String> {
    let world = build_world(cfg).map_err(|e| e.to_string())?;
    let mut files = vec![
        ("catalog.tsv".to_string(), world.catalog().to_text()),
        ("placement_start.txt".to_string(), bundle.placement_start.clone()),
        ("placement_end.txt".to_string(), bundle.placement_end.clone()),
        ("agent_audit.csv".to_string(), bundle.agent_audit.clone()),
    ];
    if let Some(ledger) = &bundle.ledger_csv {
        files.push(("ledger.csv".to_string(), ledger.clone()));
    }
    Ok(files)
}

fn write(out: &Path, files: &[(String, String)]) -> i32 {
    match write_files(out, files) {
        Ok(paths) => {
            println!("wrote {} files to {}", paths.len(), out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn cmd_run(common: &Common, cfg: SimConfig) -> i32 {
    let opts = RunOptions {
        keep_ledger: common.audit,
    };
    let bundle = match run_with(&cfg, opts) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let (psg, no_psg) = if cfg.psg_enabled {
        (Some(&bundle), None)
    } else {
        (None, Some(&bundle))
    };
    let mut files = render_reports(psg, no_psg).expect("one bundle present");
    if common.audit {
        match audit_files(&cfg, &bundle) {
            Ok(extra) => files.extend(extra),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        }
    }
    write(&common.out, &files)
}

fn cmd_compare(common: &Common, cfg: SimConfig) -> i32 {
    let opts = RunOptions {
        keep_ledger: common.audit,
    };
    let with = cfg.clone();
    let without = cfg.without_psg();
    let (a, b) = thread::scope(|s| {
        let h = s.spawn(|| run_with(&with, opts));
        let b = run_with(&without, opts);
        (h.join().expect("simulation thread panicked"), b)
    });
    let (psg, no_psg) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    println!(
        "rejected: psg={} no_psg={} (of {} requests)",
        psg.counters.rejected, no_psg.counters.rejected, psg.counters.requested
    );
    let mut files = render_reports(Some(&psg), Some(&no_psg)).expect("bundles present");
    if common.audit {
        match audit_files(&with, &psg) {
            Ok(extra) => files.extend(extra),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        }
    }
    write(&common.out, &files)
}

pub const SWEEP_HEADER: &str = "rate,seeds,requested,rejected,rejection_ratio,remote_rejection_ratio,\
mean_alloc_class1,mean_alloc_class2,mean_alloc_class3,util_ps_lps,util_ps_rps,util_ps_cms";

/// One row of sweep output: means over seeds.
pub fn sweep_row(rate: f64, bundles: &[MetricsBundle]) -> String {
    let n = bundles.len() as f64;
    let mean = |f: &dyn Fn(&MetricsBundle) -> f64| bundles.iter().map(f).sum::<f64>() / n;
    let mut row = format!(
        "{rate:.6},{},{:.6},{:.6},{:.6},{:.6}",
        bundles.len(),
        mean(&|b| b.counters.requested as f64),
        mean(&|b| b.counters.rejected as f64),
        mean(&|b| b.counters.rejection_ratio()),
        mean(&|b| b.counters.remote_rejection_ratio()),
    );
    for class in UserClass::ALL {
        let vals: Vec<f64> = bundles.iter().filter_map(|b| b.mean_alloc_per_stream_class(class)).collect();
        if vals.is_empty() {
            row.push(',');
        } else {
            let _ = write!(row, ",{:.6}", vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    for kind in LinkKind::ALL {
        let _ = write!(row, ",{:.6}", mean(&|b| b.time_avg_utilization[kind.index()]));
    }
    row
}

fn cmd_sweep(common: &Common, cfg: SimConfig, rates: &[f64], seeds: u64) -> i32 {
    if seeds == 0 || rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        eprintln!("error: --seeds must be positive and --rates non-negative");
        return EXIT_CONFIG;
    }
    let mut out = format!("{SWEEP_HEADER}\n");
    for &rate in rates {
        let configs: Vec<SimConfig> = (0..seeds)
            .map(|i| SimConfig {
                total_arrival_rate: rate,
                seed: cfg.seed.wrapping_add(i),
                ..cfg.clone()
            })
            .collect();
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .map(|c| s.spawn(move || crate::sim::run(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        });
        let mut bundles = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(b) => bundles.push(b),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            }
        }
        out.push_str(&sweep_row(rate, &bundles));
        out.push('\n');
        println!("rate {rate}: done ({seeds} seeds)");
    }
    write(&common.out, &[("sweep.csv".to_string(), out)])
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let common = match &cli.command {
        Command::Run { common, .. } | Command::Compare { common } | Command::Sweep { common, .. } => common,
    };
    let mut cfg = match common.load() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match &cli.command {
        Command::Run { no_psg, .. } => {
            if *no_psg {
                cfg.psg_enabled = false;
            }
            cmd_run(common, cfg)
        }
        Command::Compare { .. } => cmd_compare(common, cfg),
        Command::Sweep { rates, seeds, .. } => cmd_sweep(common, cfg, rates, *seeds),
    }
}
