use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use resiscan::campaign::{self, CampaignConfig, Overrides};
use resiscan::simnet::ScenarioParams;

/// Residential IPv6 LAN-exposure scanner.
#[derive(Parser)]
#[command(name = "resiscan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Campaign config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `rate_pps`.
    #[arg(long)]
    rate: Option<u32>,
    /// Override the transport: `sim` or `live`.
    #[arg(long)]
    transport: Option<String>,
    /// Override `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<CampaignConfig> {
        let o = Overrides {
            seed: self.seed,
            rate: self.rate,
            transport: self.transport.clone(),
            out: self.out.clone(),
        };
        CampaignConfig::load(&self.config, &o).with_context(|| format!("loading {}", self.config.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Keep residential /48s; writes seeds.txt and seed_provenance.csv.
    SeedFilter(Common),
    /// Compute the probe plan; writes plan.csv.
    Plan(Common),
    /// Send echo probes; writes responses.csv.
    Scan(Common),
    /// Label responses; writes classified.csv and aliased.csv.
    Classify(Common),
    /// Application-layer grabs; writes grabs.jsonl.
    Grab(Common),
    /// Device fingerprints; writes fingerprints.csv and hp_printers.csv.
    Fingerprint(Common),
    /// Aggregate statistics into report/.
    Report(Common),
    /// Every stage in order.
    Run(Common),
    /// Generate a simulated scenario with fixtures and a campaign.toml.
    SimnetGen {
        /// Directory to write into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Generator parameters (JSON); defaults when absent.
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn budget_line(b: u64) {
    println!("probe budget: {b} targets");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SeedFilter(c) => {
            let cfg = c.load()?;
            let result = campaign::seed_filter(&cfg);
            let prov = std::fs::read_to_string(cfg.out(campaign::files::SEED_PROVENANCE)).unwrap_or_default();
            for line in prov.lines().skip(1) {
                println!("{}", line.replace(',', ": "));
            }
            let kept = result?;
            println!("kept {} residential /48s", kept.len());
        }
        Command::Plan(c) => {
            let plan = campaign::plan(&c.load()?)?;
            budget_line(plan.budget());
        }
        Command::Scan(c) => {
            let stats = campaign::scan(&c.load()?, &mut budget_line)?;
            println!("sent {} probes, {} inbound, {} spurious", stats.sent, stats.received, stats.spurious);
        }
        Command::Classify(c) => {
            let cls = campaign::classify(&c.load()?)?;
            println!(
                "{} internal, {} external, {} aliased /56s",
                cls.internal().count(),
                cls.external().count(),
                cls.aliased.len()
            );
        }
        Command::Grab(c) => {
            let recs = campaign::grab(&c.load()?)?;
            let ok = recs.iter().filter(|r| r.outcome.is_responded()).count();
            println!("{} grabs, {ok} responded", recs.len());
        }
        Command::Fingerprint(c) => {
            let (hits, printers) = campaign::fingerprint(&c.load()?)?;
            println!("{} fingerprint hits, {} HP printers", hits.len(), printers.len());
        }
        Command::Report(c) => {
            let cfg = c.load()?;
            campaign::report(&cfg)?;
            println!("report written to {}", cfg.out(campaign::files::REPORT_DIR).display());
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let b = campaign::run_all(&cfg, &mut budget_line)?;
            println!(
                "{} internal, {} external addresses; report in {}",
                b.summary.internal_addresses,
                b.summary.external_addresses,
                cfg.out(campaign::files::REPORT_DIR).display()
            );
        }
        Command::SimnetGen { out, seed, params } => {
            let p = match params {
                Some(path) => campaign::load_params(&path)?,
                None => ScenarioParams::default(),
            };
            let s = campaign::simnet_gen(&p, seed, &out)?;
            println!("{} /48s written to {}", s.nets.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
