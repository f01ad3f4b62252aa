//! File-to-file pipeline stages driven by one campaign config.
//!
//! Every stage reads the files earlier stages wrote into `output_dir` and
//! writes its own, so a campaign can be resumed or rerun one step at a time.

use std::fs;
use std::io;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify_log, Classification};
use crate::fingerprint::{fingerprint_all, format_hits, format_printers, parse_hits, FingerprintHit, HpPrinterRecord, OuiDb};
use crate::grab::config::{default_services, parse_services, ServiceSpec};
use crate::grab::connector::Connector;
use crate::grab::{self, CampaignOptions, GrabRecord, SystemConnector};
use crate::net::Prefix48;
use crate::probe::{self, RateLimit, ScanConfig, ScanKey, ScanStats, Transport};
use crate::report::{self, AggregateInput, AsnGeoMap, ReportBundle};
use crate::seedprep::{filter_seeds, parse_prefix_list, AsMap, ConnMap, SeedSet};
use crate::simnet::{generate_scenario, Fixtures, Scenario, ScenarioParams, SimNetwork};
use crate::targetgen::{build_plan, ScanPlan};

/// Names of the files each stage writes under `output_dir`.
pub mod files {
    pub const SEEDS: &str = "seeds.txt";
    pub const SEED_PROVENANCE: &str = "seed_provenance.csv";
    pub const PLAN: &str = "plan.csv";
    pub const RESPONSES: &str = "responses.csv";
    pub const CLASSIFIED: &str = "classified.csv";
    pub const ALIASED: &str = "aliased.csv";
    pub const GRABS: &str = "grabs.jsonl";
    pub const FINGERPRINTS: &str = "fingerprints.csv";
    pub const PRINTERS: &str = "hp_printers.csv";
    pub const REPORT_DIR: &str = "report";
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("{what} file {path} does not exist")]
    MissingInput { what: &'static str, path: PathBuf },
    #[error("{path} not found; run the `{stage}` stage first")]
    MissingStage { stage: &'static str, path: PathBuf },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("live scanning requires `contact_url` so probed networks can reach the operator")]
    LiveWithoutContact,
    #[error("live transport not compiled in; rebuild with `--features live`")]
    LiveUnavailable,
    #[error("residential filter left no seeds")]
    EmptySeeds,
    #[error("scan aborted after partial send: {0}")]
    ScanAborted(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CampaignError + '_ {
    move |e| CampaignError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransportConfig {
    Sim { scenario: PathBuf },
    Live,
}

fn default_rate() -> u32 {
    10_000
}
fn default_quiescence() -> u64 {
    probe::DEFAULT_QUIESCENCE.as_millis() as u64
}
fn default_timeout() -> u64 {
    grab::DEFAULT_TIMEOUT.as_millis() as u64
}
fn default_parallelism() -> usize {
    grab::DEFAULT_PARALLELISM
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed_list: PathBuf,
    pub as_map: PathBuf,
    pub conn_map: PathBuf,
    pub oui_db: PathBuf,
    pub asn_geo: PathBuf,
    /// Service table; the built-in list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub services: Option<PathBuf>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_rate")]
    pub rate_pps: u32,
    #[serde(default = "default_quiescence")]
    pub quiescence_ms: u64,
    #[serde(default = "default_timeout")]
    pub grab_timeout_ms: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_url: Option<String>,
    pub transport: TransportConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rate: Option<u32>,
    /// `"sim"` or `"live"`.
    pub transport: Option<String>,
    pub out: Option<PathBuf>,
}

impl CampaignConfig {
    /// Parse `text`, resolving relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CampaignError> {
        let mut c: CampaignConfig = toml::from_str(text).map_err(|e| CampaignError::Config {
            path: base.to_path_buf(),
            reason: e.to_string(),
        })?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut c.seed_list, &mut c.as_map, &mut c.conn_map, &mut c.oui_db, &mut c.asn_geo, &mut c.output_dir] {
            abs(p);
        }
        if let Some(p) = c.services.as_mut() {
            abs(p);
        }
        if let TransportConfig::Sim { scenario } = &mut c.transport {
            abs(scenario);
        }
        Ok(c)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut c = Self::from_toml(&text, base)?;
        c.apply(overrides, path)?;
        c.validate()?;
        Ok(c)
    }

    fn apply(&mut self, o: &Overrides, path: &Path) -> Result<(), CampaignError> {
        if let Some(s) = o.seed {
            self.rng_seed = s;
        }
        if let Some(r) = o.rate {
            self.rate_pps = r;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        match o.transport.as_deref() {
            None => {}
            Some("live") => self.transport = TransportConfig::Live,
            Some("sim") if matches!(self.transport, TransportConfig::Sim { .. }) => {}
            Some("sim") => {
                return Err(CampaignError::Config {
                    path: path.to_path_buf(),
                    reason: "`--transport sim` needs a `[transport] scenario` in the config".into(),
                })
            }
            Some(other) => {
                return Err(CampaignError::Config {
                    path: path.to_path_buf(),
                    reason: format!("unknown transport {other:?}; expected sim or live"),
                })
            }
        }
        Ok(())
    }

    /// Live needs a contact URL and every referenced input must exist.
    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.transport == TransportConfig::Live && self.contact_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(CampaignError::LiveWithoutContact);
        }
        let mut inputs = vec![
            ("seed list", &self.seed_list),
            ("AS map", &self.as_map),
            ("connection-type map", &self.conn_map),
            ("OUI database", &self.oui_db),
            ("ASN/geo map", &self.asn_geo),
        ];
        if let Some(s) = &self.services {
            inputs.push(("service config", s));
        }
        if let TransportConfig::Sim { scenario } = &self.transport {
            inputs.push(("scenario", scenario));
        }
        for (what, p) in inputs {
            if !p.is_file() {
                return Err(CampaignError::MissingInput { what, path: p.clone() });
            }
        }
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn scan_key(&self) -> ScanKey {
        ScanKey(ChaCha20Rng::seed_from_u64(self.rng_seed).next_u64())
    }

    fn services(&self) -> Result<Vec<ServiceSpec>, CampaignError> {
        match &self.services {
            None => Ok(default_services()),
            Some(p) => parse_services(&read(p)?).map_err(parse_err(p)),
        }
    }

    fn sim(&self) -> Result<Option<SimNetwork>, CampaignError> {
        match &self.transport {
            TransportConfig::Live => Ok(None),
            TransportConfig::Sim { scenario } => {
                let s = Scenario::from_json(&read(scenario)?).map_err(parse_err(scenario))?;
                SimNetwork::new(s).map(Some).map_err(parse_err(scenario))
            }
        }
    }
}

fn read(p: &Path) -> Result<String, CampaignError> {
    fs::read_to_string(p).map_err(io_err(p))
}

fn write(p: &Path, body: &str) -> Result<(), CampaignError> {
    if let Some(dir) = p.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(p, body).map_err(io_err(p))
}

fn stage_input(c: &CampaignConfig, name: &str, stage: &'static str) -> Result<(PathBuf, String), CampaignError> {
    let p = c.out(name);
    if !p.is_file() {
        return Err(CampaignError::MissingStage { stage, path: p });
    }
    let text = read(&p)?;
    Ok((p, text))
}

fn load_seeds(c: &CampaignConfig) -> Result<SeedSet, CampaignError> {
    let (p, text) = stage_input(c, files::SEEDS, "seed-filter")?;
    parse_prefix_list(&text).map_err(parse_err(&p))
}

fn load_plan(c: &CampaignConfig) -> Result<ScanPlan, CampaignError> {
    let seeds = load_seeds(c)?;
    build_plan(&seeds, c.rng_seed).map_err(|e| CampaignError::Parse {
        path: c.out(files::SEEDS),
        reason: e.to_string(),
    })
}

/// Residential filter. Writes the kept seeds and per-stage counts; an empty
/// result is written and then reported as [`CampaignError::EmptySeeds`].
pub fn seed_filter(c: &CampaignConfig) -> Result<SeedSet, CampaignError> {
    let seeds = parse_prefix_list(&read(&c.seed_list)?).map_err(parse_err(&c.seed_list))?;
    let asmap = AsMap::parse(&read(&c.as_map)?).map_err(parse_err(&c.as_map))?;
    let connmap = ConnMap::parse(&read(&c.conn_map)?).map_err(parse_err(&c.conn_map))?;
    let kept = filter_seeds(&seeds, &asmap, &connmap);
    write(&c.out(files::SEEDS), &kept.to_text())?;
    let p = &kept.provenance;
    let mut prov = format!(
        "stage,prefixes\nlines,{}\nduplicates,{}\ntruncated,{}\n",
        p.lines, p.duplicates, p.truncated
    );
    for (stage, n) in &p.stages {
        prov.push_str(&format!("{stage},{n}\n"));
    }
    write(&c.out(files::SEED_PROVENANCE), &prov)?;
    if kept.is_empty() {
        return Err(CampaignError::EmptySeeds);
    }
    Ok(kept)
}

/// Build the plan from the filtered seeds and record its parameters.
pub fn plan(c: &CampaignConfig) -> Result<ScanPlan, CampaignError> {
    let plan = load_plan(c)?;
    let body = format!(
        "metric,value\nseeds,{}\nrng_seed,{}\nbudget,{}\n",
        plan.seeds().len(),
        plan.rng_seed(),
        plan.budget()
    );
    write(&c.out(files::PLAN), &body)?;
    Ok(plan)
}

/// Probe every plan target. `on_budget` sees the probe count before the
/// first packet leaves.
pub fn scan(c: &CampaignConfig, on_budget: &mut dyn FnMut(u64)) -> Result<ScanStats, CampaignError> {
    c.validate()?;
    let plan = load_plan(c)?;
    let rate = RateLimit::new(c.rate_pps).ok_or_else(|| CampaignError::Config {
        path: c.output_dir.clone(),
        reason: "rate_pps must be positive".into(),
    })?;
    let mut cfg = ScanConfig::new(rate, c.scan_key());
    cfg.quiescence = Duration::from_millis(c.quiescence_ms);

    let transport: Box<dyn Transport> = match c.sim()? {
        Some(net) => Box::new(net.transport()),
        None => live_transport(c)?,
    };
    on_budget(plan.budget());
    let mut outcome = probe::run_scan(&plan, transport.as_ref(), &cfg);
    outcome.records.sort();
    write(&c.out(files::RESPONSES), &probe::format_log(&outcome.records))?;
    info!(
        "sent {} probes, kept {} responses, dropped {} spurious",
        outcome.stats.sent,
        outcome.records.len(),
        outcome.stats.spurious
    );
    match outcome.stats.aborted {
        Some(reason) => Err(CampaignError::ScanAborted(reason)),
        None => Ok(outcome.stats),
    }
}

#[cfg(feature = "live")]
fn live_transport(c: &CampaignConfig) -> Result<Box<dyn Transport>, CampaignError> {
    info!("live scan; operator contact: {}", c.contact_url.as_deref().unwrap_or_default());
    probe::live::RawIcmpv6Transport::open()
        .map(|t| Box::new(t) as Box<dyn Transport>)
        .map_err(|e| CampaignError::Io {
            path: PathBuf::from("raw ICMPv6 socket"),
            source: e,
        })
}

#[cfg(not(feature = "live"))]
fn live_transport(_: &CampaignConfig) -> Result<Box<dyn Transport>, CampaignError> {
    Err(CampaignError::LiveUnavailable)
}

/// Label responses as internal or external per /56.
pub fn classify(c: &CampaignConfig) -> Result<Classification, CampaignError> {
    let plan = load_plan(c)?;
    let (p, text) = stage_input(c, files::RESPONSES, "scan")?;
    let log = probe::parse_log(&text).map_err(parse_err(&p))?;
    let cls = classify_log(&log, &|a| plan.contains(a));
    write(&c.out(files::CLASSIFIED), &cls.to_text())?;
    let mut aliased = String::from("prefix56,status\n");
    for n in &cls.aliased {
        aliased.push_str(&format!("{n},aliased\n"));
    }
    for n in &cls.alias_undetermined {
        aliased.push_str(&format!("{n},undetermined\n"));
    }
    write(&c.out(files::ALIASED), &aliased)?;
    if !cls.anomalous.is_empty() {
        warn!("{} responses matched neither taxonomy class", cls.anomalous.len());
    }
    Ok(cls)
}

fn load_classified(c: &CampaignConfig) -> Result<Classification, CampaignError> {
    let (p, text) = stage_input(c, files::CLASSIFIED, "classify")?;
    Classification::parse(&text).map_err(|(line, reason)| CampaignError::Parse {
        path: p,
        reason: format!("line {line}: {reason}"),
    })
}

/// Internal and external addresses, deduplicated, as grab targets.
pub fn grab_targets(cls: &Classification) -> Vec<IpAddr> {
    let mut t: Vec<IpAddr> = cls
        .internal()
        .chain(cls.external())
        .map(|a| IpAddr::V6(a.address))
        .collect();
    t.sort_unstable();
    t.dedup();
    t
}

pub fn grab(c: &CampaignConfig) -> Result<Vec<GrabRecord>, CampaignError> {
    c.validate()?;
    let cls = load_classified(c)?;
    let services = c.services()?;
    let targets = grab_targets(&cls);
    let opts = CampaignOptions {
        parallelism: c.parallelism.max(1),
        timeout: Duration::from_millis(c.grab_timeout_ms),
        ..Default::default()
    };
    let sim = c.sim()?;
    let connector: Box<dyn Connector> = match &sim {
        Some(net) => Box::new(net.connector()),
        None if cfg!(feature = "live") => Box::new(SystemConnector),
        None => return Err(CampaignError::LiveUnavailable),
    };
    info!("grabbing {} services on {} addresses", services.len(), targets.len());
    let records = grab::run_grab_campaign(connector.as_ref(), &targets, &services, &opts);
    write(&c.out(files::GRABS), &grab::format_log(&records))?;
    Ok(records)
}

fn load_grabs(c: &CampaignConfig) -> Result<Vec<GrabRecord>, CampaignError> {
    let (p, text) = stage_input(c, files::GRABS, "grab")?;
    grab::parse_log(&text).map_err(parse_err(&p))
}

pub fn fingerprint(c: &CampaignConfig) -> Result<(Vec<FingerprintHit>, Vec<HpPrinterRecord>), CampaignError> {
    let grabs = load_grabs(c)?;
    let (hits, printers) = fingerprint_all(&grabs, &[]);
    write(&c.out(files::FINGERPRINTS), &format_hits(&hits))?;
    write(&c.out(files::PRINTERS), &format_printers(&printers))?;
    Ok((hits, printers))
}

pub fn report(c: &CampaignConfig) -> Result<ReportBundle, CampaignError> {
    let probed: Vec<Prefix48> = load_seeds(c)?.prefixes().to_vec();
    let cls = load_classified(c)?;
    let grabs = load_grabs(c)?;
    let (p, text) = stage_input(c, files::FINGERPRINTS, "fingerprint")?;
    let hits = parse_hits(&text).map_err(parse_err(&p))?;
    let geo = AsnGeoMap::parse(&read(&c.asn_geo)?).map_err(parse_err(&c.asn_geo))?;
    let oui = OuiDb::parse(&read(&c.oui_db)?).map_err(parse_err(&c.oui_db))?;
    let services = c.services()?;
    let bundle = report::aggregate(&AggregateInput {
        classified: &cls.addresses,
        grabs: &grabs,
        hits: &hits,
        geo: &geo,
        oui: &oui,
        probed: &probed,
        services: &services,
    });
    let dir = c.out(files::REPORT_DIR);
    report::emit(&bundle, &dir).map_err(io_err(&dir))?;
    Ok(bundle)
}

/// Every stage in order.
pub fn run_all(c: &CampaignConfig, on_budget: &mut dyn FnMut(u64)) -> Result<ReportBundle, CampaignError> {
    seed_filter(c)?;
    plan(c)?;
    scan(c, on_budget)?;
    classify(c)?;
    grab(c)?;
    fingerprint(c)?;
    report(c)
}

/// Write a generated scenario, its dataset fixtures and a ready-to-run
/// `campaign.toml` into `dir`.
pub fn simnet_gen(params: &ScenarioParams, seed: u64, dir: &Path) -> Result<Scenario, CampaignError> {
    let scenario = generate_scenario(params, seed).map_err(|e| CampaignError::Config {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_sim_campaign(&scenario, seed, dir)?;
    Ok(scenario)
}

/// Fixtures and config for an existing scenario.
pub fn write_sim_campaign(scenario: &Scenario, seed: u64, dir: &Path) -> Result<CampaignConfig, CampaignError> {
    let fx = Fixtures::for_scenario(scenario);
    write(&dir.join("scenario.json"), &scenario.to_json())?;
    write(&dir.join("seeds.txt"), &fx.seeds)?;
    write(&dir.join("as_map.csv"), &fx.as_map)?;
    write(&dir.join("conn_map.csv"), &fx.conn_map)?;
    write(&dir.join("asn_geo.csv"), &fx.asn_geo)?;
    write(&dir.join("oui.csv"), &fx.oui)?;
    let cfg = CampaignConfig {
        seed_list: "seeds.txt".into(),
        as_map: "as_map.csv".into(),
        conn_map: "conn_map.csv".into(),
        oui_db: "oui.csv".into(),
        asn_geo: "asn_geo.csv".into(),
        services: None,
        rng_seed: seed,
        rate_pps: 1_000_000,
        quiescence_ms: 200,
        grab_timeout_ms: default_timeout(),
        parallelism: default_parallelism(),
        output_dir: "out".into(),
        contact_url: None,
        transport: TransportConfig::Sim {
            scenario: "scenario.json".into(),
        },
    };
    let text = toml::to_string(&cfg).expect("campaign config serialises");
    write(&dir.join("campaign.toml"), &text)?;
    CampaignConfig::from_toml(&text, dir)
}

/// Scenario generator parameters from a JSON file; missing fields take defaults.
pub fn load_params(path: &Path) -> Result<ScenarioParams, CampaignError> {
    serde_json::from_str(&read(path)?).map_err(parse_err(path))
}
