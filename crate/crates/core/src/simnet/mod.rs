//! Deterministic simulated residential Internet.
//!
//! A [`Scenario`] describes /48 networks, their delegated /56s, each /56's
//! CPE (WAN address, firewall posture, distance) and the LAN hosts behind it.
//! [`SimNetwork`] turns a scenario into an in-process ICMPv6 [`Transport`]
//! and an application-layer [`Connector`], both answering from the same
//! world model, and [`GroundTruth`] derives what a correct pipeline must find.
//!
//! [`Transport`]: crate::probe::Transport
//! [`Connector`]: crate::grab::connector::Connector

mod fixtures;
mod generate;
mod services;
mod transport;
mod truth;

use std::collections::{HashMap, HashSet};
use std::net::{Ipv4Addr, Ipv6Addr};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::MacAddr;
use crate::grab::config::L4;
use crate::net::{Prefix48, Prefix56};

pub use fixtures::{Fixtures, DECOY_SEEDS};
pub use generate::{generate_scenario, ParamsError, ScenarioParams, ServiceMix, OUI_CATALOGUE};
pub use services::{SimConnector, Transcript};
pub use transport::SimTransport;
pub use truth::GroundTruth;

pub const HOP_LIMIT_PROFILES: [u8; 3] = [64, 128, 255];
/// Largest total path length; keeps every received hop limit on its plateau.
pub const MAX_DISTANCE: u16 = 63;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub rng_seed: u64,
    pub nets: Vec<SimNet48>,
    /// IPv4 endpoints, for address-family checks of the grabbers.
    #[serde(default)]
    pub v4_hosts: Vec<SimV4Host>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNet48 {
    pub prefix48: Prefix48,
    pub asn: u32,
    pub as_name: String,
    pub country: String,
    /// ISP block holding the CPE WAN addresses; the WAN /64 of subnet `i`
    /// is the `i`-th /56 of this block.
    pub wan_block: Prefix48,
    pub subnets: Vec<SimNet56>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNet56 {
    /// Byte 7 of the /56 within its /48.
    pub index: u8,
    #[serde(default)]
    pub aliased: bool,
    /// What an aliased subnet answers on every TCP port, if anything.
    #[serde(default)]
    pub alias_stub: Option<Behavior>,
    pub cpe: Cpe,
    #[serde(default)]
    pub hosts: Vec<SimHost>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WanAddressMode {
    Eui64 { mac: MacAddr },
    RandomIid { iid: u64 },
    LowIid { n: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Firewall {
    DefaultDeny,
    DefaultAllow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cpe {
    pub wan_address_mode: WanAddressMode,
    pub firewall: Firewall,
    /// Hops from the scanner to the CPE.
    pub base_distance: u8,
    #[serde(default = "default_hop_limit")]
    pub initial_hop_limit: u8,
    /// Services on the WAN address, reachable regardless of LAN firewall.
    #[serde(default)]
    pub services: Vec<SimService>,
}

fn default_hop_limit() -> u8 {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IidMode {
    /// DHCPv6-assigned `::n` with selector 0.
    DhcpLow { n: u8 },
    SlaacRandom { selector: u8, iid: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimHost {
    pub iid_mode: IidMode,
    /// Hops between the CPE and this host; 0 is the CPE's own LAN interface.
    #[serde(default)]
    pub extra_hops: u8,
    #[serde(default = "default_hop_limit")]
    pub initial_hop_limit: u8,
    #[serde(default)]
    pub services: Vec<SimService>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimV4Host {
    pub address: Ipv4Addr,
    pub services: Vec<SimService>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimService {
    pub port: u16,
    #[serde(default)]
    pub transport: L4,
    pub behavior: Behavior,
}

/// What a simulated service does when contacted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    HpHttp {
        model: String,
        serial: String,
        #[serde(default)]
        build_date: Option<String>,
        #[serde(default)]
        build: Option<String>,
    },
    DahuaHtml,
    NanoleafHtml,
    Http {
        status: u16,
        #[serde(default)]
        server: Option<String>,
        #[serde(default)]
        body: String,
    },
    /// TLS with a self-signed certificate for `cn`, then `inner` inside it.
    /// Plaintext clients get a fatal alert.
    Tls { cn: String, inner: Box<Behavior> },
    MqttBroker { return_code: u8 },
    /// Accepts the TCP connection and closes it immediately.
    MqttClose,
    LockdownServer {
        #[serde(default)]
        version: Option<String>,
    },
    /// Answers with a frame header declaring `declared_length` bytes.
    LockdownHostile { declared_length: u32 },
    Telnet {
        #[serde(default = "default_prompt")]
        prompt: String,
    },
    /// Volunteers `text` on connect (FTP/SMTP/POP3/IMAP/SSH greetings, opaque banners).
    Banner { text: String },
    NtpServer { stratum: u8 },
}

fn default_prompt() -> String {
    "login: ".into()
}

impl Behavior {
    /// Whether a correct grabber ends this exchange with `responded`.
    pub fn well_behaved(&self) -> bool {
        match self {
            Behavior::MqttClose | Behavior::LockdownHostile { .. } => false,
            Behavior::Tls { inner, .. } => inner.well_behaved(),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario JSON: {0}")]
    Json(String),
    #[error("duplicate /48 {0}")]
    DuplicateNet(Prefix48),
    #[error("WAN block {0} overlaps a seed /48 or another WAN block")]
    WanOverlap(Prefix48),
    #[error("duplicate subnet index {index} in {net}")]
    DuplicateSubnet { net: Prefix48, index: u8 },
    #[error("{net}: base_distance must be at least 1")]
    ZeroDistance { net: Prefix56 },
    #[error("{net}: initial hop limit {value} is not one of 64, 128, 255")]
    HopLimitProfile { net: Prefix56, value: u8 },
    #[error("{net}: path length {distance} exceeds {MAX_DISTANCE}")]
    TooFar { net: Prefix56, distance: u16 },
    #[error("{net}: DHCP index {n} outside 1..=10")]
    DhcpRange { net: Prefix56, n: u8 },
    #[error("duplicate host address {0}")]
    DuplicateHost(Ipv6Addr),
    #[error("AS{0} declared with inconsistent name or country")]
    AsConflict(u32),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("scenarios always serialise");
        out.push('\n');
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let seeds: HashSet<Prefix48> = self.nets.iter().map(|n| n.prefix48).collect();
        let mut nets = HashSet::new();
        let mut wans = HashSet::new();
        let mut hosts = HashSet::new();
        let mut ases: HashMap<u32, (&str, &str)> = HashMap::new();
        for net in &self.nets {
            if !nets.insert(net.prefix48) {
                return Err(ScenarioError::DuplicateNet(net.prefix48));
            }
            if seeds.contains(&net.wan_block) || !wans.insert(net.wan_block) {
                return Err(ScenarioError::WanOverlap(net.wan_block));
            }
            let declared = ases.entry(net.asn).or_insert((&net.as_name, &net.country));
            if *declared != (net.as_name.as_str(), net.country.as_str()) {
                return Err(ScenarioError::AsConflict(net.asn));
            }
            let mut indices = HashSet::new();
            for sub in &net.subnets {
                let p56 = net.prefix48.subnet(sub.index);
                if !indices.insert(sub.index) {
                    return Err(ScenarioError::DuplicateSubnet {
                        net: net.prefix48,
                        index: sub.index,
                    });
                }
                let cpe = &sub.cpe;
                if cpe.base_distance == 0 {
                    return Err(ScenarioError::ZeroDistance { net: p56 });
                }
                check_profile(p56, cpe.initial_hop_limit)?;
                for h in &sub.hosts {
                    check_profile(p56, h.initial_hop_limit)?;
                    let distance = cpe.base_distance as u16 + h.extra_hops as u16;
                    if distance > MAX_DISTANCE {
                        return Err(ScenarioError::TooFar { net: p56, distance });
                    }
                    if let IidMode::DhcpLow { n } = h.iid_mode {
                        if !(1..=10).contains(&n) {
                            return Err(ScenarioError::DhcpRange { net: p56, n });
                        }
                    }
                    let addr = host_address(p56, h);
                    if !hosts.insert(addr) {
                        return Err(ScenarioError::DuplicateHost(addr));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_profile(net: Prefix56, value: u8) -> Result<(), ScenarioError> {
    if HOP_LIMIT_PROFILES.contains(&value) {
        Ok(())
    } else {
        Err(ScenarioError::HopLimitProfile { net, value })
    }
}

pub fn host_address(net: Prefix56, host: &SimHost) -> Ipv6Addr {
    match host.iid_mode {
        IidMode::DhcpLow { n } => net.address(0, n as u64),
        IidMode::SlaacRandom { selector, iid } => net.address(selector, iid),
    }
}

/// Modified EUI-64 interface identifier for `mac`.
pub fn eui64_iid(mac: MacAddr) -> u64 {
    let m = mac.0;
    u64::from_be_bytes([m[0] ^ 0x02, m[1], m[2], 0xff, 0xfe, m[3], m[4], m[5]])
}

pub fn wan_address(net: &SimNet48, sub: &SimNet56) -> Ipv6Addr {
    let iid = match sub.cpe.wan_address_mode {
        WanAddressMode::Eui64 { mac } => eui64_iid(mac),
        WanAddressMode::RandomIid { iid } => iid,
        WanAddressMode::LowIid { n } => n as u64,
    };
    net.wan_block.subnet(sub.index).address(0, iid)
}

/// Where an address lands in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Endpoint {
    /// Inside an aliased subnet.
    Aliased { net: usize, sub: usize },
    Host { net: usize, sub: usize, host: usize },
    /// Inside a configured subnet with no host at that address.
    Unassigned { net: usize, sub: usize },
    Wan { net: usize, sub: usize },
    V4 { host: usize },
    Nowhere,
}

/// Scenario plus lookup indices.
#[derive(Debug)]
pub(crate) struct World {
    pub scenario: Scenario,
    nets: HashMap<Prefix48, usize>,
    subnets: HashMap<(usize, u8), usize>,
    hosts: HashMap<Ipv6Addr, (usize, usize, usize)>,
    wans: HashMap<Ipv6Addr, (usize, usize)>,
    v4: HashMap<Ipv4Addr, usize>,
}

impl World {
    fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let mut w = World {
            nets: HashMap::new(),
            subnets: HashMap::new(),
            hosts: HashMap::new(),
            wans: HashMap::new(),
            v4: HashMap::new(),
            scenario: Scenario {
                rng_seed: scenario.rng_seed,
                nets: Vec::new(),
                v4_hosts: Vec::new(),
            },
        };
        for (ni, net) in scenario.nets.iter().enumerate() {
            w.nets.insert(net.prefix48, ni);
            for (si, sub) in net.subnets.iter().enumerate() {
                w.subnets.insert((ni, sub.index), si);
                w.wans.insert(wan_address(net, sub), (ni, si));
                let p56 = net.prefix48.subnet(sub.index);
                for (hi, h) in sub.hosts.iter().enumerate() {
                    w.hosts.insert(host_address(p56, h), (ni, si, hi));
                }
            }
        }
        for (i, h) in scenario.v4_hosts.iter().enumerate() {
            w.v4.insert(h.address, i);
        }
        w.scenario = scenario;
        Ok(w)
    }

    pub fn resolve_v6(&self, addr: Ipv6Addr) -> Endpoint {
        if let Some(&(net, sub)) = self.wans.get(&addr) {
            return Endpoint::Wan { net, sub };
        }
        let Some(&net) = self.nets.get(&Prefix48::covering(addr)) else {
            return Endpoint::Nowhere;
        };
        let Some(&sub) = self.subnets.get(&(net, Prefix56::covering(addr).index())) else {
            return Endpoint::Nowhere;
        };
        if self.subnet(net, sub).aliased {
            return Endpoint::Aliased { net, sub };
        }
        match self.hosts.get(&addr) {
            Some(&(_, _, host)) => Endpoint::Host { net, sub, host },
            None => Endpoint::Unassigned { net, sub },
        }
    }

    pub fn resolve_v4(&self, addr: Ipv4Addr) -> Endpoint {
        self.v4.get(&addr).map_or(Endpoint::Nowhere, |&host| Endpoint::V4 { host })
    }

    pub fn net(&self, net: usize) -> &SimNet48 {
        &self.scenario.nets[net]
    }

    pub fn subnet(&self, net: usize, sub: usize) -> &SimNet56 {
        &self.scenario.nets[net].subnets[sub]
    }

    pub fn wan(&self, net: usize, sub: usize) -> Ipv6Addr {
        wan_address(self.net(net), self.subnet(net, sub))
    }
}

/// A scenario made live: one shared world behind a transport and a connector.
#[derive(Debug, Clone)]
pub struct SimNetwork {
    world: Arc<World>,
    transcripts: Arc<services::TranscriptLog>,
}

impl SimNetwork {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        Ok(Self {
            world: Arc::new(World::new(scenario)?),
            transcripts: Default::default(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.world.scenario
    }

    pub fn transport(&self) -> SimTransport {
        SimTransport::new(self.world.clone())
    }

    pub fn connector(&self) -> SimConnector {
        SimConnector::new(self.world.clone(), self.transcripts.clone())
    }

    /// Per-connection request counts seen by simulated services so far.
    pub fn transcripts(&self) -> Vec<Transcript> {
        self.transcripts.snapshot()
    }

    pub fn ground_truth(&self, plan_seed: u64) -> GroundTruth {
        GroundTruth::derive(&self.world.scenario, plan_seed)
    }
}
