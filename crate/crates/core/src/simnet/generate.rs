//! Seeded scenario generator.

use std::net::Ipv4Addr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Behavior, Cpe, Firewall, IidMode, Scenario, SimHost, SimNet48, SimNet56, SimService, SimV4Host, WanAddressMode,
    HOP_LIMIT_PROFILES,
};
use crate::fingerprint::MacAddr;
use crate::grab::config::L4;
use crate::net::Prefix48;

/// Vendor prefixes used for EUI-64 WAN addresses, shipped as the OUI fixture.
pub const OUI_CATALOGUE: [([u8; 3], &str); 5] = [
    ([0x00, 0x19, 0xc6], "ZTE Corporation"),
    ([0x00, 0xe0, 0xfc], "Huawei Technologies"),
    ([0x7c, 0x03, 0x4c], "Sagemcom Broadband"),
    ([0x3c, 0xa6, 0x2f], "AVM GmbH"),
    ([0x00, 0x1e, 0x80], "Nokia Solutions"),
];

const AS_POOL: [(u32, &str, &str); 5] = [
    (64496, "Example Cable", "DE"),
    (64497, "Example DSL", "US"),
    (64498, "Example Fibra", "BR"),
    (64499, "Example Broadband", "JP"),
    (64500, "Example Telecom", "IN"),
];

const HP_MODELS: [&str; 5] = [
    "HP DeskJet 2700 series",
    "HP Smart Tank 580",
    "HP OfficeJet Pro 9010 series",
    "HP LaserJet MFP M140w",
    "HP ENVY 6000 series",
];

const IOS_VERSIONS: [&str; 3] = ["17.6.1", "18.1", "18.2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceMix {
    /// Share of LAN hosts given one service.
    pub host_service_fraction: f64,
    /// Share of CPEs exposing one WAN service.
    pub cpe_service_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub n48: usize,
    pub subnets_per_48: usize,
    /// Inclusive range of LAN hosts per non-aliased subnet.
    pub hosts_per_subnet: (u8, u8),
    /// Share of hosts with DHCPv6 low IIDs (the rest use random SLAAC IIDs).
    pub dhcp_fraction: f64,
    /// Share of non-aliased subnets whose CPE forwards inbound traffic.
    pub allow_fraction: f64,
    pub aliased_fraction: f64,
    /// Among reachable low-IID hosts: share answering from the CPE itself.
    pub same_device_fraction: f64,
    /// Among reachable low-IID hosts: share one hop behind the CPE.
    pub one_hop_fraction: f64,
    /// Share of CPEs with EUI-64 WAN addresses.
    pub eui64_fraction: f64,
    pub service_mix: ServiceMix,
    pub v4_hosts: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n48: 5,
            subnets_per_48: 16,
            hosts_per_subnet: (0, 3),
            dhcp_fraction: 0.8,
            allow_fraction: 0.3,
            aliased_fraction: 0.05,
            same_device_fraction: 0.83,
            one_hop_fraction: 0.10,
            eui64_fraction: 0.4,
            service_mix: ServiceMix {
                host_service_fraction: 0.5,
                cpe_service_fraction: 0.3,
            },
            v4_hosts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("{name} = {value} is outside [0, 1]")]
    Fraction { name: &'static str, value: f64 },
    #[error("n48 must be in 1..=65536")]
    NetCount,
    #[error("subnets_per_48 must be in 1..=256")]
    SubnetCount,
    #[error("hosts_per_subnet must satisfy min <= max <= 10")]
    HostRange,
    #[error("same_device_fraction + one_hop_fraction exceeds 1")]
    DeltaMix,
    #[error("v4_hosts must be at most 254")]
    V4Count,
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, value) in [
            ("dhcp_fraction", self.dhcp_fraction),
            ("allow_fraction", self.allow_fraction),
            ("aliased_fraction", self.aliased_fraction),
            ("same_device_fraction", self.same_device_fraction),
            ("one_hop_fraction", self.one_hop_fraction),
            ("eui64_fraction", self.eui64_fraction),
            ("host_service_fraction", self.service_mix.host_service_fraction),
            ("cpe_service_fraction", self.service_mix.cpe_service_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamsError::Fraction { name, value });
            }
        }
        if self.n48 == 0 || self.n48 > 65_536 {
            return Err(ParamsError::NetCount);
        }
        if self.subnets_per_48 == 0 || self.subnets_per_48 > 256 {
            return Err(ParamsError::SubnetCount);
        }
        let (lo, hi) = self.hosts_per_subnet;
        if lo > hi || hi > 10 {
            return Err(ParamsError::HostRange);
        }
        if self.same_device_fraction + self.one_hop_fraction > 1.0 + 1e-9 {
            return Err(ParamsError::DeltaMix);
        }
        if self.v4_hosts > 254 {
            return Err(ParamsError::V4Count);
        }
        Ok(())
    }
}

/// `n` flags of which exactly `round(n * fraction)` are set, in random order.
fn exact_mask(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = ((n as f64) * fraction).round() as usize;
    let mut v: Vec<bool> = (0..n).map(|i| i < k.min(n)).collect();
    v.shuffle(rng);
    v
}

fn random_mac(rng: &mut ChaCha8Rng) -> MacAddr {
    let (oui, _) = OUI_CATALOGUE[rng.gen_range(0..OUI_CATALOGUE.len())];
    MacAddr([oui[0], oui[1], oui[2], rng.gen(), rng.gen(), rng.gen()])
}

/// A random IID that is neither low nor EUI-64 shaped.
fn random_iid(rng: &mut ChaCha8Rng) -> u64 {
    loop {
        let iid: u64 = rng.gen();
        let b = iid.to_be_bytes();
        if iid > 10 && !(b[3] == 0xff && b[4] == 0xfe) {
            return iid;
        }
    }
}

fn serial(rng: &mut ChaCha8Rng) -> String {
    const ALNUM: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ0123456789";
    let tail: String = (0..8).map(|_| ALNUM[rng.gen_range(0..ALNUM.len())] as char).collect();
    format!("CN{tail}")
}

fn host_service(rng: &mut ChaCha8Rng) -> SimService {
    let tcp = |port, behavior| SimService {
        port,
        transport: L4::Tcp,
        behavior,
    };
    match rng.gen_range(0..8) {
        0 => tcp(
            80,
            Behavior::HpHttp {
                model: HP_MODELS[rng.gen_range(0..HP_MODELS.len())].into(),
                serial: serial(rng),
                build_date: Some("2023-01-05".into()),
                build: Some("1".into()),
            },
        ),
        1 => tcp(23, Behavior::Telnet { prompt: "login: ".into() }),
        2 => tcp(
            22,
            Behavior::Banner {
                text: "SSH-2.0-dropbear_2020.81\r\n".into(),
            },
        ),
        3 => tcp(
            1883,
            Behavior::MqttBroker {
                return_code: if rng.gen_bool(0.5) { 0 } else { 5 },
            },
        ),
        4 => tcp(
            62078,
            Behavior::LockdownServer {
                version: Some(IOS_VERSIONS[rng.gen_range(0..IOS_VERSIONS.len())].into()),
            },
        ),
        5 => tcp(80, Behavior::DahuaHtml),
        6 => tcp(80, Behavior::NanoleafHtml),
        _ => tcp(
            21,
            Behavior::Banner {
                text: "220 FTP server ready\r\n".into(),
            },
        ),
    }
}

fn cpe_service(rng: &mut ChaCha8Rng) -> SimService {
    let page = |server: Option<&str>| Behavior::Http {
        status: 200,
        server: server.map(str::to_string),
        body: "<html><title>Gateway</title></html>".into(),
    };
    let (port, transport, behavior) = match rng.gen_range(0..6) {
        0 => (80, L4::Tcp, page(Some("mini_httpd/1.30"))),
        1 => (
            443,
            L4::Tcp,
            Behavior::Tls {
                cn: crate::fingerprint::NOKIA_CN.into(),
                inner: Box::new(page(None)),
            },
        ),
        2 => (
            80,
            L4::Tcp,
            Behavior::Tls {
                cn: "Huawei ONT".into(),
                inner: Box::new(page(None)),
            },
        ),
        3 => (
            7547,
            L4::Tcp,
            Behavior::Http {
                status: 401,
                server: Some("gSOAP/2.8".into()),
                body: String::new(),
            },
        ),
        4 => (123, L4::Udp, Behavior::NtpServer { stratum: 2 }),
        _ => (
            22,
            L4::Tcp,
            Behavior::Banner {
                text: "SSH-2.0-OpenSSH_8.4\r\n".into(),
            },
        ),
    };
    SimService {
        port,
        transport,
        behavior,
    }
}

fn v4_services() -> Vec<SimService> {
    let tcp = |port, behavior| SimService {
        port,
        transport: L4::Tcp,
        behavior,
    };
    vec![
        tcp(22, Behavior::Banner { text: "SSH-2.0-OpenSSH_9.6\r\n".into() }),
        tcp(23, Behavior::Telnet { prompt: "login: ".into() }),
        tcp(
            443,
            Behavior::Tls {
                cn: "gateway.example".into(),
                inner: Box::new(Behavior::Http {
                    status: 200,
                    server: Some("lighttpd".into()),
                    body: String::new(),
                }),
            },
        ),
        tcp(62078, Behavior::LockdownServer { version: Some("18.2".into()) }),
    ]
}

/// Build a scenario whose category counts hit the requested fractions
/// exactly after rounding.
pub fn generate_scenario(params: &ScenarioParams, seed: u64) -> Result<Scenario, ParamsError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut hextets: Vec<u16> = index::sample(&mut rng, 65_536, params.n48)
        .into_iter()
        .map(|i| i as u16)
        .collect();
    hextets.sort_unstable();

    let total_subnets = params.n48 * params.subnets_per_48;
    let aliased = exact_mask(total_subnets, params.aliased_fraction, &mut rng);
    let non_aliased = aliased.iter().filter(|a| !**a).count();
    let mut allow = exact_mask(non_aliased, params.allow_fraction, &mut rng).into_iter();
    let mut eui64 = exact_mask(total_subnets, params.eui64_fraction, &mut rng).into_iter();
    let mut cpe_svc = exact_mask(total_subnets, params.service_mix.cpe_service_fraction, &mut rng).into_iter();

    let mut nets = Vec::with_capacity(params.n48);
    let mut k = 0;
    for &h in &hextets {
        let (asn, as_name, country) = AS_POOL[rng.gen_range(0..AS_POOL.len())];
        let prefix48 = Prefix48::from_bits((0x2001_0db8u64 << 16) | h as u64);
        let wan_block = Prefix48::from_bits((0x3fff_0000u64 << 16) | h as u64);
        let mut indices: Vec<u8> = index::sample(&mut rng, 256, params.subnets_per_48)
            .into_iter()
            .map(|i| i as u8)
            .collect();
        indices.sort_unstable();
        let mut subnets = Vec::with_capacity(indices.len());
        for index in indices {
            let is_aliased = aliased[k];
            k += 1;
            let firewall = if !is_aliased && allow.next().expect("one flag per non-aliased subnet") {
                Firewall::DefaultAllow
            } else {
                Firewall::DefaultDeny
            };
            let wan_address_mode = if eui64.next().expect("one flag per subnet") {
                WanAddressMode::Eui64 { mac: random_mac(&mut rng) }
            } else {
                WanAddressMode::RandomIid { iid: random_iid(&mut rng) }
            };
            let services = if cpe_svc.next().expect("one flag per subnet") {
                vec![cpe_service(&mut rng)]
            } else {
                Vec::new()
            };
            let cpe = Cpe {
                wan_address_mode,
                firewall,
                base_distance: rng.gen_range(3..=20),
                initial_hop_limit: *HOP_LIMIT_PROFILES.choose(&mut rng).expect("non-empty"),
                services,
            };
            let n_hosts = if is_aliased {
                0
            } else {
                rng.gen_range(params.hosts_per_subnet.0..=params.hosts_per_subnet.1)
            };
            let hosts = (0..n_hosts)
                .map(|_| SimHost {
                    iid_mode: IidMode::DhcpLow { n: 0 },
                    extra_hops: 0,
                    initial_hop_limit: *HOP_LIMIT_PROFILES.choose(&mut rng).expect("non-empty"),
                    services: Vec::new(),
                })
                .collect();
            subnets.push(SimNet56 {
                index,
                aliased: is_aliased,
                alias_stub: is_aliased.then(|| Behavior::Http {
                    status: 200,
                    server: Some("alias-stub".into()),
                    body: String::new(),
                }),
                cpe,
                hosts,
            });
        }
        nets.push(SimNet48 {
            prefix48,
            asn,
            as_name: as_name.into(),
            country: country.into(),
            wan_block,
            subnets,
        });
    }

    // Addressing: DHCP hosts count up from ::1 within their subnet.
    let n_hosts: usize = nets.iter().flat_map(|n| &n.subnets).map(|s| s.hosts.len()).sum();
    let mut dhcp = exact_mask(n_hosts, params.dhcp_fraction, &mut rng).into_iter();
    let mut with_service = exact_mask(n_hosts, params.service_mix.host_service_fraction, &mut rng).into_iter();
    let mut reachable = Vec::new();
    for (ni, net) in nets.iter_mut().enumerate() {
        for (si, sub) in net.subnets.iter_mut().enumerate() {
            let mut next_low = 1u8;
            let allow = sub.cpe.firewall == Firewall::DefaultAllow;
            for (hi, host) in sub.hosts.iter_mut().enumerate() {
                host.iid_mode = if dhcp.next().expect("one flag per host") {
                    next_low += 1;
                    if allow {
                        reachable.push((ni, si, hi));
                    }
                    IidMode::DhcpLow { n: next_low - 1 }
                } else {
                    IidMode::SlaacRandom {
                        selector: rng.gen(),
                        iid: random_iid(&mut rng),
                    }
                };
                host.extra_hops = rng.gen_range(0..=2);
                if with_service.next().expect("one flag per host") {
                    host.services.push(host_service(&mut rng));
                }
            }
        }
    }

    // Hop offsets of reachable hosts follow the configured delta mix exactly.
    let m = reachable.len();
    let n0 = ((m as f64) * params.same_device_fraction).round() as usize;
    let n1 = (((m as f64) * params.one_hop_fraction).round() as usize).min(m - n0.min(m));
    let mut offsets: Vec<u8> = (0..m)
        .map(|i| match i {
            _ if i < n0 => 0,
            _ if i < n0 + n1 => 1,
            _ => 2,
        })
        .collect();
    offsets.shuffle(&mut rng);
    for (&(ni, si, hi), off) in reachable.iter().zip(offsets) {
        let extra = if off == 2 { rng.gen_range(2..=4) } else { off };
        nets[ni].subnets[si].hosts[hi].extra_hops = extra;
    }

    let v4_hosts = (0..params.v4_hosts)
        .map(|i| SimV4Host {
            address: Ipv4Addr::new(192, 0, 2, i as u8 + 1),
            services: v4_services(),
        })
        .collect();

    let s = Scenario {
        rng_seed: seed,
        nets,
        v4_hosts,
    };
    debug_assert!(s.validate().is_ok());
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let p = ScenarioParams {
            n48: 10,
            aliased_fraction: 0.1,
            ..Default::default()
        };
        assert_eq!(generate_scenario(&p, 7).unwrap(), generate_scenario(&p, 7).unwrap());
        assert_ne!(generate_scenario(&p, 7).unwrap(), generate_scenario(&p, 8).unwrap());
    }

    #[test]
    fn all_aliased() {
        let p = ScenarioParams {
            aliased_fraction: 1.0,
            ..Default::default()
        };
        let s = generate_scenario(&p, 1).unwrap();
        assert!(s.nets.iter().flat_map(|n| &n.subnets).all(|s| s.aliased));
    }

    #[test]
    fn mix_within_rounding() {
        let p = ScenarioParams {
            n48: 7,
            subnets_per_48: 13,
            aliased_fraction: 0.1,
            allow_fraction: 0.6,
            ..Default::default()
        };
        let s = generate_scenario(&p, 3).unwrap();
        let subs: Vec<_> = s.nets.iter().flat_map(|n| &n.subnets).collect();
        let aliased = subs.iter().filter(|s| s.aliased).count() as f64;
        assert!((aliased - 91.0 * 0.1).abs() <= 1.0);
        let open = subs.iter().filter(|s| !s.aliased && s.cpe.firewall == Firewall::DefaultAllow).count() as f64;
        assert!((open - (91.0 - aliased) * 0.6).abs() <= 1.0);
    }

    #[test]
    fn invalid_params() {
        let bad = ScenarioParams {
            allow_fraction: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_scenario(&bad, 0), Err(ParamsError::Fraction { .. })));
        let bad = ScenarioParams {
            subnets_per_48: 0,
            ..Default::default()
        };
        assert_eq!(generate_scenario(&bad, 0), Err(ParamsError::SubnetCount));
    }
}
