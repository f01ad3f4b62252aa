//! Grabbers against simulated services.

use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use resiscan::fingerprint::{match_fingerprints, parse_hp_header, HitKind, NOKIA_CN};
use resiscan::grab::config::{ProbeKind, ServiceSpec, L4};
use resiscan::grab::{self, default_services, GrabOutcome, GrabRecord, DEFAULT_CAP};
use resiscan::simnet::{
    Behavior, Cpe, Firewall, IidMode, Scenario, SimHost, SimNet48, SimNet56, SimNetwork, SimService, SimV4Host,
    WanAddressMode,
};

const T: Duration = Duration::from_secs(5);

fn svc(port: u16, behavior: Behavior) -> SimService {
    SimService {
        port,
        transport: L4::Tcp,
        behavior,
    }
}

fn host(n: u8, services: Vec<SimService>) -> SimHost {
    SimHost {
        iid_mode: IidMode::DhcpLow { n },
        extra_hops: 0,
        initial_hop_limit: 64,
        services,
    }
}

fn subnet(index: u8, firewall: Firewall, hosts: Vec<SimHost>, wan: Vec<SimService>) -> SimNet56 {
    SimNet56 {
        index,
        aliased: false,
        alias_stub: None,
        cpe: Cpe {
            wan_address_mode: WanAddressMode::LowIid { n: 1 },
            firewall,
            base_distance: 4,
            initial_hop_limit: 64,
            services: wan,
        },
        hosts,
    }
}

fn world() -> SimNetwork {
    let http = |server: &str| Behavior::Http {
        status: 200,
        server: Some(server.into()),
        body: "<html></html>".into(),
    };
    let open = vec![
        host(
            1,
            vec![
                svc(
                    80,
                    Behavior::HpHttp {
                        model: "HP Smart Tank 580".into(),
                        serial: "TH1234".into(),
                        build_date: Some("2023-01-05".into()),
                        build: Some("7".into()),
                    },
                ),
                svc(62078, Behavior::LockdownServer { version: Some("18.2".into()) }),
                svc(1883, Behavior::MqttBroker { return_code: 0 }),
                svc(23, Behavior::Telnet { prompt: "login: ".into() }),
            ],
        ),
        host(
            2,
            vec![
                svc(1883, Behavior::MqttBroker { return_code: 5 }),
                svc(62078, Behavior::LockdownHostile { declared_length: 1 << 31 }),
                svc(80, Behavior::DahuaHtml),
            ],
        ),
        host(
            3,
            vec![
                svc(1883, Behavior::MqttClose),
                svc(62078, Behavior::LockdownServer { version: None }),
                svc(80, Behavior::NanoleafHtml),
                svc(
                    8883,
                    Behavior::Tls {
                        cn: "broker.local".into(),
                        inner: Box::new(Behavior::MqttBroker { return_code: 5 }),
                    },
                ),
            ],
        ),
    ];
    let wan = vec![
        svc(
            80,
            Behavior::Tls {
                cn: "Huawei ONT".into(),
                inner: Box::new(http("ont")),
            },
        ),
        svc(
            443,
            Behavior::Tls {
                cn: NOKIA_CN.into(),
                inner: Box::new(http("nokia")),
            },
        ),
        SimService {
            port: 123,
            transport: L4::Udp,
            behavior: Behavior::NtpServer { stratum: 1 },
        },
    ];
    let denied = vec![host(1, vec![svc(80, http("hidden"))])];
    let s = Scenario {
        rng_seed: 0,
        nets: vec![SimNet48 {
            prefix48: "2001:db8:1::/48".parse().unwrap(),
            asn: 64500,
            as_name: "Example".into(),
            country: "DE".into(),
            wan_block: "3fff:0:1::/48".parse().unwrap(),
            subnets: vec![
                subnet(0, Firewall::DefaultAllow, open, wan),
                subnet(1, Firewall::DefaultDeny, denied, vec![]),
            ],
        }],
        v4_hosts: vec![SimV4Host {
            address: "192.0.2.1".parse().unwrap(),
            services: vec![
                svc(22, Behavior::Banner { text: "SSH-2.0-OpenSSH_9.6\r\n".into() }),
                svc(23, Behavior::Telnet { prompt: "login: ".into() }),
                svc(
                    443,
                    Behavior::Tls {
                        cn: "v4.example".into(),
                        inner: Box::new(http("v4")),
                    },
                ),
                svc(62078, Behavior::LockdownServer { version: Some("18.1".into()) }),
            ],
        }],
    };
    SimNetwork::new(s).unwrap()
}

fn a(s: &str) -> IpAddr {
    s.parse().unwrap()
}

fn spec(name: &str, port: u16) -> ServiceSpec {
    default_services()
        .into_iter()
        .find(|s| s.name == name && s.port == port)
        .unwrap_or_else(|| panic!("no default service {name}/{port}"))
}

fn run(net: &SimNetwork, ip: &str, name: &str, port: u16) -> GrabRecord {
    let s = spec(name, port);
    grab::grab(&net.connector(), SocketAddr::new(a(ip), port), &s, T, DEFAULT_CAP)
}

const H1: &str = "2001:db8:1::1";
const H2: &str = "2001:db8:1::2";
const H3: &str = "2001:db8:1::3";
const WAN: &str = "3fff:0:1::1";

#[test]
fn hp_header_captured_and_parsed() {
    let net = world();
    let r = run(&net, H1, "http", 80);
    assert_eq!(r.outcome, GrabOutcome::Responded);
    let h = parse_hp_header(r.http_server_header.as_deref().unwrap()).unwrap();
    assert_eq!(h.model, "HP Smart Tank 580");
    assert_eq!(h.serial, "TH1234");
    assert_eq!(h.build.as_deref(), Some("7"));
    assert_eq!(match_fingerprints(&r, &[])[0].kind, HitKind::HpPrinter);
}

#[test]
fn lockdown_version_with_one_request() {
    let net = world();
    let r = run(&net, H1, "iphone-sync", 62078);
    assert_eq!(r.outcome, GrabOutcome::Responded);
    assert_eq!(r.lockdown_product_version.as_deref(), Some("18.2"));
    let t = net.transcripts();
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].requests, 1);
}

#[test]
fn lockdown_hostile_and_missing_value() {
    let net = world();
    match run(&net, H2, "iphone-sync", 62078).outcome {
        GrabOutcome::Error(d) => assert!(d.starts_with("bounds"), "{d}"),
        o => panic!("{o:?}"),
    }
    let r = run(&net, H3, "iphone-sync", 62078);
    assert_eq!(r.outcome, GrabOutcome::Responded);
    assert_eq!(r.lockdown_product_version, None);
}

#[test]
fn mqtt_postures() {
    let net = world();
    let c = net.connector();
    assert_eq!(grab::mqtt_connect(&c, a(H1), 1883, T), Ok(0));
    assert_eq!(grab::mqtt_connect(&c, a(H2), 1883, T), Ok(5));
    assert_eq!(
        grab::mqtt_connect(&c, a(H3), 1883, T),
        Err(GrabOutcome::Error("connection_closed".into()))
    );
    assert_eq!(grab::mqtt_connect(&c, a(H3), 8883, T), Ok(5));
}

#[test]
fn tls_on_plain_http_port_falls_back() {
    let net = world();
    let r = run(&net, WAN, "http", 80);
    assert_eq!(r.outcome, GrabOutcome::Responded, "{r:?}");
    assert_eq!(r.tls_subject_cn.as_deref(), Some("Huawei ONT"));
    assert_eq!(r.http_server_header.as_deref(), Some("ont"));
    assert_eq!(r.banner_line.as_deref(), Some("tls_on_plain_port"));
    for t in net.transcripts() {
        assert!(t.requests <= 1, "{t:?}");
    }
}

#[test]
fn nokia_certificate() {
    let net = world();
    let r = run(&net, WAN, "https", 443);
    assert_eq!(r.outcome, GrabOutcome::Responded, "{r:?}");
    assert_eq!(r.tls_subject_cn.as_deref(), Some(NOKIA_CN));
    assert!(match_fingerprints(&r, &[]).iter().any(|h| h.kind == HitKind::NokiaGateway));
}

#[test]
fn html_signatures() {
    let net = world();
    let dahua = run(&net, H2, "http", 80);
    assert_eq!(match_fingerprints(&dahua, &[])[0].kind, HitKind::DahuaCamera);
    let nano = run(&net, H3, "http", 80);
    assert_eq!(match_fingerprints(&nano, &[])[0].kind, HitKind::Nanoleaf);
}

#[test]
fn telnet_and_ntp() {
    let net = world();
    let r = run(&net, H1, "telnet", 23);
    assert_eq!(r.outcome, GrabOutcome::Responded);
    assert!(r.banner_line.unwrap().contains("login:"));
    let r = run(&net, WAN, "ntp", 123);
    assert_eq!(r.outcome, GrabOutcome::Responded);
    assert_eq!(r.banner_line.as_deref(), Some("version=4 stratum=1 refid=GPS"));
}

#[test]
fn closed_and_firewalled() {
    let net = world();
    assert_eq!(run(&net, H1, "ssh", 22).outcome, GrabOutcome::Refused);
    assert_eq!(run(&net, "2001:db8:1:100::1", "http", 80).outcome, GrabOutcome::Refused);
    assert_eq!(run(&net, "2001:db8:1::9", "http", 80).outcome, GrabOutcome::Refused);
    assert_eq!(run(&net, "2001:db8:2::1", "http", 80).outcome, GrabOutcome::Timeout);
}

#[test]
fn address_family_neutral() {
    let net = world();
    for (name, port) in [("ssh", 22), ("telnet", 23), ("https", 443), ("iphone-sync", 62078)] {
        let r = run(&net, "192.0.2.1", name, port);
        assert_eq!(r.outcome, GrabOutcome::Responded, "{name}: {r:?}");
    }
    assert_eq!(run(&net, "192.0.2.1", "iphone-sync", 62078).lockdown_product_version.as_deref(), Some("18.1"));
    assert_eq!(
        run(&net, "192.0.2.1", "https", 443).tls_subject_cn.as_deref(),
        Some("v4.example")
    );
    for (name, port) in [("https", 443), ("telnet", 23), ("iphone-sync", 62078)] {
        let ip = if port == 443 { WAN } else { H1 };
        assert_eq!(run(&net, ip, name, port).outcome, GrabOutcome::Responded, "{name} over IPv6");
    }
}

#[test]
fn every_connection_carries_at_most_one_request() {
    let net = world();
    let targets: Vec<IpAddr> = [H1, H2, H3, WAN, "192.0.2.1"].iter().map(|s| a(s)).collect();
    let recs = grab::run_grab_campaign(&net.connector(), &targets, &default_services(), &Default::default());
    assert_eq!(recs.len(), 5 * 25);
    let t = net.transcripts();
    assert!(!t.is_empty());
    assert!(t.iter().all(|t| t.requests <= 1), "{t:?}");
}

#[test]
fn line_protocol_probe() {
    let net = world();
    let s = ServiceSpec::new("ftp-raw", 23, L4::Tcp, ProbeKind::LineProtocol(b"\r\n".to_vec()));
    let r = grab::grab(&net.connector(), SocketAddr::new(a(H1), 23), &s, T, DEFAULT_CAP);
    assert_eq!(r.outcome, GrabOutcome::Responded);
}
