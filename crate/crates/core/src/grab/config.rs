//! Service table: which ports to interrogate and how.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L4 {
    #[default]
    Tcp,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProbeKind {
    /// Connect and read whatever the server volunteers.
    BannerRead,
    /// Plain HTTP GET, retried over TLS when the server answers with TLS records.
    HttpGet,
    /// TLS handshake (certificate subject captured) then HTTP GET inside it.
    TlsThenHttp,
    MqttConnect,
    /// MQTT CONNECT inside TLS.
    MqttConnectTls,
    LockdownQuery,
    NtpQuery,
    /// Send fixed bytes, read the reply.
    LineProtocol(Vec<u8>),
}

impl ProbeKind {
    fn as_str(&self) -> &'static str {
        match self {
            ProbeKind::BannerRead => "banner_read",
            ProbeKind::HttpGet => "http_get",
            ProbeKind::TlsThenHttp => "tls_then_http",
            ProbeKind::MqttConnect => "mqtt_connect",
            ProbeKind::MqttConnectTls => "mqtt_connect_tls",
            ProbeKind::LockdownQuery => "lockdown_query",
            ProbeKind::NtpQuery => "ntp_query",
            ProbeKind::LineProtocol(_) => "line_protocol",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceSpec {
    pub name: String,
    pub port: u16,
    pub transport: L4,
    pub probe_kind: ProbeKind,
}

impl ServiceSpec {
    pub fn new(name: &str, port: u16, transport: L4, probe_kind: ProbeKind) -> Self {
        Self {
            name: name.to_string(),
            port,
            transport,
            probe_kind,
        }
    }

    /// `name/port`, unique within a config.
    pub fn id(&self) -> String {
        format!("{}/{}", self.name, self.port)
    }
}

impl fmt::Display for ServiceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l4 = match self.transport {
            L4::Tcp => "tcp",
            L4::Udp => "udp",
        };
        write!(f, "{},{},{},{}", self.name, self.port, l4, self.probe_kind.as_str())?;
        if let ProbeKind::LineProtocol(req) = &self.probe_kind {
            write!(f, ",")?;
            for b in req {
                write!(f, "{b:02x}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("duplicate service {0}")]
    Duplicate(String),
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// The 25 port/protocol combinations probed on every responsive address.
pub fn default_services() -> Vec<ServiceSpec> {
    use L4::*;
    use ProbeKind::*;
    let mut v = vec![
        ServiceSpec::new("ftp", 21, Tcp, BannerRead),
        ServiceSpec::new("ssh", 22, Tcp, BannerRead),
        ServiceSpec::new("telnet", 23, Tcp, BannerRead),
        ServiceSpec::new("smtp", 25, Tcp, BannerRead),
    ];
    for port in [80, 5000] {
        v.push(ServiceSpec::new("http", port, Tcp, HttpGet));
    }
    v.push(ServiceSpec::new("cwmp", 7547, Tcp, HttpGet));
    for port in [8000, 8008, 8060, 8080, 8081] {
        v.push(ServiceSpec::new("http", port, Tcp, HttpGet));
    }
    v.extend([
        ServiceSpec::new("pop3", 110, Tcp, BannerRead),
        ServiceSpec::new("ntp", 123, Udp, NtpQuery),
        ServiceSpec::new("imap", 143, Tcp, BannerRead),
        ServiceSpec::new("https", 443, Tcp, TlsThenHttp),
        ServiceSpec::new("smb", 445, Tcp, BannerRead),
        ServiceSpec::new("ipp", 631, Tcp, BannerRead),
        ServiceSpec::new("mssql", 1433, Tcp, BannerRead),
        ServiceSpec::new("mqtt", 1883, Tcp, MqttConnect),
        ServiceSpec::new("mysql", 3306, Tcp, BannerRead),
        ServiceSpec::new("https", 8443, Tcp, TlsThenHttp),
        ServiceSpec::new("mqtts", 8883, Tcp, MqttConnectTls),
        ServiceSpec::new("mongodb", 27017, Tcp, BannerRead),
        ServiceSpec::new("iphone-sync", 62078, Tcp, LockdownQuery),
    ]);
    v
}

/// Parse `name,port,transport,probe_kind[,request_hex]` lines.
pub fn parse_services(text: &str) -> Result<Vec<ServiceSpec>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, fields) in crate::seedprep::delimited_rows(text) {
        let err = |reason: String| ConfigError::Line { line, reason };
        if !(4..=5).contains(&fields.len()) {
            return Err(err(format!("expected 4 or 5 fields, found {}", fields.len())));
        }
        let name = fields[0].to_ascii_lowercase();
        if name.is_empty() {
            return Err(err("empty service name".into()));
        }
        let port: u16 = fields[1]
            .parse()
            .ok()
            .filter(|&p| p > 0)
            .ok_or_else(|| err(format!("bad port '{}'", fields[1])))?;
        let transport = match fields[2].to_ascii_lowercase().as_str() {
            "tcp" => L4::Tcp,
            "udp" => L4::Udp,
            t => return Err(err(format!("bad transport '{t}'"))),
        };
        let probe_kind = match (fields[3], fields.get(4)) {
            ("banner_read", None) => ProbeKind::BannerRead,
            ("http_get", None) => ProbeKind::HttpGet,
            ("tls_then_http", None) => ProbeKind::TlsThenHttp,
            ("mqtt_connect", None) => ProbeKind::MqttConnect,
            ("mqtt_connect_tls", None) => ProbeKind::MqttConnectTls,
            ("lockdown_query", None) => ProbeKind::LockdownQuery,
            ("ntp_query", None) => ProbeKind::NtpQuery,
            ("line_protocol", Some(hex)) => {
                ProbeKind::LineProtocol(decode_hex(hex).ok_or_else(|| err(format!("bad request hex '{hex}'")))?)
            }
            ("line_protocol", None) => return Err(err("line_protocol needs request_hex".into())),
            (k, Some(_)) if k != "line_protocol" => return Err(err(format!("{k} takes no request bytes"))),
            (k, _) => return Err(err(format!("unknown probe kind '{k}'"))),
        };
        match (&probe_kind, transport) {
            (ProbeKind::NtpQuery | ProbeKind::LineProtocol(_), _) | (_, L4::Tcp) => {}
            _ => return Err(err(format!("{} needs tcp", probe_kind.as_str()))),
        }
        let spec = ServiceSpec {
            name,
            port,
            transport,
            probe_kind,
        };
        if !seen.insert((spec.name.clone(), port)) {
            return Err(ConfigError::Duplicate(spec.id()));
        }
        out.push(spec);
    }
    Ok(out)
}

pub fn format_services(specs: &[ServiceSpec]) -> String {
    let mut out = String::from("# name,port,transport,probe_kind[,request_hex]\n");
    for s in specs {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}
