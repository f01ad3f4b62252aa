//! Application-layer probing of responsive addresses.
//!
//! Each grab is single-shot and minimal: connect, send at most one request,
//! read one bounded response, close.

pub mod banner;
pub mod config;
pub mod connector;
pub mod http;
pub mod lockdown;
pub mod mqtt;
pub mod tls;

use std::collections::HashSet;
use std::hash::Hasher;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use banner::Parsed;
use config::{ProbeKind, ServiceSpec, L4};
use connector::{is_idle, read_bounded, read_exact_bounded, ConnectError, Connector, ReadEnd, Stream};

pub use config::{default_services, format_services, parse_services};
pub use connector::SystemConnector;

pub const DEFAULT_CAP: usize = 64 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_PARALLELISM: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum GrabOutcome {
    Responded,
    Refused,
    Timeout,
    Error(String),
}

impl GrabOutcome {
    pub fn is_responded(&self) -> bool {
        matches!(self, GrabOutcome::Responded)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrabRecord {
    pub address: IpAddr,
    pub service: String,
    pub port: u16,
    pub outcome: GrabOutcome,
    #[serde(with = "b64")]
    pub banner: Vec<u8>,
    /// Parser summary of the exchange (greeting line, NTP fields, MQTT posture).
    pub banner_line: Option<String>,
    pub http_status: Option<u16>,
    pub http_server_header: Option<String>,
    pub tls_subject_cn: Option<String>,
    pub mqtt_return_code: Option<u8>,
    pub lockdown_product_version: Option<String>,
}

impl GrabRecord {
    /// An empty record, `timeout` until filled in.
    pub fn new(address: IpAddr, spec: &ServiceSpec) -> Self {
        Self {
            address,
            service: spec.name.clone(),
            port: spec.port,
            outcome: GrabOutcome::Timeout,
            banner: Vec::new(),
            banner_line: None,
            http_status: None,
            http_server_header: None,
            tls_subject_cn: None,
            mqtt_return_code: None,
            lockdown_product_version: None,
        }
    }

    /// HTML body of an HTTP exchange, if the banner holds one.
    pub fn http_body(&self) -> Option<&[u8]> {
        self.http_status?;
        let head = http::parse_response(&self.banner).ok()??;
        Some(head.body(&self.banner))
    }
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

/// Why a grab did not yield a protocol-valid response.
enum Fail {
    Refused,
    Timeout,
    Error(String),
}

impl From<ConnectError> for Fail {
    fn from(e: ConnectError) -> Self {
        match e {
            ConnectError::Refused | ConnectError::Unreachable => Fail::Refused,
            ConnectError::Timeout => Fail::Timeout,
            ConnectError::Other(d) => Fail::Error(d),
        }
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            _ if is_idle(&e) => Fail::Timeout,
            io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset => Fail::Error("connection_closed".into()),
            _ => Fail::Error(e.to_string()),
        }
    }
}

fn closed() -> Fail {
    Fail::Error("connection_closed".into())
}

/// Outcome when a read produced nothing usable.
fn empty_read(end: ReadEnd) -> Fail {
    match end {
        ReadEnd::Idle => Fail::Timeout,
        _ => closed(),
    }
}

struct Ctx<'a> {
    connector: &'a dyn Connector,
    addr: SocketAddr,
    timeout: Duration,
    cap: usize,
}

impl Ctx<'_> {
    fn connect(&self) -> Result<Box<dyn Stream>, Fail> {
        Ok(self.connector.connect_tcp(self.addr, self.timeout)?)
    }

    fn connect_tls(&self, rec: &mut GrabRecord) -> Result<tls::TlsStream, Fail> {
        let s = tls::handshake(self.connect()?, self.addr.ip()).map_err(|e| match e.kind() {
            _ if is_idle(&e) => Fail::Timeout,
            io::ErrorKind::UnexpectedEof => closed(),
            _ => Fail::Error(format!("tls: {e}")),
        })?;
        rec.tls_subject_cn = tls::peer_subject_cn(&s);
        Ok(s)
    }
}

/// Probe one service on one endpoint.
pub fn grab(
    connector: &dyn Connector,
    addr: SocketAddr,
    spec: &ServiceSpec,
    timeout: Duration,
    cap: usize,
) -> GrabRecord {
    let ctx = Ctx {
        connector,
        addr,
        timeout,
        cap,
    };
    let mut rec = GrabRecord::new(addr.ip(), spec);
    let result = match &spec.probe_kind {
        ProbeKind::BannerRead => banner_read(&ctx, &spec.name, &mut rec),
        ProbeKind::HttpGet => http_get(&ctx, &mut rec),
        ProbeKind::TlsThenHttp => tls_then_http(&ctx, &mut rec),
        ProbeKind::MqttConnect => mqtt_plain(&ctx, &mut rec),
        ProbeKind::MqttConnectTls => mqtt_tls(&ctx, &mut rec),
        ProbeKind::LockdownQuery => lockdown(&ctx, &mut rec),
        ProbeKind::NtpQuery => ntp(&ctx, &mut rec),
        ProbeKind::LineProtocol(req) => line_protocol(&ctx, req, &mut rec),
    };
    rec.outcome = match result {
        Ok(()) => GrabOutcome::Responded,
        Err(Fail::Refused) => GrabOutcome::Refused,
        Err(Fail::Timeout) => GrabOutcome::Timeout,
        Err(Fail::Error(d)) => GrabOutcome::Error(d),
    };
    rec
}

fn banner_read(ctx: &Ctx, service: &str, rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect()?;
    let end = read_bounded(&mut s, &mut rec.banner, ctx.cap, &|b| banner::greeting_complete(service, b))?;
    if rec.banner.is_empty() {
        return Err(empty_read(end));
    }
    match banner::parse_greeting(service, &rec.banner) {
        Parsed::Valid(line) => {
            rec.banner_line = Some(line);
            Ok(())
        }
        Parsed::Opaque => Ok(()),
        Parsed::Invalid(why) => Err(Fail::Error(why)),
    }
}

/// Send one HTTP GET over `s` and parse the reply into `rec`.
fn http_exchange(s: &mut dyn Stream, ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    s.write_all(&http::get_request(ctx.addr))?;
    s.flush()?;
    let end = read_bounded(s, &mut rec.banner, ctx.cap, &http::response_complete)?;
    if rec.banner.is_empty() {
        return Err(empty_read(end));
    }
    record_http(rec)
}

fn record_http(rec: &mut GrabRecord) -> Result<(), Fail> {
    match http::parse_response(&rec.banner) {
        Ok(Some(r)) => {
            rec.http_status = Some(r.status);
            rec.http_server_header = r.server;
            Ok(())
        }
        Ok(None) => Err(Fail::Error("http: truncated response head".into())),
        Err(e) => Err(Fail::Error(format!("http: {e}"))),
    }
}

fn http_get(ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect()?;
    s.write_all(&http::get_request(ctx.addr))?;
    s.flush()?;
    let end = read_bounded(&mut s, &mut rec.banner, ctx.cap, &|b| {
        http::looks_like_tls(b) || http::response_complete(b)
    })?;
    drop(s);
    if rec.banner.is_empty() {
        return Err(empty_read(end));
    }
    if http::looks_like_tls(&rec.banner) {
        // The server spoke TLS on a plaintext port: redo the exchange inside TLS.
        rec.banner.clear();
        rec.banner_line = Some("tls_on_plain_port".into());
        return tls_then_http(ctx, rec);
    }
    record_http(rec)
}

fn tls_then_http(ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect_tls(rec)?;
    let r = http_exchange(&mut s, ctx, rec);
    s.conn.send_close_notify();
    let _ = s.flush();
    r
}

/// Deterministic client id so repeated campaigns send identical bytes.
fn mqtt_client_id(ip: IpAddr) -> String {
    let mut h = siphasher::sip::SipHasher13::new();
    match ip {
        IpAddr::V4(v4) => h.write(&v4.octets()),
        IpAddr::V6(v6) => h.write(&v6.octets()),
    }
    format!("resiscan-{:08x}", h.finish() as u32)
}

fn mqtt_exchange(s: &mut dyn Stream, ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    s.write_all(&mqtt::encode_connect(&mqtt_client_id(ctx.addr.ip())))?;
    s.flush()?;
    let cap = ctx.cap.min(64);
    let end = read_bounded(s, &mut rec.banner, cap, &|b| !matches!(mqtt::packet_len(b), Ok(None)))?;
    if rec.banner.is_empty() {
        return Err(empty_read(end));
    }
    let ack = mqtt::decode_connack(&rec.banner).map_err(|e| Fail::Error(e.to_string()))?;
    rec.mqtt_return_code = Some(ack.return_code);
    rec.banner_line = Some(mqtt::ConnectPosture::from(ack.return_code).to_string());
    Ok(())
}

fn mqtt_plain(ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect()?;
    mqtt_exchange(&mut s, ctx, rec)
}

fn mqtt_tls(ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect_tls(rec)?;
    mqtt_exchange(&mut s, ctx, rec)
}

fn lockdown(ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect()?;
    s.write_all(&lockdown::get_value_request("ProductVersion"))?;
    s.flush()?;
    let header = read_exact_bounded(&mut s, 4)?;
    rec.banner.extend_from_slice(&header);
    let header: [u8; 4] = header.as_slice().try_into().expect("four bytes read");
    let len = lockdown::frame_len(header, ctx.cap.saturating_sub(4)).map_err(|e| Fail::Error(e.to_string()))?;
    let payload = read_exact_bounded(&mut s, len)?;
    rec.banner.extend_from_slice(&payload);
    let dict = lockdown::decode_dict(&payload).map_err(|e| Fail::Error(e.to_string()))?;
    rec.lockdown_product_version = lockdown::reply_value(&dict);
    Ok(())
}

fn ntp(ctx: &Ctx, rec: &mut GrabRecord) -> Result<(), Fail> {
    rec.banner = ctx
        .connector
        .udp_exchange(ctx.addr, &banner::ntp_request(), ctx.timeout, ctx.cap)?;
    match banner::parse_ntp(&rec.banner) {
        Parsed::Valid(line) => {
            rec.banner_line = Some(line);
            Ok(())
        }
        Parsed::Invalid(why) => Err(Fail::Error(why)),
        Parsed::Opaque => Ok(()),
    }
}

fn line_protocol(ctx: &Ctx, req: &[u8], rec: &mut GrabRecord) -> Result<(), Fail> {
    let mut s = ctx.connect()?;
    s.write_all(req)?;
    s.flush()?;
    let end = read_bounded(&mut s, &mut rec.banner, ctx.cap, &|_| false)?;
    if rec.banner.is_empty() {
        return Err(empty_read(end));
    }
    Ok(())
}

fn fixed_spec(name: &str, port: u16, kind: ProbeKind) -> ServiceSpec {
    ServiceSpec::new(name, port, L4::Tcp, kind)
}

/// GetValue(ProductVersion) against TCP 62078.
pub fn lockdown_query(connector: &dyn Connector, ip: IpAddr, timeout: Duration) -> Result<Option<String>, GrabOutcome> {
    let spec = fixed_spec("iphone-sync", 62078, ProbeKind::LockdownQuery);
    let rec = grab(connector, SocketAddr::new(ip, spec.port), &spec, timeout, DEFAULT_CAP);
    match rec.outcome {
        GrabOutcome::Responded => Ok(rec.lockdown_product_version),
        other => Err(other),
    }
}

/// CONNECT to a broker (TLS when `port` is 8883) and return the CONNACK code.
pub fn mqtt_connect(connector: &dyn Connector, ip: IpAddr, port: u16, timeout: Duration) -> Result<u8, GrabOutcome> {
    let kind = if port == 8883 {
        ProbeKind::MqttConnectTls
    } else {
        ProbeKind::MqttConnect
    };
    let spec = fixed_spec("mqtt", port, kind);
    let rec = grab(connector, SocketAddr::new(ip, port), &spec, timeout, DEFAULT_CAP);
    match (rec.outcome, rec.mqtt_return_code) {
        (GrabOutcome::Responded, Some(code)) => Ok(code),
        (GrabOutcome::Responded, None) => Err(GrabOutcome::Error("no CONNACK".into())),
        (other, _) => Err(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignOptions {
    pub parallelism: usize,
    pub timeout: Duration,
    pub cap: usize,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            parallelism: DEFAULT_PARALLELISM,
            timeout: DEFAULT_TIMEOUT,
            cap: DEFAULT_CAP,
        }
    }
}

/// Attempt every (target, spec) pair exactly once with bounded parallelism.
///
/// Records come back in target-major, spec-minor order regardless of
/// completion order. Duplicate targets are attempted once.
pub fn run_grab_campaign(
    connector: &dyn Connector,
    targets: &[IpAddr],
    specs: &[ServiceSpec],
    opts: &CampaignOptions,
) -> Vec<GrabRecord> {
    let mut seen = HashSet::new();
    let targets: Vec<IpAddr> = targets.iter().copied().filter(|t| seen.insert(*t)).collect();
    let jobs = targets.len() * specs.len();
    if jobs == 0 {
        return Vec::new();
    }
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, GrabRecord)>> = Mutex::new(Vec::with_capacity(jobs));
    let workers = opts.parallelism.clamp(1, jobs);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut local = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    let (t, s) = (targets[i / specs.len()], &specs[i % specs.len()]);
                    local.push((i, grab(connector, SocketAddr::new(t, s.port), s, opts.timeout, opts.cap)));
                }
                done.lock().expect("grab worker panicked").extend(local);
            });
        }
    });
    let mut done = done.into_inner().expect("grab worker panicked");
    done.sort_unstable_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Error)]
#[error("grab log line {line}: {source}")]
pub struct GrabLogError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// One JSON object per line.
pub fn format_log(records: &[GrabRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("grab records always serialise"));
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<GrabRecord>, GrabLogError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| GrabLogError { line: i + 1, source }))
        .collect()
}

/// Addresses with at least one responded service, and how many distinct ports answered.
pub fn distinct_ports(records: &[GrabRecord]) -> std::collections::BTreeMap<IpAddr, usize> {
    let mut ports: std::collections::BTreeMap<IpAddr, HashSet<u16>> = Default::default();
    for r in records.iter().filter(|r| r.outcome.is_responded()) {
        ports.entry(r.address).or_default().insert(r.port);
    }
    ports.into_iter().map(|(a, p)| (a, p.len())).collect()
}

/// In-memory stream used by unit tests: scripted reply, captured writes.
#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::io::Read;
    use std::sync::Arc;

    pub struct Scripted {
        pub reply: Vec<u8>,
        pub written: Arc<Mutex<Vec<u8>>>,
        pub pos: usize,
        pub then_idle: bool,
    }

    impl Read for Scripted {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            if self.pos >= self.reply.len() {
                return if self.then_idle {
                    Err(io::ErrorKind::TimedOut.into())
                } else {
                    Ok(0)
                };
            }
            let n = buf.len().min(self.reply.len() - self.pos);
            buf[..n].copy_from_slice(&self.reply[self.pos..self.pos + n]);
            self.pos += n;
            Ok(n)
        }
    }

    impl Write for Scripted {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.written.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    pub struct OneShot {
        pub reply: Vec<u8>,
        pub then_idle: bool,
        pub written: Arc<Mutex<Vec<u8>>>,
        pub refuse: bool,
    }

    impl OneShot {
        pub fn new(reply: &[u8]) -> Self {
            Self {
                reply: reply.to_vec(),
                then_idle: false,
                written: Default::default(),
                refuse: false,
            }
        }
    }

    impl Connector for OneShot {
        fn connect_tcp(&self, _: SocketAddr, _: Duration) -> Result<Box<dyn Stream>, ConnectError> {
            if self.refuse {
                return Err(ConnectError::Refused);
            }
            Ok(Box::new(Scripted {
                reply: self.reply.clone(),
                written: self.written.clone(),
                pos: 0,
                then_idle: self.then_idle,
            }))
        }

        fn udp_exchange(&self, _: SocketAddr, req: &[u8], _: Duration, cap: usize) -> Result<Vec<u8>, ConnectError> {
            self.written.lock().unwrap().extend_from_slice(req);
            let mut r = self.reply.clone();
            r.truncate(cap);
            Ok(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::OneShot;
    use super::*;

    fn run(c: &OneShot, name: &str, port: u16, kind: ProbeKind) -> GrabRecord {
        let spec = ServiceSpec::new(name, port, L4::Tcp, kind);
        grab(c, SocketAddr::new("2001:db8::1".parse().unwrap(), port), &spec, DEFAULT_TIMEOUT, DEFAULT_CAP)
    }

    #[test]
    fn http_server_header_captured() {
        let c = OneShot::new(b"HTTP/1.1 200 OK\r\nServer: HP HTTP Server; HP Smart Tank 580; Serial Number: S1\r\nContent-Length: 0\r\n\r\n");
        let r = run(&c, "http", 80, ProbeKind::HttpGet);
        assert_eq!(r.outcome, GrabOutcome::Responded);
        assert_eq!(r.http_status, Some(200));
        assert!(r.http_server_header.unwrap().starts_with("HP HTTP Server;"));
        assert!(c.written.lock().unwrap().starts_with(b"GET / HTTP/1.1\r\n"));
    }

    #[test]
    fn refused_and_timeout() {
        let mut c = OneShot::new(b"");
        c.refuse = true;
        assert_eq!(run(&c, "ssh", 22, ProbeKind::BannerRead).outcome, GrabOutcome::Refused);
        let mut c = OneShot::new(b"");
        c.then_idle = true;
        assert_eq!(run(&c, "ssh", 22, ProbeKind::BannerRead).outcome, GrabOutcome::Timeout);
    }

    #[test]
    fn banner_cap_enforced() {
        let mut c = OneShot::new(&vec![b'x'; 200_000]);
        c.then_idle = true;
        let r = run(&c, "mysql", 3306, ProbeKind::BannerRead);
        assert_eq!(r.outcome, GrabOutcome::Responded);
        assert_eq!(r.banner.len(), DEFAULT_CAP);
    }

    #[test]
    fn mqtt_closed_immediately() {
        let c = OneShot::new(b"");
        let r = run(&c, "mqtt", 1883, ProbeKind::MqttConnect);
        assert_eq!(r.outcome, GrabOutcome::Error("connection_closed".into()));
    }

    #[test]
    fn mqtt_unauthorized() {
        let c = OneShot::new(&mqtt::encode_connack(false, 5));
        let r = run(&c, "mqtt", 1883, ProbeKind::MqttConnect);
        assert_eq!(r.outcome, GrabOutcome::Responded);
        assert_eq!(r.mqtt_return_code, Some(5));
        assert_eq!(r.banner_line.as_deref(), Some("unauthorized"));
    }

    #[test]
    fn lockdown_hostile_length() {
        let c = OneShot::new(&(1u32 << 31).to_be_bytes());
        let r = run(&c, "iphone-sync", 62078, ProbeKind::LockdownQuery);
        match r.outcome {
            GrabOutcome::Error(d) => assert!(d.starts_with("bounds"), "{d}"),
            o => panic!("unexpected {o:?}"),
        }
    }

    #[test]
    fn lockdown_missing_value() {
        let entries = std::collections::BTreeMap::from([("Key".to_string(), "ProductVersion".to_string())]);
        let c = OneShot::new(&lockdown::frame(&lockdown::encode_dict(&entries)));
        let r = run(&c, "iphone-sync", 62078, ProbeKind::LockdownQuery);
        assert_eq!(r.outcome, GrabOutcome::Responded);
        assert_eq!(r.lockdown_product_version, None);
    }

    #[test]
    fn invalid_greeting_is_error() {
        let c = OneShot::new(b"HTTP/1.0 400 Bad Request\r\n");
        assert!(matches!(run(&c, "ftp", 21, ProbeKind::BannerRead).outcome, GrabOutcome::Error(_)));
    }

    #[test]
    fn log_round_trip() {
        let c = OneShot::new(b"SSH-2.0-OpenSSH_9.6\r\n");
        let r = run(&c, "ssh", 22, ProbeKind::BannerRead);
        let text = format_log(std::slice::from_ref(&r));
        assert!(text.contains("\"banner\":\"U1NILTIuMC1PcGVuU1NIXzkuNg0K\""), "{text}");
        assert_eq!(parse_log(&text).unwrap(), vec![r]);
        assert_eq!(parse_log("{").unwrap_err().line, 1);
    }

    #[test]
    fn campaign_is_cartesian() {
        let c = OneShot::new(b"220 ok\r\n");
        let targets: Vec<IpAddr> = ["2001:db8::1", "2001:db8::2", "192.0.2.1", "2001:db8::1"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let specs = default_services();
        let recs = run_grab_campaign(&c, &targets, &specs, &CampaignOptions::default());
        assert_eq!(recs.len(), 3 * 25);
        assert_eq!(recs[0].address, targets[0]);
        assert_eq!(recs[25].address, targets[1]);
        assert_eq!(recs[1].service, specs[1].name);
    }
}
