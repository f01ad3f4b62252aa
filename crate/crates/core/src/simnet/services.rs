//! Application services of the simulated world.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use rustls::pki_types::{PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::{ServerConfig, ServerConnection};

use super::{Behavior, Endpoint, Firewall, SimService, World};
use crate::grab::config::L4;
use crate::grab::connector::{ConnectError, Connector, Stream};
use crate::grab::{banner, http, lockdown, mqtt, tls};

/// One connection (or datagram exchange) as seen by a simulated service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transcript {
    pub address: SocketAddr,
    /// Application requests the service recognised.
    pub requests: u32,
    /// Byte batches the service could not parse (plaintext sent to a TLS port).
    pub rejected: u32,
}

#[derive(Debug, Default)]
pub(crate) struct TranscriptLog(Mutex<Vec<Transcript>>);

impl TranscriptLog {
    fn push(&self, t: Transcript) {
        self.0.lock().expect("transcript log poisoned").push(t);
    }

    pub fn snapshot(&self) -> Vec<Transcript> {
        let mut v = self.0.lock().expect("transcript log poisoned").clone();
        v.sort();
        v
    }
}

#[derive(Debug, Default)]
struct Step {
    out: Vec<u8>,
    close: bool,
}

impl Step {
    fn reply(out: Vec<u8>) -> Self {
        Step { out, close: true }
    }

    fn close() -> Self {
        Step {
            out: Vec::new(),
            close: true,
        }
    }
}

trait Session: Send {
    fn greet(&mut self) -> Step {
        Step::default()
    }

    /// Consume buffered client bytes.
    fn on_data(&mut self, inbox: &mut Vec<u8>) -> Step;

    fn requests(&self) -> u32;

    fn rejected(&self) -> u32 {
        0
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        301 => "Moved Permanently",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        _ => "Status",
    }
}

fn http_response(status: u16, server: Option<&str>, body: &str) -> Vec<u8> {
    let mut out = format!("HTTP/1.1 {status} {}\r\n", reason(status));
    if let Some(s) = server {
        out.push_str(&format!("Server: {s}\r\n"));
    }
    out.push_str(&format!(
        "Content-Type: text/html\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ));
    out.into_bytes()
}

pub(crate) fn hp_server_header(model: &str, serial: &str, date: Option<&str>, build: Option<&str>) -> String {
    let mut s = format!("HP HTTP Server; {model}; Serial Number: {serial}");
    if let Some(d) = date {
        s.push_str(&format!("; Built: {d}"));
        if let Some(b) = build {
            s.push_str(&format!(" {{{b}}}"));
        }
    }
    s
}

pub(crate) const DAHUA_PAGE: &str =
    "<html><head><title>WEB SERVICE</title><script>var appname=\"cameraNewConfig\";</script></head><body></body></html>";
pub(crate) const NANOLEAF_PAGE: &str = "<html><body><h1>Nanoleaf</h1><form method=\"POST\" action=\"/upload\" \
     enctype=\"multipart/form-data\"><input type=\"file\" name=\"firmware\">\
     <input type=\"submit\" value=\"Upload Firmware\"></form></body></html>";

const TELNET_NEGOTIATION: [u8; 9] = [255, 253, 24, 255, 251, 1, 255, 251, 3];
/// TLS fatal alert, protocol_version.
const TLS_ALERT: [u8; 7] = [0x15, 0x03, 0x03, 0x00, 0x02, 0x02, 0x46];

struct Plain {
    behavior: Behavior,
    requests: u32,
}

impl Plain {
    fn new(behavior: Behavior) -> Self {
        Self { behavior, requests: 0 }
    }

    fn http(&mut self, inbox: &mut Vec<u8>, status: u16, server: Option<&str>, body: &str) -> Step {
        if !http::request_complete(inbox) {
            return Step::default();
        }
        self.requests += 1;
        inbox.clear();
        Step::reply(http_response(status, server, body))
    }
}

impl Session for Plain {
    fn greet(&mut self) -> Step {
        match &self.behavior {
            Behavior::Telnet { prompt } => {
                let mut out = TELNET_NEGOTIATION.to_vec();
                out.extend_from_slice(format!("\r\n{prompt}").as_bytes());
                Step { out, close: false }
            }
            Behavior::Banner { text } => Step {
                out: text.clone().into_bytes(),
                close: false,
            },
            Behavior::MqttClose => Step::close(),
            _ => Step::default(),
        }
    }

    fn on_data(&mut self, inbox: &mut Vec<u8>) -> Step {
        match self.behavior.clone() {
            Behavior::HpHttp {
                model,
                serial,
                build_date,
                build,
            } => {
                let server = hp_server_header(&model, &serial, build_date.as_deref(), build.as_deref());
                let body = format!("<html><head><title>{model}</title></head></html>");
                self.http(inbox, 200, Some(&server), &body)
            }
            Behavior::DahuaHtml => self.http(inbox, 200, None, DAHUA_PAGE),
            Behavior::NanoleafHtml => self.http(inbox, 200, Some("nanoleaf"), NANOLEAF_PAGE),
            Behavior::Http { status, server, body } => self.http(inbox, status, server.as_deref(), &body),
            Behavior::MqttBroker { return_code } => match mqtt::packet_len(inbox) {
                Ok(None) => Step::default(),
                Ok(Some(n)) => {
                    self.requests += 1;
                    let ok = mqtt::decode_connect(&inbox[..n]).is_ok();
                    inbox.clear();
                    if ok {
                        Step::reply(mqtt::encode_connack(false, return_code))
                    } else {
                        Step::close()
                    }
                }
                Err(_) => Step::close(),
            },
            Behavior::LockdownServer { version } => match lockdown_request(inbox) {
                None => Step::default(),
                Some(req) => {
                    self.requests += 1;
                    let mut reply = std::collections::BTreeMap::new();
                    if let Some(key) = req {
                        reply.insert("Key".to_string(), key);
                    }
                    reply.insert("Request".to_string(), "GetValue".to_string());
                    if let Some(v) = version {
                        reply.insert("Value".to_string(), v);
                    }
                    Step::reply(lockdown::frame(&lockdown::encode_dict(&reply)))
                }
            },
            Behavior::LockdownHostile { declared_length } => match lockdown_request(inbox) {
                None => Step::default(),
                Some(_) => {
                    self.requests += 1;
                    let mut out = declared_length.to_be_bytes().to_vec();
                    out.extend_from_slice(b"<?xml version=\"1.0\"?>");
                    Step::reply(out)
                }
            },
            Behavior::Tls { .. } => unreachable!("TLS is wrapped by TlsSession"),
            Behavior::Telnet { .. } | Behavior::Banner { .. } | Behavior::NtpServer { .. } | Behavior::MqttClose => {
                if !inbox.is_empty() {
                    self.requests += 1;
                    inbox.clear();
                }
                Step::default()
            }
        }
    }

    fn requests(&self) -> u32 {
        self.requests
    }
}

/// A complete framed lockdown request in `inbox`: `Some(requested key)`.
fn lockdown_request(inbox: &mut Vec<u8>) -> Option<Option<String>> {
    let header: [u8; 4] = inbox.get(..4)?.try_into().ok()?;
    let n = u32::from_be_bytes(header) as usize;
    let payload = inbox.get(4..4 + n)?;
    let key = lockdown::decode_dict(payload)
        .ok()
        .and_then(|d| d.get("Key").and_then(plist::Value::as_string).map(str::to_string));
    inbox.clear();
    Some(key)
}

fn server_config(cn: &str) -> Arc<ServerConfig> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<ServerConfig>>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().expect("cert cache poisoned");
    cache
        .entry(cn.to_string())
        .or_insert_with(|| {
            let key = rcgen::KeyPair::generate().expect("key generation");
            let mut params = rcgen::CertificateParams::new(Vec::<String>::new()).expect("empty SAN list");
            params.distinguished_name = rcgen::DistinguishedName::new();
            params.distinguished_name.push(rcgen::DnType::CommonName, cn);
            let cert = params.self_signed(&key).expect("self-signed certificate");
            let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.serialize_der()));
            let cfg = ServerConfig::builder_with_provider(tls::provider())
                .with_safe_default_protocol_versions()
                .expect("ring supports the default protocol versions")
                .with_no_client_auth()
                .with_single_cert(vec![cert.der().clone()], key)
                .expect("valid certificate and key");
            Arc::new(cfg)
        })
        .clone()
}

struct TlsSession {
    conn: ServerConnection,
    inner: Box<dyn Session>,
    plain: Vec<u8>,
    greeted: bool,
    rejected: u32,
}

impl TlsSession {
    fn new(cn: &str, inner: Box<dyn Session>) -> Self {
        Self {
            conn: ServerConnection::new(server_config(cn)).expect("server connection"),
            inner,
            plain: Vec::new(),
            greeted: false,
            rejected: 0,
        }
    }

    fn flush_tls(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        while self.conn.wants_write() {
            if self.conn.write_tls(&mut out).is_err() {
                break;
            }
        }
        out
    }
}

impl Session for TlsSession {
    fn on_data(&mut self, inbox: &mut Vec<u8>) -> Step {
        let mut rd = inbox.as_slice();
        while !rd.is_empty() {
            if self.conn.read_tls(&mut rd).is_err() {
                break;
            }
        }
        inbox.clear();
        if self.conn.process_new_packets().is_err() {
            self.rejected += 1;
            return Step::reply(TLS_ALERT.to_vec());
        }
        let mut close = false;
        if !self.conn.is_handshaking() && !self.greeted {
            self.greeted = true;
            let g = self.inner.greet();
            let _ = self.conn.writer().write_all(&g.out);
            close |= g.close;
        }
        let mut chunk = [0u8; 4096];
        loop {
            match self.conn.reader().read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => self.plain.extend_from_slice(&chunk[..n]),
            }
        }
        if !self.plain.is_empty() {
            let step = self.inner.on_data(&mut self.plain);
            let _ = self.conn.writer().write_all(&step.out);
            close |= step.close;
        }
        if close {
            self.conn.send_close_notify();
        }
        Step {
            out: self.flush_tls(),
            close,
        }
    }

    fn requests(&self) -> u32 {
        self.inner.requests()
    }

    fn rejected(&self) -> u32 {
        self.rejected
    }
}

fn session(b: &Behavior) -> Box<dyn Session> {
    match b {
        Behavior::Tls { cn, inner } => Box::new(TlsSession::new(cn, session(inner))),
        other => Box::new(Plain::new(other.clone())),
    }
}

/// Server end of a simulated TCP connection. Reads with nothing pending
/// fail with `TimedOut` as a socket read timeout would.
struct SimStream {
    session: Box<dyn Session>,
    inbox: Vec<u8>,
    outbox: VecDeque<u8>,
    closed: bool,
    address: SocketAddr,
    log: Arc<TranscriptLog>,
}

impl SimStream {
    fn open(b: &Behavior, address: SocketAddr, log: Arc<TranscriptLog>) -> Self {
        let mut s = SimStream {
            session: session(b),
            inbox: Vec::new(),
            outbox: VecDeque::new(),
            closed: false,
            address,
            log,
        };
        let g = s.session.greet();
        s.apply(g);
        s
    }

    fn apply(&mut self, step: Step) {
        self.outbox.extend(step.out);
        self.closed |= step.close;
    }
}

impl Read for SimStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.outbox.is_empty() {
            return if self.closed {
                Ok(0)
            } else {
                Err(io::ErrorKind::TimedOut.into())
            };
        }
        let n = buf.len().min(self.outbox.len());
        for (dst, src) in buf.iter_mut().zip(self.outbox.drain(..n)) {
            *dst = src;
        }
        Ok(n)
    }
}

impl Write for SimStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if !self.closed {
            self.inbox.extend_from_slice(buf);
            let step = self.session.on_data(&mut self.inbox);
            self.apply(step);
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for SimStream {
    fn drop(&mut self) {
        self.log.push(Transcript {
            address: self.address,
            requests: self.session.requests(),
            rejected: self.session.rejected(),
        });
    }
}

pub(crate) fn ntp_reply(stratum: u8) -> Vec<u8> {
    let mut r = vec![0u8; banner::NTP_PACKET_LEN];
    r[0] = (4 << 3) | 4;
    r[1] = stratum;
    r[2] = 6;
    r[3] = 0xec;
    if stratum <= 1 {
        r[12..16].copy_from_slice(b"GPS\0");
    } else {
        r[12..16].copy_from_slice(&[192, 0, 2, 1]);
    }
    r
}

/// Application-layer access to the simulated world.
#[derive(Debug, Clone)]
pub struct SimConnector {
    world: Arc<World>,
    log: Arc<TranscriptLog>,
}

enum Reach<'a> {
    Service(&'a [SimService]),
    Stub(Option<&'a Behavior>),
    Unreachable,
    Nowhere,
}

impl SimConnector {
    pub(crate) fn new(world: Arc<World>, log: Arc<TranscriptLog>) -> Self {
        Self { world, log }
    }

    fn reach(&self, ip: IpAddr) -> Reach<'_> {
        let w = &*self.world;
        let ep = match ip {
            IpAddr::V6(v6) => w.resolve_v6(v6),
            IpAddr::V4(v4) => w.resolve_v4(v4),
        };
        match ep {
            Endpoint::Host { net, sub, host } => {
                let s = w.subnet(net, sub);
                match s.cpe.firewall {
                    Firewall::DefaultDeny => Reach::Unreachable,
                    Firewall::DefaultAllow => Reach::Service(&s.hosts[host].services),
                }
            }
            Endpoint::Aliased { net, sub } => Reach::Stub(w.subnet(net, sub).alias_stub.as_ref()),
            Endpoint::Wan { net, sub } => Reach::Service(&w.subnet(net, sub).cpe.services),
            Endpoint::V4 { host } => Reach::Service(&w.scenario.v4_hosts[host].services),
            Endpoint::Unassigned { .. } => Reach::Unreachable,
            Endpoint::Nowhere => Reach::Nowhere,
        }
    }

    fn behavior(&self, addr: SocketAddr, l4: L4) -> Result<&Behavior, ConnectError> {
        match self.reach(addr.ip()) {
            Reach::Service(services) => services
                .iter()
                .find(|s| s.port == addr.port() && s.transport == l4)
                .map(|s| &s.behavior)
                .ok_or(ConnectError::Refused),
            Reach::Stub(Some(b)) if l4 == L4::Tcp => Ok(b),
            Reach::Stub(_) => Err(ConnectError::Refused),
            Reach::Unreachable => Err(ConnectError::Unreachable),
            Reach::Nowhere => Err(ConnectError::Timeout),
        }
    }
}

impl Connector for SimConnector {
    fn connect_tcp(&self, addr: SocketAddr, _timeout: Duration) -> Result<Box<dyn Stream>, ConnectError> {
        let b = self.behavior(addr, L4::Tcp)?;
        Ok(Box::new(SimStream::open(b, addr, self.log.clone())))
    }

    fn udp_exchange(
        &self,
        addr: SocketAddr,
        request: &[u8],
        _timeout: Duration,
        cap: usize,
    ) -> Result<Vec<u8>, ConnectError> {
        let b = self.behavior(addr, L4::Udp)?;
        self.log.push(Transcript {
            address: addr,
            requests: 1,
            rejected: 0,
        });
        match b {
            Behavior::NtpServer { stratum } if request.len() >= banner::NTP_PACKET_LEN => {
                let mut r = ntp_reply(*stratum);
                r.truncate(cap);
                Ok(r)
            }
            _ => Err(ConnectError::Timeout),
        }
    }
}
