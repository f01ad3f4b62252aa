//! ICMPv6 echo probing.
//!
//! [`run_scan`] walks a [`ScanPlan`], paces echo requests through a
//! [`Transport`] and concurrently drains inbound ICMPv6 messages. Replies are
//! matched back to probes with the stateless token in [`token`]; anything
//! that fails validation is counted as spurious and dropped.

pub mod icmp6;
#[cfg(feature = "live")]
pub mod live;
pub mod rate;
pub mod token;

use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;

use crate::targetgen::ScanPlan;

pub use rate::{RateLimit, TokenBucket};
pub use token::{encode_token, ScanKey, Token};

use icmp6::Message;

/// Hop limit of outgoing probes.
pub const PROBE_HOP_LIMIT: u8 = 255;
pub const DEFAULT_QUIESCENCE: Duration = Duration::from_secs(8);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport closed")]
    Closed,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An ICMPv6 message as received, before any parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInbound {
    pub source: Ipv6Addr,
    pub hop_limit: u8,
    /// ICMPv6 message starting at the type byte.
    pub message: Vec<u8>,
    /// Receive time in microseconds since the transport opened, when the
    /// transport keeps its own clock.
    pub timestamp_us: Option<u64>,
}

/// Packet I/O used by the prober. Implementations must tolerate concurrent
/// `send` and `poll` from different threads.
pub trait Transport: Send + Sync {
    fn send(&self, destination: Ipv6Addr, hop_limit: u8, message: &[u8]) -> Result<(), TransportError>;

    /// Return inbound messages, waiting up to `wait` when none are queued.
    fn poll(&self, wait: Duration) -> Result<Vec<RawInbound>, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResponseKind {
    EchoReply,
    DestUnreachable(u8),
    Other { icmp_type: u8, code: u8 },
}

impl ResponseKind {
    pub fn is_error(&self) -> bool {
        match self {
            ResponseKind::EchoReply => false,
            ResponseKind::DestUnreachable(_) => true,
            ResponseKind::Other { icmp_type, .. } => *icmp_type < 128,
        }
    }

    fn code(&self) -> u8 {
        match self {
            ResponseKind::EchoReply => 0,
            ResponseKind::DestUnreachable(c) => *c,
            ResponseKind::Other { code, .. } => *code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResponseRecord {
    pub probed_target: Ipv6Addr,
    pub source: Ipv6Addr,
    pub kind: ResponseKind,
    pub hop_limit_received: u8,
    pub timestamp_us: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct LogParseError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ResponseRecord {
    /// `probed_target,source,kind,code,hop_limit,timestamp_us`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ResponseKind::EchoReply => "echo_reply".to_string(),
            ResponseKind::DestUnreachable(_) => "dest_unreachable".to_string(),
            ResponseKind::Other { icmp_type, .. } => format!("other:{icmp_type}"),
        };
        write!(
            f,
            "{},{},{},{},{},{}",
            self.probed_target,
            self.source,
            kind,
            self.kind.code(),
            self.hop_limit_received,
            self.timestamp_us
        )
    }
}

impl FromStr for ResponseRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = s.trim().split(',').collect();
        let [target, source, kind, code, hl, ts] = f[..] else {
            return Err(format!("expected 6 fields, found {}", f.len()));
        };
        let addr = |a: &str| a.parse::<Ipv6Addr>().map_err(|_| format!("bad address '{a}'"));
        let code: u8 = code.parse().map_err(|_| format!("bad code '{code}'"))?;
        let kind = match kind {
            "echo_reply" => ResponseKind::EchoReply,
            "dest_unreachable" => ResponseKind::DestUnreachable(code),
            k => match k.strip_prefix("other:").and_then(|t| t.parse().ok()) {
                Some(icmp_type) => ResponseKind::Other { icmp_type, code },
                None => return Err(format!("bad kind '{k}'")),
            },
        };
        Ok(ResponseRecord {
            probed_target: addr(target)?,
            source: addr(source)?,
            kind,
            hop_limit_received: hl.parse().map_err(|_| format!("bad hop limit '{hl}'"))?,
            timestamp_us: ts.parse().map_err(|_| format!("bad timestamp '{ts}'"))?,
        })
    }
}

pub fn format_log(records: &[ResponseRecord]) -> String {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        (a.probed_target, a.source, a.kind, a.timestamp_us).cmp(&(b.probed_target, b.source, b.kind, b.timestamp_us))
    });
    let mut out = String::new();
    for r in &sorted {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<ResponseRecord>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|reason| LogParseError { line: i + 1, reason }))
        .collect()
}

/// Match an inbound message to a probe of this scan.
pub fn validate_inbound(raw: &RawInbound, key: ScanKey) -> Option<(Ipv6Addr, ResponseKind)> {
    match icmp6::decode(&raw.message)? {
        Message::EchoReply(echo) => token::validate_echo(&echo, key).map(|t| (t, ResponseKind::EchoReply)),
        Message::Error {
            icmp_type,
            code,
            quoted_destination,
            quoted_echo,
        } => {
            let target = token::validate_error(quoted_destination, quoted_echo.as_ref(), key)?;
            let kind = if icmp_type == icmp6::DEST_UNREACHABLE {
                ResponseKind::DestUnreachable(code)
            } else {
                ResponseKind::Other { icmp_type, code }
            };
            Some((target, kind))
        }
        Message::EchoRequest(_) | Message::Other { .. } => None,
    }
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub rate: RateLimit,
    /// Receiver stops after this long without inbound traffic once sending ends.
    pub quiescence: Duration,
    pub key: ScanKey,
    /// Parallel senders, each walking one shard of the plan.
    pub senders: u64,
}

impl ScanConfig {
    pub fn new(rate: RateLimit, key: ScanKey) -> Self {
        Self {
            rate,
            quiescence: DEFAULT_QUIESCENCE,
            key,
            senders: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub sent: u64,
    pub received: u64,
    pub spurious: u64,
    pub send_duration: Duration,
    /// Set when a transport failure stopped the scan early.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScanOutcome {
    pub records: Vec<ResponseRecord>,
    pub stats: ScanStats,
}

impl ScanOutcome {
    pub fn is_partial(&self) -> bool {
        self.stats.aborted.is_some()
    }
}

const POLL_SLICE: Duration = Duration::from_millis(10);

pub fn run_scan(plan: &ScanPlan, transport: &dyn Transport, config: &ScanConfig) -> ScanOutcome {
    let start = Instant::now();
    let bucket = Mutex::new(TokenBucket::new(config.rate, start));
    let sent = AtomicU64::new(0);
    let sending = AtomicBool::new(true);
    let abort: Mutex<Option<String>> = Mutex::new(None);
    let send_end = Mutex::new(start);
    let shards = config.senders.max(1);
    info!("probing {} targets at {} pps", plan.budget(), config.rate.pps());

    let mut records = Vec::new();
    let (mut received, mut spurious) = (0u64, 0u64);

    std::thread::scope(|scope| {
        scope.spawn(|| {
            std::thread::scope(|inner| {
                for k in 0..shards {
                    let (bucket, sent, abort, sending) = (&bucket, &sent, &abort, &sending);
                    inner.spawn(move || {
                        for target in plan.shard(k, shards) {
                            if !sending.load(Ordering::Relaxed) {
                                return;
                            }
                            bucket.lock().unwrap().acquire();
                            let msg = icmp6::encode_echo_request(&encode_token(target.address, config.key).into_echo());
                            if let Err(e) = transport.send(target.address, PROBE_HOP_LIMIT, &msg) {
                                warn!("send to {} failed: {e}", target.address);
                                abort.lock().unwrap().get_or_insert(e.to_string());
                                sending.store(false, Ordering::Relaxed);
                                return;
                            }
                            sent.fetch_add(1, Ordering::Relaxed);
                        }
                    });
                }
            });
            *send_end.lock().unwrap() = Instant::now();
            sending.store(false, Ordering::Release);
        });

        let mut last_inbound: Option<Instant> = None;
        loop {
            let done = !sending.load(Ordering::Acquire);
            match transport.poll(POLL_SLICE) {
                Ok(batch) => {
                    if !batch.is_empty() {
                        last_inbound = Some(Instant::now());
                    }
                    for raw in batch {
                        received += 1;
                        match validate_inbound(&raw, config.key) {
                            Some((probed_target, kind)) => records.push(ResponseRecord {
                                probed_target,
                                source: raw.source,
                                kind,
                                hop_limit_received: raw.hop_limit,
                                timestamp_us: raw
                                    .timestamp_us
                                    .unwrap_or_else(|| start.elapsed().as_micros() as u64),
                            }),
                            None => spurious += 1,
                        }
                    }
                }
                Err(e) => {
                    warn!("receive failed: {e}");
                    abort.lock().unwrap().get_or_insert(e.to_string());
                    sending.store(false, Ordering::Relaxed);
                    break;
                }
            }
            if done {
                let end = *send_end.lock().unwrap();
                let quiet_since = last_inbound.map_or(end, |t| t.max(end));
                if quiet_since.elapsed() >= config.quiescence {
                    break;
                }
            }
        }
    });

    let stats = ScanStats {
        sent: sent.into_inner(),
        received,
        spurious,
        send_duration: send_end.into_inner().unwrap().duration_since(start),
        aborted: abort.into_inner().unwrap(),
    };
    debug!("scan finished: {stats:?}");
    ScanOutcome { records, stats }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_round_trip() {
        let r = ResponseRecord {
            probed_target: "2001:db8:42::3".parse().unwrap(),
            source: "2001:db9:0:1::1".parse().unwrap(),
            kind: ResponseKind::DestUnreachable(1),
            hop_limit_received: 243,
            timestamp_us: 1200,
        };
        let line = r.to_string();
        assert_eq!(line, "2001:db8:42::3,2001:db9:0:1::1,dest_unreachable,1,243,1200");
        assert_eq!(line.parse::<ResponseRecord>().unwrap(), r);
        let other = ResponseRecord {
            kind: ResponseKind::Other { icmp_type: 3, code: 0 },
            ..r
        };
        assert_eq!(other.to_string().parse::<ResponseRecord>().unwrap(), other);
    }

    #[test]
    fn parse_log_reports_line() {
        let err = parse_log("2001:db8::1,2001:db8::1,echo_reply,0,60,0\nnope\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn unsolicited_messages_rejected() {
        let key = ScanKey(5);
        let raw = |message: Vec<u8>| RawInbound {
            source: "2001:db8::1".parse().unwrap(),
            hop_limit: 60,
            message,
            timestamp_us: None,
        };
        let echo = encode_token("2001:db8::1".parse().unwrap(), key).into_echo();
        assert!(validate_inbound(&raw(icmp6::encode_echo_reply(&echo)), key).is_some());
        assert!(validate_inbound(&raw(icmp6::encode_echo_request(&echo)), key).is_none());
        assert!(validate_inbound(&raw(icmp6::encode_echo_reply(&echo)), ScanKey(6)).is_none());
        assert!(validate_inbound(&raw(vec![135, 0, 0, 0]), key).is_none());
    }
}
