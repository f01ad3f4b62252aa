//! ICMPv6 behaviour of the simulated world.

use std::collections::VecDeque;
use std::net::Ipv6Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::{Endpoint, Firewall, World};
use crate::probe::icmp6::{self, unreach, Message};
use crate::probe::{RawInbound, Transport, TransportError};

/// Default inbound queue bound; further events are dropped and counted.
pub const DEFAULT_QUEUE: usize = 1 << 21;

/// Scanner source address used in quoted packets.
const SCANNER: Ipv6Addr = Ipv6Addr::new(0x2001, 0xdb8, 0xffff, 0, 0, 0, 0, 0x5ca);

#[derive(Debug)]
pub struct SimTransport {
    world: Arc<World>,
    queue: Mutex<VecDeque<RawInbound>>,
    ready: Condvar,
    ordinal: AtomicU64,
    dropped: AtomicU64,
    capacity: usize,
}

impl SimTransport {
    pub(crate) fn new(world: Arc<World>) -> Self {
        Self {
            world,
            queue: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            ordinal: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            capacity: DEFAULT_QUEUE,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    /// Probes received so far.
    pub fn sent(&self) -> u64 {
        self.ordinal.load(Ordering::Relaxed)
    }

    /// Events lost to a full queue.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// The reply `destination` produces for an echo request, as
    /// `(source, received hop limit, distance, message)`.
    fn answer(&self, destination: Ipv6Addr, hop_limit: u8, request: &[u8]) -> Option<(Ipv6Addr, u8, u8, Vec<u8>)> {
        let Some(Message::EchoRequest(echo)) = icmp6::decode(request) else {
            return None;
        };
        let w = &self.world;
        let cpe_reply = |net: usize, sub: usize| {
            let cpe = &w.subnet(net, sub).cpe;
            (cpe.initial_hop_limit - cpe.base_distance, cpe.base_distance)
        };
        let error = |net: usize, sub: usize, code: u8| {
            let (hl, d) = cpe_reply(net, sub);
            let remaining = hop_limit.saturating_sub(d);
            let msg = icmp6::encode_error(icmp6::DEST_UNREACHABLE, code, SCANNER, destination, remaining, request);
            Some((w.wan(net, sub), hl, d, msg))
        };
        match w.resolve_v6(destination) {
            Endpoint::Aliased { net, sub } | Endpoint::Wan { net, sub } => {
                let (hl, d) = cpe_reply(net, sub);
                Some((destination, hl, d, icmp6::encode_echo_reply(&echo)))
            }
            Endpoint::Host { net, sub, host } => {
                let s = w.subnet(net, sub);
                match s.cpe.firewall {
                    Firewall::DefaultDeny => error(net, sub, unreach::ADMIN_PROHIBITED),
                    Firewall::DefaultAllow => {
                        let h = &s.hosts[host];
                        let d = s.cpe.base_distance + h.extra_hops;
                        Some((destination, h.initial_hop_limit - d, d, icmp6::encode_echo_reply(&echo)))
                    }
                }
            }
            Endpoint::Unassigned { net, sub } => match w.subnet(net, sub).cpe.firewall {
                Firewall::DefaultDeny => error(net, sub, unreach::ADMIN_PROHIBITED),
                Firewall::DefaultAllow => error(net, sub, unreach::ADDRESS_UNREACHABLE),
            },
            Endpoint::V4 { .. } | Endpoint::Nowhere => None,
        }
    }
}

impl Transport for SimTransport {
    fn send(&self, destination: Ipv6Addr, hop_limit: u8, message: &[u8]) -> Result<(), TransportError> {
        let ordinal = self.ordinal.fetch_add(1, Ordering::Relaxed);
        let Some((source, hl, distance, reply)) = self.answer(destination, hop_limit, message) else {
            return Ok(());
        };
        let event = RawInbound {
            source,
            hop_limit: hl,
            message: reply,
            timestamp_us: Some(ordinal * 100 + distance as u64 * 1000),
        };
        let mut q = self.queue.lock().expect("queue poisoned");
        if q.len() >= self.capacity {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        q.push_back(event);
        drop(q);
        self.ready.notify_one();
        Ok(())
    }

    fn poll(&self, wait: Duration) -> Result<Vec<RawInbound>, TransportError> {
        let q = self.queue.lock().expect("queue poisoned");
        let (mut q, _) = self
            .ready
            .wait_timeout_while(q, wait, |q| q.is_empty())
            .expect("queue poisoned");
        Ok(q.drain(..).collect())
    }
}
