//! ICMPv6 message encoding and decoding.
//!
//! Messages are handled from the ICMPv6 header onwards, the way a raw
//! `IPPROTO_ICMPV6` socket delivers them. Checksums are left for the kernel
//! to fill in on send and are not verified on receive.

use std::net::Ipv6Addr;

pub const DEST_UNREACHABLE: u8 = 1;
pub const PACKET_TOO_BIG: u8 = 2;
pub const TIME_EXCEEDED: u8 = 3;
pub const PARAMETER_PROBLEM: u8 = 4;
pub const ECHO_REQUEST: u8 = 128;
pub const ECHO_REPLY: u8 = 129;

/// Destination Unreachable codes.
pub mod unreach {
    pub const NO_ROUTE: u8 = 0;
    pub const ADMIN_PROHIBITED: u8 = 1;
    pub const ADDRESS_UNREACHABLE: u8 = 3;
    pub const PORT_UNREACHABLE: u8 = 4;
    pub const REJECT_ROUTE: u8 = 6;
}

const NEXT_HEADER_ICMPV6: u8 = 58;
const IPV6_HEADER_LEN: usize = 40;
/// Minimum IPv6 MTU; errors never exceed it.
const MIN_MTU: usize = 1280;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Echo {
    pub identifier: u16,
    pub sequence: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    EchoRequest(Echo),
    EchoReply(Echo),
    /// An error quoting the invoking packet. `quoted_echo` is present when the
    /// quoted packet is an ICMPv6 echo request.
    Error {
        icmp_type: u8,
        code: u8,
        quoted_destination: Ipv6Addr,
        quoted_echo: Option<Echo>,
    },
    Other {
        icmp_type: u8,
        code: u8,
    },
}

fn echo_bytes(kind: u8, echo: &Echo) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + echo.payload.len());
    out.extend_from_slice(&[kind, 0, 0, 0]);
    out.extend_from_slice(&echo.identifier.to_be_bytes());
    out.extend_from_slice(&echo.sequence.to_be_bytes());
    out.extend_from_slice(&echo.payload);
    out
}

pub fn encode_echo_request(echo: &Echo) -> Vec<u8> {
    echo_bytes(ECHO_REQUEST, echo)
}

pub fn encode_echo_reply(echo: &Echo) -> Vec<u8> {
    echo_bytes(ECHO_REPLY, echo)
}

/// Build an error message quoting the packet `source -> destination` carrying
/// `invoking` as its ICMPv6 body, truncated to the minimum MTU.
pub fn encode_error(
    icmp_type: u8,
    code: u8,
    source: Ipv6Addr,
    destination: Ipv6Addr,
    hop_limit: u8,
    invoking: &[u8],
) -> Vec<u8> {
    let mut out = vec![icmp_type, code, 0, 0, 0, 0, 0, 0];
    let mut ip = [0u8; IPV6_HEADER_LEN];
    ip[0] = 0x60;
    ip[4..6].copy_from_slice(&(invoking.len() as u16).to_be_bytes());
    ip[6] = NEXT_HEADER_ICMPV6;
    ip[7] = hop_limit;
    ip[8..24].copy_from_slice(&source.octets());
    ip[24..40].copy_from_slice(&destination.octets());
    out.extend_from_slice(&ip);
    // ICMPv6 header (8) + IPv6 header (40) precede the quote.
    let room = MIN_MTU - IPV6_HEADER_LEN - 8 - IPV6_HEADER_LEN;
    out.extend_from_slice(&invoking[..invoking.len().min(room)]);
    out
}

fn parse_echo(b: &[u8]) -> Option<Echo> {
    (b.len() >= 8).then(|| Echo {
        identifier: u16::from_be_bytes([b[4], b[5]]),
        sequence: u16::from_be_bytes([b[6], b[7]]),
        payload: b[8..].to_vec(),
    })
}

pub fn decode(bytes: &[u8]) -> Option<Message> {
    if bytes.len() < 4 {
        return None;
    }
    let (icmp_type, code) = (bytes[0], bytes[1]);
    Some(match icmp_type {
        ECHO_REQUEST => Message::EchoRequest(parse_echo(bytes)?),
        ECHO_REPLY => Message::EchoReply(parse_echo(bytes)?),
        t if t < 128 => {
            let quoted = bytes.get(8..)?;
            if quoted.len() < IPV6_HEADER_LEN || quoted[0] >> 4 != 6 {
                return None;
            }
            let dst: [u8; 16] = quoted[24..40].try_into().ok()?;
            let inner = &quoted[IPV6_HEADER_LEN..];
            let quoted_echo = if quoted[6] == NEXT_HEADER_ICMPV6 && inner.first() == Some(&ECHO_REQUEST) {
                parse_echo(inner)
            } else {
                None
            };
            Message::Error {
                icmp_type,
                code,
                quoted_destination: Ipv6Addr::from(dst),
                quoted_echo,
            }
        }
        _ => Message::Other { icmp_type, code },
    })
}
