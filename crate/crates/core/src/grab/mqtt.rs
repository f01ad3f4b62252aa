//! MQTT 3.1.1 CONNECT / CONNACK.

use std::fmt;

const CONNECT: u8 = 0x10;
const CONNACK: u8 = 0x20;
const PROTOCOL_LEVEL: u8 = 4;
const CLEAN_SESSION: u8 = 0x02;
const KEEP_ALIVE_SECS: u16 = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MqttError {
    ConnectionClosed,
    NotConnack(u8),
    Malformed(&'static str),
}

impl fmt::Display for MqttError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MqttError::ConnectionClosed => f.write_str("connection_closed"),
            MqttError::NotConnack(b) => write!(f, "unexpected packet type 0x{b:02x}"),
            MqttError::Malformed(why) => write!(f, "malformed packet: {why}"),
        }
    }
}

/// CONNACK return codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConnectPosture {
    Accepted,
    UnacceptableProtocol,
    IdentifierRejected,
    ServerUnavailable,
    BadCredentials,
    Unauthorized,
    Unknown(u8),
}

impl From<u8> for ConnectPosture {
    fn from(code: u8) -> Self {
        match code {
            0 => ConnectPosture::Accepted,
            1 => ConnectPosture::UnacceptableProtocol,
            2 => ConnectPosture::IdentifierRejected,
            3 => ConnectPosture::ServerUnavailable,
            4 => ConnectPosture::BadCredentials,
            5 => ConnectPosture::Unauthorized,
            c => ConnectPosture::Unknown(c),
        }
    }
}

impl fmt::Display for ConnectPosture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConnectPosture::Accepted => f.write_str("accepted"),
            ConnectPosture::UnacceptableProtocol => f.write_str("unacceptable_protocol"),
            ConnectPosture::IdentifierRejected => f.write_str("identifier_rejected"),
            ConnectPosture::ServerUnavailable => f.write_str("server_unavailable"),
            ConnectPosture::BadCredentials => f.write_str("bad_credentials"),
            ConnectPosture::Unauthorized => f.write_str("unauthorized"),
            ConnectPosture::Unknown(c) => write!(f, "unknown_{c}"),
        }
    }
}

fn encode_remaining_length(mut n: usize, out: &mut Vec<u8>) {
    loop {
        let mut byte = (n % 128) as u8;
        n /= 128;
        if n > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if n == 0 {
            break;
        }
    }
}

/// Decode the remaining-length field; returns `(value, bytes used)`, or
/// `None` if more input is needed.
pub fn decode_remaining_length(b: &[u8]) -> Result<Option<(usize, usize)>, MqttError> {
    let mut value = 0usize;
    for (i, &byte) in b.iter().enumerate().take(4) {
        value |= ((byte & 0x7f) as usize) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
    }
    if b.len() >= 4 {
        Err(MqttError::Malformed("remaining length longer than 4 bytes"))
    } else {
        Ok(None)
    }
}

/// CONNECT with clean session, no credentials, no will.
pub fn encode_connect(client_id: &str) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&4u16.to_be_bytes());
    body.extend_from_slice(b"MQTT");
    body.push(PROTOCOL_LEVEL);
    body.push(CLEAN_SESSION);
    body.extend_from_slice(&KEEP_ALIVE_SECS.to_be_bytes());
    body.extend_from_slice(&(client_id.len() as u16).to_be_bytes());
    body.extend_from_slice(client_id.as_bytes());
    let mut out = vec![CONNECT];
    encode_remaining_length(body.len(), &mut out);
    out.extend_from_slice(&body);
    out
}

/// Length of one complete control packet at the start of `b`, if present.
pub fn packet_len(b: &[u8]) -> Result<Option<usize>, MqttError> {
    if b.is_empty() {
        return Ok(None);
    }
    Ok(decode_remaining_length(&b[1..])?
        .map(|(len, used)| 1 + used + len)
        .filter(|&total| b.len() >= total))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub clean_session: bool,
    pub has_credentials: bool,
}

/// Server-side decode of a CONNECT packet.
pub fn decode_connect(b: &[u8]) -> Result<Connect, MqttError> {
    if b.first() != Some(&CONNECT) {
        return Err(MqttError::Malformed("not a CONNECT"));
    }
    let (len, used) = decode_remaining_length(&b[1..])?.ok_or(MqttError::Malformed("truncated"))?;
    let body = b.get(1 + used..1 + used + len).ok_or(MqttError::Malformed("truncated"))?;
    if body.len() < 12 || &body[..6] != b"\x00\x04MQTT" {
        return Err(MqttError::Malformed("bad protocol name"));
    }
    let flags = body[7];
    let id_len = u16::from_be_bytes([body[10], body[11]]) as usize;
    let id = body.get(12..12 + id_len).ok_or(MqttError::Malformed("truncated client id"))?;
    Ok(Connect {
        client_id: String::from_utf8_lossy(id).into_owned(),
        clean_session: flags & CLEAN_SESSION != 0,
        has_credentials: flags & 0xc0 != 0,
    })
}

pub fn encode_connack(session_present: bool, return_code: u8) -> Vec<u8> {
    vec![CONNACK, 2, session_present as u8, return_code]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnAck {
    pub session_present: bool,
    pub return_code: u8,
}

pub fn decode_connack(b: &[u8]) -> Result<ConnAck, MqttError> {
    let first = *b.first().ok_or(MqttError::ConnectionClosed)?;
    if first & 0xf0 != CONNACK {
        return Err(MqttError::NotConnack(first));
    }
    match b {
        [_, 2, flags, code, ..] => Ok(ConnAck {
            session_present: flags & 1 == 1,
            return_code: *code,
        }),
        [_, 2, ..] | [_] => Err(MqttError::Malformed("truncated CONNACK")),
        _ => Err(MqttError::Malformed("bad CONNACK length")),
    }
}
