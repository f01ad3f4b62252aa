//! Lockdown ("iPhone-Sync", TCP 62078) framing: a 4-byte big-endian length
//! followed by an XML property list.

use std::collections::BTreeMap;

use plist::{Dictionary, Value};

/// Largest frame accepted from a peer.
pub const MAX_FRAME: usize = 1 << 20;
pub const LABEL: &str = "resiscan";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LockdownError {
    Bounds(u64),
    Plist(String),
    NotDictionary,
}

impl std::fmt::Display for LockdownError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LockdownError::Bounds(n) => write!(f, "bounds: frame length {n}"),
            LockdownError::Plist(e) => write!(f, "plist: {e}"),
            LockdownError::NotDictionary => f.write_str("plist: top level is not a dictionary"),
        }
    }
}

/// Prefix `payload` with its length.
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = (payload.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(payload);
    out
}

/// Payload length from a frame header, rejecting anything above `limit`.
pub fn frame_len(header: [u8; 4], limit: usize) -> Result<usize, LockdownError> {
    let n = u32::from_be_bytes(header) as u64;
    if n > limit.min(MAX_FRAME) as u64 {
        Err(LockdownError::Bounds(n))
    } else {
        Ok(n as usize)
    }
}

/// Serialise a string-keyed dictionary as an XML plist.
pub fn encode_dict(entries: &BTreeMap<String, String>) -> Vec<u8> {
    let mut d = Dictionary::new();
    for (k, v) in entries {
        d.insert(k.clone(), Value::String(v.clone()));
    }
    let mut out = Vec::new();
    Value::Dictionary(d)
        .to_writer_xml(&mut out)
        .expect("writing to a Vec cannot fail");
    out
}

pub fn decode_dict(payload: &[u8]) -> Result<Dictionary, LockdownError> {
    match Value::from_reader_xml(payload).map_err(|e| LockdownError::Plist(e.to_string()))? {
        Value::Dictionary(d) => Ok(d),
        _ => Err(LockdownError::NotDictionary),
    }
}

pub fn get_value_request(key: &str) -> Vec<u8> {
    let entries = BTreeMap::from([
        ("Label".to_string(), LABEL.to_string()),
        ("Request".to_string(), "GetValue".to_string()),
        ("Key".to_string(), key.to_string()),
    ]);
    frame(&encode_dict(&entries))
}

/// The `Value` string of a GetValue reply, if any.
pub fn reply_value(reply: &Dictionary) -> Option<String> {
    reply.get("Value").and_then(Value::as_string).map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_frame_is_self_describing() {
        let req = get_value_request("ProductVersion");
        let len = frame_len(req[..4].try_into().unwrap(), MAX_FRAME).unwrap();
        assert_eq!(len, req.len() - 4);
        let d = decode_dict(&req[4..]).unwrap();
        assert_eq!(d.get("Request").and_then(Value::as_string), Some("GetValue"));
        assert_eq!(d.get("Key").and_then(Value::as_string), Some("ProductVersion"));
        assert_eq!(d.get("Label").and_then(Value::as_string), Some(LABEL));
    }

    #[test]
    fn hostile_lengths_rejected() {
        assert_eq!(frame_len((1u32 << 31).to_be_bytes(), MAX_FRAME), Err(LockdownError::Bounds(1 << 31)));
        assert!(frame_len(((MAX_FRAME + 1) as u32).to_be_bytes(), usize::MAX).is_err());
        assert!(frame_len(100u32.to_be_bytes(), 64).is_err());
    }

    #[test]
    fn malformed_payload() {
        assert!(matches!(decode_dict(b"<plist><dict><key>x"), Err(LockdownError::Plist(_))));
    }
}
