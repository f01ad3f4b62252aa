//! Stateless probe correlation.
//!
//! Each echo request carries the probed address and a keyed MAC of it. The
//! MAC is 96 bits: 16 in the identifier, 16 in the sequence number and 64 in
//! the payload after the address. Replies are matched by recomputing the MAC,
//! so the scanner keeps no per-probe state.

use std::hash::Hasher;
use std::net::Ipv6Addr;

use siphasher::sip128::{Hasher128, SipHasher24};

use super::icmp6::Echo;

pub const PAYLOAD_LEN: usize = 24;
const KEY_TWEAK: u64 = 0x7265_7369_7363_616e;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanKey(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub identifier: u16,
    pub sequence: u16,
    pub payload: [u8; PAYLOAD_LEN],
}

impl Token {
    pub fn into_echo(self) -> Echo {
        Echo {
            identifier: self.identifier,
            sequence: self.sequence,
            payload: self.payload.to_vec(),
        }
    }
}

fn mac(target: Ipv6Addr, key: ScanKey) -> u128 {
    let mut h = SipHasher24::new_with_keys(key.0, KEY_TWEAK);
    h.write(&target.octets());
    h.finish128().as_u128()
}

pub fn encode_token(target: Ipv6Addr, key: ScanKey) -> Token {
    let m = mac(target, key);
    let mut payload = [0u8; PAYLOAD_LEN];
    payload[..16].copy_from_slice(&target.octets());
    payload[16..].copy_from_slice(&((m >> 32) as u64).to_be_bytes());
    Token {
        identifier: (m >> 16) as u16,
        sequence: m as u16,
        payload,
    }
}

fn short_tag_matches(target: Ipv6Addr, identifier: u16, sequence: u16, key: ScanKey) -> bool {
    let m = mac(target, key);
    identifier == (m >> 16) as u16 && sequence == m as u16
}

/// Recover and authenticate the probed target from an echo reply.
pub fn validate_echo(echo: &Echo, key: ScanKey) -> Option<Ipv6Addr> {
    let claimed: [u8; 16] = echo.payload.get(..16)?.try_into().ok()?;
    let target = Ipv6Addr::from(claimed);
    (echo.payload.len() >= PAYLOAD_LEN && encode_token(target, key).into_echo() == trim(echo)).then_some(target)
}

fn trim(echo: &Echo) -> Echo {
    Echo {
        identifier: echo.identifier,
        sequence: echo.sequence,
        payload: echo.payload[..PAYLOAD_LEN].to_vec(),
    }
}

/// Authenticate an error against its quoted packet. When the quote is long
/// enough the full 96-bit tag and the embedded address must both match the
/// quoted destination; a short quote is checked against the 32-bit
/// identifier/sequence tag only.
pub fn validate_error(quoted_destination: Ipv6Addr, quoted_echo: Option<&Echo>, key: ScanKey) -> Option<Ipv6Addr> {
    let echo = quoted_echo?;
    if echo.payload.len() >= 16 {
        if echo.payload.len() < PAYLOAD_LEN {
            return None;
        }
        return validate_echo(echo, key).filter(|t| *t == quoted_destination);
    }
    short_tag_matches(quoted_destination, echo.identifier, echo.sequence, key).then_some(quoted_destination)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KEY: ScanKey = ScanKey(0x1234_5678_9abc_def0);

    #[test]
    fn round_trip_and_wrong_key() {
        let t: Ipv6Addr = "2001:db8:42::1".parse().unwrap();
        let echo = encode_token(t, KEY).into_echo();
        assert_eq!(validate_echo(&echo, KEY), Some(t));
        assert_eq!(validate_echo(&echo, ScanKey(1)), None);
        assert_eq!(validate_error(t, Some(&echo), KEY), Some(t));
        assert_eq!(validate_error("2001:db8:42::2".parse().unwrap(), Some(&echo), KEY), None);
    }

    #[test]
    fn short_quote_uses_header_tag() {
        let t: Ipv6Addr = "2001:db8:42::5".parse().unwrap();
        let mut echo = encode_token(t, KEY).into_echo();
        echo.payload.clear();
        assert_eq!(validate_error(t, Some(&echo), KEY), Some(t));
        echo.sequence ^= 1;
        assert_eq!(validate_error(t, Some(&echo), KEY), None);
    }

    #[test]
    fn tampered_payload_rejected() {
        let t: Ipv6Addr = "2001:db8:42::1".parse().unwrap();
        let mut echo = encode_token(t, KEY).into_echo();
        echo.payload[20] ^= 0x80;
        assert_eq!(validate_echo(&echo, KEY), None);
    }

    #[test]
    fn forged_events_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut accepted = 0u32;
        for _ in 0..1_000_000 {
            let mut payload = vec![0u8; PAYLOAD_LEN];
            rng.fill(&mut payload[..]);
            let echo = Echo {
                identifier: rng.gen(),
                sequence: rng.gen(),
                payload,
            };
            if validate_echo(&echo, KEY).is_some() {
                accepted += 1;
            }
        }
        // Expected acceptance is 2^-96 per event.
        assert_eq!(accepted, 0);
    }
}
