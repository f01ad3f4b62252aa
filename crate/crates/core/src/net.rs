//! IPv6 prefix types and longest-prefix-match tables.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrefixError {
    #[error("malformed prefix '{0}'")]
    Malformed(String),
    #[error("prefix length {0} out of range")]
    BadLength(u32),
    #[error("prefix '{text}' is shorter than /{required}")]
    TooShort { text: String, required: u8 },
}

fn mask(len: u8) -> u128 {
    match len {
        0 => 0,
        l if l >= 128 => u128::MAX,
        l => u128::MAX << (128 - l as u32),
    }
}

/// Any-length IPv6 network with host bits cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv6Net {
    bits: u128,
    len: u8,
}

serde_as_text!(Ipv6Net);

impl Ipv6Net {
    pub fn new(addr: Ipv6Addr, len: u8) -> Result<Self, PrefixError> {
        if len > 128 {
            return Err(PrefixError::BadLength(len as u32));
        }
        Ok(Self {
            bits: u128::from(addr) & mask(len),
            len,
        })
    }

    pub fn network(&self) -> Ipv6Addr {
        Ipv6Addr::from(self.bits)
    }

    /// Prefix length in bits.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, addr: Ipv6Addr) -> bool {
        u128::from(addr) & mask(self.len) == self.bits
    }
}

impl FromStr for Ipv6Net {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => {
                let len: u32 = l
                    .trim()
                    .parse()
                    .map_err(|_| PrefixError::Malformed(s.to_string()))?;
                (a.trim(), len)
            }
            None => (s, 128),
        };
        let addr: Ipv6Addr = addr
            .parse()
            .map_err(|_| PrefixError::Malformed(s.to_string()))?;
        if len > 128 {
            return Err(PrefixError::BadLength(len));
        }
        Ipv6Net::new(addr, len as u8)
    }
}

impl fmt::Display for Ipv6Net {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.len)
    }
}

/// A /48 network: the unit of seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix48(u64);

serde_as_text!(Prefix48);

impl Prefix48 {
    /// Build from the upper 48 bits of a 128-bit value. Only the low 48 bits of `bits` are used.
    pub fn from_bits(bits: u64) -> Self {
        Self(bits & 0xffff_ffff_ffff)
    }

    /// The /48 covering `addr`.
    pub fn covering(addr: Ipv6Addr) -> Self {
        Self((u128::from(addr) >> 80) as u64)
    }

    pub fn bits(&self) -> u64 {
        self.0
    }

    pub fn network(&self) -> Ipv6Addr {
        Ipv6Addr::from((self.0 as u128) << 80)
    }

    pub fn contains(&self, addr: Ipv6Addr) -> bool {
        Self::covering(addr) == *self
    }

    pub fn subnet(&self, index: u8) -> Prefix56 {
        Prefix56::new(*self, index)
    }

    pub fn as_net(&self) -> Ipv6Net {
        Ipv6Net {
            bits: (self.0 as u128) << 80,
            len: 48,
        }
    }
}

impl FromStr for Prefix48 {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let net: Ipv6Net = s.parse()?;
        if net.len() != 48 {
            return Err(PrefixError::BadLength(net.len() as u32));
        }
        Ok(Self::covering(net.network()))
    }
}

impl fmt::Display for Prefix48 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/48", self.network())
    }
}

/// A /56 inside a /48. `index` is byte 6 of the address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix56 {
    parent: Prefix48,
    index: u8,
}

serde_as_text!(Prefix56);

impl Prefix56 {
    pub fn new(parent: Prefix48, index: u8) -> Self {
        Self { parent, index }
    }

    pub fn covering(addr: Ipv6Addr) -> Self {
        let o = addr.octets();
        Self {
            parent: Prefix48::covering(addr),
            index: o[6],
        }
    }

    pub fn parent(&self) -> Prefix48 {
        self.parent
    }

    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn network(&self) -> Ipv6Addr {
        Ipv6Addr::from(self.network_bits())
    }

    pub fn network_bits(&self) -> u128 {
        ((self.parent.0 as u128) << 80) | ((self.index as u128) << 72)
    }

    pub fn contains(&self, addr: Ipv6Addr) -> bool {
        Self::covering(addr) == *self
    }

    /// Address inside this /56 with the given /64 selector byte and IID.
    pub fn address(&self, selector: u8, iid: u64) -> Ipv6Addr {
        Ipv6Addr::from(self.network_bits() | ((selector as u128) << 64) | iid as u128)
    }
}

impl FromStr for Prefix56 {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let net: Ipv6Net = s.parse()?;
        if net.len() != 56 {
            return Err(PrefixError::BadLength(net.len() as u32));
        }
        Ok(Self::covering(net.network()))
    }
}

impl fmt::Display for Prefix56 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/56", self.network())
    }
}

/// Low 64 bits of an address.
pub fn iid(addr: Ipv6Addr) -> u64 {
    u128::from(addr) as u64
}

/// The /64 selector byte (byte 7) of an address.
pub fn selector(addr: Ipv6Addr) -> u8 {
    addr.octets()[7]
}

/// Longest-prefix-match table keyed by IPv6 networks of any length.
#[derive(Debug, Clone)]
pub struct PrefixTable<V> {
    by_len: Vec<HashMap<u128, V>>,
    lengths: Vec<u8>,
    len: usize,
}

impl<V> Default for PrefixTable<V> {
    fn default() -> Self {
        Self {
            by_len: (0..=128).map(|_| HashMap::new()).collect(),
            lengths: Vec::new(),
            len: 0,
        }
    }
}

impl<V> PrefixTable<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert, returning the previous value for exactly this network.
    pub fn insert(&mut self, net: Ipv6Net, value: V) -> Option<V> {
        let prev = self.by_len[net.len as usize].insert(net.bits, value);
        if prev.is_none() {
            self.len += 1;
            if let Err(pos) = self.lengths.binary_search_by(|l| net.len.cmp(l)) {
                self.lengths.insert(pos, net.len);
            }
        }
        prev
    }

    pub fn get_exact(&self, net: &Ipv6Net) -> Option<&V> {
        self.by_len[net.len as usize].get(&net.bits)
    }

    /// Most specific entry covering `addr`.
    pub fn lookup(&self, addr: Ipv6Addr) -> Option<(Ipv6Net, &V)> {
        let a = u128::from(addr);
        // `lengths` is sorted longest first.
        self.lengths.iter().find_map(|&len| {
            let bits = a & mask(len);
            self.by_len[len as usize]
                .get(&bits)
                .map(|v| (Ipv6Net { bits, len }, v))
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
