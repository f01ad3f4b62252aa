//! Target expansion and scan ordering.
//!
//! Every seed /48 expands to its 256 /56s. Each /56 receives probes to the
//! ten low interface identifiers `::1`..`::a` and to one random address used
//! to detect aliasing, so a /48 costs 2,816 probes.
//!
//! Scan order is a walk over the multiplicative group of integers modulo a
//! prime `p > budget`. Each group element `x` maps to plan index `x - 1`;
//! elements at or beyond the budget are skipped. The walk needs only the
//! current element, so the plan streams in constant memory per target and can
//! be split into contiguous shards of the cycle.

use std::collections::HashSet;
use std::fmt;
use std::net::Ipv6Addr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::net::{self, Prefix48, Prefix56};
use crate::seedprep::SeedSet;

pub const LOW_IID_COUNT: u8 = 10;
pub const TARGETS_PER_56: u64 = LOW_IID_COUNT as u64 + 1;
pub const SUBNETS_PER_48: u64 = 256;
pub const TARGETS_PER_48: u64 = SUBNETS_PER_48 * TARGETS_PER_56;
/// Smallest IID an alias probe may use.
pub const ALIAS_MIN_IID: u64 = LOW_IID_COUNT as u64 + 1;

const MAX_BUDGET: u64 = 1 << 48;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("plan of {0} probes exceeds the supported maximum")]
    TooLarge(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetKind {
    LowIid(u8),
    AliasProbe,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::LowIid(n) => write!(f, "low_iid:{n}"),
            TargetKind::AliasProbe => f.write_str("alias_probe"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeTarget {
    pub address: Ipv6Addr,
    pub net: Prefix56,
    pub kind: TargetKind,
}

impl ProbeTarget {
    /// `address,kind,prefix56`
    pub fn dump_line(&self) -> String {
        format!("{},{},{}", self.address, self.kind, self.net)
    }
}

/// Low-IID target shape: selector byte zero and IID in `1..=10`.
pub fn low_iid_of(addr: Ipv6Addr) -> Option<u8> {
    let iid = net::iid(addr);
    (net::selector(addr) == 0 && (1..=LOW_IID_COUNT as u64).contains(&iid)).then_some(iid as u8)
}

pub fn expand_48(p: Prefix48) -> impl ExactSizeIterator<Item = Prefix56> {
    (0..=255u8).map(move |i| p.subnet(i))
}

pub fn low_iid_targets(n56: Prefix56) -> [ProbeTarget; LOW_IID_COUNT as usize] {
    std::array::from_fn(|i| {
        let n = i as u8 + 1;
        ProbeTarget {
            address: n56.address(0, n as u64),
            net: n56,
            kind: TargetKind::LowIid(n),
        }
    })
}

fn alias_rng(rng_seed: u64, n56: Prefix56) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&rng_seed.to_le_bytes());
    seed[8..24].copy_from_slice(&n56.network_bits().to_be_bytes());
    seed[24..].copy_from_slice(b"aliasprb");
    ChaCha8Rng::from_seed(seed)
}

/// Random address inside `n56`: uniform /64 selector byte and uniform IID in
/// `[0x0b, 2^64 - 1]`. Deterministic in `(rng_seed, n56)`.
pub fn alias_probe_target(n56: Prefix56, rng_seed: u64) -> ProbeTarget {
    let mut rng = alias_rng(rng_seed, n56);
    let selector: u8 = rng.gen();
    let iid: u64 = rng.gen_range(ALIAS_MIN_IID..=u64::MAX);
    ProbeTarget {
        address: n56.address(selector, iid),
        net: n56,
        kind: TargetKind::AliasProbe,
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'outer: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

fn distinct_prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut f = 2;
    while f * f <= n {
        if n.is_multiple_of(f) {
            out.push(f);
            while n.is_multiple_of(f) {
                n /= f;
            }
        }
        f += if f == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Cyclic group `(Z/pZ)*` with a chosen generator and starting element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CyclicWalk {
    prime: u64,
    generator: u64,
    start: u64,
}

impl CyclicWalk {
    fn new(min_size: u64, rng_seed: u64) -> Self {
        let mut prime = min_size + 1;
        while !is_prime(prime) {
            prime += 1;
        }
        let order = prime - 1;
        let factors = distinct_prime_factors(order);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let generator = if prime <= 3 {
            prime - 1
        } else {
            loop {
                let g = rng.gen_range(2..prime);
                if factors.iter().all(|&q| pow_mod(g, order / q, prime) != 1) {
                    break g;
                }
            }
        };
        let start = rng.gen_range(1..prime);
        Self {
            prime,
            generator,
            start,
        }
    }

    fn order(&self) -> u64 {
        self.prime - 1
    }

    /// Group element at cycle position `pos`.
    fn element_at(&self, pos: u64) -> u64 {
        mul_mod(self.start, pow_mod(self.generator, pos, self.prime), self.prime)
    }
}

/// Randomised, streamable probe order over every target of a seed set.
#[derive(Debug)]
pub struct ScanPlan {
    seeds: Vec<Prefix48>,
    rng_seed: u64,
    budget: u64,
    walk: CyclicWalk,
    index: OnceLock<HashSet<Prefix48>>,
}

pub fn build_plan(seeds: &SeedSet, rng_seed: u64) -> Result<ScanPlan, PlanError> {
    ScanPlan::new(seeds.prefixes().to_vec(), rng_seed)
}

impl ScanPlan {
    pub fn new(seeds: Vec<Prefix48>, rng_seed: u64) -> Result<Self, PlanError> {
        if seeds.is_empty() {
            return Err(PlanError::EmptySeeds);
        }
        let budget = (seeds.len() as u64)
            .checked_mul(TARGETS_PER_48)
            .filter(|&b| b < MAX_BUDGET)
            .ok_or(PlanError::TooLarge(seeds.len() as u64 * TARGETS_PER_48))?;
        Ok(Self {
            walk: CyclicWalk::new(budget, rng_seed),
            seeds,
            rng_seed,
            budget,
            index: OnceLock::new(),
        })
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn seeds(&self) -> &[Prefix48] {
        &self.seeds
    }

    /// Target for a plan index in canonical (unpermuted) order.
    pub fn target_at(&self, index: u64) -> ProbeTarget {
        assert!(index < self.budget, "plan index out of range");
        let seed = self.seeds[(index / TARGETS_PER_48) as usize];
        let rem = index % TARGETS_PER_48;
        let net = seed.subnet((rem / TARGETS_PER_56) as u8);
        match (rem % TARGETS_PER_56) as u8 {
            slot if slot < LOW_IID_COUNT => ProbeTarget {
                address: net.address(0, slot as u64 + 1),
                net,
                kind: TargetKind::LowIid(slot + 1),
            },
            _ => alias_probe_target(net, self.rng_seed),
        }
    }

    /// Lazily walk the whole plan.
    pub fn iter(&self) -> PlanIter<'_> {
        self.cycle_range(0, self.walk.order())
    }

    /// Shard `k` of `n`: a contiguous range of cycle positions. The union of
    /// all shards is exactly [`ScanPlan::iter`].
    pub fn shard(&self, k: u64, n: u64) -> PlanIter<'_> {
        assert!(n > 0 && k < n, "invalid shard");
        let order = self.walk.order() as u128;
        let lo = (order * k as u128 / n as u128) as u64;
        let hi = (order * (k as u128 + 1) / n as u128) as u64;
        self.cycle_range(lo, hi)
    }

    fn cycle_range(&self, lo: u64, hi: u64) -> PlanIter<'_> {
        PlanIter {
            plan: self,
            pos: lo,
            end: hi,
            element: self.walk.element_at(lo),
        }
    }

    /// Whether `addr` is one of this plan's probe targets.
    pub fn contains(&self, addr: Ipv6Addr) -> bool {
        let index = self.index.get_or_init(|| self.seeds.iter().copied().collect());
        if !index.contains(&Prefix48::covering(addr)) {
            return false;
        }
        low_iid_of(addr).is_some() || alias_probe_target(Prefix56::covering(addr), self.rng_seed).address == addr
    }

    /// Kind of `addr` if it is a target of this plan.
    pub fn kind_of(&self, addr: Ipv6Addr) -> Option<TargetKind> {
        if !self.contains(addr) {
            None
        } else if let Some(n) = low_iid_of(addr) {
            Some(TargetKind::LowIid(n))
        } else {
            Some(TargetKind::AliasProbe)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanIter<'a> {
    plan: &'a ScanPlan,
    pos: u64,
    end: u64,
    element: u64,
}

impl Iterator for PlanIter<'_> {
    type Item = ProbeTarget;

    fn next(&mut self) -> Option<ProbeTarget> {
        let walk = &self.plan.walk;
        while self.pos < self.end {
            let index = self.element - 1;
            self.element = mul_mod(self.element, walk.generator, walk.prime);
            self.pos += 1;
            if index < self.plan.budget {
                return Some(self.plan.target_at(index));
            }
        }
        None
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (0, Some((self.end - self.pos) as usize))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p48(s: &str) -> Prefix48 {
        s.parse().unwrap()
    }

    #[test]
    fn expansion_indices() {
        let subs: Vec<_> = expand_48(p48("2001:db8:42::/48")).collect();
        assert_eq!(subs.len(), 256);
        assert_eq!(subs[0].to_string(), "2001:db8:42::/56");
        assert_eq!(subs[255].to_string(), "2001:db8:42:ff00::/56");
        assert!(subs.iter().enumerate().all(|(i, s)| s.index() as usize == i));
    }

    #[test]
    fn low_iid_fan_out() {
        let t = low_iid_targets(p48("2001:db8:42::/48").subnet(0));
        assert_eq!(t.len(), 10);
        assert_eq!(t[0].address.to_string(), "2001:db8:42::1");
        assert_eq!(t[9].address.to_string(), "2001:db8:42::a");
        assert!(t.iter().all(|x| low_iid_of(x.address).is_some()));
    }

    #[test]
    fn alias_probe_is_deterministic_and_excludes_low_iids() {
        let n = p48("2001:db8:42::/48").subnet(7);
        assert_eq!(alias_probe_target(n, 9), alias_probe_target(n, 9));
        assert_ne!(alias_probe_target(n, 9).address, alias_probe_target(n, 10).address);
        for i in 0..=255u8 {
            let t = alias_probe_target(p48("2001:db8:42::/48").subnet(i), 3);
            assert!(net::iid(t.address) >= ALIAS_MIN_IID);
            assert!(t.net.contains(t.address));
            assert!(low_iid_of(t.address).is_none());
        }
    }

    #[test]
    fn primality_and_generators() {
        let small: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(small, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]);
        assert!(is_prime(1_000_000_007));
        assert!(!is_prime(1_000_000_007 * 3));
        for size in [1u64, 2, 5, 2816, 5632] {
            let w = CyclicWalk::new(size, 1);
            let mut seen = HashSet::new();
            let mut x = w.start;
            for _ in 0..w.order() {
                assert!(seen.insert(x));
                x = mul_mod(x, w.generator, w.prime);
            }
            assert_eq!(x, w.start);
        }
    }

    #[test]
    fn single_seed_plan() {
        let plan = ScanPlan::new(vec![p48("2001:db8:42::/48")], 5).unwrap();
        assert_eq!(plan.budget(), 2816);
        let order: Vec<_> = plan.iter().collect();
        assert_eq!(order.len(), 2816);
        let again: Vec<_> = ScanPlan::new(vec![p48("2001:db8:42::/48")], 5).unwrap().iter().collect();
        assert_eq!(order, again);
        let canonical: Vec<_> = (0..2816).map(|i| plan.target_at(i)).collect();
        assert_ne!(order, canonical);
    }

    #[test]
    fn shards_cover_the_plan() {
        let plan = ScanPlan::new(vec![p48("2001:db8:42::/48"), p48("2001:db8:43::/48")], 11).unwrap();
        let whole: Vec<_> = plan.iter().collect();
        let sharded: Vec<_> = (0..7).flat_map(|k| plan.shard(k, 7)).collect();
        assert_eq!(whole, sharded);
    }

    #[test]
    fn membership() {
        let plan = ScanPlan::new(vec![p48("2001:db8:42::/48")], 5).unwrap();
        let alias = alias_probe_target(p48("2001:db8:42::/48").subnet(3), 5);
        assert!(plan.contains("2001:db8:42:300::a".parse().unwrap()));
        assert!(!plan.contains("2001:db8:42:300::b".parse().unwrap()));
        assert!(!plan.contains("2001:db8:43::1".parse().unwrap()));
        assert_eq!(plan.kind_of(alias.address), Some(TargetKind::AliasProbe));
    }

    #[test]
    fn empty_seeds_rejected() {
        assert_eq!(ScanPlan::new(vec![], 1).unwrap_err(), PlanError::EmptySeeds);
    }
}
