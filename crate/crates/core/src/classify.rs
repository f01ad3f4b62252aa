//! Response classification and hop-count distances.
//!
//! An echo reply from the exact low-IID address probed is an internal
//! response. An ICMPv6 error from an address that was never probed is an
//! external response, attributed to the /56 of the probe that triggered it.
//! A /56 whose random alias probe drew an echo reply is aliased and dropped.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use crate::net::Prefix56;
use crate::probe::{ResponseKind, ResponseRecord};
use crate::targetgen::low_iid_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Internal,
    External,
    AliasedMember,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Internal => "internal",
            Label::External => "external",
            Label::AliasedMember => "aliased_member",
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal" => Ok(Label::Internal),
            "external" => Ok(Label::External),
            "aliased_member" => Ok(Label::AliasedMember),
            _ => Err(format!("unknown label '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseClass {
    Internal,
    External,
    Anomalous,
}

pub fn classify_response(r: &ResponseRecord, is_probed: &dyn Fn(Ipv6Addr) -> bool) -> ResponseClass {
    match r.kind {
        ResponseKind::EchoReply if r.source == r.probed_target => ResponseClass::Internal,
        k if k.is_error() && !is_probed(r.source) => ResponseClass::External,
        _ => ResponseClass::Anomalous,
    }
}

/// Initial hop limit guessed from a received one: up to 64 means 64, up to
/// 128 means 128, anything above means 255.
pub fn infer_initial_hop_limit(received: u8) -> u8 {
    match received {
        0..=64 => 64,
        65..=128 => 128,
        _ => 255,
    }
}

pub fn hop_distance(received: u8) -> u8 {
    infer_initial_hop_limit(received) - received
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AliasStatus {
    Aliased,
    NotAliased,
    /// No record for the alias probe of this net.
    Undetermined,
}

/// Decide aliasing from the records of one /56.
pub fn detect_aliased<'a>(records: impl IntoIterator<Item = &'a ResponseRecord>) -> AliasStatus {
    let mut seen_alias_probe = false;
    for r in records {
        if low_iid_of(r.probed_target).is_some() {
            continue;
        }
        seen_alias_probe = true;
        if r.kind == ResponseKind::EchoReply && r.source == r.probed_target {
            return AliasStatus::Aliased;
        }
    }
    if seen_alias_probe {
        AliasStatus::NotAliased
    } else {
        AliasStatus::Undetermined
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassifiedAddress {
    pub net: Prefix56,
    pub label: Label,
    pub address: Ipv6Addr,
    pub inferred_initial_hop_limit: u8,
    pub distance: u8,
}

impl ClassifiedAddress {
    fn from_record(net: Prefix56, label: Label, address: Ipv6Addr, hop_limit: u8) -> Self {
        Self {
            net,
            label,
            address,
            inferred_initial_hop_limit: infer_initial_hop_limit(hop_limit),
            distance: hop_distance(hop_limit),
        }
    }
}

impl fmt::Display for ClassifiedAddress {
    /// `prefix56,address,label,initial_hl,distance`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.net,
            self.address,
            self.label.as_str(),
            self.inferred_initial_hop_limit,
            self.distance
        )
    }
}

impl FromStr for ClassifiedAddress {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = s.trim().split(',').collect();
        let [net, address, label, initial, distance] = f[..] else {
            return Err(format!("expected 5 fields, found {}", f.len()));
        };
        Ok(Self {
            net: net.parse().map_err(|e| format!("{e}"))?,
            address: address.parse().map_err(|_| format!("bad address '{address}'"))?,
            label: label.parse()?,
            inferred_initial_hop_limit: initial.parse().map_err(|_| format!("bad hop limit '{initial}'"))?,
            distance: distance.parse().map_err(|_| format!("bad distance '{distance}'"))?,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Classification {
    /// Sorted by `(net, label, address)`.
    pub addresses: Vec<ClassifiedAddress>,
    pub aliased: Vec<Prefix56>,
    pub alias_undetermined: Vec<Prefix56>,
    pub anomalous: Vec<ResponseRecord>,
}

impl Classification {
    pub fn internal(&self) -> impl Iterator<Item = &ClassifiedAddress> {
        self.addresses.iter().filter(|a| a.label == Label::Internal)
    }

    pub fn external(&self) -> impl Iterator<Item = &ClassifiedAddress> {
        self.addresses.iter().filter(|a| a.label == Label::External)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.addresses {
            out.push_str(&a.to_string());
            out.push('\n');
        }
        out
    }

    /// Parse the classification table. Alias and anomaly lists are not part
    /// of the table and come back empty.
    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut addresses = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| l.parse::<ClassifiedAddress>().map_err(|e| (i + 1, e)))
            .collect::<Result<Vec<_>, _>>()?;
        addresses.sort();
        Ok(Self {
            addresses,
            ..Default::default()
        })
    }
}

/// Classify a validated response log. `is_probed` reports plan membership.
pub fn classify_log(log: &[ResponseRecord], is_probed: &dyn Fn(Ipv6Addr) -> bool) -> Classification {
    let mut by_net: BTreeMap<Prefix56, Vec<&ResponseRecord>> = BTreeMap::new();
    for r in log {
        by_net.entry(Prefix56::covering(r.probed_target)).or_default().push(r);
    }
    let mut out = Classification::default();
    for (net, mut records) in by_net {
        match detect_aliased(records.iter().copied()) {
            AliasStatus::Aliased => {
                out.aliased.push(net);
                continue;
            }
            AliasStatus::Undetermined => out.alias_undetermined.push(net),
            AliasStatus::NotAliased => {}
        }
        // earliest record wins for repeated addresses
        records.sort_by_key(|r| (r.timestamp_us, r.probed_target, r.source));
        let mut seen: HashSet<(Label, Ipv6Addr)> = HashSet::new();
        for r in records {
            let label = match classify_response(r, is_probed) {
                ResponseClass::Internal if low_iid_of(r.probed_target).is_some() => Label::Internal,
                ResponseClass::External => Label::External,
                _ => {
                    out.anomalous.push(r.clone());
                    continue;
                }
            };
            if seen.insert((label, r.source)) {
                out.addresses
                    .push(ClassifiedAddress::from_record(net, label, r.source, r.hop_limit_received));
            }
        }
    }
    out.addresses.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairDelta {
    pub net: Prefix56,
    pub internal: Ipv6Addr,
    pub external: Ipv6Addr,
    pub internal_distance: u8,
    pub external_distance: u8,
    pub delta: i16,
}

/// One delta per (internal, external) address pair inside each /56.
pub fn pair_deltas(addresses: &[ClassifiedAddress]) -> Vec<PairDelta> {
    let mut by_net: BTreeMap<Prefix56, (Vec<&ClassifiedAddress>, Vec<&ClassifiedAddress>)> = BTreeMap::new();
    for a in addresses {
        let slot = by_net.entry(a.net).or_default();
        match a.label {
            Label::Internal => slot.0.push(a),
            Label::External => slot.1.push(a),
            Label::AliasedMember => {}
        }
    }
    let mut out = Vec::new();
    for (net, (internal, external)) in by_net {
        for i in &internal {
            for e in &external {
                out.push(PairDelta {
                    net,
                    internal: i.address,
                    external: e.address,
                    internal_distance: i.distance,
                    external_distance: e.distance,
                    delta: i.distance as i16 - e.distance as i16,
                });
            }
        }
    }
    out
}

/// Histogram of how often each delta occurs.
pub fn delta_histogram(deltas: &[PairDelta]) -> BTreeMap<i16, u64> {
    let mut h = BTreeMap::new();
    for d in deltas {
        *h.entry(d.delta).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::icmp6::unreach;

    fn a(s: &str) -> Ipv6Addr {
        s.parse().unwrap()
    }

    fn rec(target: &str, source: &str, kind: ResponseKind, hl: u8) -> ResponseRecord {
        ResponseRecord {
            probed_target: a(target),
            source: a(source),
            kind,
            hop_limit_received: hl,
            timestamp_us: 0,
        }
    }

    fn probed(addr: Ipv6Addr) -> bool {
        low_iid_of(addr).is_some()
    }

    #[test]
    fn response_classes() {
        let r = rec("2001:db8::1", "2001:db8::1", ResponseKind::EchoReply, 60);
        assert_eq!(classify_response(&r, &probed), ResponseClass::Internal);
        let r = rec(
            "2001:db8::3",
            "2001:db8:ffff::c9e",
            ResponseKind::DestUnreachable(unreach::ADMIN_PROHIBITED),
            60,
        );
        assert_eq!(classify_response(&r, &probed), ResponseClass::External);
        let r = rec("2001:db8::3", "2001:db8::4", ResponseKind::EchoReply, 60);
        assert_eq!(classify_response(&r, &probed), ResponseClass::Anomalous);
        // error sourced from a probed address
        let r = rec("2001:db8::3", "2001:db8::4", ResponseKind::DestUnreachable(3), 60);
        assert_eq!(classify_response(&r, &probed), ResponseClass::Anomalous);
    }

    #[test]
    fn hop_limit_examples() {
        assert_eq!((infer_initial_hop_limit(118), hop_distance(118)), (128, 10));
        assert_eq!((infer_initial_hop_limit(64), hop_distance(64)), (64, 0));
        assert_eq!((infer_initial_hop_limit(200), hop_distance(200)), (255, 55));
        assert_eq!(infer_initial_hop_limit(128), 128);
        assert_eq!(infer_initial_hop_limit(129), 255);
        assert_eq!(infer_initial_hop_limit(0), 64);
    }

    #[test]
    fn aliased_net_dropped() {
        let log = vec![
            rec("2001:db8:0:100::1", "2001:db8:0:100::1", ResponseKind::EchoReply, 60),
            rec("2001:db8:0:1ab::dead:beef", "2001:db8:0:1ab::dead:beef", ResponseKind::EchoReply, 60),
        ];
        assert_eq!(detect_aliased(&log), AliasStatus::Aliased);
        let c = classify_log(&log, &probed);
        assert!(c.addresses.is_empty());
        assert_eq!(c.aliased.len(), 1);
    }

    #[test]
    fn only_low_iid_responsive_is_not_aliased() {
        let log = vec![
            rec("2001:db8:0:100::1", "2001:db8:0:100::1", ResponseKind::EchoReply, 60),
            rec("2001:db8:0:1ab::dead:beef", "2001:db9::c9e", ResponseKind::DestUnreachable(3), 61),
        ];
        assert_eq!(detect_aliased(&log), AliasStatus::NotAliased);
        assert_eq!(detect_aliased(&log[..1]), AliasStatus::Undetermined);
        let c = classify_log(&log, &probed);
        assert_eq!(c.internal().count(), 1);
        assert_eq!(c.external().count(), 1);
        let d = pair_deltas(&c.addresses);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].internal_distance, d[0].external_distance, d[0].delta), (4, 3, 1));
    }

    #[test]
    fn same_device_delta_zero() {
        let log = vec![
            rec("2001:db8:0:100::1", "2001:db8:0:100::1", ResponseKind::EchoReply, 61),
            rec("2001:db8:0:100::2", "2001:db9::c9e", ResponseKind::DestUnreachable(3), 61),
            rec("2001:db8:0:100::3", "2001:db9::c9e", ResponseKind::DestUnreachable(3), 61),
        ];
        let c = classify_log(&log, &probed);
        assert_eq!(c.external().count(), 1);
        assert_eq!(pair_deltas(&c.addresses)[0].delta, 0);
    }

    #[test]
    fn table_round_trip() {
        let log = vec![
            rec("2001:db8:0:100::1", "2001:db8:0:100::1", ResponseKind::EchoReply, 118),
            rec("2001:db8:0:100::2", "2001:db9::c9e", ResponseKind::DestUnreachable(1), 250),
        ];
        let c = classify_log(&log, &probed);
        let text = c.to_text();
        assert!(text.contains("2001:db8:0:100::/56,2001:db8:0:100::1,internal,128,10"));
        assert_eq!(Classification::parse(&text).unwrap().addresses, c.addresses);
    }
}
