//! What a correct pipeline must recover from a scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv6Addr};

use super::{host_address, wan_address, Firewall, Scenario};
use crate::net::{Prefix48, Prefix56};
use crate::targetgen::{alias_probe_target, low_iid_of};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    /// Low-IID hosts that answer echo requests from outside.
    pub reachable_internal: BTreeSet<Ipv6Addr>,
    /// CPE WAN addresses that send errors for each subnet.
    pub external_sources: BTreeMap<Prefix56, BTreeSet<Ipv6Addr>>,
    pub aliased_subnets: BTreeSet<Prefix56>,
    /// Internal address to expected (internal − external) distance delta.
    pub expected_deltas: BTreeMap<Ipv6Addr, i16>,
    /// Expected hop distance of every reachable internal host.
    pub expected_distance: BTreeMap<Ipv6Addr, u8>,
    /// Service endpoints on discoverable addresses, with whether a correct
    /// grab of them should end `responded`.
    pub services: BTreeMap<(IpAddr, u16), bool>,
    /// Per probed /48: (internal addresses, external addresses).
    pub yield_per_48: BTreeMap<Prefix48, (u64, u64)>,
}

impl GroundTruth {
    /// Derive the truth for a scan of every scenario /48 with `plan_seed`.
    pub fn derive(s: &Scenario, plan_seed: u64) -> Self {
        let mut t = GroundTruth::default();
        for net in &s.nets {
            let mut internal = 0u64;
            let mut external = 0u64;
            for sub in &net.subnets {
                let p56 = net.prefix48.subnet(sub.index);
                let alias_target = alias_probe_target(p56, plan_seed).address;
                let allow = sub.cpe.firewall == Firewall::DefaultAllow;
                let hit_by_alias = allow && sub.hosts.iter().any(|h| host_address(p56, h) == alias_target);
                if sub.aliased || hit_by_alias {
                    t.aliased_subnets.insert(p56);
                    continue;
                }
                let wan = wan_address(net, sub);
                let responders: Vec<_> = sub
                    .hosts
                    .iter()
                    .filter(|_| allow)
                    .filter(|h| low_iid_of(host_address(p56, h)).is_some())
                    .collect();
                // Ten low-IID probes plus the alias probe; errors unless a responder holds the address.
                let error_count = 11 - responders.len();
                if error_count > 0 {
                    t.external_sources.entry(p56).or_default().insert(wan);
                    external += 1;
                    for (port, ok) in sub.cpe.services.iter().map(|x| (x.port, x.behavior.well_behaved())) {
                        t.services.insert((IpAddr::V6(wan), port), ok);
                    }
                }
                for h in responders {
                    let addr = host_address(p56, h);
                    internal += 1;
                    t.reachable_internal.insert(addr);
                    t.expected_distance.insert(addr, sub.cpe.base_distance + h.extra_hops);
                    if error_count > 0 {
                        t.expected_deltas.insert(addr, h.extra_hops as i16);
                    }
                    for x in &h.services {
                        t.services.insert((IpAddr::V6(addr), x.port), x.behavior.well_behaved());
                    }
                }
            }
            t.yield_per_48.insert(net.prefix48, (internal, external));
        }
        t
    }

    pub fn delta_fraction(&self, delta: i16) -> f64 {
        if self.expected_deltas.is_empty() {
            return 0.0;
        }
        self.expected_deltas.values().filter(|&&d| d == delta).count() as f64 / self.expected_deltas.len() as f64
    }
}
