//! Campaign-level statistics over classification, grab and fingerprint output.

mod emit;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::net::{IpAddr, Ipv6Addr};

use thiserror::Error;

use crate::classify::{delta_histogram, pair_deltas, ClassifiedAddress, Label};
use crate::fingerprint::{dedupe_printers, extract_eui64, parse_hp_header, FingerprintHit, HpPrinterRecord, OuiDb};
use crate::grab::config::ServiceSpec;
use crate::grab::GrabRecord;
use crate::net::{iid, Ipv6Net, Prefix48, Prefix56, PrefixTable};

pub use emit::{emit, EMITTED_FILES};

/// File name and contents of every report file, without touching disk.
pub fn render(b: &ReportBundle) -> Vec<(&'static str, String)> {
    emit::render(b)
}

pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AsInfo {
    pub asn: Option<u32>,
    pub as_name: String,
    pub country: String,
}

impl AsInfo {
    pub fn unknown() -> Self {
        Self {
            asn: None,
            as_name: UNKNOWN.into(),
            country: UNKNOWN.into(),
        }
    }
}

impl fmt::Display for AsInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.asn {
            Some(a) => write!(f, "AS{a}"),
            None => f.write_str(UNKNOWN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ASN/geo map line {line}: {reason}")]
pub struct GeoMapError {
    pub line: usize,
    pub reason: String,
}

/// Offline prefix to (ASN, AS name, registration country) map.
#[derive(Debug, Clone, Default)]
pub struct AsnGeoMap(PrefixTable<AsInfo>);

impl AsnGeoMap {
    /// Lines `prefix,asn,as_name,country`.
    pub fn parse(text: &str) -> Result<Self, GeoMapError> {
        let mut t = PrefixTable::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = raw.split(',').map(str::trim).collect();
            let [prefix, asn, name, country] = f.as_slice() else {
                return Err(GeoMapError {
                    line,
                    reason: "expected `prefix,asn,as_name,country`".into(),
                });
            };
            let net: Ipv6Net = prefix.parse().map_err(|e| GeoMapError {
                line,
                reason: format!("{e}"),
            })?;
            let asn: u32 = asn.trim_start_matches("AS").parse().map_err(|_| GeoMapError {
                line,
                reason: format!("bad ASN {asn:?}"),
            })?;
            t.insert(
                net,
                AsInfo {
                    asn: Some(asn),
                    as_name: name.to_string(),
                    country: country.to_uppercase(),
                },
            );
        }
        Ok(AsnGeoMap(t))
    }

    pub fn resolve(&self, addr: Ipv6Addr) -> AsInfo {
        self.0.lookup(addr).map_or_else(AsInfo::unknown, |(_, v)| v.clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountSplit {
    pub internal: u64,
    pub external: u64,
}

impl CountSplit {
    fn add(&mut self, label: Label) {
        match label {
            Label::Internal => self.internal += 1,
            Label::External => self.external += 1,
            Label::AliasedMember => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.internal + self.external
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct YieldStats {
    pub internal_count: u64,
    pub external_count: u64,
    pub responsive_any: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSplit {
    pub service: String,
    pub port: u16,
    pub internal_responsive_count: u64,
    pub external_responsive_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summary {
    pub probed_48s: u64,
    pub responsive_48s: u64,
    pub internal_addresses: u64,
    pub external_addresses: u64,
    pub pairs: u64,
    pub grab_records: u64,
    pub grab_responsive_addresses: u64,
    pub fingerprint_hits: u64,
    pub hp_devices: u64,
    pub eui64_wan_addresses: u64,
    pub ases: u64,
    pub countries: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportBundle {
    pub by_country: BTreeMap<String, CountSplit>,
    pub by_as: BTreeMap<AsInfo, CountSplit>,
    pub yield_per_48: BTreeMap<Prefix48, YieldStats>,
    /// IID of internal responses to count.
    pub iid_histogram: BTreeMap<u64, u64>,
    pub delta_histogram: BTreeMap<i16, u64>,
    /// One row per configured service, in configuration order.
    pub protocol_split: Vec<ProtocolSplit>,
    /// Number of distinct responsive ports to number of addresses.
    pub distinct_ports: BTreeMap<usize, u64>,
    pub internal_only: Vec<Ipv6Addr>,
    pub hits: Vec<FingerprintHit>,
    pub printers: Vec<HpPrinterRecord>,
    pub printer_iids: BTreeMap<u64, u64>,
    /// Deltas of pairs whose internal address is an HP printer.
    pub printer_deltas: BTreeMap<i16, u64>,
    pub mqtt_codes: BTreeMap<(Label, u8), u64>,
    pub lockdown_versions: BTreeMap<String, u64>,
    /// EUI-64 WAN addresses by OUI vendor.
    pub wan_vendors: BTreeMap<String, u64>,
    pub summary: Summary,
}

/// Everything one campaign produced, plus the lookups needed to attribute it.
#[derive(Debug, Clone, Copy)]
pub struct AggregateInput<'a> {
    pub classified: &'a [ClassifiedAddress],
    pub grabs: &'a [GrabRecord],
    pub hits: &'a [FingerprintHit],
    pub geo: &'a AsnGeoMap,
    pub oui: &'a OuiDb,
    /// The probed /48s, so silent ones count in the yield denominator.
    pub probed: &'a [Prefix48],
    pub services: &'a [ServiceSpec],
}

fn labels_by_address(classified: &[ClassifiedAddress]) -> HashMap<Ipv6Addr, BTreeSet<Label>> {
    let mut m: HashMap<Ipv6Addr, BTreeSet<Label>> = HashMap::new();
    for c in classified {
        m.entry(c.address).or_default().insert(c.label);
    }
    m
}

fn v6(ip: IpAddr) -> Option<Ipv6Addr> {
    match ip {
        IpAddr::V6(a) => Some(a),
        IpAddr::V4(_) => None,
    }
}

/// Internal addresses with at least one responded service in nets whose
/// external addresses answered no service at all. `service` restricts which
/// internal services count.
pub fn internal_only_exposures(
    classified: &[ClassifiedAddress],
    grabs: &[GrabRecord],
    service: Option<&str>,
) -> Vec<Ipv6Addr> {
    let mut responded_any: HashSet<Ipv6Addr> = HashSet::new();
    let mut responded_svc: HashSet<Ipv6Addr> = HashSet::new();
    for g in grabs.iter().filter(|g| g.outcome.is_responded()) {
        if let Some(a) = v6(g.address) {
            responded_any.insert(a);
            if service.is_none_or(|s| s == g.service) {
                responded_svc.insert(a);
            }
        }
    }
    let mut nets: BTreeMap<Prefix56, (Vec<Ipv6Addr>, bool)> = BTreeMap::new();
    for c in classified {
        let slot = nets.entry(c.net).or_default();
        match c.label {
            Label::Internal if responded_svc.contains(&c.address) => slot.0.push(c.address),
            Label::External if responded_any.contains(&c.address) => slot.1 = true,
            _ => {}
        }
    }
    let mut out: Vec<Ipv6Addr> = nets
        .into_values()
        .filter(|(_, external_answers)| !external_answers)
        .flat_map(|(internal, _)| internal)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub fn aggregate(input: &AggregateInput) -> ReportBundle {
    let mut b = ReportBundle::default();
    let classified = input.classified;

    for c in classified {
        let info = input.geo.resolve(c.address);
        b.by_country.entry(info.country.clone()).or_default().add(c.label);
        b.by_as.entry(info).or_default().add(c.label);
        if c.label == Label::Internal {
            *b.iid_histogram.entry(iid(c.address)).or_default() += 1;
        }
    }

    for &p in input.probed {
        b.yield_per_48.entry(p).or_default();
    }
    for c in classified {
        let y = b.yield_per_48.entry(c.net.parent()).or_default();
        match c.label {
            Label::Internal => y.internal_count += 1,
            Label::External => y.external_count += 1,
            Label::AliasedMember => {}
        }
    }
    for y in b.yield_per_48.values_mut() {
        y.responsive_any = y.internal_count + y.external_count > 0;
    }

    let pairs = pair_deltas(classified);
    b.delta_histogram = delta_histogram(&pairs);

    let labels = labels_by_address(classified);
    let label_of = |ip: IpAddr| v6(ip).and_then(|a| labels.get(&a));
    b.protocol_split = input
        .services
        .iter()
        .map(|s| {
            let (mut int, mut ext) = (HashSet::new(), HashSet::new());
            for g in input.grabs {
                if g.service == s.name && g.port == s.port && g.outcome.is_responded() {
                    if let Some(ls) = label_of(g.address) {
                        if ls.contains(&Label::Internal) {
                            int.insert(g.address);
                        }
                        if ls.contains(&Label::External) {
                            ext.insert(g.address);
                        }
                    }
                }
            }
            ProtocolSplit {
                service: s.name.clone(),
                port: s.port,
                internal_responsive_count: int.len() as u64,
                external_responsive_count: ext.len() as u64,
            }
        })
        .collect();

    let ports = crate::grab::distinct_ports(input.grabs);
    for &n in ports.values() {
        *b.distinct_ports.entry(n).or_default() += 1;
    }

    b.internal_only = internal_only_exposures(classified, input.grabs, None);

    let mut hits = input.hits.to_vec();
    hits.sort();
    b.hits = hits;

    let mut hp = Vec::new();
    for g in input.grabs.iter().filter(|g| g.outcome.is_responded()) {
        if let Some(h) = g.http_server_header.as_deref().and_then(parse_hp_header) {
            hp.push((g.address, h));
        }
        if let Some(code) = g.mqtt_return_code {
            for &l in label_of(g.address).into_iter().flatten() {
                *b.mqtt_codes.entry((l, code)).or_default() += 1;
            }
        }
        if let Some(v) = &g.lockdown_product_version {
            *b.lockdown_versions.entry(v.clone()).or_default() += 1;
        }
    }
    hp.sort_by(|a, b| (a.0, &a.1.serial).cmp(&(b.0, &b.1.serial)));
    hp.dedup_by(|a, b| a.0 == b.0 && a.1.serial == b.1.serial);
    b.printers = dedupe_printers(&hp);
    let printer_addrs: BTreeSet<Ipv6Addr> = hp.iter().filter_map(|(a, _)| v6(*a)).collect();
    for a in &printer_addrs {
        *b.printer_iids.entry(iid(*a)).or_default() += 1;
    }
    for p in pairs.iter().filter(|p| printer_addrs.contains(&p.internal)) {
        *b.printer_deltas.entry(p.delta).or_default() += 1;
    }

    let externals: BTreeSet<Ipv6Addr> = classified
        .iter()
        .filter(|c| c.label == Label::External)
        .map(|c| c.address)
        .collect();
    let mut eui64 = 0;
    for a in &externals {
        if let Some(mac) = extract_eui64(*a) {
            eui64 += 1;
            let vendor = input.oui.vendor(mac).unwrap_or(UNKNOWN);
            *b.wan_vendors.entry(vendor.to_string()).or_default() += 1;
        }
    }

    let count = |l: Label| classified.iter().filter(|c| c.label == l).count() as u64;
    b.summary = Summary {
        probed_48s: input.probed.iter().collect::<BTreeSet<_>>().len() as u64,
        responsive_48s: b.yield_per_48.values().filter(|y| y.responsive_any).count() as u64,
        internal_addresses: count(Label::Internal),
        external_addresses: count(Label::External),
        pairs: pairs.len() as u64,
        grab_records: input.grabs.len() as u64,
        grab_responsive_addresses: ports.len() as u64,
        fingerprint_hits: b.hits.len() as u64,
        hp_devices: b.printers.len() as u64,
        eui64_wan_addresses: eui64,
        ases: b.by_as.keys().filter(|k| k.asn.is_some()).count() as u64,
        countries: b.by_country.keys().filter(|k| k.as_str() != UNKNOWN).count() as u64,
    };
    b
}

/// Cumulative fractions of a histogram, ending at 1.0.
pub fn cdf<K: Copy + Ord>(hist: &BTreeMap<K, u64>) -> Vec<(K, f64)> {
    let total: u64 = hist.values().sum();
    let mut acc = 0u64;
    hist.iter()
        .map(|(&k, &n)| {
            acc += n;
            (k, if total == 0 { 0.0 } else { acc as f64 / total as f64 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grab::config::default_services;
    use crate::grab::GrabOutcome;

    fn ca(net: &str, label: Label, addr: &str, distance: u8) -> ClassifiedAddress {
        let address: Ipv6Addr = addr.parse().unwrap();
        ClassifiedAddress {
            net: Prefix56::covering(net.parse().unwrap()),
            label,
            address,
            inferred_initial_hop_limit: 64,
            distance,
        }
    }

    fn responded(addr: &str, service: &str, port: u16) -> GrabRecord {
        let spec = default_services().into_iter().find(|s| s.name == service && s.port == port).unwrap();
        let mut g = GrabRecord::new(addr.parse().unwrap(), &spec);
        g.outcome = GrabOutcome::Responded;
        g
    }

    fn fixture() -> (Vec<ClassifiedAddress>, Vec<GrabRecord>) {
        let c = vec![
            ca("2001:db8:1::", Label::Internal, "2001:db8:1::1", 5),
            ca("2001:db8:1::", Label::External, "3fff:0:1::1", 5),
            ca("2001:db8:1:100::", Label::Internal, "2001:db8:1:100::2", 6),
            ca("2001:db8:1:100::", Label::External, "3fff:0:1:100::1", 5),
            ca("2001:db8:2::", Label::External, "3fff:0:2::1", 9),
        ];
        let g = vec![
            responded("2001:db8:1::1", "telnet", 23),
            responded("2001:db8:1:100::2", "telnet", 23),
            responded("3fff:0:1:100::1", "http", 80),
            responded("3fff:0:1:100::1", "https", 443),
        ];
        (c, g)
    }

    #[test]
    fn geo_longest_prefix_and_unknown() {
        let m = AsnGeoMap::parse("# x\n2001:db8::/32,64500,Big,de\n2001:db8:1::/48,AS64501,Small,FR\n").unwrap();
        assert_eq!(m.resolve("2001:db8:1::1".parse().unwrap()).asn, Some(64501));
        assert_eq!(m.resolve("2001:db8:2::1".parse().unwrap()).country, "DE");
        assert_eq!(m.resolve("2001:db9::1".parse().unwrap()), AsInfo::unknown());
        assert_eq!(AsnGeoMap::parse("2001:db8::/32,x,a,b").unwrap_err().line, 1);
    }

    #[test]
    fn internal_only_needs_silent_external() {
        let (c, g) = fixture();
        let only = internal_only_exposures(&c, &g, None);
        assert_eq!(only, vec!["2001:db8:1::1".parse::<Ipv6Addr>().unwrap()]);
        assert!(internal_only_exposures(&c, &g, Some("http")).is_empty());
    }

    #[test]
    fn aggregate_counts_conserve() {
        let (c, g) = fixture();
        let geo = AsnGeoMap::parse("2001:db8:1::/48,64500,A,DE\n3fff:0:1::/48,64500,A,DE\n").unwrap();
        let probed = ["2001:db8:1::".parse().unwrap(), "2001:db8:2::".parse().unwrap(), "2001:db8:3::".parse().unwrap()]
            .map(Prefix48::covering);
        let b = aggregate(&AggregateInput {
            classified: &c,
            grabs: &g,
            hits: &[],
            geo: &geo,
            oui: &OuiDb::default(),
            probed: &probed,
            services: &default_services(),
        });
        let total: u64 = b.by_country.values().map(CountSplit::total).sum();
        assert_eq!(total, c.len() as u64);
        assert_eq!(b.by_country["DE"], CountSplit { internal: 2, external: 2 });
        assert_eq!(b.by_country[UNKNOWN], CountSplit { internal: 0, external: 1 });
        assert_eq!(b.yield_per_48.len(), 3);
        assert_eq!(b.summary.responsive_48s, 2);
        assert_eq!(b.delta_histogram, BTreeMap::from([(0, 1), (1, 1)]));
        let telnet = b.protocol_split.iter().find(|p| p.service == "telnet").unwrap();
        assert_eq!((telnet.internal_responsive_count, telnet.external_responsive_count), (2, 0));
        assert_eq!(b.protocol_split.len(), default_services().len());
        assert_eq!(b.distinct_ports, BTreeMap::from([(1, 2), (2, 1)]));
        assert_eq!(cdf(&b.delta_histogram).last().unwrap().1, 1.0);
        let files = render(&b);
        assert_eq!(files.len(), EMITTED_FILES.len());
        let cdf_file = &files.iter().find(|f| f.0 == "yield_cdf.csv").unwrap().1;
        assert!(cdf_file.lines().last().unwrap().ends_with(",1.000000,1.000000,1.000000"));
    }
}
