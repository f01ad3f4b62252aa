//! Device identification from grab records, and EUI-64 MAC attribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::{IpAddr, Ipv6Addr};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::grab::GrabRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HpHeader {
    pub model: String,
    pub serial: String,
    pub build_date: Option<String>,
    pub build: Option<String>,
}

fn hp_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?x)^\s*HP\s+HTTP\s+Server\s*;\s*
              (?P<model>[^;]*?)\s*;\s*
              Serial\s+Number\s*:\s*(?P<serial>[^;\s]+)\s*
              (?:;\s*Built\s*:\s*(?P<date>[^{;]*?)\s*(?:\{\s*(?P<build>[^}]*?)\s*\})?\s*)?
              ;?\s*$",
        )
        .expect("static regex")
    })
}

/// Parse `HP HTTP Server; <model>; Serial Number: <serial>; Built: <date> {<build>}`.
/// The `Built` clause is optional; the serial is not.
pub fn parse_hp_header(server: &str) -> Option<HpHeader> {
    let c = hp_regex().captures(server)?;
    let model = c["model"].to_string();
    if model.is_empty() {
        return None;
    }
    let non_empty = |m: Option<regex::Match>| m.map(|m| m.as_str().to_string()).filter(|s| !s.is_empty());
    Some(HpHeader {
        model,
        serial: c["serial"].to_string(),
        build_date: non_empty(c.name("date")),
        build: non_empty(c.name("build")),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HpPrinterRecord {
    pub serial: String,
    pub model: String,
    pub build: Option<String>,
    /// Every address that reported this serial, sorted.
    pub addresses: Vec<IpAddr>,
}

/// One device per serial number.
pub fn dedupe_printers(seen: &[(IpAddr, HpHeader)]) -> Vec<HpPrinterRecord> {
    let mut by_serial: BTreeMap<&str, (HpHeader, BTreeSet<IpAddr>)> = BTreeMap::new();
    for (addr, h) in seen {
        by_serial
            .entry(&h.serial)
            .or_insert_with(|| (h.clone(), BTreeSet::new()))
            .1
            .insert(*addr);
    }
    by_serial
        .into_values()
        .map(|(h, addrs)| HpPrinterRecord {
            serial: h.serial,
            model: h.model,
            build: h.build,
            addresses: addrs.into_iter().collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

serde_as_text!(MacAddr);

impl MacAddr {
    pub fn oui(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid MAC address {0:?}")]
pub struct MacParseError(String);

fn parse_hex_octets<const N: usize>(s: &str) -> Option<[u8; N]> {
    let mut out = [0u8; N];
    let mut parts = s.trim().split([':', '-']);
    for o in out.iter_mut() {
        let p = parts.next()?;
        if p.len() != 2 {
            return None;
        }
        *o = u8::from_str_radix(p, 16).ok()?;
    }
    parts.next().is_none().then_some(out)
}

impl FromStr for MacAddr {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_hex_octets::<6>(s).map(MacAddr).ok_or_else(|| MacParseError(s.to_string()))
    }
}

/// Recover the MAC from a modified EUI-64 interface identifier.
pub fn extract_eui64(addr: Ipv6Addr) -> Option<MacAddr> {
    let o = addr.octets();
    let iid = &o[8..];
    if iid[3] != 0xff || iid[4] != 0xfe {
        return None;
    }
    Some(MacAddr([iid[0] ^ 0x02, iid[1], iid[2], iid[5], iid[6], iid[7]]))
}

/// 24-bit OUI to vendor name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OuiDb(HashMap<[u8; 3], String>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("OUI database line {line}: {reason}")]
pub struct OuiError {
    pub line: usize,
    pub reason: String,
}

impl OuiDb {
    /// Lines `xx:xx:xx,vendor name`.
    pub fn parse(text: &str) -> Result<Self, OuiError> {
        let mut db = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let (line, raw) = (i + 1, raw.trim());
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let Some((oui, vendor)) = raw.split_once(',') else {
                return Err(OuiError {
                    line,
                    reason: "expected `oui,vendor`".into(),
                });
            };
            let oui = parse_hex_octets::<3>(oui).ok_or_else(|| OuiError {
                line,
                reason: format!("bad OUI {oui:?}"),
            })?;
            db.insert(oui, vendor.trim().to_string());
        }
        Ok(OuiDb(db))
    }

    pub fn insert(&mut self, oui: [u8; 3], vendor: &str) {
        self.0.insert(oui, vendor.to_string());
    }

    pub fn vendor(&self, mac: MacAddr) -> Option<&str> {
        self.0.get(&mac.oui()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn oui_vendor(mac: MacAddr, db: &OuiDb) -> Option<&str> {
    db.vendor(mac)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Eui64Extraction {
    pub address: Ipv6Addr,
    pub mac: MacAddr,
    pub vendor: Option<String>,
}

pub fn attribute(addr: Ipv6Addr, db: &OuiDb) -> Option<Eui64Extraction> {
    let mac = extract_eui64(addr)?;
    Some(Eui64Extraction {
        address: addr,
        mac,
        vendor: db.vendor(mac).map(str::to_string),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HitKind {
    HpPrinter,
    DahuaCamera,
    Nanoleaf,
    NokiaGateway,
    Other(String),
}

impl fmt::Display for HitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HitKind::HpPrinter => f.write_str("hp_printer"),
            HitKind::DahuaCamera => f.write_str("dahua_camera"),
            HitKind::Nanoleaf => f.write_str("nanoleaf"),
            HitKind::NokiaGateway => f.write_str("nokia_gateway"),
            HitKind::Other(tag) => write!(f, "other:{tag}"),
        }
    }
}

impl FromStr for HitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "hp_printer" => HitKind::HpPrinter,
            "dahua_camera" => HitKind::DahuaCamera,
            "nanoleaf" => HitKind::Nanoleaf,
            "nokia_gateway" => HitKind::NokiaGateway,
            _ => match s.strip_prefix("other:") {
                Some(tag) if !tag.is_empty() => HitKind::Other(tag.to_string()),
                _ => return Err(format!("unknown fingerprint kind {s:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FingerprintHit {
    pub address: IpAddr,
    pub service: String,
    pub port: u16,
    pub kind: HitKind,
    /// The matched substring or header.
    pub evidence: String,
}

/// Extra body-substring rule for device classes beyond the built-in four.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstringRule {
    pub tag: String,
    pub needle: String,
}

pub const DAHUA_MARKER: &str = r#"appname="cameraNewConfig""#;
pub const NOKIA_CN: &str = "Nokia DHBU Root CA";

fn nanoleaf_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?is)<(form|a)\b[^>]*>.*?</(form|a)\s*>"#).expect("static regex")
    })
}

fn upload_element(elem: &str) -> bool {
    let lower = elem.to_ascii_lowercase();
    lower.contains("firmware") && (lower.contains("upload") || lower.contains("type=\"file\"") || lower.contains("type=file"))
}

/// First form or anchor in `body` that offers a firmware upload.
fn firmware_upload_snippet(body: &str) -> Option<&str> {
    nanoleaf_regex().find_iter(body).map(|m| m.as_str()).find(|e| upload_element(e))
}

pub fn match_fingerprints(g: &GrabRecord, extra: &[SubstringRule]) -> Vec<FingerprintHit> {
    let mut hits = Vec::new();
    let hit = |kind, evidence: &str| FingerprintHit {
        address: g.address,
        service: g.service.clone(),
        port: g.port,
        kind,
        evidence: evidence.to_string(),
    };
    if let Some(server) = g.http_server_header.as_deref() {
        if parse_hp_header(server).is_some() {
            hits.push(hit(HitKind::HpPrinter, server));
        }
    }
    if g.tls_subject_cn.as_deref() == Some(NOKIA_CN) {
        hits.push(hit(HitKind::NokiaGateway, NOKIA_CN));
    }
    if let Some(body) = g.http_body() {
        let body = String::from_utf8_lossy(body);
        if body.contains(DAHUA_MARKER) {
            hits.push(hit(HitKind::DahuaCamera, DAHUA_MARKER));
        }
        if let Some(snippet) = firmware_upload_snippet(&body) {
            hits.push(hit(HitKind::Nanoleaf, snippet));
        }
        for rule in extra {
            if body.contains(&rule.needle) {
                hits.push(hit(HitKind::Other(rule.tag.clone()), &rule.needle));
            }
        }
    }
    hits
}

/// Fingerprint a grab log: hits in record order, HP devices deduplicated by serial.
pub fn fingerprint_all(grabs: &[GrabRecord], extra: &[SubstringRule]) -> (Vec<FingerprintHit>, Vec<HpPrinterRecord>) {
    let mut hits = Vec::new();
    let mut hp = Vec::new();
    for g in grabs.iter().filter(|g| g.outcome.is_responded()) {
        if let Some(h) = g.http_server_header.as_deref().and_then(parse_hp_header) {
            hp.push((g.address, h));
        }
        hits.extend(match_fingerprints(g, extra));
    }
    (hits, dedupe_printers(&hp))
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `address,service,port,kind,evidence`, evidence quoted when needed.
pub fn format_hits(hits: &[FingerprintHit]) -> String {
    let mut out = String::from("address,service,port,kind,evidence\n");
    for h in hits {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.address,
            h.service,
            h.port,
            h.kind,
            csv_field(&h.evidence)
        ));
    }
    out
}

#[derive(Debug, Error)]
#[error("fingerprint table row {row}: {reason}")]
pub struct HitsParseError {
    pub row: usize,
    pub reason: String,
}

/// Inverse of [`format_hits`].
pub fn parse_hits(text: &str) -> Result<Vec<FingerprintHit>, HitsParseError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let err = |reason: String| HitsParseError { row, reason };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let [address, service, port, kind, evidence] = [0, 1, 2, 3, 4].map(|k| rec.get(k));
        let (Some(address), Some(service), Some(port), Some(kind), Some(evidence)) = (address, service, port, kind, evidence)
        else {
            return Err(err("expected 5 fields".into()));
        };
        out.push(FingerprintHit {
            address: address.parse().map_err(|e| err(format!("address: {e}")))?,
            service: service.to_string(),
            port: port.parse().map_err(|e| err(format!("port: {e}")))?,
            kind: kind.parse().map_err(err)?,
            evidence: evidence.to_string(),
        });
    }
    Ok(out)
}

/// `serial,model,build,address_count,addresses` with `;`-joined addresses.
pub fn format_printers(printers: &[HpPrinterRecord]) -> String {
    let mut out = String::from("serial,model,build,address_count,addresses\n");
    for p in printers {
        let addrs: Vec<String> = p.addresses.iter().map(ToString::to_string).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&p.serial),
            csv_field(&p.model),
            csv_field(p.build.as_deref().unwrap_or("")),
            p.addresses.len(),
            addrs.join(";")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grab::GrabOutcome;

    fn record(server: Option<&str>, cn: Option<&str>, body: &str) -> GrabRecord {
        let banner = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n{body}", body.len()).into_bytes();
        GrabRecord {
            address: "2001:db8::1".parse().unwrap(),
            service: "http".into(),
            port: 80,
            outcome: GrabOutcome::Responded,
            banner,
            banner_line: None,
            http_status: Some(200),
            http_server_header: server.map(str::to_string),
            tls_subject_cn: cn.map(str::to_string),
            mqtt_return_code: None,
            lockdown_product_version: None,
        }
    }

    #[test]
    fn hp_header_full() {
        let h = parse_hp_header("HP HTTP Server; HP DeskJet 2700 series; Serial Number: CN0XX; Built: 2023-01-05 {1}").unwrap();
        assert_eq!(h.model, "HP DeskJet 2700 series");
        assert_eq!(h.serial, "CN0XX");
        assert_eq!(h.build_date.as_deref(), Some("2023-01-05"));
        assert_eq!(h.build.as_deref(), Some("1"));
    }

    #[test]
    fn hp_header_tolerant() {
        let h = parse_hp_header("HP HTTP Server ;HP Smart Tank 580;  Serial Number:TH12  ").unwrap();
        assert_eq!(h.model, "HP Smart Tank 580");
        assert_eq!(h.serial, "TH12");
        assert_eq!(h.build, None);
        assert_eq!(parse_hp_header("Apache/2.4"), None);
        assert_eq!(parse_hp_header("HP HTTP Server; HP LaserJet"), None);
    }

    #[test]
    fn eui64_examples() {
        let a: Ipv6Addr = "2001:db8::211:22ff:fe33:4455".parse().unwrap();
        assert_eq!(extract_eui64(a).unwrap().to_string(), "00:11:22:33:44:55");
        assert_eq!(extract_eui64("2001:db8::1".parse().unwrap()), None);
    }

    #[test]
    fn oui_lookup() {
        let db = OuiDb::parse("# comment\n00:11:22,VendorX\nAA-BB-CC,Vendor, Inc.\n").unwrap();
        assert_eq!(db.vendor("00:11:22:33:44:55".parse().unwrap()), Some("VendorX"));
        assert_eq!(db.vendor("aa:bb:cc:00:00:00".parse().unwrap()), Some("Vendor, Inc."));
        assert_eq!(db.vendor("00:00:01:00:00:00".parse().unwrap()), None);
        assert_eq!(OuiDb::parse("zz:11:22,X").unwrap_err().line, 1);
    }

    #[test]
    fn signatures() {
        let dahua = record(None, None, r#"<script>var appname="cameraNewConfig";</script>"#);
        assert_eq!(match_fingerprints(&dahua, &[])[0].kind, HitKind::DahuaCamera);

        let nano = record(None, None, r#"<html><a href="/upload">Upload new Firmware</a></html>"#);
        let hits = match_fingerprints(&nano, &[]);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].kind, HitKind::Nanoleaf);
        assert_eq!(hits[0].evidence, r#"<a href="/upload">Upload new Firmware</a>"#);

        let nokia = record(None, Some(NOKIA_CN), "");
        assert_eq!(match_fingerprints(&nokia, &[])[0].kind, HitKind::NokiaGateway);

        assert!(match_fingerprints(&record(None, None, ""), &[]).is_empty());
        let rule = SubstringRule {
            tag: "router".into(),
            needle: "RouterOS".into(),
        };
        let other = record(None, None, "RouterOS v7");
        assert_eq!(match_fingerprints(&other, &[rule])[0].kind, HitKind::Other("router".into()));
    }

    #[test]
    fn firmware_outside_upload_element_ignored() {
        let r = record(None, None, "<p>firmware 1.2</p><a href=\"/\">home</a>");
        assert!(match_fingerprints(&r, &[]).is_empty());
    }

    #[test]
    fn hit_kind_round_trip() {
        for k in [HitKind::HpPrinter, HitKind::DahuaCamera, HitKind::Nanoleaf, HitKind::NokiaGateway, HitKind::Other("x".into())] {
            assert_eq!(k.to_string().parse::<HitKind>().unwrap(), k);
        }
    }

    #[test]
    fn hits_table_round_trips() {
        let hits = vec![
            FingerprintHit {
                address: "2001:db8::1".parse().unwrap(),
                service: "http".into(),
                port: 80,
                kind: HitKind::Other("x".into()),
                evidence: "a, \"quoted\"\nline".into(),
            },
            FingerprintHit {
                address: "192.0.2.1".parse().unwrap(),
                service: "https".into(),
                port: 443,
                kind: HitKind::NokiaGateway,
                evidence: NOKIA_CN.into(),
            },
        ];
        assert_eq!(parse_hits(&format_hits(&hits)).unwrap(), hits);
        assert!(parse_hits("address,service,port,kind,evidence\nx,http,80,nanoleaf,e\n").is_err());
    }
}
