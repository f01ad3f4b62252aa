//! Seed ingestion and residential filtering.
//!
//! Seed lists hold one CIDR prefix per line. Prefixes longer than /48 are
//! truncated to their covering /48; shorter ones are rejected. Filtering keeps
//! a /48 only when its origin AS is categorised as an Internet Service
//! Provider and its connection type is cable/DSL or dialup.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::net::{Ipv6Net, Prefix48, PrefixError, PrefixTable};

pub const RESIDENTIAL_CATEGORY: &str = "Internet Service Provider";

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("line {line}: {source}")]
    Prefix { line: usize, source: PrefixError },
    #[error("line {line}: {reason}")]
    Dataset { line: usize, reason: String },
}

/// One row of the AS-category dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsCategoryRecord {
    pub asn: u32,
    pub primary_category: String,
    pub country: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnectionType {
    CableDsl,
    Dialup,
    Cellular,
    Corporate,
    Other,
}

impl ConnectionType {
    pub fn is_residential(self) -> bool {
        matches!(self, ConnectionType::CableDsl | ConnectionType::Dialup)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectionType::CableDsl => "cable_dsl",
            ConnectionType::Dialup => "dialup",
            ConnectionType::Cellular => "cellular",
            ConnectionType::Corporate => "corporate",
            ConnectionType::Other => "other",
        }
    }
}

impl FromStr for ConnectionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['/', '-', ' '], "_");
        Ok(match norm.as_str() {
            "cable_dsl" => ConnectionType::CableDsl,
            "dialup" => ConnectionType::Dialup,
            "cellular" => ConnectionType::Cellular,
            "corporate" => ConnectionType::Corporate,
            "other" => ConnectionType::Other,
            _ => return Err(format!("unknown connection type '{}'", s.trim())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionTypeRecord {
    pub prefix: Ipv6Net,
    pub connection_type: ConnectionType,
}

/// Prefix to AS-category lookup.
#[derive(Debug, Clone, Default)]
pub struct AsMap {
    table: PrefixTable<AsCategoryRecord>,
}

impl AsMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: Ipv6Net, record: AsCategoryRecord) {
        self.table.insert(prefix, record);
    }

    pub fn lookup(&self, p: Prefix48) -> Option<&AsCategoryRecord> {
        self.table.lookup(p.network()).map(|(_, r)| r)
    }

    /// Parse `prefix,asn,category,country` lines. An ASN appearing with two
    /// different categories or countries is an error.
    pub fn parse(text: &str) -> Result<Self, SeedError> {
        let mut map = AsMap::new();
        let mut seen: std::collections::HashMap<u32, AsCategoryRecord> = Default::default();
        for (line, fields) in delimited_rows(text) {
            let [prefix, asn, category, country] = fields_n::<4>(&fields, line)?;
            let net: Ipv6Net = prefix
                .parse()
                .map_err(|source| SeedError::Prefix { line, source })?;
            let asn: u32 = asn.parse().ok().filter(|&a| a > 0).ok_or_else(|| {
                SeedError::Dataset {
                    line,
                    reason: format!("invalid asn '{asn}'"),
                }
            })?;
            let rec = AsCategoryRecord {
                asn,
                primary_category: category.to_string(),
                country: country.to_ascii_uppercase(),
            };
            if let Some(prev) = seen.get(&asn) {
                if *prev != rec {
                    return Err(SeedError::Dataset {
                        line,
                        reason: format!("AS{asn} has conflicting records"),
                    });
                }
            } else {
                seen.insert(asn, rec.clone());
            }
            map.insert(net, rec);
        }
        Ok(map)
    }
}

/// Connection-type records with longest-prefix-match resolution.
#[derive(Debug, Clone, Default)]
pub struct ConnMap {
    table: PrefixTable<ConnectionType>,
}

impl ConnMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: ConnectionTypeRecord) {
        self.table.insert(record.prefix, record.connection_type);
    }

    pub fn lookup(&self, p: Prefix48) -> Option<ConnectionType> {
        self.table.lookup(p.network()).map(|(_, t)| *t)
    }

    pub fn parse(text: &str) -> Result<Self, SeedError> {
        let mut map = ConnMap::new();
        for (line, fields) in delimited_rows(text) {
            let [prefix, kind] = fields_n::<2>(&fields, line)?;
            let prefix: Ipv6Net = prefix
                .parse()
                .map_err(|source| SeedError::Prefix { line, source })?;
            let connection_type = kind
                .parse()
                .map_err(|reason| SeedError::Dataset { line, reason })?;
            map.insert(ConnectionTypeRecord {
                prefix,
                connection_type,
            });
        }
        Ok(map)
    }
}

/// Non-empty, non-comment lines split on commas, with 1-based line numbers.
pub(crate) fn delimited_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split(',').map(str::trim).collect()))
        }
    })
}

fn fields_n<'a, const N: usize>(fields: &[&'a str], line: usize) -> Result<[&'a str; N], SeedError> {
    fields.try_into().map_err(|_| SeedError::Dataset {
        line,
        reason: format!("expected {N} fields, found {}", fields.len()),
    })
}

/// Counts recorded while building and filtering a seed set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub lines: usize,
    pub duplicates: usize,
    pub truncated: usize,
    /// `(stage name, prefixes remaining)` in pipeline order.
    pub stages: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedSet {
    prefixes: Vec<Prefix48>,
    pub provenance: Provenance,
}

impl SeedSet {
    /// Build from prefixes, dropping duplicates after the first occurrence.
    pub fn from_prefixes(iter: impl IntoIterator<Item = Prefix48>) -> Self {
        let mut seen = HashSet::new();
        let mut prefixes = Vec::new();
        let mut duplicates = 0;
        for p in iter {
            if seen.insert(p) {
                prefixes.push(p);
            } else {
                duplicates += 1;
            }
        }
        let n = prefixes.len();
        SeedSet {
            prefixes,
            provenance: Provenance {
                lines: n + duplicates,
                duplicates,
                truncated: 0,
                stages: vec![("input".into(), n)],
            },
        }
    }

    pub fn prefixes(&self) -> &[Prefix48] {
        &self.prefixes
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// One canonical `/48` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.prefixes {
            s.push_str(&p.to_string());
            s.push('\n');
        }
        s
    }
}

pub fn parse_prefix_list(text: &str) -> Result<SeedSet, SeedError> {
    let mut seen = HashSet::new();
    let mut prov = Provenance::default();
    let mut prefixes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        prov.lines += 1;
        let net: Ipv6Net = l.parse().map_err(|source| SeedError::Prefix { line, source })?;
        if net.len() < 48 {
            return Err(SeedError::Prefix {
                line,
                source: PrefixError::TooShort {
                    text: l.to_string(),
                    required: 48,
                },
            });
        }
        if net.len() > 48 {
            prov.truncated += 1;
        }
        let p = Prefix48::covering(net.network());
        if seen.insert(p) {
            prefixes.push(p);
        } else {
            prov.duplicates += 1;
        }
    }
    prov.stages.push(("input".into(), prefixes.len()));
    Ok(SeedSet {
        prefixes,
        provenance: prov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    NoAsMapping,
    Category,
    NoConnectionMapping,
    ConnectionType,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::NoAsMapping => "no_as_mapping",
            RejectReason::Category => "category",
            RejectReason::NoConnectionMapping => "no_connection_mapping",
            RejectReason::ConnectionType => "connection_type",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Residential,
    Rejected(RejectReason),
}

pub fn is_residential_category(category: &str) -> bool {
    category.trim().eq_ignore_ascii_case(RESIDENTIAL_CATEGORY)
}

pub fn classify_residential(p: Prefix48, asmap: &AsMap, connmap: &ConnMap) -> Decision {
    let Some(rec) = asmap.lookup(p) else {
        return Decision::Rejected(RejectReason::NoAsMapping);
    };
    if !is_residential_category(&rec.primary_category) {
        return Decision::Rejected(RejectReason::Category);
    }
    match connmap.lookup(p) {
        None => Decision::Rejected(RejectReason::NoConnectionMapping),
        Some(t) if t.is_residential() => Decision::Residential,
        Some(_) => Decision::Rejected(RejectReason::ConnectionType),
    }
}

/// Keep only residential prefixes. Stage counts are
/// `(input, category, connection_type)`; prefixes with no AS mapping fail the
/// category stage.
pub fn filter_seeds(seeds: &SeedSet, asmap: &AsMap, connmap: &ConnMap) -> SeedSet {
    let mut after_category = 0;
    let mut kept = Vec::new();
    for &p in &seeds.prefixes {
        match classify_residential(p, asmap, connmap) {
            Decision::Residential => {
                after_category += 1;
                kept.push(p);
            }
            Decision::Rejected(RejectReason::NoConnectionMapping | RejectReason::ConnectionType) => {
                after_category += 1;
            }
            Decision::Rejected(_) => {}
        }
    }
    let mut provenance = seeds.provenance.clone();
    provenance.stages = vec![
        ("input".into(), seeds.len()),
        ("category".into(), after_category),
        ("connection_type".into(), kept.len()),
    ];
    SeedSet {
        prefixes: kept,
        provenance,
    }
}
