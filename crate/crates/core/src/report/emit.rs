//! Deterministic CSV rendering of a [`ReportBundle`].

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::{cdf, ReportBundle};
use crate::fingerprint::{csv_field, format_hits, format_printers};

/// Every file [`emit`] writes, in write order.
pub const EMITTED_FILES: [&str; 18] = [
    "country_counts.csv",
    "as_counts.csv",
    "yield.csv",
    "yield_cdf.csv",
    "iid_histogram.csv",
    "delta_histogram.csv",
    "delta_cdf.csv",
    "protocol_split.csv",
    "distinct_ports.csv",
    "internal_only.csv",
    "fingerprints.csv",
    "hp_printers.csv",
    "printer_iid.csv",
    "printer_delta_cdf.csv",
    "mqtt_codes.csv",
    "lockdown_versions.csv",
    "wan_vendors.csv",
    "summary.csv",
];

fn xy<K: std::fmt::Display>(rows: impl IntoIterator<Item = (K, String)>) -> String {
    let mut s = String::from("x,y\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn frac(f: f64) -> String {
    format!("{f:.6}")
}

fn iid_hex(i: u64) -> String {
    format!("{i:#x}")
}

/// Fraction of /48s whose count is at most `x`, for `x` in 0..=max.
fn yield_cdf(b: &ReportBundle) -> String {
    let ys: Vec<_> = b.yield_per_48.values().collect();
    let n = ys.len().max(1) as f64;
    let max = ys.iter().map(|y| y.internal_count + y.external_count).max().unwrap_or(0);
    let mut s = String::from("x,internal,external,any\n");
    for x in 0..=max {
        let at_most = |f: &dyn Fn(&super::YieldStats) -> u64| ys.iter().filter(|y| f(y) <= x).count() as f64 / n;
        let _ = writeln!(
            s,
            "{x},{},{},{}",
            frac(at_most(&|y| y.internal_count)),
            frac(at_most(&|y| y.external_count)),
            frac(at_most(&|y| y.internal_count + y.external_count)),
        );
    }
    s
}

pub(super) fn render(b: &ReportBundle) -> Vec<(&'static str, String)> {
    let mut out = Vec::with_capacity(EMITTED_FILES.len());

    let mut s = String::from("country,internal,external,total\n");
    for (c, n) in &b.by_country {
        let _ = writeln!(s, "{},{},{},{}", csv_field(c), n.internal, n.external, n.total());
    }
    out.push((EMITTED_FILES[0], s));

    let mut s = String::from("asn,as_name,country,internal,external,total\n");
    for (a, n) in &b.by_as {
        let _ = writeln!(
            s,
            "{a},{},{},{},{},{}",
            csv_field(&a.as_name),
            csv_field(&a.country),
            n.internal,
            n.external,
            n.total()
        );
    }
    out.push((EMITTED_FILES[1], s));

    let mut s = String::from("prefix48,internal,external,responsive\n");
    for (p, y) in &b.yield_per_48 {
        let _ = writeln!(s, "{p},{},{},{}", y.internal_count, y.external_count, y.responsive_any);
    }
    out.push((EMITTED_FILES[2], s));
    out.push((EMITTED_FILES[3], yield_cdf(b)));

    out.push((EMITTED_FILES[4], xy(b.iid_histogram.iter().map(|(k, v)| (iid_hex(*k), v.to_string())))));
    out.push((EMITTED_FILES[5], xy(b.delta_histogram.iter().map(|(k, v)| (*k, v.to_string())))));
    out.push((EMITTED_FILES[6], xy(cdf(&b.delta_histogram).into_iter().map(|(k, f)| (k, frac(f))))));

    let mut s = String::from("service,port,internal,external\n");
    for p in &b.protocol_split {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            csv_field(&p.service),
            p.port,
            p.internal_responsive_count,
            p.external_responsive_count
        );
    }
    out.push((EMITTED_FILES[7], s));

    out.push((EMITTED_FILES[8], xy(b.distinct_ports.iter().map(|(k, v)| (*k, v.to_string())))));

    let mut s = String::from("address\n");
    for a in &b.internal_only {
        let _ = writeln!(s, "{a}");
    }
    out.push((EMITTED_FILES[9], s));

    out.push((EMITTED_FILES[10], format_hits(&b.hits)));
    out.push((EMITTED_FILES[11], format_printers(&b.printers)));
    out.push((EMITTED_FILES[12], xy(b.printer_iids.iter().map(|(k, v)| (iid_hex(*k), v.to_string())))));
    out.push((EMITTED_FILES[13], xy(cdf(&b.printer_deltas).into_iter().map(|(k, f)| (k, frac(f))))));

    let mut s = String::from("label,return_code,count\n");
    for ((l, c), n) in &b.mqtt_codes {
        let _ = writeln!(s, "{},{c},{n}", l.as_str());
    }
    out.push((EMITTED_FILES[14], s));

    let mut s = String::from("product_version,count\n");
    for (v, n) in &b.lockdown_versions {
        let _ = writeln!(s, "{},{n}", csv_field(v));
    }
    out.push((EMITTED_FILES[15], s));

    let mut s = String::from("vendor,count\n");
    for (v, n) in &b.wan_vendors {
        let _ = writeln!(s, "{},{n}", csv_field(v));
    }
    out.push((EMITTED_FILES[16], s));

    let m = &b.summary;
    let mut s = String::from("metric,value\n");
    for (k, v) in [
        ("probed_48s", m.probed_48s),
        ("responsive_48s", m.responsive_48s),
        ("internal_addresses", m.internal_addresses),
        ("external_addresses", m.external_addresses),
        ("pairs", m.pairs),
        ("grab_records", m.grab_records),
        ("grab_responsive_addresses", m.grab_responsive_addresses),
        ("fingerprint_hits", m.fingerprint_hits),
        ("hp_devices", m.hp_devices),
        ("eui64_wan_addresses", m.eui64_wan_addresses),
        ("ases", m.ases),
        ("countries", m.countries),
    ] {
        let _ = writeln!(s, "{k},{v}");
    }
    out.push((EMITTED_FILES[17], s));
    out
}

/// Write every report file into `dir`, creating it if needed.
pub fn emit(b: &ReportBundle, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in render(b) {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}
