//! Offline dataset files that describe a scenario to the pipeline.

use std::collections::BTreeMap;

use super::generate::OUI_CATALOGUE;
use super::Scenario;

/// Seeds that the residential filter must drop: a content AS, a cellular
/// prefix, and a prefix absent from the AS map.
pub const DECOY_SEEDS: [&str; 3] = ["3fff:ffff:1::/48", "3fff:ffff:2::/48", "3fff:ffff:3::/48"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixtures {
    pub seeds: String,
    pub as_map: String,
    pub conn_map: String,
    pub asn_geo: String,
    pub oui: String,
}

impl Fixtures {
    pub fn for_scenario(s: &Scenario) -> Self {
        let mut seeds = String::from("# candidate /48s\n");
        let mut as_map = String::from("# prefix,asn,category,country\n");
        let mut conn_map = String::from("# prefix,connection_type\n");
        let mut asn_geo = String::from("# prefix,asn,as_name,country\n");
        for (i, n) in s.nets.iter().enumerate() {
            seeds.push_str(&format!("{}\n", n.prefix48));
            as_map.push_str(&format!("{},{},Internet Service Provider,{}\n", n.prefix48, n.asn, n.country));
            let kind = if i % 4 == 3 { "dialup" } else { "cable_dsl" };
            conn_map.push_str(&format!("{},{kind}\n", n.prefix48));
            asn_geo.push_str(&format!("{},{},{},{}\n", n.prefix48, n.asn, n.as_name, n.country));
            asn_geo.push_str(&format!("{},{},{},{}\n", n.wan_block, n.asn, n.as_name, n.country));
        }
        for d in DECOY_SEEDS {
            seeds.push_str(&format!("{d}\n"));
        }
        as_map.push_str(&format!("{},64510,Content,US\n", DECOY_SEEDS[0]));
        as_map.push_str(&format!("{},64511,Internet Service Provider,US\n", DECOY_SEEDS[1]));
        conn_map.push_str(&format!("{},cable_dsl\n", DECOY_SEEDS[0]));
        conn_map.push_str(&format!("{},cellular\n", DECOY_SEEDS[1]));
        conn_map.push_str(&format!("{},cable_dsl\n", DECOY_SEEDS[2]));

        let catalogue: BTreeMap<String, &str> = OUI_CATALOGUE
            .iter()
            .map(|(o, v)| (format!("{:02x}:{:02x}:{:02x}", o[0], o[1], o[2]), *v))
            .collect();
        let mut oui = String::from("# oui,vendor\n");
        for (o, v) in catalogue {
            oui.push_str(&format!("{o},{v}\n"));
        }
        Fixtures {
            seeds,
            as_map,
            conn_map,
            asn_geo,
            oui,
        }
    }
}
