//! Single-line query result records. Scores that cannot be ranked (rooms
//! with no objects) are written as `null`.

use std::collections::BTreeMap;

use airloc_core::reloc::RelocResult;
use serde::Serialize;

use super::{finite_or_none, to_json_line, FORMAT_VERSION};

#[derive(Serialize)]
struct ResultDoc<'a> {
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    query: Option<&'a str>,
    top: Option<&'a str>,
    ranked: Vec<(&'a str, f64)>,
    used_geometry: bool,
    appearance: BTreeMap<&'a str, Option<f64>>,
    geometry: BTreeMap<&'a str, Option<f64>>,
}

fn scores(m: &BTreeMap<String, f64>) -> BTreeMap<&str, Option<f64>> {
    m.iter().map(|(k, &v)| (k.as_str(), finite_or_none(v))).collect()
}

pub fn serialize_result(result: &RelocResult, query: Option<&str>) -> Vec<u8> {
    to_json_line(&ResultDoc {
        version: FORMAT_VERSION,
        query,
        top: result.top(),
        ranked: result.ranked.iter().map(|(r, s)| (r.as_str(), *s)).collect(),
        used_geometry: result.used_geometry,
        appearance: scores(&result.appearance_scores),
        geometry: scores(&result.geometry_scores),
    })
}
