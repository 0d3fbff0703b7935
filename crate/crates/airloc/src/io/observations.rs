//! Newline-delimited observation records, one object per line:
//!
//! ```text
//! {"version":1,"format":"airloc-observations"}
//! {"scene":"S","room":"R","image":"I","object":"O","points":[[x,y],...],"desc":[[...],...]}
//! ```
//!
//! The header line is optional; files without one are read as version 1.

use std::path::Path;

use airloc_core::math::Matrix;
use airloc_core::ObjectObservation;
use serde::{Deserialize, Serialize};

use super::{check_version, read_string, write_bytes, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "airloc-observations";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    format: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    scene: String,
    room: String,
    image: String,
    object: String,
    points: Vec<[f64; 2]>,
    desc: Vec<Vec<f64>>,
}

pub fn parse_observations(text: &str, path: &Path) -> Result<Vec<ObjectObservation>> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let is_header = value.get("version").is_some() && value.get("scene").is_none();
        if is_header {
            if !first {
                return Err(parse_err("header is only allowed on the first line".into()));
            }
            let h: Header = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            if h.format != FORMAT_NAME {
                return Err(parse_err(format!("unexpected format {:?}", h.format)));
            }
            check_version(path, h.version)?;
            first = false;
            continue;
        }
        first = false;
        let r: Record = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        let dim = r.desc.first().map_or(0, Vec::len);
        if let Some(bad) = r.desc.iter().position(|d| d.len() != dim) {
            return Err(parse_err(format!(
                "descriptor {bad} has {} values, expected {dim}",
                r.desc[bad].len()
            )));
        }
        let rows = r.desc.len();
        let desc = Matrix::from_vec(rows, dim, r.desc.into_iter().flatten().collect());
        let obs = ObjectObservation::new(r.scene, r.room, r.image, r.object, r.points, desc).map_err(|source| {
            Error::Invalid {
                path: path.to_path_buf(),
                line: line_no,
                source,
            }
        })?;
        out.push(obs);
    }
    airloc_core::model::check_unique_objects(&out)?;
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<Vec<ObjectObservation>> {
    parse_observations(&read_string(path)?, path)
}

pub fn serialize_observations(observations: &[ObjectObservation]) -> Vec<u8> {
    let mut out = super::to_json_line(&Header {
        version: FORMAT_VERSION,
        format: FORMAT_NAME.into(),
    });
    for o in observations {
        let r = Record {
            scene: o.scene_id.clone(),
            room: o.room_id.clone(),
            image: o.image_id.clone(),
            object: o.object_id.clone(),
            points: o.keypoints.points().to_vec(),
            desc: o.keypoints.descriptors().iter_rows().map(<[f64]>::to_vec).collect(),
        };
        out.extend(super::to_json_line(&r));
    }
    out
}

pub fn write_observations(path: &Path, observations: &[ObjectObservation]) -> Result<()> {
    write_bytes(path, &serialize_observations(observations))
}
