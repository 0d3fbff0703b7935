//! `query_image_id,true_room` CSV with a header row.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_string, write_bytes};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Row {
    query_image_id: String,
    true_room: String,
}

pub fn serialize_labels(labels: &[(String, String)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (q, r) in labels {
        w.serialize(Row {
            query_image_id: q.clone(),
            true_room: r.clone(),
        })
        .expect("in-memory csv");
    }
    if labels.is_empty() {
        w.write_record(["query_image_id", "true_room"]).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Labels keyed by query image id; duplicate ids are rejected.
pub fn parse_labels(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if out.insert(row.query_image_id.clone(), row.true_room).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate query {}", row.query_image_id),
            });
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_labels(&read_string(path)?, path)
}

pub fn write_labels(path: &Path, labels: &[(String, String)]) -> Result<()> {
    write_bytes(path, &serialize_labels(labels))
}
