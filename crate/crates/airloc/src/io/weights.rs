//! Appearance (`VladParams`) and geometry-encoder weight documents.

use std::path::Path;

use airloc_core::appearance::VladParams;
use airloc_core::geometry::{GeometryConfig, GeometryNet};
use airloc_core::math::Matrix;
use serde::{Deserialize, Serialize};

use super::{check_version, read_string, sha256_hex, to_json_line, write_bytes, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VladDoc {
    version: u32,
    #[serde(rename = "C")]
    clusters: usize,
    #[serde(rename = "Dp")]
    dim: usize,
    centers: Vec<f64>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub fn serialize_vlad(p: &VladParams) -> Vec<u8> {
    to_json_line(&VladDoc {
        version: FORMAT_VERSION,
        clusters: p.clusters(),
        dim: p.descriptor_dim(),
        centers: p.centers().as_slice().to_vec(),
        weights: p.assign_weights().as_slice().to_vec(),
        bias: p.assign_bias().to_vec(),
    })
}

pub fn parse_vlad(text: &str, path: &Path) -> Result<VladParams> {
    let doc: VladDoc = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    check_version(path, doc.version)?;
    let (c, d) = (doc.clusters, doc.dim);
    if doc.centers.len() != c * d || doc.weights.len() != c * d {
        return Err(Error::format(path, format!("centers and weights must hold C*Dp = {} values", c * d)));
    }
    Ok(VladParams::new(
        Matrix::from_vec(c, d, doc.centers),
        Matrix::from_vec(c, d, doc.weights),
        doc.bias,
    )?)
}

pub fn read_vlad(path: &Path) -> Result<VladParams> {
    parse_vlad(&read_string(path)?, path)
}

pub fn write_vlad(path: &Path, p: &VladParams) -> Result<()> {
    write_bytes(path, &serialize_vlad(p))
}

/// Content hash of the parameters, independent of file formatting.
pub fn vlad_fingerprint(p: &VladParams) -> String {
    sha256_hex(&serialize_vlad(p))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    mlp_hidden: usize,
    embed_dim: usize,
    gat_hidden: usize,
    out_dim: usize,
    heads: usize,
    dropout: f64,
    leaky_slope: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeomDoc {
    version: u32,
    config: ConfigDoc,
    tensors: Vec<TensorDoc>,
}

pub fn serialize_geometry(net: &GeometryNet) -> Vec<u8> {
    let c = net.config();
    let tensors = GeometryNet::tensor_specs(c)
        .into_iter()
        .zip(net.tensors())
        .map(|((name, _), t)| TensorDoc {
            name,
            shape: [t.rows(), t.cols()],
            data: t.as_slice().to_vec(),
        })
        .collect();
    to_json_line(&GeomDoc {
        version: FORMAT_VERSION,
        config: ConfigDoc {
            mlp_hidden: c.mlp_hidden,
            embed_dim: c.embed_dim,
            gat_hidden: c.gat_hidden,
            out_dim: c.out_dim,
            heads: c.heads,
            dropout: c.dropout,
            leaky_slope: c.leaky_slope,
        },
        tensors,
    })
}

pub fn parse_geometry(text: &str, path: &Path) -> Result<GeometryNet> {
    let doc: GeomDoc = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    check_version(path, doc.version)?;
    let c = doc.config;
    let config = GeometryConfig {
        mlp_hidden: c.mlp_hidden,
        embed_dim: c.embed_dim,
        gat_hidden: c.gat_hidden,
        out_dim: c.out_dim,
        heads: c.heads,
        dropout: c.dropout,
        leaky_slope: c.leaky_slope,
    };
    let mut tensors = Vec::with_capacity(doc.tensors.len());
    for t in doc.tensors {
        let [rows, cols] = t.shape;
        if t.data.len() != rows * cols {
            return Err(Error::format(
                path,
                format!("tensor {} declares {rows}x{cols} but holds {} values", t.name, t.data.len()),
            ));
        }
        tensors.push((t.name, Matrix::from_vec(rows, cols, t.data)));
    }
    Ok(GeometryNet::from_tensors(config, tensors)?)
}

pub fn read_geometry(path: &Path) -> Result<GeometryNet> {
    parse_geometry(&read_string(path)?, path)
}

pub fn write_geometry(path: &Path, net: &GeometryNet) -> Result<()> {
    write_bytes(path, &serialize_geometry(net))
}

pub fn geometry_fingerprint(net: &GeometryNet) -> String {
    sha256_hex(&serialize_geometry(net))
}
