//! `SPARGE1` model files: a text header of `key=value` lines, a blank line,
//! then little-endian f64 payloads for Z, D, Φ and U, each row-major.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use super::config::{apply_hyperparams, hyperparams_to_pairs};
use crate::error::{Result, SpargeError};
use crate::graph_embedding::StiefelProjection;
use crate::sparse_coding::{CodeMatrix, Dictionary};
use crate::trainer::{Hyperparams, SpargeModel};

pub const MAGIC: &str = "SPARGE1";

fn push_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

pub fn model_to_bytes(model: &SpargeModel) -> Vec<u8> {
    let (m, n) = model.z.shape();
    let k = model.dictionary.len();
    let l = model.projection.l();
    let mut header = format!("{MAGIC}\nm={m}\nn={n}\nk={k}\nl={l}\n");
    let labels = match &model.labels {
        None => "none".to_string(),
        Some(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    };
    header.push_str(&format!("labels={labels}\n"));
    for (key, value) in hyperparams_to_pairs(&model.hyperparams) {
        header.push_str(&format!("{key}={value}\n"));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(8 * (m * n + m * k + k * n + k * l));
    push_row_major(&mut out, &model.z);
    push_row_major(&mut out, model.dictionary.atoms());
    push_row_major(&mut out, model.codes.codes());
    push_row_major(&mut out, model.projection.matrix());
    out
}

fn header_usize(map: &BTreeMap<&str, &str>, key: &str) -> Result<usize> {
    let v = map
        .get(key)
        .ok_or_else(|| SpargeError::Header(format!("missing key {key:?}")))?;
    v.parse()
        .map_err(|_| SpargeError::Header(format!("{key}={v:?} is not a count")))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<SpargeModel> {
    let first_end = bytes.iter().position(|&b| b == b'\n');
    let first = &bytes[..first_end.unwrap_or(bytes.len().min(64))];
    if first != MAGIC.as_bytes() {
        return Err(SpargeError::VersionMismatch(String::from_utf8_lossy(first).into_owned()));
    }
    let sep = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or(SpargeError::Truncated("header is not terminated"))?;
    let header = std::str::from_utf8(&bytes[..sep]).map_err(|_| SpargeError::Header("header is not UTF-8".into()))?;
    let payload = &bytes[sep + 2..];

    let mut map = BTreeMap::new();
    let mut pairs = Vec::new();
    for line in header.lines().skip(1) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SpargeError::Header(format!("line {line:?} is not key=value")))?;
        if map.insert(k, v).is_some() {
            return Err(SpargeError::Header(format!("duplicate key {k:?}")));
        }
        if !matches!(k, "m" | "n" | "k" | "l" | "labels") {
            pairs.push((k.to_string(), v.to_string()));
        }
    }
    let m = header_usize(&map, "m")?;
    let n = header_usize(&map, "n")?;
    let k = header_usize(&map, "k")?;
    let l = header_usize(&map, "l")?;
    let (hyperparams, unknown) = apply_hyperparams(&Hyperparams::default(), &pairs)?;
    if let Some(key) = unknown.first() {
        return Err(SpargeError::Header(format!("unknown key {key:?}")));
    }
    if hyperparams.k != k || hyperparams.l != l {
        return Err(SpargeError::Header(format!(
            "dict_size/embed_dim ({}, {}) disagree with k, l ({k}, {l})",
            hyperparams.k, hyperparams.l
        )));
    }
    let labels = match *map.get("labels").ok_or_else(|| SpargeError::Header("missing key \"labels\"".into()))? {
        "none" => None,
        "" => Some(Vec::new()),
        s => Some(
            s.split(',')
                .map(|t| t.parse().map_err(|_| SpargeError::Header(format!("bad label {t:?}"))))
                .collect::<Result<Vec<usize>>>()?,
        ),
    };
    if labels.as_ref().is_some_and(|v| v.len() != n) {
        return Err(SpargeError::Header(format!("label count differs from n = {n}")));
    }

    let sizes = [m * n, m * k, k * n, k * l];
    let expected: usize = sizes.iter().sum();
    if payload.len() % 8 != 0 || payload.len() / 8 != expected {
        return Err(SpargeError::PayloadSize {
            expected,
            found: payload.len() / 8,
        });
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |r: usize, c: usize| DMatrix::from_row_iterator(r, c, floats.by_ref().take(r * c));
    let z = take(m, n);
    let d = take(m, k);
    let phi = take(k, n);
    let u = take(k, l);
    Ok(SpargeModel {
        z,
        dictionary: Dictionary::new(d)?,
        codes: CodeMatrix::new(phi)?,
        projection: StiefelProjection::new(u)?,
        hyperparams,
        labels,
    })
}

pub fn save_model(model: &SpargeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)).map_err(|e| SpargeError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SpargeModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SpargeError::io(path, e))?;
    model_from_bytes(&bytes)
}
