//! Versioned binary decoder archives.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{DecoderMeta, DecoderSet, LinearDecoder, Standardizer};
use crate::artifact;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WMDECOD1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    value: usize,
    c: f64,
    cv_accuracy: f64,
    b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    meta: DecoderMeta,
    cv_accuracy: f64,
    entries: Vec<Entry>,
}

/// Payload per decoder: `w`, standardizer mean, standardizer scale.
pub fn save_decoders(set: &DecoderSet<f64>, path: &Path) -> Result<()> {
    let dim = set.decoders.first().map_or(0, |d| d.w.len());
    let mut payload: Vec<f64> = Vec::with_capacity(3 * dim * set.len());
    for d in &set.decoders {
        payload.extend(d.w.iter());
        payload.extend(d.standardizer.mean.iter());
        payload.extend(d.standardizer.scale.iter());
    }
    let header = Header {
        dim,
        meta: set.meta.clone(),
        cv_accuracy: set.cv_accuracy,
        entries: set
            .decoders
            .iter()
            .map(|d| Entry { value: d.value, c: d.c, cv_accuracy: d.cv_accuracy, b: d.b })
            .collect(),
    };
    artifact::write(path, MAGIC, &header, &payload)
}

pub fn load_decoders(path: &Path) -> Result<DecoderSet<f64>> {
    let (h, payload): (Header, Vec<f64>) = artifact::read(path, MAGIC)?;
    if payload.len() != 3 * h.dim * h.entries.len() {
        return Err(Error::integrity(path, "payload does not match decoder count and dimension"));
    }
    let decoders = h
        .entries
        .iter()
        .zip(payload.chunks(3 * h.dim.max(1)))
        .map(|(e, chunk)| LinearDecoder {
            w: Array1::from(chunk[..h.dim].to_vec()),
            b: e.b,
            standardizer: Standardizer {
                mean: Array1::from(chunk[h.dim..2 * h.dim].to_vec()),
                scale: Array1::from(chunk[2 * h.dim..].to_vec()),
            },
            value: e.value,
            c: e.c,
            cv_accuracy: e.cv_accuracy,
            meta: h.meta.clone(),
        })
        .collect();
    Ok(DecoderSet { decoders, meta: h.meta, cv_accuracy: h.cv_accuracy })
}
