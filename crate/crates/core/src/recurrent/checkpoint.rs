//! Versioned binary checkpoints: architecture, shapes, parameters,
//! optimizer moments, seed and iteration counter.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Arch, Params, RecurrentModel};
use crate::artifact;
use crate::error::{Error, Result};
use crate::optimize::OptimizerState;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"WMCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: Arch,
    hidden: usize,
    out_dim: usize,
    task_bits: usize,
    shapes: Vec<Vec<usize>>,
    has_optimizer: bool,
    optimizer_step: u64,
    seed: u64,
    iteration: u64,
    meta: serde_json::Value,
}

/// Model plus the training state needed to resume bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: RecurrentModel<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub seed: u64,
    pub iteration: u64,
    /// Free-form run metadata (diet, training config, metrics).
    pub meta: serde_json::Value,
}

fn shapes<T: Scalar>(p: &Params<T>) -> Vec<Vec<usize>> {
    vec![
        p.reduce_w.shape().to_vec(),
        p.reduce_b.shape().to_vec(),
        p.embed_w.shape().to_vec(),
        p.embed_b.shape().to_vec(),
        p.ln_gain.shape().to_vec(),
        p.ln_shift.shape().to_vec(),
        p.w_ih.shape().to_vec(),
        p.w_hh.shape().to_vec(),
        p.b_core.shape().to_vec(),
        p.head_w.shape().to_vec(),
        p.head_b.shape().to_vec(),
    ]
}

impl<T: Scalar> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let m = &self.model;
        let header = Header {
            arch: m.arch,
            hidden: m.hidden,
            out_dim: m.out_dim,
            task_bits: m.task_bits,
            shapes: shapes(&m.params),
            has_optimizer: self.optimizer.is_some(),
            optimizer_step: self.optimizer.as_ref().map_or(0, |o| o.step),
            seed: self.seed,
            iteration: self.iteration,
            meta: self.meta.clone(),
        };
        let mut payload = m.params.flatten();
        if let Some(o) = &self.optimizer {
            for buf in o.m.iter().chain(o.v.iter()) {
                payload.extend(buf.iter().map(|x| x.to_f64c()));
            }
        }
        artifact::write(path, MAGIC, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (Header, Vec<f64>) = artifact::read(path, MAGIC)?;
        let g = h.arch.gates();
        let (hs, od, tb) = (h.hidden, h.out_dim, h.task_bits);
        let expected: Vec<Vec<usize>> = vec![
            vec![hs, od],
            vec![hs],
            vec![hs, hs + tb],
            vec![hs],
            vec![hs],
            vec![hs],
            vec![g * hs, hs],
            vec![g * hs, hs],
            vec![g * hs],
            vec![super::N_ACTIONS, hs],
            vec![super::N_ACTIONS],
        ];
        if h.shapes != expected {
            return Err(Error::integrity(path, "declared shapes do not match the architecture"));
        }
        let sizes: Vec<usize> = expected.iter().map(|s| s.iter().product()).collect();
        let n: usize = sizes.iter().sum();
        let total = if h.has_optimizer { 3 * n } else { n };
        if payload.len() != total {
            return Err(Error::integrity(path, format!("payload has {} values, expected {total}", payload.len())));
        }
        let conv = |xs: &[f64]| xs.iter().map(|&x| T::from_f64c(x)).collect::<Vec<T>>();
        let mut off = 0;
        let mut take = |k: usize| {
            let v = conv(&payload[off..off + sizes[k % sizes.len()]]);
            off += sizes[k % sizes.len()];
            v
        };
        let m2 = |v: Vec<T>, s: &[usize]| Array2::from_shape_vec((s[0], s[1]), v).expect("shape checked");
        let params = Params {
            reduce_w: m2(take(0), &expected[0]),
            reduce_b: Array1::from(take(1)),
            embed_w: m2(take(2), &expected[2]),
            embed_b: Array1::from(take(3)),
            ln_gain: Array1::from(take(4)),
            ln_shift: Array1::from(take(5)),
            w_ih: m2(take(6), &expected[6]),
            w_hh: m2(take(7), &expected[7]),
            b_core: Array1::from(take(8)),
            head_w: m2(take(9), &expected[9]),
            head_b: Array1::from(take(10)),
        };
        let optimizer = if h.has_optimizer {
            let m: Vec<Vec<T>> = (0..11).map(&mut take).collect();
            let v: Vec<Vec<T>> = (0..11).map(&mut take).collect();
            Some(OptimizerState { m, v, step: h.optimizer_step })
        } else {
            None
        };
        Ok(Self {
            model: RecurrentModel {
                arch: h.arch,
                hidden: hs,
                out_dim: od,
                task_bits: tb,
                params,
            },
            optimizer,
            seed: h.seed,
            iteration: h.iteration,
            meta: h.meta,
        })
    }
}
