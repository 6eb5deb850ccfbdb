//! Versioned binary container shared by checkpoints, frontends, banks and
//! decoder archives.
//!
//! Layout: 8-byte magic, `u32` version, `u8` dtype (4 = f32, 8 = f64),
//! `u64` header length, JSON header, `u64` element count, little-endian
//! payload, then a SHA-256 digest of everything before it.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Element type of an artifact payload.
pub trait Payload: Copy + Sized {
    const TAG: u8;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl Payload for f32 {
    const TAG: u8 = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Payload for f64 {
    const TAG: u8 = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

pub fn encode<H: Serialize, P: Payload>(magic: &[u8; 8], header: &H, payload: &[P]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(64 + header.len() + payload.len() * P::TAG as usize);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(P::TAG);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for &p in payload {
        p.put(&mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn write<H: Serialize, P: Payload>(path: &Path, magic: &[u8; 8], header: &H, payload: &[P]) -> Result<()> {
    let bytes = encode(magic, header, payload)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    // Write-then-rename so readers never observe a partial artifact.
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn decode<H: DeserializeOwned, P: Payload>(path: &Path, magic: &[u8; 8], bytes: &[u8]) -> Result<(H, Vec<P>)> {
    let bad = |r: &str| Error::integrity(path, r.to_string());
    if bytes.len() < 8 + 4 + 1 + 8 + 8 + DIGEST_LEN {
        return Err(bad("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("content hash mismatch"));
    }
    if &body[..8] != magic {
        return Err(bad("wrong magic bytes"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    if body[12] != P::TAG {
        return Err(bad("payload element type mismatch"));
    }
    let hlen = u64::from_le_bytes(body[13..21].try_into().unwrap()) as usize;
    let hend = 21usize.checked_add(hlen).ok_or_else(|| bad("header length overflow"))?;
    if body.len() < hend + 8 {
        return Err(bad("truncated header"));
    }
    let header: H = serde_json::from_slice(&body[21..hend]).map_err(|e| bad(&format!("header: {e}")))?;
    let count = u64::from_le_bytes(body[hend..hend + 8].try_into().unwrap()) as usize;
    let width = P::TAG as usize;
    let data = &body[hend + 8..];
    if data.len() != count * width {
        return Err(bad("payload length mismatch"));
    }
    let payload = data.chunks_exact(width).map(P::get).collect();
    Ok((header, payload))
}

pub fn read<H: DeserializeOwned, P: Payload>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<P>)> {
    let bytes = fs::read(path)?;
    decode(path, magic, &bytes)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a float slice's little-endian bytes.
pub fn hash_floats<P: Payload>(xs: &[P]) -> String {
    let mut buf = Vec::with_capacity(xs.len() * P::TAG as usize);
    for &x in xs {
        x.put(&mut buf);
    }
    content_hash(&buf)
}
