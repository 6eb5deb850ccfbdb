//! Flat image blobs (`H, W, count` little-endian u32 header, f32 payload)
//! and the sidecar attribute table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Background, Image, StimulusSpec};
use crate::error::{Error, Result};

pub fn write_image_blob(path: &Path, images: &[Image]) -> Result<()> {
    let (h, w) = images.first().map(|i| i.dim()).unwrap_or((0, 0));
    let mut out = BufWriter::new(File::create(path)?);
    for v in [h as u32, w as u32, images.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for img in images {
        if img.dim() != (h, w) {
            return Err(Error::Domain("images in one blob must share a shape".into()));
        }
        for &x in img.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_image_blob(path: &Path) -> Result<Vec<Image>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    if buf.len() < 12 {
        return Err(Error::integrity(path, "missing header"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (h, w, n) = (word(0), word(1), word(2));
    if buf.len() != 12 + 4 * h * w * n {
        return Err(Error::integrity(path, format!("expected {} payload floats", h * w * n)));
    }
    let floats: Vec<f32> = buf[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(floats
        .chunks_exact((h * w).max(1))
        .take(n)
        .map(|c| Image::from_shape_vec((h, w), c.to_vec()).expect("chunk has h*w floats"))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct AttributeRow {
    index: usize,
    category: usize,
    identity: usize,
    location: usize,
    angle: u16,
    background_seed: Option<u64>,
}

pub fn write_attribute_table(path: &Path, specs: &[StimulusSpec]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (index, s) in specs.iter().enumerate() {
        w.serialize(AttributeRow {
            index,
            category: s.category,
            identity: s.identity,
            location: s.location,
            angle: s.view_angle,
            background_seed: s.background.seed(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attribute_table(path: &Path) -> Result<Vec<StimulusSpec>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (k, row) in r.deserialize::<AttributeRow>().enumerate() {
        let row = row?;
        if row.index != k {
            return Err(Error::integrity(path, format!("row {k} has index {}", row.index)));
        }
        out.push(StimulusSpec {
            category: row.category,
            identity: row.identity,
            location: row.location,
            view_angle: row.angle,
            background: row.background_seed.map_or(Background::Blank, Background::Texture),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{render_stimulus, sample_split, CanvasConfig, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blob_and_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = CanvasConfig::default().with_texture(4, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs: Vec<_> = (0..5).map(|_| sample_split(&mut rng, &c, Split::Train)).collect();
        let imgs: Vec<_> = specs.iter().map(|s| render_stimulus(s, &c).unwrap()).collect();
        write_image_blob(&dir.path().join("a.bin"), &imgs).unwrap();
        write_attribute_table(&dir.path().join("a.csv"), &specs).unwrap();
        assert_eq!(read_image_blob(&dir.path().join("a.bin")).unwrap(), imgs);
        assert_eq!(read_attribute_table(&dir.path().join("a.csv")).unwrap(), specs);

        let bytes = std::fs::read(dir.path().join("a.bin")).unwrap();
        std::fs::write(dir.path().join("t.bin"), &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_image_blob(&dir.path().join("t.bin")),
            Err(Error::Integrity { .. })
        ));
    }
}
