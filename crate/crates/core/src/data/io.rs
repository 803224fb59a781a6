//! Sequence persistence.
//!
//! A sequence stem `<stem>` maps to three files:
//! - `<stem>.hcube`: the spectral frames,
//! - `<stem>.fc.hcube`: the false-color frames (3 bands),
//! - `<stem>.gt.json`: per-frame ground truth as `[x, y, w, h]` arrays.
//!
//! HCUBE layout: 4-byte magic `HSQ1`; five little-endian u32 fields
//! (frames, height, width, bands, modality-name length); the UTF-8
//! modality name; then frames x bands x height x width little-endian
//! 32-bit floats, frame-major, band-major, row-major. Round-trips are
//! bit-exact.

use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::Bbox;

use super::types::{HsiCube, Modality, SequenceRecord};

const MAGIC: &[u8; 4] = b"HSQ1";

fn hcube_path(stem: &Path) -> PathBuf {
    stem.with_extension("hcube")
}

fn fc_path(stem: &Path) -> PathBuf {
    stem.with_extension("fc.hcube")
}

fn gt_path(stem: &Path) -> PathBuf {
    stem.with_extension("gt.json")
}

fn write_hcube(frames: &[HsiCube], modality_name: &str, path: &Path) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Empty(format!("cube file {}", path.display())));
    }
    let (b, h, w) = (frames[0].bands(), frames[0].height(), frames[0].width());
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    for v in [frames.len() as u32, h as u32, w as u32, b as u32, modality_name.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(modality_name.as_bytes())?;
    for frame in frames {
        for &v in frame.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_hcube(path: &Path) -> Result<(Vec<HsiCube>, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let name = path.display();
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("{name}: bad magic, not an HCUBE file")));
    }
    if bytes.len() < 24 {
        return Err(Error::Format(format!("{name}: truncated header")));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (frames, h, w, b, name_len) = (field(0), field(1), field(2), field(3), field(4));
    if frames == 0 || h == 0 || w == 0 || b == 0 {
        return Err(Error::Format(format!("{name}: zero-sized dimension in header")));
    }
    let payload_start = 24 + name_len;
    if bytes.len() < payload_start {
        return Err(Error::Format(format!("{name}: modality name truncated")));
    }
    let modality_name = std::str::from_utf8(&bytes[24..payload_start])
        .map_err(|_| Error::Format(format!("{name}: modality name is not UTF-8")))?
        .to_string();
    let expected = frames
        .checked_mul(b)
        .and_then(|n| n.checked_mul(h))
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::Format(format!("{name}: header dimensions overflow")))?;
    let got = (bytes.len() - payload_start) / 4;
    if bytes.len() - payload_start != expected * 4 {
        return Err(Error::Format(format!(
            "{name}: payload holds {got} samples, header promises {expected}"
        )));
    }
    let per_frame = b * h * w;
    let mut cubes = Vec::with_capacity(frames);
    for fi in 0..frames {
        let start = payload_start + fi * per_frame * 4;
        let data: Vec<f32> = bytes[start..start + per_frame * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cubes.push(HsiCube::from_data(b, h, w, data)?);
    }
    Ok((cubes, modality_name))
}

/// Write the three files for `record` under `stem` (no extension).
pub fn save_sequence(record: &SequenceRecord, stem: &Path) -> Result<()> {
    record.validate()?;
    write_hcube(&record.frames, &record.modality.name, &hcube_path(stem))?;
    write_hcube(&record.false_color, &record.modality.name, &fc_path(stem))?;
    let gt: Vec<[f64; 4]> = record.gt_boxes.iter().map(|&b| b.into()).collect();
    let json = serde_json::to_vec_pretty(&gt)?;
    std::fs::write(gt_path(stem), json)?;
    Ok(())
}

/// Read a sequence saved by [`save_sequence`]. The record's name is the
/// stem's file name; the seed is not persisted.
pub fn load_sequence(stem: &Path) -> Result<SequenceRecord> {
    let (frames, modality_name) = read_hcube(&hcube_path(stem))?;
    let (false_color, _) = read_hcube(&fc_path(stem))?;
    let gt_bytes = std::fs::read(gt_path(stem))?;
    let gt: Vec<[f64; 4]> = serde_json::from_slice(&gt_bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", gt_path(stem).display())))?;
    let record = SequenceRecord {
        name: stem
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".to_string()),
        modality: Modality::new(modality_name, frames[0].bands())?,
        frames,
        false_color,
        gt_boxes: gt.into_iter().map(Bbox::from).collect(),
        seed: None,
    };
    record.validate()?;
    Ok(record)
}

/// Sequence stems in `dir`, sorted by name: every `<stem>.hcube` that is
/// not a false-color companion.
pub fn list_sequence_stems(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(stem) = name.strip_suffix(".hcube") {
            if !stem.ends_with(".fc") {
                stems.push(dir.join(stem));
            }
        }
    }
    stems.sort();
    Ok(stems)
}
