//! On-disk artifact formats: raw f32 arrays with JSON sidecars, 16-bit PGM
//! exports, network checkpoints, and CSV tables.
//!
//! Every writer goes through a temp-file-plus-rename so partially written
//! artifacts are never observed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{build_network, NetSpec, Network};
use crate::tomo::{Geometry, Sinogram};

/// Sidecar header describing a flat little-endian f32 array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub views: usize,
    pub detectors: usize,
}

/// Path of the JSON sidecar next to a binary artifact.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    let mut os = bin.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_f32s(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expect * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expect * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_array(path: &Path, header: &ArrayHeader, values: &[f64]) -> Result<()> {
    write_atomic(path, &f32_bytes(values))?;
    write_atomic(
        &sidecar_path(path),
        serde_json::to_string_pretty(header)?.as_bytes(),
    )
}

fn read_header(path: &Path) -> Result<ArrayHeader> {
    let text = fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let n = img.size();
    write_array(
        path,
        &ArrayHeader {
            kind: "image".into(),
            width: n,
            height: n,
            views: 0,
            detectors: 0,
        },
        img.data(),
    )
}

pub fn load_image(path: &Path) -> Result<Image> {
    let h = read_header(path)?;
    if h.kind != "image" || h.width != h.height {
        return Err(Error::InvalidConfig(format!(
            "{}: expected a square image artifact",
            path.display()
        )));
    }
    Image::from_data(h.width, read_f32s(path, h.width * h.height)?)
}

pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    write_array(
        path,
        &ArrayHeader {
            kind: "sinogram".into(),
            width: sino.detectors,
            height: sino.views,
            views: sino.views,
            detectors: sino.detectors,
        },
        &sino.data,
    )
}

/// Load a sinogram whose geometry was derived from an image of `image_size`.
pub fn load_sinogram(path: &Path, image_size: usize) -> Result<Sinogram> {
    let h = read_header(path)?;
    if h.kind != "sinogram" {
        return Err(Error::InvalidConfig(format!(
            "{}: expected a sinogram artifact",
            path.display()
        )));
    }
    let geometry = Geometry::standard(image_size, h.views);
    if geometry.detectors != h.detectors {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} detectors, geometry expects {}",
            path.display(),
            h.detectors,
            geometry.detectors
        )));
    }
    let mut sino = Sinogram::zeros(&geometry);
    sino.data = read_f32s(path, h.views * h.detectors)?;
    sino.validate()?;
    Ok(sino)
}

/// 16-bit binary PGM with values linearly mapped from [lo, hi].
pub fn save_pgm16(path: &Path, img: &Image, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::InvalidConfig("pgm window must have hi > lo".into()));
    }
    let n = img.size();
    let mut bytes = format!("P5\n{n} {n}\n65535\n").into_bytes();
    for &v in img.data() {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        let q = (t * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    spec: NetSpec,
    values: usize,
}

/// Save a network: f64 little-endian state blob plus a JSON spec sidecar.
pub fn save_checkpoint(path: &Path, net: &mut Network) -> Result<()> {
    let state = net.state();
    let mut bytes = Vec::with_capacity(state.len() * 8);
    for v in &state {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let header = CheckpointHeader {
        version: 1,
        spec: net.spec,
        values: state.len(),
    };
    write_atomic(
        &sidecar_path(path),
        serde_json::to_string_pretty(&header)?.as_bytes(),
    )
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(sidecar_path(path))?;
    let header: CheckpointHeader = serde_json::from_str(&text)?;
    if header.version != 1 {
        return Err(Error::InvalidConfig(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != header.values * 8 {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes, header says {} values",
            path.display(),
            bytes.len(),
            header.values
        )));
    }
    let state: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut net = build_network(&header.spec, 0)?;
    net.set_state(&state)?;
    Ok(net)
}

/// Render rows as UTF-8 CSV with a header row and write atomically.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Format a float for CSV output; infinities become the "inf" literal.
pub fn csv_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.9}")
    }
}
