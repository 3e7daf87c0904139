//! On-disk formats: raw float images, 16-bit PNG previews, trace CSVs.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

pub const RZF_MAGIC: &[u8; 4] = b"RZF1";
pub const TRACE_HEADER: &str = "iter,objective,psnr,wall_ms";

/// JSON sibling written next to every image file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// `dir/stem.json` for an image file `dir/stem.ext`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Serializes `img` as `RZF1`, width, height (u32 LE), then row-major f32 LE.
pub fn encode_rzf(img: &ImageGrid) -> Result<Vec<u8>> {
    let w = u32::try_from(img.width()).map_err(|_| Error::Format("width exceeds u32".into()))?;
    let h = u32::try_from(img.height()).map_err(|_| Error::Format("height exceeds u32".into()))?;
    let mut out = Vec::with_capacity(12 + 4 * img.len());
    out.extend_from_slice(RZF_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for &v in img.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_rzf(bytes: &[u8], pixel_size: f64) -> Result<ImageGrid> {
    if bytes.len() < 12 || &bytes[..4] != RZF_MAGIC {
        return Err(Error::Format("missing RZF1 magic".into()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * w * h {
        return Err(Error::Format(format!(
            "payload of {} bytes does not hold {h}x{w} floats",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageGrid::new(w, h, pixel_size, values)
}

/// Writes `path` (RZF1) and its JSON sidecar.
pub fn write_rzf(path: &Path, img: &ImageGrid, provenance: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_rzf(img)?)?;
    write_sidecar(path, img, provenance)
}

/// Reads an RZF1 file, taking the pixel size from its sidecar when present.
pub fn read_rzf(path: &Path) -> Result<ImageGrid> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let pixel_size = match fs::read(sidecar_path(path)) {
        Ok(raw) => serde_json::from_slice::<Sidecar>(&raw)?.pixel_size,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => 1.0,
        Err(e) => return Err(e.into()),
    };
    decode_rzf(&bytes, pixel_size)
}

fn write_sidecar(path: &Path, img: &ImageGrid, provenance: &serde_json::Value) -> Result<()> {
    let side = Sidecar {
        width: img.width(),
        height: img.height(),
        pixel_size: img.pixel_size(),
        provenance: provenance.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

/// 16-bit grayscale PNG with `[0, window_max]` mapped to the full range.
pub fn encode_png(img: &ImageGrid, window_max: f64) -> Result<Vec<u8>> {
    if !(window_max.is_finite() && window_max > 0.0) {
        return Err(Error::invalid("window_max", "must be positive"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        let mut data = Vec::with_capacity(2 * img.len());
        for &v in img.values() {
            let level = (v / window_max).clamp(0.0, 1.0) * 65535.0;
            data.extend_from_slice(&(level.round() as u16).to_be_bytes());
        }
        writer.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &ImageGrid, window_max: f64, provenance: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_png(img, window_max)?)?;
    write_sidecar(path, img, provenance)
}

/// Per-iteration traces as CSV text. Missing PSNR or timing leaves the cell empty.
pub fn format_trace_csv(objective: &[f64], psnr: &[f64], wall_ms: Option<&[f64]>) -> String {
    use std::fmt::Write as _;
    let mut out = format!("{TRACE_HEADER}\n");
    for (i, obj) in objective.iter().enumerate() {
        let p = psnr.get(i).map(|v| format!("{v:.6}")).unwrap_or_default();
        let t = wall_ms
            .and_then(|w| w.get(i))
            .map(|v| format!("{v:.3}"))
            .unwrap_or_default();
        writeln!(out, "{},{obj:.9e},{p},{t}", i + 1).expect("writing to a String");
    }
    out
}

pub fn write_trace_csv(path: &Path, objective: &[f64], psnr: &[f64], wall_ms: Option<&[f64]>) -> Result<()> {
    fs::write(path, format_trace_csv(objective, psnr, wall_ms))?;
    Ok(())
}
