//! Image container and spectral-response files.
//!
//! An image is a pair of files sharing a stem:
//!
//! * `<stem>.hdr`, UTF-8 text:
//!   ```text
//!   bfctn-image 1
//!   width 64
//!   height 48
//!   bands 31
//!   value_scale 255
//!   wavelengths 400,410,420,...
//!   ```
//!   The first line is the magic and version. The other keys may come in any
//!   order; `value_scale` defaults to 1 and `wavelengths` is optional. Blank
//!   lines and lines starting with `#` are ignored.
//! * `<stem>.raw`: `width·height·bands` little-endian `f32` samples, band
//!   after band, rows of `width` samples inside a band (x fastest).
//!
//! Loading divides every sample by `value_scale`, so stored 8-bit data comes
//! back in `[0, 1]`.
//!
//! Spectral responses are CSV: one row per MSI band, one column per HSI band,
//! with an optional non-numeric header row.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::tensor::DenseTensor;

pub const MAGIC: &str = "bfctn-image";
pub const VERSION: u32 = 1;
/// Guard against absurd headers allocating huge buffers.
pub const MAX_SAMPLES: usize = 1 << 31;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("payload has {actual} bytes, expected {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("spectral response: {0}")]
    Srf(String),
    #[error("cannot store image: {0}")]
    Encode(String),
}

fn file_err(path: &Path, e: impl fmt::Display) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub value_scale: f64,
    pub wavelengths: Option<Vec<f64>>,
}

impl ImageHeader {
    pub fn new(width: usize, height: usize, bands: usize) -> Self {
        Self {
            width,
            height,
            bands,
            value_scale: 1.0,
            wavelengths: None,
        }
    }

    pub fn samples(&self) -> usize {
        self.width * self.height * self.bands
    }

    pub fn payload_bytes(&self) -> usize {
        self.samples() * 4
    }
}

impl fmt::Display for ImageHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{MAGIC} {VERSION}")?;
        writeln!(f, "width {}", self.width)?;
        writeln!(f, "height {}", self.height)?;
        writeln!(f, "bands {}", self.bands)?;
        writeln!(f, "value_scale {}", self.value_scale)?;
        if let Some(w) = &self.wavelengths {
            let s: Vec<String> = w.iter().map(|v| v.to_string()).collect();
            writeln!(f, "wavelengths {}", s.join(","))?;
        }
        Ok(())
    }
}

/// Parses the text of a `.hdr` file.
pub fn parse_header(text: &str) -> Result<ImageHeader, IoError> {
    let err = |line: usize, msg: String| IoError::Header { line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (n, first) = lines.next().ok_or_else(|| err(1, "empty header".into()))?;
    let mut it = first.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(err(n, format!("expected `{MAGIC} {VERSION}`, found `{first}`")));
    }
    match it.next().map(str::parse::<u32>) {
        Some(Ok(VERSION)) if it.next().is_none() => {}
        _ => return Err(err(n, format!("unsupported version line `{first}`"))),
    }

    let (mut width, mut height, mut bands) = (None, None, None);
    let mut value_scale = None;
    let mut wavelengths = None;
    for (n, line) in lines {
        let (key, value) = line
            .split_once(char::is_whitespace)
            .map(|(k, v)| (k, v.trim()))
            .ok_or_else(|| err(n, format!("expected `key value`, found `{line}`")))?;
        let dim = |v: &str| -> Result<usize, IoError> {
            match v.parse::<usize>() {
                Ok(d) if d > 0 => Ok(d),
                _ => Err(err(n, format!("{key} must be a positive integer, found `{v}`"))),
            }
        };
        let slot_taken = || err(n, format!("duplicate key `{key}`"));
        match key {
            "width" => width.replace(dim(value)?).map_or(Ok(()), |_| Err(slot_taken()))?,
            "height" => height.replace(dim(value)?).map_or(Ok(()), |_| Err(slot_taken()))?,
            "bands" => bands.replace(dim(value)?).map_or(Ok(()), |_| Err(slot_taken()))?,
            "value_scale" => {
                let s: f64 = value
                    .parse()
                    .map_err(|_| err(n, format!("bad value_scale `{value}`")))?;
                if !(s > 0.0 && s.is_finite()) {
                    return Err(err(n, format!("value_scale must be positive and finite, got {s}")));
                }
                value_scale.replace(s).map_or(Ok(()), |_| Err(slot_taken()))?;
            }
            "wavelengths" => {
                let w = value
                    .split(',')
                    .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| err(n, "wavelengths must be comma-separated numbers".into()))?;
                wavelengths.replace(w).map_or(Ok(()), |_| Err(slot_taken()))?;
            }
            _ => return Err(err(n, format!("unknown key `{key}`"))),
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| err(0, format!("missing `{k}`")));
    let h = ImageHeader {
        width: need(width, "width")?,
        height: need(height, "height")?,
        bands: need(bands, "bands")?,
        value_scale: value_scale.unwrap_or(1.0),
        wavelengths,
    };
    let samples = h
        .width
        .checked_mul(h.height)
        .and_then(|v| v.checked_mul(h.bands))
        .filter(|&v| v <= MAX_SAMPLES)
        .ok_or_else(|| err(0, format!("{}x{}x{} is too large", h.width, h.height, h.bands)))?;
    if let Some(w) = &h.wavelengths {
        if w.len() != h.bands {
            return Err(err(0, format!("{} wavelengths for {} bands", w.len(), h.bands)));
        }
    }
    debug_assert!(samples > 0);
    Ok(h)
}

/// Decodes a payload into a `width × height × bands` tensor scaled by
/// `1 / value_scale`.
pub fn decode_payload(header: &ImageHeader, bytes: &[u8]) -> Result<DenseTensor, IoError> {
    let expected = header.payload_bytes();
    if bytes.len() != expected {
        return Err(IoError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let inv = 1.0 / header.value_scale;
    let mut data = Vec::with_capacity(header.samples());
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(IoError::NonFinite { index });
        }
        data.push(if header.value_scale == 1.0 {
            v as f64
        } else {
            v as f64 * inv
        });
    }
    DenseTensor::new(vec![header.width, header.height, header.bands], data).map_err(|e| IoError::Encode(e.to_string()))
}

/// Encodes `img × value_scale` as little-endian `f32`.
pub fn encode_payload(img: &DenseTensor, value_scale: f64) -> Result<Vec<u8>, IoError> {
    if img.order() != 3 {
        return Err(IoError::Encode(format!(
            "expected a 3rd-order image, got {:?}",
            img.shape()
        )));
    }
    let mut out = Vec::with_capacity(img.len() * 4);
    for (index, &v) in img.data().iter().enumerate() {
        let s = (v * value_scale) as f32;
        if !s.is_finite() {
            return Err(IoError::NonFinite { index });
        }
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

/// `(header, payload)` paths for a stem or for either file of the pair.
pub fn container_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("hdr"), with("raw"))
}

pub fn load_image(path: &Path) -> Result<(DenseTensor, ImageHeader), IoError> {
    let (hdr, raw) = container_paths(path);
    let text = fs::read_to_string(&hdr).map_err(|e| file_err(&hdr, e))?;
    let header = parse_header(&text)?;
    let bytes = fs::read(&raw).map_err(|e| file_err(&raw, e))?;
    Ok((decode_payload(&header, &bytes)?, header))
}

/// Writes `img` with `value_scale = 1` and no wavelengths.
pub fn write_image(path: &Path, img: &DenseTensor) -> Result<(), IoError> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(IoError::Encode(format!("expected a 3rd-order image, got {s:?}")));
    }
    write_image_with(path, img, &ImageHeader::new(s[0], s[1], s[2]))
}

pub fn write_image_with(path: &Path, img: &DenseTensor, header: &ImageHeader) -> Result<(), IoError> {
    if img.shape() != [header.width, header.height, header.bands] {
        return Err(IoError::Encode(format!(
            "image {:?} does not match header {}x{}x{}",
            img.shape(),
            header.width,
            header.height,
            header.bands
        )));
    }
    let payload = encode_payload(img, header.value_scale)?;
    let (hdr, raw) = container_paths(path);
    if let Some(dir) = hdr.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    }
    fs::write(&hdr, header.to_string()).map_err(|e| file_err(&hdr, e))?;
    fs::write(&raw, payload).map_err(|e| file_err(&raw, e))?;
    Ok(())
}

/// Parses a spectral response table. Rows become MSI bands.
pub fn parse_srf_csv(text: &str) -> Result<Array2<f64>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Srf(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(IoError::Srf(format!("row {} has a non-numeric field", i + 1))),
        }
    }
    let cols = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| IoError::Srf("no rows".into()))?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(IoError::Srf(format!(
            "row {} has {} columns, expected {cols}",
            i + 1,
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(IoError::Srf("entries must be finite and nonnegative".into()));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(|e| IoError::Srf(e.to_string()))
}

pub fn load_srf(path: &Path) -> Result<Array2<f64>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    parse_srf_csv(&text)
}
