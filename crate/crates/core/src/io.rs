//! File formats: binary PNM (P5/P6, maxval 255) for images and masks,
//! raw little-endian `f32` for probability maps, and a JSON sidecar holding
//! dimensions and [`GeoMeta`].
//!
//! Writers stage output in `<path>.partial` and rename on success, so a
//! failed write never leaves a truncated file under the final name.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GeoMeta, ProbMap, Raster};

/// JSON sidecar accompanying every image, mask and probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub height: usize,
    pub width: usize,
    pub resolution_m_per_px: f64,
    pub origin_row: usize,
    pub origin_col: usize,
    /// Per-axis resolutions are only accepted when they agree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_row_m_per_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_col_m_per_px: Option<f64>,
}

impl Sidecar {
    pub fn new(height: usize, width: usize, meta: GeoMeta) -> Self {
        Sidecar {
            height,
            width,
            resolution_m_per_px: meta.resolution_m_per_px,
            origin_row: meta.origin_row,
            origin_col: meta.origin_col,
            resolution_row_m_per_px: None,
            resolution_col_m_per_px: None,
        }
    }

    pub fn meta(&self) -> Result<GeoMeta> {
        for axis in [self.resolution_row_m_per_px, self.resolution_col_m_per_px]
            .into_iter()
            .flatten()
        {
            if axis != self.resolution_m_per_px {
                return Err(Error::invalid(
                    "sidecar",
                    format!(
                        "anisotropic resolution ({axis} vs {}) is not supported",
                        self.resolution_m_per_px
                    ),
                ));
            }
        }
        let meta = GeoMeta {
            resolution_m_per_px: self.resolution_m_per_px,
            origin_row: self.origin_row,
            origin_col: self.origin_col,
        };
        meta.validate()?;
        Ok(meta)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let side = sidecar_path(path);
    match fs::read(&side) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::invalid("sidecar", format!("{}: {e}", side.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(side, e)),
    }
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let json = serde_json::to_vec(sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), &json)
}

/// Writes `bytes` to `<path>.partial`, then renames it to `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                msg: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

/// Decodes a binary P5/P6 byte stream into `(height, width, channels, payload)`.
pub fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                msg: "unsupported magic number (expected P5 or P6)".into(),
            })
        }
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(Error::Parse {
            offset: 2,
            msg: "expected whitespace after magic number".into(),
        });
    }
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    rd.skip_whitespace_and_comments();
    let maxval_at = rd.pos;
    let maxval = rd.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("maxval {maxval} is not supported (expected 255)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("empty image {width}x{height}"),
        });
    }
    match bytes.get(rd.pos) {
        Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: rd.pos,
                msg: "expected a single whitespace byte before the payload".into(),
            })
        }
    }
    let need = height * width * channels;
    let payload = &bytes[rd.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    if payload.len() > need {
        return Err(Error::Parse {
            offset: rd.pos + need,
            msg: format!("{} trailing bytes after payload", payload.len() - need),
        });
    }
    Ok((height, width, channels, payload.to_vec()))
}

pub fn encode_pnm(height: usize, width: usize, channels: usize, payload: &[u8]) -> Vec<u8> {
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(payload);
    out
}

fn meta_from_sidecar(path: &Path, height: usize, width: usize) -> Result<GeoMeta> {
    match read_sidecar(path)? {
        None => Ok(GeoMeta::default()),
        Some(side) => {
            if (side.height, side.width) != (height, width) {
                return Err(Error::invalid(
                    "sidecar",
                    format!(
                        "{} declares {}x{} but the image is {height}x{width}",
                        sidecar_path(path).display(),
                        side.height,
                        side.width
                    ),
                ));
            }
            side.meta()
        }
    }
}

/// Reads a P5/P6 image and its optional sidecar (defaults: 1 m/px, zero offset).
pub fn read_raster(path: &Path) -> Result<Raster> {
    let (h, w, c, payload) = decode_pnm(&read_bytes(path)?)?;
    let meta = meta_from_sidecar(path, h, w)?;
    Raster::new(h, w, c, payload, meta)
}

pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    let bytes = encode_pnm(
        raster.height(),
        raster.width(),
        raster.channels(),
        raster.data(),
    );
    write_atomic(path, &bytes)?;
    write_sidecar(
        path,
        &Sidecar::new(raster.height(), raster.width(), raster.meta()),
    )
}

/// Reads a mask stored as P5; any nonzero sample is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let raster = read_raster(path)?;
    if raster.channels() != 1 {
        return Err(Error::invalid(
            "mask",
            format!("{} is not single-channel", path.display()),
        ));
    }
    let bits = raster.data().iter().map(|&v| v != 0).collect();
    BinaryMask::new(raster.height(), raster.width(), bits, raster.meta())
}

/// Writes a mask as P5 with samples in {0, 255}.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    write_raster(&mask_to_raster(mask), path)
}

pub fn mask_to_raster(mask: &BinaryMask) -> Raster {
    let data = mask
        .bits()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    Raster::new(mask.height(), mask.width(), 1, data, mask.meta()).expect("mask dims are valid")
}

/// Reads `<name>.f32` with its mandatory sidecar.
pub fn read_prob_map(path: &Path) -> Result<ProbMap> {
    let side = read_sidecar(path)?.ok_or_else(|| {
        Error::invalid(
            "probability map",
            format!("missing sidecar {}", sidecar_path(path).display()),
        )
    })?;
    let meta = side.meta()?;
    let bytes = read_bytes(path)?;
    let need = side.height * side.width * 4;
    if bytes.len() != need {
        return Err(Error::invalid(
            "probability map",
            format!(
                "{}: payload is {} bytes, expected {need} for {}x{}",
                path.display(),
                bytes.len(),
                side.height,
                side.width
            ),
        ));
    }
    let probs = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    ProbMap::new(side.height, side.width, probs, meta)
}

pub fn write_prob_map(map: &ProbMap, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = map.probs().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)?;
    write_sidecar(path, &Sidecar::new(map.height(), map.width(), map.meta()))
}
