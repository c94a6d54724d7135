//! Binary PPM (P6) / PGM (P5) image files and atomic file output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("malformed PNM header at byte {offset}: {msg}")]
    Header { offset: usize, msg: String },
    #[error("unsupported maxval {maxval} at byte {offset} (only 255 is supported)")]
    UnsupportedMaxval { offset: usize, maxval: u32 },
    #[error("truncated PNM payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot encode a {0}-channel image as PNM")]
    Channels(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<(u32, usize), PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::Header {
                offset: start,
                msg: format!("expected {what}"),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        let value = text.parse::<u32>().map_err(|_| PnmError::Header {
            offset: start,
            msg: format!("{what} out of range"),
        })?;
        Ok((value, start))
    }
}

/// Decodes a P5 or P6 file with maxval 255 into a [0, 1] image.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image, PnmError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(PnmError::Header {
                offset: 0,
                msg: "missing P5/P6 magic".into(),
            })
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, at) = cur.number("maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval { offset: at, maxval });
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(PnmError::Header {
                offset: cur.pos,
                msg: "expected a single whitespace byte before the raster".into(),
            })
        }
    }
    if width == 0 || height == 0 {
        return Err(PnmError::Header {
            offset: 2,
            msg: "zero image extent".into(),
        });
    }
    let expected = width as usize * height as usize * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            offset: cur.pos + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image::new(width as usize, height as usize, channels, data).expect("consistent extents"))
}

/// Quantizes an intensity in [0, 1] to 8 bits.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a grayscale image as P5 or an RGB image as P6.
pub fn encode_pnm(image: &Image) -> Result<Vec<u8>, PnmError> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(PnmError::Channels(c)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| to_u8(v)));
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Image, PnmError> {
    let bytes = fs::read(path).map_err(|source| PnmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pnm(&bytes)
}

pub fn save_image(image: &Image, path: &Path) -> Result<(), PnmError> {
    let bytes = encode_pnm(image)?;
    write_atomic(path, &bytes).map_err(|source| PnmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes` to a temporary sibling file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    write_atomic_with(path, |w| w.write_all(bytes))
}

/// Like [`write_atomic`], streaming the contents through `fill`.
pub fn write_atomic_with(path: &Path, fill: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> std::io::Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        let f = w.into_inner().map_err(|e| e.into_error())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub(crate) fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p6_round_trip_is_byte_identical() {
        let bytes = b"P6\n2 2\n255\n\x00\x10\x20\x30\x40\x50\x60\x70\x80\x90\xa0\xff".to_vec();
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 3));
        assert_eq!(encode_pnm(&img).unwrap(), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5 # comment\n# another\n1 1\n255\n\x80";
        let img = decode_pnm(bytes).unwrap();
        assert!((img.get(0, 0, 0) - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn sixteen_bit_maxval_rejected() {
        let bytes = b"P5\n1 1\n65535\n\x00\x00";
        match decode_pnm(bytes) {
            Err(PnmError::UnsupportedMaxval { maxval, offset }) => {
                assert_eq!(maxval, 65535);
                assert_eq!(offset, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = b"P6\n2 1\n255\n\x01\x02\x03";
        match decode_pnm(bytes) {
            Err(PnmError::Truncated { offset, expected, found }) => {
                assert_eq!((offset, expected, found), (14, 6, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0 0 0"), Err(PnmError::Header { offset: 0, .. })));
    }

    #[test]
    fn load_save_load_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = Image::gray_from_fn(5, 3, |r, c| ((r * 5 + c) as f32 * 17.0 / 255.0).fract());
        save_image(&img, &path).unwrap();
        let a = load_image(&path).unwrap();
        save_image(&a, &path).unwrap();
        let b = load_image(&path).unwrap();
        assert_eq!(a, b);
    }
}
