//! Binary PGM (`P5`) and PPM (`P6`) rasters with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::Image;

fn describe_magic(bytes: &[u8]) -> String {
    bytes
        .iter()
        .take(4)
        .map(|b| {
            if b.is_ascii_graphic() {
                (*b as char).to_string()
            } else {
                format!("\\x{b:02x}")
            }
        })
        .collect()
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
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("missing or invalid {what} in header")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::Format(format!(
                "unsupported image magic '{}' (expected P5 or P6)",
                describe_magic(bytes)
            )))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit rasters are supported, maxval {maxval}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty raster {width}x{height}")));
    }
    if !cur
        .bytes
        .get(cur.pos)
        .is_some_and(|b| b.is_ascii_whitespace())
    {
        return Err(Error::Format(
            "header must end with one whitespace byte".into(),
        ));
    }
    let start = cur.pos + 1;
    let need = width * height * channels;
    let payload = bytes.get(start..start + need).ok_or_else(|| {
        Error::Format(format!(
            "truncated payload: {} of {need} bytes",
            bytes.len().saturating_sub(start)
        ))
    })?;
    Image::new(
        height,
        width,
        channels,
        payload.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Encodes with values clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gray() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 255, 0, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(img.channels(), 1);
    }

    #[test]
    fn header_comments() {
        let mut bytes = b"P5 # made by hand\n# another\n1 1 255\n".to_vec();
        bytes.push(51);
        assert_eq!(decode_pnm(&bytes).unwrap().data(), &[0.2]);
    }

    #[test]
    fn colour_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 3)
            .map(|i| (i * 14 % 256) as f64 / 255.0)
            .collect();
        let img = Image::new(2, 3, 3, data).unwrap();
        assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
    }

    #[test]
    fn rejects_other_formats() {
        let png = b"\x89PNG\r\n\x1a\n....";
        let e = decode_pnm(png).unwrap_err();
        assert!(matches!(&e, Error::Format(m) if m.contains("PNG")), "{e}");
        let e = decode_pnm(b"P5\n4 4\n255\n\x00\x01").unwrap_err();
        assert!(matches!(&e, Error::Format(m) if m.contains("truncated")));
        assert!(decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
