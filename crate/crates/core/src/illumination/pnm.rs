//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::path::Path;

use super::ImageTensor;
use crate::error::{Error, Result};
use crate::numerics::evmf;

pub fn encode(img: &ImageTensor) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.values().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn decode(bytes: &[u8]) -> Result<ImageTensor> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::format(format!("unsupported PNM magic {m:?}"))),
    };
    let width = number(bytes, &mut pos)?;
    let height = number(bytes, &mut pos)?;
    let maxval = number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::format(format!("only 8-bit PNM supported, maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::format(format!("PNM raster truncated: need {n} bytes")))?;
    let vals = raster.iter().map(|&b| b as f64 / 255.0).collect();
    ImageTensor::new(height, width, channels, vals).map_err(|e| Error::format(e.to_string()))
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("PNM header truncated")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    t.parse()
        .map_err(|_| Error::format(format!("bad PNM header field {t:?}")))
}

/// Writes PPM/PGM, or EVMF when the extension is `.evmf`.
pub fn save(path: &Path, img: &ImageTensor) -> Result<()> {
    if is_evmf(path) {
        return evmf::save(path, img.tensor());
    }
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

/// Reads PPM/PGM, or a float image from EVMF when the extension is `.evmf`.
pub fn load(path: &Path) -> Result<ImageTensor> {
    if is_evmf(path) {
        return ImageTensor::from_tensor(evmf::load(path)?).map_err(|e| Error::format(e.to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn is_evmf(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("evmf"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_on_8bit_grid() {
        let vals: Vec<f64> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as f64 / 255.0).collect();
        let img = ImageTensor::new(2, 3, 3, vals).unwrap();
        let bytes = encode(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.values(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_16bit_and_truncated() {
        assert!(decode(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(decode(b"P6\n2 2\n255\n\0").is_err());
        assert!(decode(b"P3\n1 1\n255\n0 0 0").is_err());
    }
}
