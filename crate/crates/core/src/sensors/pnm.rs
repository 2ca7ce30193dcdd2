//! Binary PGM (P5) and PPM (P6) encoding for leaf images.

use super::{LeafImage, SensorError};

pub fn encode_pnm(image: &LeafImage) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<LeafImage, SensorError> {
    let mut pos = 0usize;
    let mut token = || -> Result<String, SensorError> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(SensorError::Pnm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let channels = match token()?.as_str() {
        "P5" => 1u8,
        "P6" => 3u8,
        other => return Err(SensorError::Pnm(format!("unsupported magic {other:?}"))),
    };
    let mut number = |what: &str| -> Result<usize, SensorError> {
        let t = token()?;
        t.parse().map_err(|_| SensorError::Pnm(format!("bad {what} {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(SensorError::Pnm(format!("only 8-bit maxval supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = bytes
        .get(pos + 1..)
        .ok_or_else(|| SensorError::Pnm("missing raster".into()))?;
    let expected = width * height * channels as usize;
    if data.len() < expected {
        return Err(SensorError::PixelCount {
            expected,
            actual: data.len(),
        });
    }
    LeafImage::from_raw(width as u32, height as u32, channels, data[..expected].to_vec())
}
