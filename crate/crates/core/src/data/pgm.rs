//! Binary 8-bit PGM (`P5`) images as `[1, H, W]` tensors with values in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn encode(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [1, h, w] = *image.shape() else {
        return Err(Error::shape("pgm", format!("expected [1,H,W], got {:?}", image.shape())));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Data(format!("not a binary PGM (magic {:?})", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Data("truncated PGM raster".into()))?;
    let maxval = maxval as f32;
    Tensor::from_vec(&[1, h, w], raster.iter().map(|&b| b as f32 / maxval).collect())
}

pub fn write(path: &Path, image: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode(image)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    decode(&std::fs::read(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_of_quantized_values() {
        let data: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = Tensor::from_vec(&[1, 3, 4], data).unwrap();
        assert_eq!(decode(&encode(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        assert_eq!(decode(&bytes).unwrap().data(), &[0.0, 1.0]);
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n4 4\n255\n\x00").is_err());
    }
}
