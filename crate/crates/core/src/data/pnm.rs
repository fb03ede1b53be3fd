//! Binary 8-bit netpbm: P6 images and P5 masks / gray maps.

use std::path::Path;

use crate::data::mask::Mask;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(
            0,
            format!("expected magic {}, found {found:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, format!("expected header field {}", ["width", "height", "maxval"][i])));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos as u64, "missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(2, format!("maxval {maxval} is not an 8-bit sample depth")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos,
    })
}

fn pixel_data<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_offset;
    if have < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("short pixel data: need {need} bytes, found {have}"),
        ));
    }
    Ok(&bytes[h.data_offset..h.data_offset + need])
}

/// Decodes a P6 image into a `(1, 3, H, W)` tensor scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes, b"P6")?;
    let px = pixel_data(bytes, &h, 3)?;
    let plane = h.width * h.height;
    let mut data = vec![0f32; 3 * plane];
    let maxval = h.maxval as f32;
    for (i, rgb) in px.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = rgb[c] as f32 / maxval;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h.height, h.width)?, data)
}

pub fn load_image_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_ppm(&std::fs::read(path)?)
}

/// Encodes the first batch entry of an RGB tensor in `[0, 1]` as P6.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.channels != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {s}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.width, s.height).into_bytes();
    for i in 0..s.plane() {
        for c in 0..3 {
            out.push((image.plane(0, c)[i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn save_image_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

/// Gray level used for class `index` when writing a mask with `classes` classes.
pub fn mask_gray_level(index: u8, classes: usize) -> u8 {
    let step = 255 / (classes.max(2) - 1);
    (index as usize * step) as u8
}

pub fn encode_mask_pgm(mask: &Mask, classes: usize) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&v| mask_gray_level(v, classes)));
    out
}

/// Writes class indices as evenly spaced gray levels (`index · (255 div (C−1))`).
pub fn save_mask_pgm(mask: &Mask, classes: usize, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_mask_pgm(mask, classes))?;
    Ok(())
}

pub fn decode_mask_pgm(bytes: &[u8], classes: usize) -> Result<Mask> {
    let h = parse_header(bytes, b"P5")?;
    let px = pixel_data(bytes, &h, 1)?;
    let step = (255 / (classes.max(2) - 1)) as u8;
    let data = px
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            if g % step != 0 || (g / step) as usize >= classes {
                Err(Error::format((h.data_offset + i) as u64, format!("gray level {g} is not a class level")))
            } else {
                Ok(g / step)
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(Mask {
        height: h.height,
        width: h.width,
        data,
    })
}

pub fn load_mask_pgm(path: impl AsRef<Path>, classes: usize) -> Result<Mask> {
    decode_mask_pgm(&std::fs::read(path)?, classes)
}

/// Writes values in `[0, 1]` as an 8-bit P5 gray map.
pub fn save_gray_pgm(values: &[f32], height: usize, width: usize, path: impl AsRef<Path>) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Shape(format!("{} values for a {width}×{height} map", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_known_bytes() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 255, 10, 20, 30, 1, 2, 3, 255, 254, 0]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2).unwrap());
        assert_eq!(t.get(0, 0, 0, 0), 0.0);
        assert_eq!(t.get(0, 1, 0, 0), 51.0 / 255.0);
        assert_eq!(t.get(0, 2, 0, 0), 1.0);
        assert_eq!(t.get(0, 0, 0, 1), 10.0 / 255.0);
        assert_eq!(t.get(0, 1, 1, 1), 254.0 / 255.0);
    }

    #[test]
    fn wrong_magic_and_short_data() {
        let mut p5 = b"P5\n2 2\n255\n".to_vec();
        p5.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_ppm(&p5), Err(Error::Format { offset: 0, .. })));
        let mut short = b"P6\n2 2\n255\n".to_vec();
        short.extend_from_slice(&[0; 11]);
        assert!(matches!(decode_ppm(&short), Err(Error::Format { .. })));
        assert!(decode_ppm(b"P6\n2 x\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n65535\n").is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let mut bytes = b"P6\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7, 6, 5, 4, 3, 2, 1]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn mask_round_trip() {
        let mask = Mask {
            height: 2,
            width: 3,
            data: vec![0, 1, 2, 2, 1, 0],
        };
        let bytes = encode_mask_pgm(&mask, 3);
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 127, 254, 254, 127, 0]);
        assert_eq!(decode_mask_pgm(&bytes, 3).unwrap(), mask);
        assert!(decode_mask_pgm(&bytes, 2).is_err());
    }
}
