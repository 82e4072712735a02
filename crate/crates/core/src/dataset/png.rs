//! 8-bit RGB PNG export and import for HxWx3 images in [0, 1].

use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

/// `round(v · 255)` per channel; values outside [0, 1] are rejected.
pub fn quantize(image: &Tensor) -> Result<Vec<u8>> {
    image
        .data()
        .iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok((v * 255.0).round() as u8)
            } else {
                Err(Error::Contract(format!("pixel value {v} outside [0, 1]")))
            }
        })
        .collect()
}

pub fn encode_png(image: &Tensor) -> Result<Vec<u8>> {
    let &[h, w, 3] = image.dims() else {
        return Err(Error::Shape(format!("png export expects HxWx3, got {}", image.shape())));
    };
    let bytes = quantize(image)?;
    let mut out = Vec::new();
    {
        let mut enc = ::png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(::png::ColorType::Rgb);
        enc.set_depth(::png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&bytes).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn export_png(image: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(image)?)?;
    Ok(())
}

/// Decodes an 8-bit RGB or RGBA PNG (alpha is dropped) to `(H, W, 3)`.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let decoder = ::png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != ::png::BitDepth::Eight {
        return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let stride = match info.color_type {
        ::png::ColorType::Rgb => 3,
        ::png::ColorType::Rgba => 4,
        other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * stride].chunks_exact(stride) {
            data.extend(px[..3].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Tensor::from_vec(&Shape::new(&[h, w, 3])?, data)
}

pub fn import_png(path: &Path) -> Result<Tensor> {
    decode_png(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_grid() {
        let shape = Shape::new(&[4, 5, 3]).unwrap();
        let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = Tensor::from_vec(&shape, data).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn quantization_rounds() {
        let img = Tensor::from_vec(&Shape::new(&[1, 1, 3]).unwrap(), vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(quantize(&img).unwrap(), vec![0, 128, 255]);
        let bad = Tensor::from_vec(&Shape::new(&[1, 1, 3]).unwrap(), vec![0.0, -0.1, 1.0]).unwrap();
        assert!(quantize(&bad).is_err());
    }

    #[test]
    fn rejects_non_rgb_shape() {
        assert!(encode_png(&Tensor::zeros(&Shape::new(&[4, 4, 1]).unwrap())).is_err());
    }
}
