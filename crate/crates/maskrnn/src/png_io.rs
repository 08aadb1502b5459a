//! Indexed-palette label PNGs and RGB frame images.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use maskrnn_core::{Frame, LabelMask};

use crate::error::{Error, Result};

/// Colour of label `i`: black background, then the usual bit-interleaved
/// segmentation palette (1 red, 2 green, 3 olive, 4 blue, ...).
pub fn palette_color(i: u8) -> [u8; 3] {
    let mut c = [0u8; 3];
    let mut id = i;
    for shift in (0..8).rev() {
        for (k, ch) in c.iter_mut().enumerate() {
            *ch |= ((id >> k) & 1) << shift;
        }
        id >>= 3;
    }
    c
}

fn palette() -> Vec<u8> {
    (0..=255u8).flat_map(palette_color).collect()
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_label_png(mask: &LabelMask) -> Result<Vec<u8>> {
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette());
        let to_err = |e: png::EncodingError| image_err(Path::new("<memory>"), e.to_string());
        let mut wr = enc.write_header().map_err(to_err)?;
        wr.write_image_data(mask.data()).map_err(to_err)?;
        wr.finish().map_err(to_err)?;
    }
    Ok(out)
}

/// Decode a label PNG. Indexed images give their palette indices. 8-bit
/// grayscale images give their values, except that a 0/255 binary mask reads
/// as labels 0/1.
pub fn decode_label_png(bytes: &[u8], path: &Path) -> Result<LabelMask> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let depth = info.bit_depth as usize;
    let mut labels = Vec::with_capacity(w * h);
    match info.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale if depth <= 8 => {
            let per_byte = 8 / depth;
            let mask = ((1u16 << depth) - 1) as u8;
            for y in 0..h {
                let row = &buf[y * info.line_size..(y + 1) * info.line_size];
                for x in 0..w {
                    let byte = row[x / per_byte];
                    let shift = 8 - depth * (x % per_byte + 1);
                    labels.push((byte >> shift) & mask);
                }
            }
        }
        other => {
            return Err(image_err(
                path,
                format!("unsupported label image: {other:?} at {depth} bits (expected indexed or 8-bit gray)"),
            ))
        }
    }
    if info.color_type == png::ColorType::Grayscale
        && depth == 8
        && labels.iter().any(|&v| v == 255)
        && labels.iter().all(|&v| v == 0 || v == 255)
    {
        labels.iter_mut().for_each(|v| *v = (*v != 0) as u8);
    }
    Ok(LabelMask::from_vec(w, h, labels)?)
}

pub fn read_label_png(path: &Path) -> Result<LabelMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_label_png(&bytes, path)
}

pub fn write_label_png(path: &Path, mask: &LabelMask) -> Result<()> {
    fs::write(path, encode_label_png(mask)?).map_err(|e| Error::io(path, e))
}

/// Load an RGB(A) or gray image as a frame in `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| image_err(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Frame::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]
    }))
}

pub fn frame_to_rgb8(frame: &Frame) -> image::RgbImage {
    let (w, h) = frame.dims();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = frame.get(x as usize, y as usize);
        image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn write_rgb_png(path: &Path, img: &image::RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    write_rgb_png(path, &frame_to_rgb8(frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_starts_like_the_benchmark() {
        assert_eq!(palette_color(0), [0, 0, 0]);
        assert_eq!(palette_color(1), [128, 0, 0]);
        assert_eq!(palette_color(2), [0, 128, 0]);
        assert_eq!(palette_color(3), [128, 128, 0]);
        assert_eq!(palette_color(4), [0, 0, 128]);
    }

    #[test]
    fn background_only_mask_round_trips() {
        let m = LabelMask::new(5, 3, 0);
        let b = encode_label_png(&m).unwrap();
        assert_eq!(decode_label_png(&b, Path::new("x")).unwrap(), m);
    }

    #[test]
    fn binary_gray_masks_read_as_one_object() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 3, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 255, 255]).unwrap();
        }
        let m = decode_label_png(&out, Path::new("x")).unwrap();
        assert_eq!(m.data(), &[0, 1, 1]);
    }

    #[test]
    fn packed_indexed_rows_unpack() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 5, 2);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Two);
            enc.set_palette(vec![0u8; 12]);
            let mut w = enc.write_header().unwrap();
            // Row 0: 0 1 2 3 | 1 (padded); row 1: 3 3 0 0 | 2.
            w.write_image_data(&[0b0001_1011, 0b0100_0000, 0b1111_0000, 0b1000_0000]).unwrap();
        }
        let m = decode_label_png(&out, Path::new("x")).unwrap();
        assert_eq!(m.data(), &[0, 1, 2, 3, 1, 3, 3, 0, 0, 2]);
    }
}
