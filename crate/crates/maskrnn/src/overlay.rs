//! Tinted instance overlays with box outlines.

use maskrnn_core::vision::BBox;
use maskrnn_core::{Frame, LabelMask};

use crate::png_io::{frame_to_rgb8, palette_color};

const ALPHA: f32 = 0.5;

/// Blend each labelled pixel with its palette colour and outline every box.
pub fn render_overlay(frame: &Frame, mask: &LabelMask, boxes: &[Option<BBox>], label_ids: &[u8]) -> image::RgbImage {
    let mut img = frame_to_rgb8(frame);
    let id = |l: u8| if l == 0 { 0 } else { label_ids.get(l as usize - 1).copied().unwrap_or(l) };
    for (x, y, px) in img.enumerate_pixels_mut() {
        let l = mask.get(x as usize, y as usize);
        if l != 0 {
            let c = palette_color(id(l));
            for k in 0..3 {
                px.0[k] = ((1.0 - ALPHA) * px.0[k] as f32 + ALPHA * c[k] as f32).round() as u8;
            }
        }
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    for (i, b) in boxes.iter().enumerate() {
        let Some(b) = b else { continue };
        let c = image::Rgb(palette_color(id(i as u8 + 1)));
        let x0 = (b.x_min.floor() as i64).clamp(0, w - 1);
        let y0 = (b.y_min.floor() as i64).clamp(0, h - 1);
        let x1 = (b.x_max.ceil() as i64 - 1).clamp(0, w - 1);
        let y1 = (b.y_max.ceil() as i64 - 1).clamp(0, h - 1);
        for x in x0..=x1 {
            img.put_pixel(x as u32, y0 as u32, c);
            img.put_pixel(x as u32, y1 as u32, c);
        }
        for y in y0..=y1 {
            img.put_pixel(x0 as u32, y as u32, c);
            img.put_pixel(x1 as u32, y as u32, c);
        }
    }
    img
}
