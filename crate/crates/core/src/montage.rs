//! Image grids with a labeled header row.

use crate::data::{Image, RangeTag};
use crate::error::{Error, Result};

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        ' ' => [0; GLYPH_H],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '/' => [0, 0x01, 0x02, 0x04, 0x08, 0x10, 0],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04],
    }
}

/// Glyph scale and header height used for tiles `tile_w` pixels wide.
pub fn header_metrics(tile_w: usize) -> (usize, usize) {
    let scale = (tile_w / 64).max(1);
    (scale, GLYPH_H * scale + 4 * scale)
}

/// Draw `text` in black with its top-left corner at `(top, left)`, clipped
/// to `max_w` pixels of width.
pub fn draw_text(img: &mut Image, text: &str, top: usize, left: usize, scale: usize, max_w: usize) {
    let ink = match img.range {
        RangeTag::Byte => [0.0; 3],
        RangeTag::Normalized => [-1.0; 3],
    };
    for (k, ch) in text.chars().enumerate() {
        let x0 = left + k * (GLYPH_W + 1) * scale;
        if x0 + GLYPH_W * scale > left + max_w {
            break;
        }
        for (r, bits) in glyph(ch).iter().enumerate() {
            for c in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - c) & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (y, x) = (top + r * scale + dy, x0 + c * scale + dx);
                        if y < img.height && x < img.width {
                            img.set(y, x, ink);
                        }
                    }
                }
            }
        }
    }
}

/// Lay out equally sized byte images row by row. With `headers`, a white
/// band holding one label per column is added on top.
pub fn montage(rows: &[Vec<Image>], headers: Option<&[String]>) -> Result<Image> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Empty("montage needs at least one tile".into()))?;
    let (th, tw) = (first.height, first.width);
    let cols = rows[0].len();
    for row in rows {
        if row.len() != cols {
            return Err(Error::Shape(format!("ragged montage: {} vs {} columns", row.len(), cols)));
        }
        if let Some(t) = row.iter().find(|t| t.height != th || t.width != tw || t.range != RangeTag::Byte) {
            return Err(Error::Shape(format!("tile {}x{} differs from {th}x{tw} or is not byte-range", t.height, t.width)));
        }
    }
    if let Some(h) = headers {
        if h.len() != cols {
            return Err(Error::Shape(format!("{} headers for {cols} columns", h.len())));
        }
    }
    let (scale, band) = header_metrics(tw);
    let band = if headers.is_some() { band } else { 0 };
    let mut out = Image::filled(band + rows.len() * th, cols * tw, [255.0; 3], RangeTag::Byte);
    if let Some(h) = headers {
        for (c, label) in h.iter().enumerate() {
            draw_text(&mut out, label, 2 * scale, c * tw + 2 * scale, scale, tw.saturating_sub(2 * scale));
        }
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            for y in 0..th {
                let dst = ((band + r * th + y) * out.width + c * tw) * 3;
                out.pixels[dst..dst + tw * 3].copy_from_slice(&tile.pixels[y * tw * 3..(y + 1) * tw * 3]);
            }
        }
    }
    Ok(out)
}
