//! Minimal raster charts for reports (no text rendering beyond numbers).

use image::{Rgb, RgbImage};

pub const WIDTH: u32 = 480;
pub const HEIGHT: u32 = 320;
const MARGIN: i64 = 40;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
pub const BLUE: Rgb<u8> = Rgb([52, 101, 164]);
pub const RED: Rgb<u8> = Rgb([204, 0, 0]);

// 3x5 glyphs, one row per u8 (low three bits, left pixel = bit 2)
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => return None,
    })
}

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, WHITE),
        }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    pub fn rect_outline(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        self.line(x0, y0, x1, y0, c);
        self.line(x1, y0, x1, y1, c);
        self.line(x1, y1, x0, y1, c);
        self.line(x0, y1, x0, y0, c);
    }

    /// Bresenham line.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Numbers only; other characters are skipped. Centred on `cx`.
    pub fn text(&mut self, cx: i64, top: i64, s: &str, scale: i64, c: Rgb<u8>) {
        let width = s.chars().count() as i64 * 4 * scale;
        let mut x = cx - width / 2;
        for ch in s.chars() {
            if let Some(rows) = glyph(ch) {
                for (r, bits) in rows.iter().enumerate() {
                    for b in 0..3 {
                        if bits >> (2 - b) & 1 == 1 {
                            self.fill_rect(x + b * scale, top + r as i64 * scale, x + b * scale + scale - 1, top + r as i64 * scale + scale - 1, c);
                        }
                    }
                }
            }
            x += 4 * scale;
        }
    }

    fn frame(&mut self) -> (i64, i64, i64, i64) {
        let (w, h) = (self.img.width() as i64, self.img.height() as i64);
        let (left, right, top, bottom) = (MARGIN, w - MARGIN / 2, MARGIN / 2, h - MARGIN);
        for q in 0..=4 {
            let y = bottom - (bottom - top) * q / 4;
            self.line(left, y, right, y, GRID);
            self.text(left - 16, y - 5, &format!("{:.2}", q as f64 / 4.0).replace("0.", "."), 2, AXIS);
        }
        self.line(left, top, left, bottom, AXIS);
        self.line(left, bottom, right, bottom, AXIS);
        (left, right, top, bottom)
    }
}

fn y_of(v: f64, top: i64, bottom: i64) -> i64 {
    bottom - ((bottom - top) as f64 * v.clamp(0.0, 1.0)).round() as i64
}

/// One bar per value in [0, 1], labelled with its index and value.
pub fn bar_chart(values: &[f64]) -> RgbImage {
    let mut cv = Canvas::new(WIDTH, HEIGHT);
    let (left, right, top, bottom) = cv.frame();
    let n = values.len().max(1) as i64;
    let slot = (right - left) / n;
    for (i, &v) in values.iter().enumerate() {
        let x0 = left + slot * i as i64 + slot / 5;
        let x1 = left + slot * (i as i64 + 1) - slot / 5;
        let y = y_of(v, top, bottom);
        cv.fill_rect(x0, y, x1, bottom - 1, BLUE);
        cv.text((x0 + x1) / 2, (y - 14).max(0), &format!("{v:.2}"), 2, AXIS);
        cv.text((x0 + x1) / 2, bottom + 8, &i.to_string(), 2, AXIS);
    }
    cv.img
}

/// Series over evenly spaced x positions labelled by `xs`; y in [0, 1].
pub fn line_plot(xs: &[f64], series: &[(&[f64], Rgb<u8>)]) -> RgbImage {
    let mut cv = Canvas::new(WIDTH, HEIGHT);
    let (left, right, top, bottom) = cv.frame();
    let n = xs.len().max(1) as i64;
    let x_of = |i: usize| left + (right - left) * (2 * i as i64 + 1) / (2 * n);
    for (i, x) in xs.iter().enumerate() {
        cv.text(x_of(i), bottom + 8, &format!("{x}"), 2, AXIS);
    }
    for (ys, colour) in series {
        let pts: Vec<(i64, i64)> = ys.iter().enumerate().map(|(i, &v)| (x_of(i), y_of(v, top, bottom))).collect();
        for w in pts.windows(2) {
            cv.line(w[0].0, w[0].1, w[1].0, w[1].1, *colour);
        }
        for &(x, y) in &pts {
            cv.fill_rect(x - 2, y - 2, x + 2, y + 2, *colour);
        }
    }
    cv.img
}
