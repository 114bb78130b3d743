//! Minimal raster charts: distance heatmaps and PSNR-vs-storage scatter plots.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{CliError, Result};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);

pub const PALETTE: [Rgb<u8>; 8] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
];

/// 3x5 glyphs, one row per `u8` with the three low bits used.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 2, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        '/' => [1, 1, 2, 4, 4],
        _ => [0; 5],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, c);
        }
    }
}

/// Draws `text` with its top-left corner at `(x, y)`, `scale` pixels per dot.
pub fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
    for (i, ch) in s.chars().enumerate() {
        let g = glyph(ch);
        let ox = x + i as i64 * 4 * scale;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    fill(img, ox + col * scale, y + row as i64 * scale, scale, scale, c);
                }
            }
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Grayscale `n×n` matrix image; 0 is black, values ≥ 1 are white.
pub fn heatmap(values: &[f64], n: usize, path: &Path) -> Result<()> {
    let cell = (256 / n.max(1)).clamp(2, 32) as u32;
    let mut img = RgbImage::new(cell * n as u32, cell * n as u32);
    for (i, v) in values.iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (r, c) = ((i / n) as u32, (i % n) as u32);
        for y in 0..cell {
            for x in 0..cell {
                img.put_pixel(c * cell + x, r * cell + y, Rgb([g, g, g]));
            }
        }
    }
    save(&img, path)
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        return (lo - 1.0, lo + 1.0);
    }
    let pad = (hi - lo) * 0.08;
    (lo - pad, hi + pad)
}

/// Scatter plot with axis tick labels and a legend.
pub fn scatter(series: &[Series], x_label: &str, y_label: &str, path: &Path) -> Result<()> {
    let (w, h) = (640i64, 420i64);
    let (left, right, top, bottom) = (70i64, 150i64, 20i64, 50i64);
    let mut img = RgbImage::from_pixel(w as u32, h as u32, WHITE);
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let fold = |f: fn(&(f64, f64)) -> f64| {
        pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = nice_range(fold(|p| p.0).0, fold(|p| p.0).1);
    let (y0, y1) = nice_range(fold(|p| p.1).0, fold(|p| p.1).1);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let px = |x: f64| left + ((x - x0) / (x1 - x0) * pw as f64).round() as i64;
    let py = |y: f64| top + ph - ((y - y0) / (y1 - y0) * ph as f64).round() as i64;
    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        let fy = y0 + (y1 - y0) * t as f64 / 4.0;
        fill(&mut img, px(fx), top, 1, ph, GRID);
        fill(&mut img, left, py(fy), pw, 1, GRID);
        text(&mut img, px(fx) - 12, top + ph + 6, &format!("{fx:.0}"), 1, BLACK);
        text(&mut img, 4, py(fy) - 2, &format!("{fy:.2}"), 1, BLACK);
    }
    fill(&mut img, left, top, 1, ph, BLACK);
    fill(&mut img, left, top + ph, pw, 1, BLACK);
    text(&mut img, left + pw / 2 - 40, h - 18, x_label, 2, BLACK);
    text(&mut img, 4, 4, y_label, 1, BLACK);
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            fill(&mut img, px(x) - 3, py(y) - 3, 7, 7, c);
        }
        let ly = top + 10 + i as i64 * 18;
        fill(&mut img, w - right + 12, ly, 8, 8, c);
        text(&mut img, w - right + 26, ly, &s.label, 2, BLACK);
    }
    save(&img, path)
}
