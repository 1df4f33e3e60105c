//! Heatmaps and line plots written as PPM or PNG (chosen by extension).

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, Rgb, RgbImage};

use sculpt::io::atomic_write;

use crate::error::{CliError, CliResult};

const GAP: u32 = 4;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Darker is higher: white at zero, deep blue at the maximum.
fn shade(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let mix = |hi: f64| (255.0 - v * (255.0 - hi)).round() as u8;
    Rgb([mix(8.0), mix(48.0), mix(107.0)])
}

/// `h x h` tables side by side, scaled by the largest value across the row.
pub fn heatmap_row(panels: &[&[f64]], h: usize, cell: usize) -> RgbImage {
    let side = (h * cell) as u32;
    let n = panels.len() as u32;
    let width = n * side + n.saturating_sub(1) * GAP;
    let mut img = RgbImage::from_pixel(width.max(1), side.max(1), WHITE);
    let max = panels.iter().flat_map(|p| p.iter()).copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    for (k, p) in panels.iter().enumerate() {
        let x0 = k as u32 * (side + GAP);
        for (i, v) in p.iter().enumerate() {
            let (r, c) = ((i / h) as u32, (i % h) as u32);
            let colour = shade(v * scale);
            for dy in 0..cell as u32 {
                for dx in 0..cell as u32 {
                    img.put_pixel(x0 + c * cell as u32 + dx, r * cell as u32 + dy, colour);
                }
            }
        }
    }
    img
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// Curves `(x, y)` drawn as polylines on a shared axis box.
pub fn line_plot(curves: &[(&[f64], &[f64])], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let finite = |v: &&f64| v.is_finite();
    let xs = curves.iter().flat_map(|c| c.0.iter()).filter(finite);
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let y_hi = curves.iter().flat_map(|c| c.1.iter()).filter(finite).copied().fold(0.0, f64::max);
    if !(x_hi > x_lo && y_hi > 0.0) {
        return img;
    }
    let margin = 10.0;
    let px = |x: f64| margin + (x - x_lo) / (x_hi - x_lo) * (width as f64 - 2.0 * margin);
    let py = |y: f64| height as f64 - margin - y / y_hi * (height as f64 - 2.0 * margin);
    for (k, (x, y)) in curves.iter().enumerate() {
        let colour = Rgb(PALETTE[k % PALETTE.len()]);
        for i in 1..x.len().min(y.len()) {
            segment(&mut img, (px(x[i - 1]), py(y[i - 1])), (px(x[i]), py(y[i])), colour);
        }
    }
    img
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), colour: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, colour);
        }
    }
}

pub fn save(img: &RgbImage, path: &Path) -> CliResult<()> {
    let format = ImageFormat::from_path(path).map_err(|e| CliError::Config(e.to_string()))?;
    let mut bytes = Cursor::new(Vec::new());
    let encoded = if format == ImageFormat::Pnm {
        // Binary PPM; the generic PNM writer would pick PAM.
        PnmEncoder::new(&mut bytes).with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary)).write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            ExtendedColorType::Rgb8,
        )
    } else {
        img.write_to(&mut bytes, format)
    };
    encoded.map_err(|e| sculpt::Error::Io(e.to_string()))?;
    atomic_write(path, &bytes.into_inner())?;
    Ok(())
}
