use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `[0, 1] -> 0..=255`, rounding halves up.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes a binary PGM (P5) image.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Tiles the rows of `examples` (each a `side x side` image) into a
/// near-square grid with 1-pixel black separators.
pub fn image_grid(examples: &Tensor, side: usize) -> Result<(usize, usize, Vec<u8>)> {
    let n = examples.rows();
    if side == 0 || examples.cols() != side * side {
        return Err(Error::Config(format!(
            "examples of width {} are not {side}x{side} images",
            examples.cols()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let grid_cols = (n as f64).sqrt().ceil() as usize;
    let grid_rows = n.div_ceil(grid_cols);
    let width = grid_cols * side + grid_cols - 1;
    let height = grid_rows * side + grid_rows - 1;
    let mut pixels = vec![0u8; width * height];
    for (k, row) in examples.row_iter().enumerate() {
        let (gx, gy) = (k % grid_cols, k / grid_cols);
        let (ox, oy) = (gx * (side + 1), gy * (side + 1));
        for y in 0..side {
            for x in 0..side {
                pixels[(oy + y) * width + ox + x] = to_byte(row[y * side + x]);
            }
        }
    }
    Ok((width, height, pixels))
}

pub fn write_image_grid(examples: &Tensor, side: usize, path: &Path) -> Result<()> {
    let (w, h, pixels) = image_grid(examples, side)?;
    fs::write(path, encode_pgm(w, h, &pixels)).map_err(|e| Error::io(path, e))
}

/// Renders 2-d points in `[0,1]^2` as a `size x size` scatter plot: white
/// background, one dark dot per point, shade by `labels` when given.
pub fn scatter_pgm(points: &Tensor, labels: Option<&[usize]>, size: usize) -> Result<Vec<u8>> {
    if points.cols() != 2 {
        return Err(Error::Config(format!(
            "scatter needs 2-d points, got width {}",
            points.cols()
        )));
    }
    let mut pixels = vec![255u8; size * size];
    let max_label = labels.and_then(|l| l.iter().max().copied()).unwrap_or(0);
    for (i, p) in points.row_iter().enumerate() {
        let x = (p[0].clamp(0.0, 1.0) * (size - 1) as f64).round() as usize;
        let y = ((1.0 - p[1].clamp(0.0, 1.0)) * (size - 1) as f64).round() as usize;
        let shade = match labels {
            Some(l) if max_label > 0 => (l[i] * 160 / max_label) as u8,
            _ => 0,
        };
        pixels[y * size + x] = shade;
    }
    Ok(encode_pgm(size, size, &pixels))
}

pub fn write_scatter_pgm(points: &Tensor, labels: Option<&[usize]>, size: usize, path: &Path) -> Result<()> {
    fs::write(path, scatter_pgm(points, labels, size)?).map_err(|e| Error::io(path, e))
}
