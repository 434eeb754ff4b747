//! Grayscale heatmaps as binary PGM (P5, maxval 255).

use std::io::Write;

use celldense::grid::Grid;

/// Encodes per-tile values linearly, the maximum as white. North is up:
/// the first image row holds the tiles with the largest y.
pub fn pgm(values: &[f64], grid: &Grid) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for row in (0..h).rev() {
        for x in 0..w {
            let v = values[grid.index(x, row)];
            let level = if max > 0.0 { (255.0 * v.max(0.0) / max).round() } else { 0.0 };
            out.push(level as u8);
        }
    }
    out
}

pub fn write_pgm<W: Write>(values: &[f64], grid: &Grid, mut out: W) -> std::io::Result<()> {
    out.write_all(&pgm(values, grid))
}
