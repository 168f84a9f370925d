use std::fmt::Write as _;

use crate::captioner::AttentionMap;
use crate::grid::{upsample, PixelGrid, RegionError};

/// Plain (P2) graymap scaled so the largest value maps to 255.
pub fn grid_pgm(grid: &PixelGrid) -> String {
    let res = grid.res();
    let max = grid.values().iter().copied().fold(0.0, f64::max);
    let mut out = format!("P2\n{res} {res}\n255\n");
    for row in grid.values().chunks(res.max(1)) {
        let line: Vec<String> = row
            .iter()
            .map(|v| {
                let level = if max > 0.0 { (v / max * 255.0).round() } else { 0.0 };
                (level.clamp(0.0, 255.0) as u8).to_string()
            })
            .collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

/// Attention map upsampled to `res` pixels as a graymap.
pub fn attention_pgm(alpha: &AttentionMap, res: usize) -> Result<String, RegionError> {
    Ok(grid_pgm(&upsample(&alpha.weights, alpha.grid_side, res)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let a = AttentionMap {
            weights: vec![0.5, 0.25, 0.25, 0.0],
            grid_side: 2,
        };
        let pgm = attention_pgm(&a, 2).unwrap();
        assert_eq!(pgm, "P2\n2 2\n255\n255 128\n128 0\n");
    }
}
