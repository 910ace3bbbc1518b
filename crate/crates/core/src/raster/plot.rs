//! Plain PPM rendering of grids with drivable-area shading and trajectory marks.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::geometry::Vec2;
use crate::grid::{Grid, GridSpec};

pub type Rgb = [u8; 3];

/// Points drawn over the image, one color per series.
#[derive(Debug, Clone)]
pub struct Overlay {
    pub points: Vec<Vec2>,
    pub color: Rgb,
}

/// Writes a binary PPM. `values` are scaled by their maximum into a heat
/// ramp; cells with `mask == 1` (not drivable) are blended toward gray.
/// Row 0 of the grid is the bottom image row so +y points up.
pub fn write_ppm(
    path: &Path,
    values: &Grid<f64>,
    mask: Option<&Grid<u8>>,
    spec: &GridSpec,
    overlays: &[Overlay],
) -> Result<()> {
    let (h, w) = (values.h, values.w);
    let max = values.data.iter().cloned().fold(0.0f64, f64::max);
    let mut img = vec![[0u8; 3]; h * w];
    for r in 0..h {
        for c in 0..w {
            let v = if max > 0.0 { values.get(r, c) / max } else { 0.0 };
            let mut px = ramp(v);
            if mask.is_some_and(|m| m.get(r, c) == 1) {
                px = px.map(|ch| ((ch as u16 + 96) / 2) as u8);
            }
            img[(h - 1 - r) * w + c] = px;
        }
    }
    for o in overlays {
        for p in &o.points {
            if let Some((r, c)) = spec.cell_of(*p) {
                img[(h - 1 - r) * w + c] = o.color;
            }
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    for px in img {
        f.write_all(&px)?;
    }
    f.flush()?;
    Ok(())
}

fn ramp(v: f64) -> Rgb {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (2.0 * v).min(1.0)) as u8;
    let g = (255.0 * (2.0 * v - 1.0).max(0.0)) as u8;
    let b = (255.0 * v * v * v) as u8;
    [r, g, b]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_header_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let spec = GridSpec::new(4, 5, 1.0, Vec2::ZERO);
        let mut g = Grid::new(4, 5);
        g.set(0, 0, 1.0);
        let mask = Grid::filled(4, 5, 1u8);
        let ov = Overlay { points: vec![Vec2::new(4.5, 3.5)], color: [0, 0, 255] };
        write_ppm(&p, &g, Some(&mask), &spec, &[ov]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let head = b"P6\n5 4\n255\n";
        assert_eq!(&bytes[..head.len()], head);
        let px = &bytes[head.len()..];
        assert_eq!(px.len(), 60);
        assert_eq!(&px[12..15], &[0, 0, 255]);
        let bottom_left = &px[45..48];
        assert_eq!(bottom_left, &[175, 175, 175]);
    }
}
